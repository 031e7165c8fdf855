#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "davihd/errors.hpp"
#include "davihd/tensor.hpp"

namespace davihd {

// ---------------------------------------------------------------------------
// DFT1: little-endian binary tensor file.
// magic "DFT1" | dtype u8 (1 = f32, 2 = f64) | ndim u8 | ndim x u64 dims |
// row-major payload. No compression; round-trips are bitwise.
// ---------------------------------------------------------------------------

enum class DftDtype : std::uint8_t { f32 = 1, f64 = 2 };

struct DftTensor {
    DftDtype dtype = DftDtype::f64;
    Shape shape;
    // Always held as doubles; for f32 files these are exact widenings, so
    // narrowing on write reproduces the original bytes.
    std::vector<double> data;

    Tensor to_tensor() const { return Tensor(shape, data); }
};

namespace dft_detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace dft_detail

inline std::string dft_to_bytes(const DftTensor& t) {
    std::string out = "DFT1";
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.shape.size()));
    for (std::size_t d : t.shape) dft_detail::put_u64(out, d);
    if (shape_numel(t.shape) != t.data.size())
        throw ShapeError("dft: shape does not match payload length");
    if (t.dtype == DftDtype::f64) {
        const std::size_t off = out.size();
        out.resize(off + t.data.size() * 8);
        std::memcpy(out.data() + off, t.data.data(), t.data.size() * 8);
    } else {
        std::vector<float> narrow(t.data.begin(), t.data.end());
        const std::size_t off = out.size();
        out.resize(off + narrow.size() * 4);
        std::memcpy(out.data() + off, narrow.data(), narrow.size() * 4);
    }
    return out;
}

inline DftTensor dft_from_bytes(const std::string& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 6 || bytes.compare(0, 4, "DFT1") != 0)
        throw DataError("dft: bad magic in " + origin);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    DftTensor t;
    const std::uint8_t dtype = p[4];
    if (dtype != 1 && dtype != 2) throw DataError("dft: unknown dtype code in " + origin);
    t.dtype = static_cast<DftDtype>(dtype);
    const std::size_t ndim = p[5];
    std::size_t off = 6;
    if (bytes.size() < off + 8 * ndim) throw DataError("dft: truncated header in " + origin);
    t.shape.resize(ndim);
    for (std::size_t i = 0; i < ndim; ++i, off += 8) t.shape[i] = dft_detail::get_u64(p + off);
    const std::size_t n = shape_numel(t.shape);
    const std::size_t elem = t.dtype == DftDtype::f64 ? 8 : 4;
    if (bytes.size() != off + n * elem) throw DataError("dft: truncated payload in " + origin);
    t.data.resize(n);
    if (t.dtype == DftDtype::f64) {
        std::memcpy(t.data.data(), bytes.data() + off, n * 8);
    } else {
        std::vector<float> narrow(n);
        std::memcpy(narrow.data(), bytes.data() + off, n * 4);
        for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<double>(narrow[i]);
    }
    for (double v : t.data)
        if (!std::isfinite(v)) throw DataError("dft: non-finite payload value in " + origin);
    return t;
}

inline void write_dft(const std::string& path, const DftTensor& t) {
    const std::string bytes = dft_to_bytes(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_dft: cannot open " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write_dft: write failed: " + path);
}

inline void write_dft(const std::string& path, const Tensor& t, DftDtype dtype = DftDtype::f64) {
    write_dft(path, DftTensor{dtype, t.shape(), t.values()});
}

inline DftTensor read_dft(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_dft: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return dft_from_bytes(ss.str(), path);
}

inline DftTensor read_dft_expect(const std::string& path, DftDtype dtype) {
    DftTensor t = read_dft(path);
    if (t.dtype != dtype) throw DataError("read_dft: dtype mismatch in " + path);
    return t;
}

// Header-only peek used by manifest validation.
struct DftHeader {
    DftDtype dtype;
    Shape shape;
};

inline DftHeader read_dft_header(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_dft: cannot open " + path);
    char head[6];
    if (!f.read(head, 6) || std::memcmp(head, "DFT1", 4) != 0)
        throw DataError("dft: bad magic in " + path);
    const std::uint8_t dtype = static_cast<std::uint8_t>(head[4]);
    if (dtype != 1 && dtype != 2) throw DataError("dft: unknown dtype code in " + path);
    const std::size_t ndim = static_cast<std::uint8_t>(head[5]);
    DftHeader h{static_cast<DftDtype>(dtype), Shape(ndim)};
    for (std::size_t i = 0; i < ndim; ++i) {
        unsigned char buf[8];
        if (!f.read(reinterpret_cast<char*>(buf), 8)) throw DataError("dft: truncated header in " + path);
        h.shape[i] = dft_detail::get_u64(buf);
    }
    return h;
}

// ---------------------------------------------------------------------------
// dataset manifest (UTF-8 line-delimited JSON)
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    std::size_t t_f = 0;
    std::string visual;    // path, relative to the manifest directory
    std::string semantic;  // path
    std::string waveform;  // path
    std::string gt;        // path
    std::string split;     // train|val|test or fold<i>
    bool degenerate = false;
};

struct Manifest {
    std::string base_dir;
    std::vector<ManifestRecord> records;
    std::size_t d_v = 0;  // visual feature dim, consistent across records
    std::size_t d_s = 0;  // semantic feature dim

    std::string resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        if (p.is_absolute()) return rel;
        return (std::filesystem::path(base_dir) / p).string();
    }
};

inline nlohmann::json manifest_record_to_json(const ManifestRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["t_f"] = r.t_f;
    j["visual"] = r.visual;
    j["semantic"] = r.semantic;
    j["waveform"] = r.waveform;
    j["gt"] = r.gt;
    j["split"] = r.split;
    j["degenerate"] = r.degenerate;
    return j;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_manifest: cannot open " + path);
    for (const ManifestRecord& r : m.records) f << manifest_record_to_json(r).dump() << "\n";
    if (!f) throw DataError("save_manifest: write failed: " + path);
}

// Parses and eagerly validates every record; all violations are collected
// into one aggregate DataError naming record ids and fields.
inline Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_manifest: cannot open " + path);
    Manifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    if (m.base_dir.empty()) m.base_dir = ".";
    std::vector<std::string> problems;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": " + e.what());
        }
        ManifestRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.t_f = j.at("t_f").get<std::size_t>();
            r.visual = j.at("visual").get<std::string>();
            r.semantic = j.at("semantic").get<std::string>();
            r.waveform = j.at("waveform").get<std::string>();
            r.gt = j.at("gt").get<std::string>();
            r.split = j.at("split").get<std::string>();
            r.degenerate = j.value("degenerate", false);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": " + e.what());
        }
        m.records.push_back(std::move(r));
    }
    for (const ManifestRecord& r : m.records) {
        auto check_file = [&](const std::string& rel, const char* field) -> bool {
            if (!std::filesystem::exists(m.resolve(rel))) {
                problems.push_back(r.id + ": missing " + field + " file " + rel);
                return false;
            }
            return true;
        };
        check_file(r.waveform, "waveform");
        if (check_file(r.gt, "gt")) {
            try {
                const DftHeader h = read_dft_header(m.resolve(r.gt));
                if (h.shape.size() != 1 || h.shape[0] != r.t_f)
                    problems.push_back(r.id + ": gt length " + shape_str(h.shape) +
                                       " does not match t_f " + std::to_string(r.t_f));
            } catch (const DataError& e) {
                problems.push_back(r.id + ": " + e.what());
            }
        }
        auto check_features = [&](const std::string& rel, const char* field, std::size_t& dim) {
            if (!check_file(rel, field)) return;
            try {
                const DftHeader h = read_dft_header(m.resolve(rel));
                if (h.shape.size() != 2 || h.shape[0] != r.t_f) {
                    problems.push_back(r.id + ": " + field + " shape " + shape_str(h.shape) +
                                       " does not match t_f " + std::to_string(r.t_f));
                    return;
                }
                if (dim == 0)
                    dim = h.shape[1];
                else if (dim != h.shape[1])
                    problems.push_back(r.id + ": inconsistent " + std::string(field) + " dim " +
                                       std::to_string(h.shape[1]) + " (expected " +
                                       std::to_string(dim) + ")");
            } catch (const DataError& e) {
                problems.push_back(r.id + ": " + e.what());
            }
        };
        check_features(r.visual, "visual", m.d_v);
        check_features(r.semantic, "semantic", m.d_s);
    }
    if (!problems.empty()) {
        std::string msg = "load_manifest: " + std::to_string(problems.size()) + " problem(s) in " + path;
        for (const std::string& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    return m;
}

}  // namespace davihd
