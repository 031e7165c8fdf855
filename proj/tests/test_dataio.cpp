#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "davihd/dataio.hpp"
#include "davihd/metrics.hpp"
#include "davihd/synth.hpp"
#include "testutil.hpp"

using namespace davihd;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

TEST_CASE("dft round trip") {
    testutil::TempDir tmp("dft");
    SUBCASE("ramp is bitwise identical") {
        std::vector<double> ramp(12);
        for (std::size_t i = 0; i < 12; ++i) ramp[i] = 0.25 * static_cast<double>(i) - 1.0;
        write_dft(tmp.file("ramp.dft"), Tensor({3, 4}, ramp));
        DftTensor back = read_dft(tmp.file("ramp.dft"));
        CHECK(back.dtype == DftDtype::f64);
        CHECK(back.shape == Shape{3, 4});
        CHECK(back.data == ramp);
    }
    SUBCASE("bad magic is rejected") {
        std::ofstream f(tmp.file("bad.dft"), std::ios::binary);
        f << "DFTXjunkjunkjunk";
        f.close();
        CHECK_THROWS_WITH_AS(read_dft(tmp.file("bad.dft")), doctest::Contains("bad magic"), DataError);
    }
    SUBCASE("truncated payload is rejected") {
        std::string bytes = dft_to_bytes(DftTensor{DftDtype::f64, {10}, std::vector<double>(10, 1.0)});
        bytes.resize(bytes.size() - 8);  // drop one element
        std::ofstream f(tmp.file("trunc.dft"), std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.close();
        CHECK_THROWS_WITH_AS(read_dft(tmp.file("trunc.dft")), doctest::Contains("truncated"), DataError);
    }
    SUBCASE("dtype expectation") {
        write_dft(tmp.file("f64.dft"), Tensor({2}, {1.0, 2.0}), DftDtype::f64);
        CHECK_THROWS_WITH_AS(read_dft_expect(tmp.file("f64.dft"), DftDtype::f32),
                             doctest::Contains("dtype mismatch"), DataError);
    }
    SUBCASE("random tensors of both dtypes round-trip bitwise") {
        Rng rng(77);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t ndim = 1 + rng.below(3);
            Shape shape(ndim);
            for (auto& d : shape) d = 1 + rng.below(6);
            const DftDtype dtype = trial % 2 ? DftDtype::f32 : DftDtype::f64;
            std::vector<double> data(shape_numel(shape));
            for (double& v : data) {
                v = rng.normal(0, 100.0);
                if (dtype == DftDtype::f32) v = static_cast<double>(static_cast<float>(v));
            }
            const DftTensor t{dtype, shape, data};
            const std::string once = dft_to_bytes(t);
            const DftTensor back = dft_from_bytes(once);
            CHECK(back.dtype == t.dtype);
            CHECK(back.shape == t.shape);
            CHECK(back.data == t.data);
            CHECK(dft_to_bytes(back) == once);
        }
    }
}

TEST_CASE("manifest validation") {
    testutil::TempDir tmp("manifest");
    auto write_record_files = [&](const std::string& id, std::size_t t_f, std::size_t d_v,
                                  std::size_t d_s, std::size_t gt_len) {
        Rng rng(fnv1a(id));
        write_wav(tmp.file(id + ".wav"), Waveform{std::vector<double>(16000, 0.0), 16000});
        write_dft(tmp.file(id + ".visual.dft"), Tensor::normal(rng, {t_f, d_v}));
        write_dft(tmp.file(id + ".semantic.dft"), Tensor::normal(rng, {t_f, d_s}));
        write_dft(tmp.file(id + ".gt.dft"), Tensor::zeros({gt_len}));
    };
    auto record_line = [&](const std::string& id, std::size_t t_f) {
        nlohmann::json j;
        j["id"] = id;
        j["t_f"] = t_f;
        j["visual"] = id + ".visual.dft";
        j["semantic"] = id + ".semantic.dft";
        j["waveform"] = id + ".wav";
        j["gt"] = id + ".gt.dft";
        j["split"] = "train";
        return j.dump();
    };

    SUBCASE("valid three-record manifest loads in order") {
        for (int i = 0; i < 3; ++i) write_record_files("v" + std::to_string(i), 5, 8, 12, 5);
        std::ofstream f(tmp.file("m.jsonl"));
        for (int i = 0; i < 3; ++i) f << record_line("v" + std::to_string(i), 5) << "\n";
        f.close();
        Manifest m = load_manifest(tmp.file("m.jsonl"));
        REQUIRE(m.records.size() == 3);
        CHECK(m.records[0].id == "v0");
        CHECK(m.records[2].id == "v2");
        CHECK(m.d_v == 8);
        CHECK(m.d_s == 12);

        // idempotent: loading twice gives the same records
        Manifest again = load_manifest(tmp.file("m.jsonl"));
        CHECK(again.records.size() == 3);
        CHECK(again.records[1].id == m.records[1].id);
    }
    SUBCASE("gt length mismatch names the record") {
        write_record_files("short", 6, 8, 12, 4);  // gt has 4 entries, t_f = 6
        std::ofstream f(tmp.file("m.jsonl"));
        f << record_line("short", 6) << "\n";
        f.close();
        CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.jsonl")), doctest::Contains("short"), DataError);
    }
    SUBCASE("inconsistent visual dims are rejected") {
        write_record_files("a", 5, 8, 12, 5);
        write_record_files("b", 5, 16, 12, 5);  // d_v differs
        std::ofstream f(tmp.file("m.jsonl"));
        f << record_line("a", 5) << "\n" << record_line("b", 5) << "\n";
        f.close();
        CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.jsonl")),
                             doctest::Contains("inconsistent visual dim"), DataError);
    }
    SUBCASE("missing file is reported with the field name") {
        write_record_files("c", 5, 8, 12, 5);
        std::filesystem::remove(tmp.file("c.wav"));
        std::ofstream f(tmp.file("m.jsonl"));
        f << record_line("c", 5) << "\n";
        f.close();
        CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.jsonl")),
                             doctest::Contains("missing waveform"), DataError);
    }
}

TEST_CASE("synth_dataset") {
    testutil::TempDir tmp("synth");
    SynthSpec spec;
    spec.n_videos = 6;
    spec.seed = 99;

    SUBCASE("generated videos satisfy the energy/gt correlation bound") {
        Manifest m = synth_dataset(spec, tmp.file("ds"));
        REQUIRE(m.records.size() == 6);
        for (const auto& rec : m.records) {
            CHECK_FALSE(rec.degenerate);
            // recompute the bound from the emitted files
            Waveform w = load_wav(m.resolve(rec.waveform));
            DftTensor gt = read_dft(m.resolve(rec.gt));
            REQUIRE(gt.shape == Shape{rec.t_f});
            for (double v : gt.data) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            // the waveform is bursts + noise; a loud-second detector must
            // still track gt strongly
            std::vector<double> loudness(rec.t_f, 0.0);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                loudness[i / kSampleRate] += w.samples[i] * w.samples[i];
            CHECK(spearman_rho(loudness, gt.data) > 0.7);
        }
        // manifest loads cleanly
        Manifest loaded = load_manifest(tmp.file("ds") + "/manifest.jsonl");
        CHECK(loaded.records.size() == 6);
        CHECK(loaded.d_v == spec.d_v);
    }
    SUBCASE("zero events yields constant-floor gt flagged degenerate") {
        SynthSpec degen = spec;
        degen.events_min = 0;
        degen.events_max = 0;
        degen.n_videos = 2;
        Manifest m = synth_dataset(degen, tmp.file("degen"));
        for (const auto& rec : m.records) {
            CHECK(rec.degenerate);
            DftTensor gt = read_dft(m.resolve(rec.gt));
            for (double v : gt.data) CHECK(v == 0.0);
        }
    }
    SUBCASE("same seed produces identical file hashes") {
        Manifest a = synth_dataset(spec, tmp.file("a"));
        Manifest b = synth_dataset(spec, tmp.file("b"));
        REQUIRE(a.records.size() == b.records.size());
        CHECK(read_bytes(tmp.file("a") + "/manifest.jsonl") ==
              read_bytes(tmp.file("b") + "/manifest.jsonl"));
        for (std::size_t i = 0; i < a.records.size(); ++i) {
            for (const std::string* rel :
                 {&a.records[i].waveform, &a.records[i].visual, &a.records[i].semantic, &a.records[i].gt})
                CHECK(fnv1a(read_bytes(a.resolve(*rel))) == fnv1a(read_bytes(b.resolve(*rel))));
        }
        SynthSpec other = spec;
        other.seed = 100;
        Manifest c = synth_dataset(other, tmp.file("c"));
        CHECK(fnv1a(read_bytes(a.resolve(a.records[0].waveform))) !=
              fnv1a(read_bytes(c.resolve(c.records[0].waveform))));
    }
}
