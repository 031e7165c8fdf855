#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "davihd/errors.hpp"
#include "davihd/model.hpp"
#include "davihd/synth.hpp"
#include "davihd/train.hpp"

namespace davihd {

// Flat `key = value` run configuration. Keys mirror TrainConfig, ModelConfig
// and SynthSpec; unknown keys are errors. The map is kept sorted so its
// serialization (and hash) is canonical.
using ConfigMap = std::map<std::string, std::string>;

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        // training
        "epochs", "lr", "batch_size", "weight_decay", "clip_norm", "seed", "manifest",
        "val_split", "adam_beta1", "adam_beta2", "adam_eps",
        // model
        "d_v", "d_s", "d_d", "d_a", "k_basis", "heads", "conv_hidden", "attn_channels",
        "basis_channels", "gamma_hidden", "conv_kernel", "sa_placement", "fusion_op", "modalities",
        "n_mels", "n_fft", "hop", "f_min", "f_max", "bn_momentum", "bn_eps", "ln_eps",
        // synthetic data
        "n_videos", "t_f_min", "t_f_max", "events_min", "events_max", "burst_amplitude",
        "burst_duration_min", "burst_duration_max", "carrier_min_hz", "carrier_max_hz",
        "label_kernel_width", "noise_floor", "background_weight",
    };
    return keys;
}

inline void config_set(ConfigMap& map, const std::string& key, const std::string& value) {
    if (!known_config_keys().count(key)) throw DataError("config: unknown key '" + key + "'");
    map[key] = value;
}

// Presets scale the published training recipe to its target dataset; `toy`
// is the desk-scale preset used by the synthetic benchmark and the tests.
inline ConfigMap preset_config(const std::string& name) {
    ConfigMap m;
    auto set = [&](const char* k, const std::string& v) { m[k] = v; };
    // shared defaults
    set("weight_decay", "1e-4");
    set("clip_norm", "0.5");
    set("seed", "1");
    set("val_split", "val");
    set("adam_beta1", "0.9");
    set("adam_beta2", "0.999");
    set("adam_eps", "1e-8");
    set("heads", "4");
    set("conv_kernel", "3");
    set("sa_placement", "early");
    set("fusion_op", "multiply");
    set("modalities", "v,as,ad");
    set("f_min", "0");
    set("f_max", "8000");
    set("bn_momentum", "0.1");
    set("bn_eps", "1e-5");
    set("ln_eps", "1e-5");
    set("n_videos", "240");
    set("t_f_min", "8");
    set("t_f_max", "12");
    set("events_min", "2");
    set("events_max", "4");
    set("burst_amplitude", "0.5");
    set("burst_duration_min", "0.75");
    set("burst_duration_max", "0.95");
    set("carrier_min_hz", "1500");
    set("carrier_max_hz", "6000");
    set("label_kernel_width", "1");
    set("noise_floor", "0.02");
    set("background_weight", "0.12");
    if (name == "toy") {
        set("epochs", "50");
        set("lr", "1e-3");
        set("batch_size", "8");
        set("d_v", "16");
        set("d_s", "32");
        set("d_d", "32");
        set("d_a", "32");
        set("k_basis", "2");
        set("conv_hidden", "8");
        set("attn_channels", "6");
        set("basis_channels", "4");
        set("gamma_hidden", "6");
        set("n_mels", "24");
        set("n_fft", "1024");
        set("hop", "1024");
    } else if (name == "mrhisum") {
        set("epochs", "200");
        set("lr", "1e-5");
        set("batch_size", "16");
        set("d_v", "1024");
        set("d_s", "2048");
        set("d_d", "2048");
        set("d_a", "2048");
        set("k_basis", "4");
        set("conv_hidden", "32");
        set("attn_channels", "32");
        set("basis_channels", "16");
        set("gamma_hidden", "32");
        set("n_mels", "128");
        set("n_fft", "2048");
        set("hop", "256");
    } else if (name == "tvsum") {
        set("epochs", "400");
        set("lr", "5e-6");
        set("batch_size", "8");
        set("d_v", "512");
        set("d_s", "2048");
        set("d_d", "2048");
        set("d_a", "2048");
        set("k_basis", "4");
        set("conv_hidden", "32");
        set("attn_channels", "32");
        set("basis_channels", "16");
        set("gamma_hidden", "32");
        set("n_mels", "128");
        set("n_fft", "2048");
        set("hop", "256");
    } else {
        throw DataError("config: unknown preset '" + name + "'");
    }
    return m;
}

// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline void apply_config_file(ConfigMap& map, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config: " + path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw DataError("config: " + path + ":" + std::to_string(lineno) + ": empty key or value");
        try {
            config_set(map, key, value);
        } catch (const DataError& e) {
            throw DataError("config: " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline std::string serialize_config(const ConfigMap& map) {
    std::string out;
    for (const auto& [k, v] : map) out += k + " = " + v + "\n";
    return out;
}

namespace config_detail {

inline double get_real(const ConfigMap& m, const std::string& key) {
    const auto it = m.find(key);
    if (it == m.end()) throw DataError("config: missing key '" + key + "'");
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("config: key '" + key + "' has non-numeric value '" + it->second + "'");
    }
}

inline std::uint64_t get_uint(const ConfigMap& m, const std::string& key) {
    const double v = get_real(m, key);
    if (v < 0 || v != std::floor(v)) throw DataError("config: key '" + key + "' must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
}

inline std::string get_str(const ConfigMap& m, const std::string& key) {
    const auto it = m.find(key);
    if (it == m.end()) throw DataError("config: missing key '" + key + "'");
    return it->second;
}

}  // namespace config_detail

inline ModelConfig model_config_from(const ConfigMap& m) {
    using namespace config_detail;
    ModelConfig c;
    c.d_v = get_uint(m, "d_v");
    c.d_s = get_uint(m, "d_s");
    c.d_d = get_uint(m, "d_d");
    c.d_a = get_uint(m, "d_a");
    c.k_basis = get_uint(m, "k_basis");
    c.heads = get_uint(m, "heads");
    c.conv_hidden = get_uint(m, "conv_hidden");
    c.attn_channels = get_uint(m, "attn_channels");
    c.basis_channels = get_uint(m, "basis_channels");
    c.gamma_hidden = get_uint(m, "gamma_hidden");
    c.conv_kernel = get_uint(m, "conv_kernel");
    const std::string sp = get_str(m, "sa_placement");
    if (sp != "early" && sp != "late") throw DataError("config: sa_placement must be early|late");
    c.sa_placement = sp == "early" ? SaPlacement::early : SaPlacement::late;
    const std::string op = get_str(m, "fusion_op");
    if (op != "multiply" && op != "concat") throw DataError("config: fusion_op must be multiply|concat");
    c.fusion_op = op == "multiply" ? FusionOp::multiply : FusionOp::concat;
    const std::string mods = get_str(m, "modalities");
    c.use_v = mods.find('v') != std::string::npos;
    c.use_as = mods.find("as") != std::string::npos;
    // "ad" must not match the 'a' of "as"
    c.use_ad = mods.find("ad") != std::string::npos;
    if (!c.use_v && !c.use_as && !c.use_ad)
        throw DataError("config: modalities must name at least one of v, as, ad");
    c.n_mels = get_uint(m, "n_mels");
    c.n_fft = get_uint(m, "n_fft");
    c.hop = get_uint(m, "hop");
    c.f_min = get_real(m, "f_min");
    c.f_max = get_real(m, "f_max");
    c.bn_momentum = get_real(m, "bn_momentum");
    c.bn_eps = get_real(m, "bn_eps");
    c.ln_eps = get_real(m, "ln_eps");
    c.validate();
    return c;
}

inline TrainConfig train_config_from(const ConfigMap& m) {
    using namespace config_detail;
    TrainConfig c;
    c.epochs = get_uint(m, "epochs");
    c.lr = get_real(m, "lr");
    c.batch_size = get_uint(m, "batch_size");
    c.weight_decay = get_real(m, "weight_decay");
    c.clip_norm = get_real(m, "clip_norm");
    c.seed = get_uint(m, "seed");
    c.val_split = get_str(m, "val_split");
    c.adam_beta1 = get_real(m, "adam_beta1");
    c.adam_beta2 = get_real(m, "adam_beta2");
    c.adam_eps = get_real(m, "adam_eps");
    if (m.count("manifest")) c.manifest_path = m.at("manifest");
    c.model = model_config_from(m);
    return c;
}

inline SynthSpec synth_spec_from(const ConfigMap& m) {
    using namespace config_detail;
    SynthSpec s;
    s.n_videos = get_uint(m, "n_videos");
    s.t_f_min = get_uint(m, "t_f_min");
    s.t_f_max = get_uint(m, "t_f_max");
    s.events_min = get_uint(m, "events_min");
    s.events_max = get_uint(m, "events_max");
    s.burst_amplitude = get_real(m, "burst_amplitude");
    s.burst_duration_min = get_real(m, "burst_duration_min");
    s.burst_duration_max = get_real(m, "burst_duration_max");
    s.carrier_min_hz = get_real(m, "carrier_min_hz");
    s.carrier_max_hz = get_real(m, "carrier_max_hz");
    s.label_kernel_width = get_uint(m, "label_kernel_width");
    s.noise_floor = get_real(m, "noise_floor");
    s.background_weight = get_real(m, "background_weight");
    s.d_v = get_uint(m, "d_v");
    s.d_s = get_uint(m, "d_s");
    s.seed = get_uint(m, "seed");
    s.validate();
    return s;
}

inline std::string config_hash_hex(const ConfigMap& m) { return hex64(fnv1a64(serialize_config(m))); }

}  // namespace davihd
