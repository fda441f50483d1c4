#include "retc/config_file.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace retc {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string fmt_real(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
    KvConfig out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        RETC_CHECK(eq != std::string::npos, ErrorKind::Usage,
                   "config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        RETC_CHECK(!key.empty(), ErrorKind::Usage,
                   "config line " + std::to_string(lineno) + ": empty key");
        out.items.emplace_back(key, value);
    }
    return out;
}

KvConfig KvConfig::load(const std::string& path) {
    std::ifstream in(path);
    RETC_CHECK(in.good(), ErrorKind::Io, "cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string KvConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : items) out += k + " = " + v + "\n";
    return out;
}

bool KvConfig::has(const std::string& key) const {
    for (const auto& [k, _] : items)
        if (k == key) return true;
    return false;
}

const std::string& KvConfig::get(const std::string& key) const {
    for (const auto& [k, v] : items)
        if (k == key) return v;
    fail(ErrorKind::Usage, "config: missing key '" + key + "'");
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    try {
        return std::stoll(get(key));
    } catch (...) {
        fail(ErrorKind::Usage, "config: key '" + key + "' is not an integer");
    }
}

Real KvConfig::get_real(const std::string& key, Real fallback) const {
    if (!has(key)) return fallback;
    try {
        return std::stod(get(key));
    } catch (...) {
        fail(ErrorKind::Usage, "config: key '" + key + "' is not a number");
    }
}

void KvConfig::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items) {
        if (k == key) {
            v = value;
            return;
        }
    }
    items.emplace_back(key, value);
}

PipelineConfig parse_pipeline_config(const KvConfig& kv) {
    PipelineConfig cfg;
    cfg.stage = kv.get_or("stage", "biretnet");
    RETC_CHECK(cfg.stage == "biretnet" || cfg.stage == "upsampler", ErrorKind::Usage,
               "config: stage must be 'biretnet' or 'upsampler'");

    cfg.model.heads = kv.get_int("h", cfg.model.heads);
    cfg.model.dim = kv.get_int("d", cfg.model.dim);
    cfg.model.layers = kv.get_int("layers", cfg.model.layers);
    cfg.model.side = kv.get_int("side", cfg.model.side);
    cfg.model.palette = kv.get_int("palette", cfg.model.palette);

    cfg.train.batch_size = kv.get_int("batch_size", cfg.train.batch_size);
    cfg.train.lr = kv.get_real("lr", cfg.train.lr);
    cfg.train.beta1 = kv.get_real("beta1", cfg.train.beta1);
    cfg.train.beta2 = kv.get_real("beta2", cfg.train.beta2);
    cfg.train.adam_eps = kv.get_real("adam_eps", cfg.train.adam_eps);
    cfg.train.steps = kv.get_int("steps", cfg.train.steps);
    cfg.train.mask_ratio_min = kv.get_real("mask_ratio_min", cfg.train.mask_ratio_min);
    cfg.train.mask_ratio_max = kv.get_real("mask_ratio_max", cfg.train.mask_ratio_max);
    const std::string paradigm = kv.get_or("paradigm", "parallel");
    RETC_CHECK(paradigm == "parallel" || paradigm == "chunkwise", ErrorKind::Usage,
               "config: paradigm must be 'parallel' or 'chunkwise'");
    cfg.train.paradigm = paradigm == "parallel" ? Paradigm::Parallel : Paradigm::Chunkwise;
    cfg.train.chunk = kv.get_int("chunk", cfg.train.chunk);
    cfg.train.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    cfg.train.checkpoint_every = kv.get_int("checkpoint_every", cfg.train.checkpoint_every);
    cfg.train.grad_clip = kv.get_real("grad_clip", cfg.train.grad_clip);

    cfg.ups.width0 = kv.get_int("ups_width0", cfg.ups.width0);
    cfg.ups.width1 = kv.get_int("ups_width1", cfg.ups.width1);
    cfg.ups.res_blocks = kv.get_int("ups_res_blocks", cfg.ups.res_blocks);
    cfg.ups.gn_groups = kv.get_int("ups_gn_groups", cfg.ups.gn_groups);

    cfg.ups_train.steps = kv.get_int("ups_steps", cfg.ups_train.steps);
    cfg.ups_train.batch_size = kv.get_int("ups_batch_size", cfg.ups_train.batch_size);
    cfg.ups_train.lr = kv.get_real("ups_lr", cfg.ups_train.lr);
    cfg.ups_train.beta1 = kv.get_real("ups_beta1", cfg.ups_train.beta1);
    cfg.ups_train.beta2 = kv.get_real("ups_beta2", cfg.ups_train.beta2);
    cfg.ups_train.adam_eps = kv.get_real("ups_adam_eps", cfg.ups_train.adam_eps);
    cfg.ups_train.grad_clip = kv.get_real("ups_grad_clip", cfg.ups_train.grad_clip);
    cfg.ups_train.mask_ratio_min = kv.get_real("ups_mask_ratio_min", cfg.ups_train.mask_ratio_min);
    cfg.ups_train.mask_ratio_max = kv.get_real("ups_mask_ratio_max", cfg.ups_train.mask_ratio_max);
    cfg.ups_train.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    cfg.ups_train.checkpoint_every = kv.get_int("checkpoint_every", cfg.ups_train.checkpoint_every);
    return cfg;
}

KvConfig pipeline_config_to_kv(const PipelineConfig& cfg) {
    KvConfig kv;
    kv.set("stage", cfg.stage);
    kv.set("h", std::to_string(cfg.model.heads));
    kv.set("d", std::to_string(cfg.model.dim));
    kv.set("layers", std::to_string(cfg.model.layers));
    kv.set("side", std::to_string(cfg.model.side));
    kv.set("palette", std::to_string(cfg.model.palette));
    kv.set("batch_size", std::to_string(cfg.train.batch_size));
    kv.set("lr", fmt_real(cfg.train.lr));
    kv.set("beta1", fmt_real(cfg.train.beta1));
    kv.set("beta2", fmt_real(cfg.train.beta2));
    kv.set("adam_eps", fmt_real(cfg.train.adam_eps));
    kv.set("steps", std::to_string(cfg.train.steps));
    kv.set("mask_ratio_min", fmt_real(cfg.train.mask_ratio_min));
    kv.set("mask_ratio_max", fmt_real(cfg.train.mask_ratio_max));
    kv.set("paradigm", cfg.train.paradigm == Paradigm::Parallel ? "parallel" : "chunkwise");
    kv.set("chunk", std::to_string(cfg.train.chunk));
    kv.set("seed", std::to_string(cfg.train.seed));
    kv.set("checkpoint_every", std::to_string(cfg.train.checkpoint_every));
    kv.set("grad_clip", fmt_real(cfg.train.grad_clip));
    kv.set("ups_width0", std::to_string(cfg.ups.width0));
    kv.set("ups_width1", std::to_string(cfg.ups.width1));
    kv.set("ups_res_blocks", std::to_string(cfg.ups.res_blocks));
    kv.set("ups_gn_groups", std::to_string(cfg.ups.gn_groups));
    kv.set("ups_steps", std::to_string(cfg.ups_train.steps));
    kv.set("ups_batch_size", std::to_string(cfg.ups_train.batch_size));
    kv.set("ups_lr", fmt_real(cfg.ups_train.lr));
    kv.set("ups_beta1", fmt_real(cfg.ups_train.beta1));
    kv.set("ups_beta2", fmt_real(cfg.ups_train.beta2));
    kv.set("ups_adam_eps", fmt_real(cfg.ups_train.adam_eps));
    kv.set("ups_grad_clip", fmt_real(cfg.ups_train.grad_clip));
    kv.set("ups_mask_ratio_min", fmt_real(cfg.ups_train.mask_ratio_min));
    kv.set("ups_mask_ratio_max", fmt_real(cfg.ups_train.mask_ratio_max));
    return kv;
}

}  // namespace retc
