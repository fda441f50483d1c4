#pragma once

#include <string>
#include <utility>
#include <vector>

#include "retc/biretnet.hpp"
#include "retc/trainer.hpp"
#include "retc/upsampler.hpp"

namespace retc {

// Plain-text "key = value" config. Lines starting with '#' (or trailing
// '#' comments) are ignored. Order is preserved so parse/serialize round-trips.
struct KvConfig {
    std::vector<std::pair<std::string, std::string>> items;

    static KvConfig parse(const std::string& text);
    static KvConfig load(const std::string& path);
    std::string serialize() const;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    Real get_real(const std::string& key, Real fallback) const;
    void set(const std::string& key, const std::string& value);

    bool operator==(const KvConfig&) const = default;
};

// Training pipeline config: which stage to train plus its hyperparameters.
struct PipelineConfig {
    std::string stage = "biretnet";  // or "upsampler"
    ModelConfig model;
    TrainConfig train;
    UpsamplerConfig ups;
    UpsamplerTrainConfig ups_train;
};

PipelineConfig parse_pipeline_config(const KvConfig& kv);
KvConfig pipeline_config_to_kv(const PipelineConfig& cfg);

}  // namespace retc
