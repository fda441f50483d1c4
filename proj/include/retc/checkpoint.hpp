#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "retc/common.hpp"
#include "retc/tensor.hpp"

namespace retc {

// Checkpoint container: "RCKPT1" magic, a UTF-8 JSON metadata block, then
// named flat float32 arrays with length prefixes. Arrays keep insertion
// order, so writers emit a canonical order and files round-trip bit-exactly.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, std::vector<float>>> arrays;

    const std::vector<float>* find(const std::string& name) const;
    const std::vector<float>& require(const std::string& name) const;
    void add(const std::string& name, const Tensor& t);
    Tensor tensor(const std::string& name, std::vector<std::int64_t> shape) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace retc
