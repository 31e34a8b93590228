/**
 * Tensor checkpoint container.
 *
 * Layout: 8-byte magic "CTKTENS\1", uint32 format version, uint64 header
 * length, UTF-8 JSON header, then raw little-endian float32 payloads. The
 * header lists name/shape/dtype/offset per tensor plus a free-form "meta"
 * object used for model manifests and training state. The same container
 * serves every module in the repo.
 */
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"

#include "chaintok/tensor.hpp"

namespace chaintok {

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta;

    void put(const std::string& name, const Tensor& t) { tensors[name] = t; }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace chaintok
