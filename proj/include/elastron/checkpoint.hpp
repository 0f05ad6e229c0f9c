#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "elastron/model.hpp"

namespace elastron {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Container format "ELASTRON1": magic line, manifest byte count line, UTF-8
// JSON manifest (names/shapes/offsets + config/meta), then one raw
// little-endian float64 blob. Writes are deterministic byte-for-byte.
void save_tensor_file(const std::string& path, const std::string& kind,
                      const std::vector<NamedTensor>& tensors, const nlohmann::ordered_json& meta);
std::vector<NamedTensor> load_tensor_file(const std::string& path, std::string* kind = nullptr,
                                          nlohmann::ordered_json* meta = nullptr);

void save_model(const std::string& path, const ElasticModel& model,
                const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
ElasticModel load_model(const std::string& path, nlohmann::ordered_json* meta = nullptr);

}  // namespace elastron
