#pragma once

#include <map>
#include <string>

#include "aptlab/model.hpp"

namespace aptlab {

// Raised for malformed files, bad magic, unreadable paths.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Raised for stage/config mismatches and invalid run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Serialized parameter tree. Container layout (little-endian):
//   magic "APTK" | u32 version | u32 header_len | header JSON
//   | u32 array_count | per array: u32 name_len, name, u32 rows, u32 cols,
//     rows*cols float32 payload (row-major)
// Header records {config, stage, step, seed}.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    ModelConfig config;
    std::string stage;  // "pretrain" | "distill" | "apt" | "apt_ema"
    int64_t step = 0;
    uint64_t seed = 0;
    std::map<std::string, Tensor> arrays;

    static Checkpoint from_params(const ParamList& params, const ModelConfig& cfg,
                                  const std::string& stage, int64_t step, uint64_t seed);
    void load_into(ParamList& params) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace aptlab
