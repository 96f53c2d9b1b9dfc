#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pbat {

/// Architecture and vocabulary sizes. A vocabulary size of 0 means "infer from data".
struct ModelDims {
    std::size_t D = 64;
    std::size_t L = 50;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t d_ff = 0;  // 0 selects 4 * D
    std::uint32_t num_users = 0;
    std::uint32_t num_items = 0;
    std::uint32_t num_behaviors = 0;

    std::size_t head_dim() const { return D / heads; }
    std::size_t ffl_dim() const { return d_ff == 0 ? 4 * D : d_ff; }
    /// Throws std::invalid_argument naming the first inconsistent field.
    void validate() const;

    bool operator==(const ModelDims&) const = default;
};

struct TrainConfig {
    double rho = 0.2;
    double dropout = 0.1;
    double lr = 0.001;
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    std::uint64_t seed = 42;
};

struct Config {
    ModelDims model;
    TrainConfig train;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);
std::string format_config(const Config& config);

}  // namespace pbat
