#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbat/autodiff.hpp"
#include "pbat/data.hpp"
#include "pbat/model.hpp"

namespace pbat {

struct RankResult {
    std::uint32_t user = 0;
    std::uint32_t target = 0;
    std::size_t rank = 0;  // 1-based rank of target; 0 when no target was given
    std::vector<std::uint32_t> top;  // best first, ties by ascending item id
};

struct MetricsReport {
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
    std::size_t users = 0;
};

/// Inference row: the most recent L-1 pairs of `history`, then ([mask], z).
MaskedRow inference_row(const MultiBehaviorSequence& history, std::uint32_t target_behavior,
                        const ModelParams& params);

/// Scores every candidate at the appended mask slot and ranks them.
RankResult predict_next(const MultiBehaviorSequence& history, std::uint32_t target_behavior,
                        const ModelParams& params, std::span<const std::uint32_t> candidates,
                        std::optional<std::uint32_t> target = std::nullopt, std::size_t top_k = 10);

double hr_at_k(std::span<const std::size_t> ranks, std::size_t k);
double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct CandidateMode {
    enum class Kind { AllItems, Sampled } kind = Kind::AllItems;
    std::size_t n = 0;       // sampled negatives per user
    std::uint64_t seed = 0;  // sampled mode only

    /// "all" or "sampled:N".
    static CandidateMode parse(const std::string& text);
};

/// Train prefix followed by the validation interaction.
MultiBehaviorSequence test_history(const UserSplit& user, std::size_t L, const Vocab& vocab);

/// Leave-one-out evaluation against each user's test target.
MetricsReport evaluate(const SplitDataset& split, const ModelParams& params, const CandidateMode& mode = {},
                       std::vector<RankResult>* ranks = nullptr);

/// Masks the last position of each training prefix and ranks the hidden item
/// among all items; returns the fraction ranked first.
double cloze_reconstruction_hr1(const SplitDataset& split, const ModelParams& params);

/// [|B|, |B|] behavior dependency matrix, row = source behavior, column = target.
/// Without a user: |relation_mean(i, j)|. With a user: the pattern distance m
/// averaged over blocks and heads, times |relation_mean(i, j)|.
Tensor export_behavior_matrix(const ModelParams& params, std::optional<std::uint32_t> user = std::nullopt);
std::string matrix_csv(const Tensor& matrix);

// Checkpoints: "PBAT", u32 version, u32 tensor count, per tensor (u32 name
// length, name, u32 rank, u32 dims...), then float32 data in manifest order.
// All integers little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
std::string serialize_checkpoint(const ModelParams& params);
/// Rebuilds the model layout from the manifest. With `expected`, any
/// architecture or vocabulary disagreement is an error naming the field.
ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelDims>& expected = std::nullopt);
ModelParams parse_checkpoint(const std::string& bytes, const std::optional<ModelDims>& expected = std::nullopt);

}  // namespace pbat
