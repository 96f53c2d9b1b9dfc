#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pbat/config.hpp"
#include "pbat/data.hpp"
#include "pbat/encoder.hpp"
#include "pbat/model.hpp"

namespace pbat {

/// score = -wasserstein_sq(sagp(state at t, pattern(u, z)), item). Higher is better.
double score_item(const EncoderState& state, std::size_t t, std::uint32_t user, std::uint32_t target_behavior,
                  std::uint32_t item, const ModelParams& params);
/// Same, from an already refined state: -wasserstein_sq(refined, item Gaussian).
double score_refined(const DiagonalGaussian& refined, std::uint32_t item, const ModelParams& params);
/// sagp(state row t, pattern(u, z)) without alignment.
DiagonalGaussian refine_state(const EncoderState& state, std::size_t t, std::uint32_t user,
                              std::uint32_t target_behavior, const ModelParams& params);

/// Tape loss for one row: sum over masked positions of
/// softplus(-score_pos) + softplus(score_neg). Returns nullopt if nothing is masked.
struct RowLoss {
    Var loss;
    std::size_t masked = 0;
};
std::optional<RowLoss> row_loss(ParamBinder& params, const MaskedRow& row, const EncodeOptions& options = {});

/// Summed loss over the batch, no dropout.
double cloze_loss(const MaskedBatch& batch, const ModelParams& params);

struct Gradients {
    double loss = 0.0;
    std::size_t masked = 0;
    std::vector<Tensor> grads;  // same layout as ModelParams::tensors
};

/// Exact gradients of the summed Cloze loss. `options` controls dropout.
/// Throws std::runtime_error naming the parameter group on a non-finite gradient.
Gradients backward(const MaskedBatch& batch, const ModelParams& params, const EncodeOptions& options = {});

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;
};

AdamState make_adam(const ModelParams& params, double lr);
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state);

struct LossReport {
    std::size_t epoch = 0;
    double loss = 0.0;  // mean per masked position
    std::size_t masked = 0;
    double secs = 0.0;
};

/// One pass over all users in seeded shuffled order, one masked row per user.
LossReport train_epoch(const SplitDataset& split, ModelParams& params, AdamState& state, const TrainConfig& config,
                       std::size_t epoch);
std::string loss_report_json(const LossReport& report);

struct GradCheckGroup {
    std::string name;
    std::size_t checked = 0;     // coordinates compared
    std::size_t unresolved = 0;  // below finite-difference resolution, not compared
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double tolerance = 0.0;
    bool passed() const;
    std::vector<std::string> failures() const;  // "group[index]: analytic a vs numeric f (rel err e)"
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t coords_per_group = 8;
    std::uint64_t seed = 7;
    /// Test hook: alters the analytic gradients before comparison.
    std::function<void(std::vector<Tensor>&)> tamper;
};

/// Central finite differences on a sampled subset of coordinates of every
/// parameter tensor. relative error = |a - f| / max(|a|, |f|, 1e-8).
///
/// Rounding the loss itself limits a central difference to an absolute
/// accuracy of about eps_mach * |loss| / step. Coordinates whose analytic and
/// numeric gradients both fall below that noise divided by the tolerance
/// cannot be judged at this step and are counted as unresolved instead of
/// compared (exact agreement, e.g. 0 vs 0 on dead paths, always counts). A
/// group with no compared coordinate fails.
GradCheckReport grad_check(const ModelParams& params, const MaskedBatch& batch, const GradCheckOptions& options = {});

}  // namespace pbat
