#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pbat/autodiff.hpp"
#include "pbat/config.hpp"
#include "pbat/data.hpp"
#include "pbat/gaussian.hpp"

namespace pbat {

/// Indices of one attention head's weights inside ModelParams::tensors.
/// Projection weights map D -> d_h; alignment weights are d_h x d_h.
struct HeadSlots {
    std::size_t q_item_mean, q_beh_mean, q_item_var, q_beh_var;
    std::size_t k_item_mean, k_beh_mean, k_item_var, k_beh_var;
    std::size_t v_item_mean, v_beh_mean, v_item_var, v_beh_var;
    std::size_t align_ip, align_pos;
    std::size_t pattern_mean, pattern_var;  // personalized-pattern projection
    std::size_t pos_mean, pos_var;          // position projection into the head
};

struct FflSlots {
    std::size_t w1, b1, w2, b2;
};

struct BlockSlots {
    std::vector<HeadSlots> heads;
    std::vector<FflSlots> ffl_mean;  // one per behavior row (|B| + 1)
    std::vector<FflSlots> ffl_var;
    std::size_t ln_attn_mean_gain, ln_attn_mean_bias, ln_attn_var_gain, ln_attn_var_bias;
    std::size_t ln_ffl_mean_gain, ln_ffl_mean_bias, ln_ffl_var_gain, ln_ffl_var_bias;
};

/// Every learned tensor of the model, in a fixed registration order that the
/// optimizer, checkpoints and gradient checks all share.
struct ModelParams {
    ModelDims dims;  // vocabulary sizes are always concrete here
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    // Distribution tables: item [|V|+2, D], user [|U|, D], behavior [|B|+1, D],
    // position [L, D], relation [|B|, |B|, D]. Raw covariances become variances
    // through elu_plus_one at lookup.
    std::size_t item_mean, item_rawcov;
    std::size_t user_mean, user_rawcov;
    std::size_t behavior_mean, behavior_rawcov;
    std::size_t position_mean, position_rawcov;
    std::size_t relation_mean, relation_rawcov;
    std::size_t pattern_align;  // D x D, aligns the behavior mean inside SAGP
    std::vector<BlockSlots> blocks;

    Vocab vocab() const { return {dims.num_users, dims.num_items, dims.num_behaviors}; }
    std::size_t index_of(const std::string& name) const;
    std::size_t parameter_count() const;
};

/// Allocates all tensors. Distribution tables are drawn i.i.d. from N(0, 0.02^2);
/// projection and FFL weights use Glorot-normal scaling; alignment weights start
/// at the identity; layer-norm gains at one; biases at zero.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Adds i.i.d. N(0, scale^2) noise to every entry. Moves a freshly initialised
/// model off its near-degenerate starting point (used by gradient checks).
void perturb_params(ModelParams& params, double scale, std::uint64_t seed);

/// Same layout as init_params, every entry zero. Used for gradient buffers.
std::vector<Tensor> zeros_like(const ModelParams& params);

enum class EntityKind { Item, User, Behavior, Position };

/// mean = table row, var = elu_plus_one(raw covariance row).
DiagonalGaussian lookup_entity(const ModelParams& params, EntityKind kind, std::uint32_t id);
/// Directed relation (from, to); (i, j) and (j, i) are independent entries.
DiagonalGaussian lookup_relation(const ModelParams& params, std::uint32_t from, std::uint32_t to);
/// SAGP(user u, behavior b) with the shared pattern alignment on the behavior mean.
DiagonalGaussian personalized_pattern(const ModelParams& params, std::uint32_t user, std::uint32_t behavior);

SquareMatrix as_square(const Tensor& t);

}  // namespace pbat
