#include "pbat/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pbat {

namespace {

std::uint64_t g_pair_work = 0;

std::vector<double> vecmat(std::span<const double> x, const Tensor& w) {
    if (x.size() != w.rows()) {
        throw std::invalid_argument("projection: input of dim " + std::to_string(x.size()) + " against " +
                                    std::to_string(w.rows()) + "-row weight");
    }
    std::vector<double> out(w.cols(), 0.0);
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double xr = x[r];
        const auto wr = w.row(r);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += xr * wr[c];
    }
    return out;
}

std::vector<double> add_vec(std::vector<double> a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

DiagonalGaussian project_pair(const DiagonalGaussian& x, const DiagonalGaussian& b, const ModelParams& p,
                              std::size_t w_xm, std::size_t w_bm, std::size_t w_xv, std::size_t w_bv) {
    auto mean = add_vec(vecmat(x.mean(), p.tensors[w_xm]), vecmat(b.mean(), p.tensors[w_bm]));
    auto raw = add_vec(vecmat(x.var(), p.tensors[w_xv]), vecmat(b.var(), p.tensors[w_bv]));
    return {std::move(mean), elu_plus_one(raw)};
}

const HeadSlots& head_slots(const ModelParams& p, std::size_t block, std::size_t head) {
    if (block >= p.blocks.size() || head >= p.blocks[block].heads.size()) {
        throw std::out_of_range("no attention head (" + std::to_string(block) + ", " + std::to_string(head) + ")");
    }
    return p.blocks[block].heads[head];
}

// Graph helpers -------------------------------------------------------------

GaussianVar gather(const GaussianVar& g, const std::vector<std::uint32_t>& idx) {
    return {gather_rows(g.mean, idx), gather_rows(g.var, idx)};
}

GaussianVar lookup(ParamBinder& P, std::size_t mean_slot, std::size_t raw_slot,
                   const std::vector<std::uint32_t>& idx) {
    return {gather_rows(P[mean_slot], idx), elu_plus_one(gather_rows(P[raw_slot], idx))};
}

// mean = a.mean Wa + b.mean Wb; var = elu1(a.var Wa' + b.var Wb')
GaussianVar project2(ParamBinder& P, const GaussianVar& a, const GaussianVar& b, std::size_t am, std::size_t bm,
                     std::size_t av, std::size_t bv) {
    return {matmul(a.mean, P[am]) + matmul(b.mean, P[bm]),
            elu_plus_one(matmul(a.var, P[av]) + matmul(b.var, P[bv]))};
}

GaussianVar project1(ParamBinder& P, const GaussianVar& a, std::size_t wm, std::size_t wv) {
    return {matmul(a.mean, P[wm]), elu_plus_one(matmul(a.var, P[wv]))};
}

Var dropout(Var x, double p, Rng* rng) {
    if (p <= 0.0) return x;
    if (rng == nullptr) throw std::invalid_argument("encode: dropout needs an rng");
    Tensor mask = Tensor::with_shape(x.value().shape);
    std::bernoulli_distribution keep(1.0 - p);
    const double scale_kept = 1.0 / (1.0 - p);
    for (auto& m : mask.data) m = keep(*rng) ? scale_kept : 0.0;
    return x * x.tape->constant(std::move(mask));
}

// Position-wise two-layer network, one weight set per behavior.
Var behavior_ffl(ParamBinder& P, Var x, const std::vector<FflSlots>& slots,
                 const std::vector<std::uint32_t>& behaviors, bool positive_out) {
    std::vector<std::vector<std::uint32_t>> groups(slots.size());
    for (std::uint32_t i = 0; i < behaviors.size(); ++i) groups.at(behaviors[i]).push_back(i);
    std::vector<Var> parts;
    std::vector<std::vector<std::uint32_t>> index;
    for (std::size_t b = 0; b < groups.size(); ++b) {
        if (groups[b].empty()) continue;
        const FflSlots& f = slots[b];
        Var xb = gather_rows(x, groups[b]);
        Var h = elu(add_row(matmul(xb, P[f.w1]), P[f.b1]));
        Var out = add_row(matmul(h, P[f.w2]), P[f.b2]);
        parts.push_back(positive_out ? elu_plus_one(out) : out);
        index.push_back(groups[b]);
    }
    return merge_rows(parts, index, behaviors.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape-level Gaussian kernels

Var wasserstein_rows(const GaussianVar& a, const GaussianVar& b) {
    Var dm = square(a.mean - b.mean);
    Var ds = square(sqrt(a.var) - sqrt(b.var));
    return sum_cols(dm + ds);
}

GaussianVar sagp_rows(const GaussianVar& u, const GaussianVar& v, std::optional<Var> align) {
    Var uv = floor_at(u.var, kVarianceFloor);
    Var vv = floor_at(v.var, kVarianceFloor);
    Var total = uv + vv;
    Var v_mean = align ? matmul(v.mean, *align) : v.mean;
    Var mean = (vv * u.mean + uv * v_mean) / total;
    Var var = scale(uv * vv / total, 2.0);
    return {mean, var};
}

GaussianVar tri_sagp_rows(const GaussianVar& base, const GaussianVar& ip, const GaussianVar& pos, Var align_ip,
                          Var align_pos) {
    Var pb = reciprocal(floor_at(base.var, kVarianceFloor));
    Var pi = reciprocal(floor_at(ip.var, kVarianceFloor));
    Var pp = reciprocal(floor_at(pos.var, kVarianceFloor));
    Var var = reciprocal(pb + pi + pp);
    Var mean = var * (base.mean * pb + matmul(ip.mean, align_ip) * pi + matmul(pos.mean, align_pos) * pp);
    return {mean, var};
}

// ---------------------------------------------------------------------------

Var ParamBinder::operator[](std::size_t slot) {
    if (slot >= vars_.size()) throw std::out_of_range("ParamBinder: slot " + std::to_string(slot));
    if (!vars_[slot]) {
        const Tensor& t = params_.tensors[slot];
        // Higher-rank tables are viewed as [rows, last dim].
        Tensor view(t.rows(), t.cols());
        view.data = t.data;
        vars_[slot] = trainable_ ? tape_.leaf(std::move(view)) : tape_.constant(std::move(view));
    }
    return *vars_[slot];
}

void ParamBinder::accumulate(std::vector<Tensor>& grads) const {
    if (grads.size() != vars_.size()) throw std::invalid_argument("ParamBinder::accumulate: size mismatch");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        if (!vars_[i] || !tape_.needs_grad(*vars_[i])) continue;
        const Tensor& g = tape_.grad_of(vars_[i]->id);
        if (g.data.empty()) continue;  // unreachable from the root
        auto& dst = grads[i].data;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[k];
    }
}

EncodedRow encode_graph(ParamBinder& P, const MaskedRow& row, const EncodeOptions& options) {
    const ModelParams& p = P.params();
    const ModelDims& dims = p.dims;
    const std::size_t n = row.valid_len;
    if (n == 0) throw std::invalid_argument("encode: row has no valid positions");
    if (n > dims.L || row.items.size() < n || row.behaviors.size() < n || row.positions.size() < n) {
        throw std::invalid_argument("encode: row shorter than its valid_len or longer than L");
    }
    const std::uint32_t B = dims.num_behaviors;
    const Vocab vocab = p.vocab();
    if (row.user >= dims.num_users) throw std::out_of_range("encode: user id " + std::to_string(row.user));

    std::vector<std::uint32_t> items(row.items.begin(), row.items.begin() + n);
    std::vector<std::uint32_t> behs(row.behaviors.begin(), row.behaviors.begin() + n);
    std::vector<std::uint32_t> pos(row.positions.begin(), row.positions.begin() + n);
    for (std::size_t i = 0; i < n; ++i) {
        if (items[i] >= vocab.item_rows()) throw std::out_of_range("encode: item id " + std::to_string(items[i]));
        if (behs[i] >= B) throw std::out_of_range("encode: behavior id " + std::to_string(behs[i]) + " at valid position");
        if (pos[i] >= dims.L) throw std::out_of_range("encode: position " + std::to_string(pos[i]));
    }

    GaussianVar x = lookup(P, p.item_mean, p.item_rawcov, items);
    const GaussianVar beh = lookup(P, p.behavior_mean, p.behavior_rawcov, behs);
    const GaussianVar position = lookup(P, p.position_mean, p.position_rawcov, pos);
    const GaussianVar user = lookup(P, p.user_mean, p.user_rawcov, std::vector<std::uint32_t>(n, row.user));
    const GaussianVar pattern = sagp_rows(user, beh, P[p.pattern_align]);

    // Pair (s, t) lives in row s * n + t.
    std::vector<std::uint32_t> src(n * n), tgt(n * n), rel(n * n);
    for (std::uint32_t s = 0; s < n; ++s) {
        for (std::uint32_t t = 0; t < n; ++t) {
            src[s * n + t] = s;
            tgt[s * n + t] = t;
            rel[s * n + t] = behs[s] * B + behs[t];
        }
    }
    const GaussianVar relation = lookup(P, p.relation_mean, p.relation_rawcov, rel);

    const std::size_t dh = dims.head_dim();
    EncodedRow out;
    for (std::size_t blk = 0; blk < dims.blocks; ++blk) {
        const BlockSlots& bs = p.blocks[blk];
        std::vector<Var> head_mean, head_var;
        for (std::size_t h = 0; h < dims.heads; ++h) {
            const HeadSlots& hs = bs.heads[h];
            const GaussianVar q = project2(P, x, beh, hs.q_item_mean, hs.q_beh_mean, hs.q_item_var, hs.q_beh_var);
            const GaussianVar k = project2(P, x, beh, hs.k_item_mean, hs.k_beh_mean, hs.k_item_var, hs.k_beh_var);
            const GaussianVar v = project2(P, x, beh, hs.v_item_mean, hs.v_beh_mean, hs.v_item_var, hs.v_beh_var);
            const GaussianVar ph = project1(P, position, hs.pos_mean, hs.pos_var);
            const GaussianVar ch = project1(P, pattern, hs.pattern_mean, hs.pattern_var);

            // Impact factor: m(s, t) scales the behavior relation of the pair.
            Var m = wasserstein_rows(gather(ch, src), gather(ch, tgt));
            const GaussianVar rel_h{slice_cols(relation.mean, h * dh, dh), slice_cols(relation.var, h * dh, dh)};
            const GaussianVar ip{scale_rows(rel_h.mean, m), floor_at(scale_rows(rel_h.var, m), kVarianceFloor)};

            const GaussianVar key = tri_sagp_rows(gather(k, src), ip, gather(ph, src), P[hs.align_ip], P[hs.align_pos]);
            const GaussianVar query = tri_sagp_rows(gather(q, tgt), ip, gather(ph, tgt), P[hs.align_ip], P[hs.align_pos]);
            g_pair_work += static_cast<std::uint64_t>(n) * n * dh;

            Var scores = reshape(scale(wasserstein_rows(key, query), -1.0), n, n);
            Var weights = softmax_cols(scores);  // [source, target]
            if (options.record_attention) out.attention.push_back(weights.value());

            Var wt = transpose(weights);
            head_mean.push_back(matmul(wt, v.mean));
            head_var.push_back(matmul(square(wt), v.var));
        }
        Var att_mean = dropout(concat_cols(head_mean), options.dropout, options.rng);
        Var att_var = concat_cols(head_var);
        GaussianVar hidden{layer_norm(x.mean + att_mean, P[bs.ln_attn_mean_gain], P[bs.ln_attn_mean_bias]),
                           elu_plus_one(layer_norm(x.var + att_var, P[bs.ln_attn_var_gain], P[bs.ln_attn_var_bias]))};

        Var ffl_mean = dropout(behavior_ffl(P, hidden.mean, bs.ffl_mean, behs, false), options.dropout, options.rng);
        Var ffl_var = behavior_ffl(P, hidden.var, bs.ffl_var, behs, true);
        x = {layer_norm(hidden.mean + ffl_mean, P[bs.ln_ffl_mean_gain], P[bs.ln_ffl_mean_bias]),
             elu_plus_one(layer_norm(hidden.var + ffl_var, P[bs.ln_ffl_var_gain], P[bs.ln_ffl_var_bias]))};
    }
    out.state = x;
    out.patterns = pattern;
    return out;
}

EncoderState encode(const MaskedRow& row, const ModelParams& params, const EncodeOptions& options) {
    Tape tape;
    ParamBinder binder(tape, params, false);
    const EncodedRow r = encode_graph(binder, row, options);
    const std::size_t L = params.dims.L, D = params.dims.D, n = row.valid_len;
    EncoderState st;
    st.valid_len = n;
    st.mean = Tensor(L, D, 0.0);
    st.var = Tensor(L, D, 1.0);
    const Tensor& m = r.state.mean.value();
    const Tensor& v = r.state.var.value();
    std::copy(m.data.begin(), m.data.end(), st.mean.data.begin());
    std::copy(v.data.begin(), v.data.end(), st.var.data.begin());
    for (const Tensor& a : r.attention) {
        Tensor full(L, L, 0.0);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t t = 0; t < n; ++t) full.at(s, t) = a.at(s, t);
        st.attention.push_back(std::move(full));
    }
    return st;
}

std::uint64_t pair_work_counter() { return g_pair_work; }

// ---------------------------------------------------------------------------
// Per-operation value API

QKV project_qkv(const DiagonalGaussian& item, const DiagonalGaussian& behavior, const ModelParams& params,
                std::size_t block, std::size_t head) {
    const HeadSlots& s = head_slots(params, block, head);
    return {project_pair(item, behavior, params, s.q_item_mean, s.q_beh_mean, s.q_item_var, s.q_beh_var),
            project_pair(item, behavior, params, s.k_item_mean, s.k_beh_mean, s.k_item_var, s.k_beh_var),
            project_pair(item, behavior, params, s.v_item_mean, s.v_beh_mean, s.v_item_var, s.v_beh_var)};
}

DiagonalGaussian project_pattern(const DiagonalGaussian& pattern, const ModelParams& params, std::size_t block,
                                 std::size_t head) {
    const HeadSlots& s = head_slots(params, block, head);
    return {vecmat(pattern.mean(), params.tensors[s.pattern_mean]),
            elu_plus_one(vecmat(pattern.var(), params.tensors[s.pattern_var]))};
}

DiagonalGaussian project_position(const DiagonalGaussian& position, const ModelParams& params, std::size_t block,
                                  std::size_t head) {
    const HeadSlots& s = head_slots(params, block, head);
    return {vecmat(position.mean(), params.tensors[s.pos_mean]),
            elu_plus_one(vecmat(position.var(), params.tensors[s.pos_var]))};
}

DiagonalGaussian head_slice(const DiagonalGaussian& g, std::size_t head, std::size_t head_dim) {
    if (head_dim == 0 || (head + 1) * head_dim > g.dim()) throw std::out_of_range("head_slice: out of range");
    const auto b = static_cast<std::ptrdiff_t>(head * head_dim);
    const auto e = b + static_cast<std::ptrdiff_t>(head_dim);
    return {std::vector<double>(g.mean().begin() + b, g.mean().begin() + e),
            std::vector<double>(g.var().begin() + b, g.var().begin() + e)};
}

ImpactFactor impact_factor(const DiagonalGaussian& projected_s, const DiagonalGaussian& projected_t,
                           const DiagonalGaussian& relation) {
    const double m = wasserstein_sq(projected_s, projected_t);
    if (relation.dim() != projected_s.dim()) throw std::invalid_argument("impact_factor: relation dimension mismatch");
    std::vector<double> mean(relation.dim()), var(relation.dim());
    for (std::size_t d = 0; d < relation.dim(); ++d) {
        mean[d] = m * relation.mean()[d];
        var[d] = std::max(m * relation.var()[d], kVarianceFloor);
    }
    return {m, DiagonalGaussian(std::move(mean), std::move(var))};
}

std::pair<DiagonalGaussian, DiagonalGaussian> pb_fuse(const DiagonalGaussian& key_s, const DiagonalGaussian& query_t,
                                                      const DiagonalGaussian& ip_st, const DiagonalGaussian& pos_s,
                                                      const DiagonalGaussian& pos_t, const SquareMatrix& align_ip,
                                                      const SquareMatrix& align_pos) {
    return {tri_sagp(key_s, ip_st, pos_s, align_ip, align_pos), tri_sagp(query_t, ip_st, pos_t, align_ip, align_pos)};
}

Tensor attention_matrix(std::span<const DiagonalGaussian> fused_keys, std::span<const DiagonalGaussian> fused_queries,
                        std::size_t L, std::size_t valid_len) {
    if (fused_keys.size() != L * L || fused_queries.size() != L * L) {
        throw std::invalid_argument("attention_matrix: expected L*L fused pairs");
    }
    if (valid_len == 0 || valid_len > L) throw std::invalid_argument("attention_matrix: valid_len out of range");
    Tensor w(L, L, 0.0);
    for (std::size_t t = 0; t < valid_len; ++t) {
        double mx = -INFINITY;
        for (std::size_t s = 0; s < valid_len; ++s) {
            w.at(s, t) = -wasserstein_sq(fused_keys[s * L + t], fused_queries[s * L + t]);
            mx = std::max(mx, w.at(s, t));
        }
        double z = 0.0;
        for (std::size_t s = 0; s < valid_len; ++s) {
            w.at(s, t) = std::exp(w.at(s, t) - mx);
            z += w.at(s, t);
        }
        for (std::size_t s = 0; s < valid_len; ++s) w.at(s, t) /= z;
    }
    return w;
}

}  // namespace pbat
