#include "pbat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pbat {

namespace {

void check_position(const EncoderState& state, std::size_t t) {
    if (t >= state.valid_len) {
        throw std::out_of_range("score: position " + std::to_string(t) + " outside valid prefix of " +
                                std::to_string(state.valid_len));
    }
}

}  // namespace

DiagonalGaussian refine_state(const EncoderState& state, std::size_t t, std::uint32_t user,
                              std::uint32_t target_behavior, const ModelParams& params) {
    check_position(state, t);
    const auto m = state.mean.row(t);
    const auto v = state.var.row(t);
    const DiagonalGaussian s(std::vector<double>(m.begin(), m.end()), std::vector<double>(v.begin(), v.end()));
    return sagp(s, personalized_pattern(params, user, target_behavior));
}

double score_refined(const DiagonalGaussian& refined, std::uint32_t item, const ModelParams& params) {
    return -wasserstein_sq(refined, lookup_entity(params, EntityKind::Item, item));
}

double score_item(const EncoderState& state, std::size_t t, std::uint32_t user, std::uint32_t target_behavior,
                  std::uint32_t item, const ModelParams& params) {
    return score_refined(refine_state(state, t, user, target_behavior, params), item, params);
}

std::optional<RowLoss> row_loss(ParamBinder& P, const MaskedRow& row, const EncodeOptions& options) {
    const ModelParams& p = P.params();
    const std::uint32_t pad = p.vocab().pad_item();
    if (row.target_items.size() != row.masked_positions.size() ||
        row.negative_items.size() != row.masked_positions.size()) {
        throw std::invalid_argument("row_loss: masked positions, targets and negatives differ in length");
    }
    std::vector<std::uint32_t> at, pos, neg;
    for (std::size_t k = 0; k < row.masked_positions.size(); ++k) {
        if (row.target_items[k] == pad) continue;  // padding targets carry no loss
        if (row.masked_positions[k] >= row.valid_len) throw std::invalid_argument("row_loss: masked padding slot");
        at.push_back(row.masked_positions[k]);
        pos.push_back(row.target_items[k]);
        neg.push_back(row.negative_items[k]);
    }
    if (at.empty()) return std::nullopt;

    const EncodedRow enc = encode_graph(P, row, options);
    const GaussianVar state{gather_rows(enc.state.mean, at), gather_rows(enc.state.var, at)};
    const GaussianVar pattern{gather_rows(enc.patterns.mean, at), gather_rows(enc.patterns.var, at)};
    const GaussianVar refined = sagp_rows(state, pattern, std::nullopt);
    auto items = [&](const std::vector<std::uint32_t>& ids) {
        return GaussianVar{gather_rows(P[p.item_mean], ids), elu_plus_one(gather_rows(P[p.item_rawcov], ids))};
    };
    // score = -W; softplus(-score_pos) = softplus(W_pos), softplus(score_neg) = softplus(-W_neg)
    Var w_pos = wasserstein_rows(refined, items(pos));
    Var w_neg = wasserstein_rows(refined, items(neg));
    for (const Var* w : {&w_pos, &w_neg}) {
        for (std::size_t k = 0; k < at.size(); ++k) {
            if (!std::isfinite(w->value().data[k])) {
                throw std::runtime_error("row_loss: non-finite score for user " + std::to_string(row.user) +
                                         " at position " + std::to_string(at[k]));
            }
        }
    }
    Var loss = sum_all(softplus(w_pos)) + sum_all(softplus(scale(w_neg, -1.0)));
    return RowLoss{loss, at.size()};
}

double cloze_loss(const MaskedBatch& batch, const ModelParams& params) {
    double total = 0.0;
    for (const MaskedRow& row : batch) {
        Tape tape;
        ParamBinder binder(tape, params, false);
        if (auto r = row_loss(binder, row)) total += r->loss.value().data[0];
    }
    return total;
}

Gradients backward(const MaskedBatch& batch, const ModelParams& params, const EncodeOptions& options) {
    Gradients out;
    out.grads = zeros_like(params);
    for (const MaskedRow& row : batch) {
        Tape tape;
        ParamBinder binder(tape, params, true);
        auto r = row_loss(binder, row, options);
        if (!r) continue;
        tape.backward(r->loss);
        binder.accumulate(out.grads);
        out.loss += r->loss.value().data[0];
        out.masked += r->masked;
    }
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
        for (std::size_t k = 0; k < out.grads[i].size(); ++k) {
            if (!std::isfinite(out.grads[i].data[k])) {
                throw std::runtime_error("backward: non-finite gradient in " + params.names[i] + "[" +
                                         std::to_string(k) + "]");
            }
        }
    }
    return out;
}

AdamState make_adam(const ModelParams& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m = zeros_like(params);
    s.v = zeros_like(params);
    return s;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& s) {
    if (grads.size() != params.tensors.size() || s.m.size() != params.tensors.size()) {
        throw std::invalid_argument("adam_step: gradient/state layout does not match parameters");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& w = params.tensors[i].data;
        const auto& g = grads[i].data;
        auto& m = s.m[i].data;
        auto& v = s.v[i].data;
        if (g.size() != w.size()) throw std::invalid_argument("adam_step: shape mismatch for " + params.names[i]);
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
            w[k] -= s.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.eps);
        }
    }
}

LossReport train_epoch(const SplitDataset& split, ModelParams& params, AdamState& state, const TrainConfig& config,
                       std::size_t epoch) {
    if (split.users.empty()) throw std::invalid_argument("train_epoch: empty training set");
    if (config.batch_size == 0) throw std::invalid_argument("train_epoch: batch_size must be positive");
    const auto start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(split.users.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = row_rng(config.seed, epoch, ~std::uint64_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossReport report;
    report.epoch = epoch;
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t e = std::min(order.size(), b + config.batch_size);
        MaskedBatch batch;
        std::vector<Rng> rngs;
        for (std::size_t i = b; i < e; ++i) {
            const auto& seq = split.users[order[i]].train;
            Rng rng = row_rng(config.seed, epoch, seq.user);
            batch.push_back(make_training_row(seq, config.rho, split.vocab, rng));
            rngs.push_back(rng);
        }
        Gradients g;
        g.grads = zeros_like(params);
        for (std::size_t r = 0; r < batch.size(); ++r) {
            // Dropout draws continue each row's own stream.
            EncodeOptions opt{config.dropout, &rngs[r], false};
            Gradients one = backward(MaskedBatch{batch[r]}, params, opt);
            g.loss += one.loss;
            g.masked += one.masked;
            for (std::size_t i = 0; i < g.grads.size(); ++i)
                for (std::size_t k = 0; k < g.grads[i].size(); ++k) g.grads[i].data[k] += one.grads[i].data[k];
        }
        adam_step(params, g.grads, state);
        total += g.loss;
        report.masked += g.masked;
    }
    report.loss = report.masked == 0 ? 0.0 : total / static_cast<double>(report.masked);
    if (!std::isfinite(report.loss)) throw std::runtime_error("train_epoch: non-finite loss");
    report.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string loss_report_json(const LossReport& r) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["masked"] = r.masked;
    j["secs"] = r.secs;
    return j.dump();
}

bool GradCheckReport::passed() const { return failures().empty(); }

std::vector<std::string> GradCheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& g : groups) {
        if (g.checked == 0) {
            out.push_back(g.name + ": no coordinate above finite-difference resolution");
        } else if (!(g.max_rel_error < tolerance)) {
            std::ostringstream s;
            s << g.name << "[" << g.worst_index << "]: analytic " << g.analytic << " vs numeric " << g.numeric
              << " (rel err " << g.max_rel_error << ")";
            out.push_back(s.str());
        }
    }
    return out;
}

GradCheckReport grad_check(const ModelParams& params, const MaskedBatch& batch, const GradCheckOptions& options) {
    Gradients analytic = backward(batch, params);
    if (options.tamper) options.tamper(analytic.grads);

    GradCheckReport report;
    report.tolerance = options.tolerance;
    ModelParams work = params;
    Rng rng(options.seed);
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const auto& a = analytic.grads[i].data;
        // Coordinates: the largest analytic entry, a sample of the other
        // reachable entries, and one uniform draw over the whole tensor.
        std::vector<std::size_t> live;
        for (std::size_t k = 0; k < a.size(); ++k)
            if (a[k] != 0.0) live.push_back(k);
        std::vector<std::size_t> coords;
        if (!live.empty()) {
            coords.push_back(*std::max_element(live.begin(), live.end(), [&](std::size_t x, std::size_t y) {
                return std::abs(a[x]) < std::abs(a[y]);
            }));
            std::shuffle(live.begin(), live.end(), rng);
            for (std::size_t k : live) {
                if (coords.size() + 1 >= options.coords_per_group) break;
                if (k != coords.front()) coords.push_back(k);
            }
        }
        coords.push_back(std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng));

        GradCheckGroup group;
        group.name = params.names[i];
        for (std::size_t k : coords) {
            double& w = work.tensors[i].data[k];
            const double saved = w;
            w = saved + options.step;
            const double up = cloze_loss(batch, work);
            w = saved - options.step;
            const double down = cloze_loss(batch, work);
            w = saved;
            const double f = (up - down) / (2.0 * options.step);
            const double noise = std::numeric_limits<double>::epsilon() * std::max({std::abs(up), std::abs(down), 1.0}) /
                                 options.step;
            if (a[k] != f && std::max(std::abs(a[k]), std::abs(f)) < noise / options.tolerance) {
                ++group.unresolved;
                continue;
            }
            const double err = std::abs(a[k] - f) / std::max({std::abs(a[k]), std::abs(f), 1e-8});
            ++group.checked;
            if (group.checked == 1 || err > group.max_rel_error) {
                group.max_rel_error = err;
                group.worst_index = k;
                group.analytic = a[k];
                group.numeric = f;
            }
        }
        report.groups.push_back(group);
    }
    return report;
}

}  // namespace pbat
