#include "pbat/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace pbat {

namespace {

constexpr double kInitStd = 0.02;

class Builder {
public:
    Builder(ModelParams& p, std::uint64_t seed) : p_(p), rng_(seed) {}

    std::size_t table(const std::string& name, std::vector<std::size_t> shape) {
        Tensor t = Tensor::with_shape(std::move(shape));
        std::normal_distribution<double> dist(0.0, kInitStd);
        for (auto& v : t.data) v = dist(rng_);
        return add(name, std::move(t));
    }

    std::size_t glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
        Tensor t(fan_in, fan_out);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
        for (auto& v : t.data) v = dist(rng_);
        return add(name, std::move(t));
    }

    std::size_t identity(const std::string& name, std::size_t dim) {
        Tensor t(dim, dim);
        for (std::size_t i = 0; i < dim; ++i) t.at(i, i) = 1.0;
        return add(name, std::move(t));
    }

    std::size_t constant(const std::string& name, std::size_t cols, double value) {
        return add(name, Tensor(1, cols, value));
    }

private:
    std::size_t add(const std::string& name, Tensor t) {
        p_.names.push_back(name);
        p_.tensors.push_back(std::move(t));
        return p_.tensors.size() - 1;
    }

    ModelParams& p_;
    Rng rng_;
};

const Tensor& table_for(const ModelParams& p, EntityKind kind, bool mean) {
    switch (kind) {
        case EntityKind::Item: return p.tensors[mean ? p.item_mean : p.item_rawcov];
        case EntityKind::User: return p.tensors[mean ? p.user_mean : p.user_rawcov];
        case EntityKind::Behavior: return p.tensors[mean ? p.behavior_mean : p.behavior_rawcov];
        case EntityKind::Position: return p.tensors[mean ? p.position_mean : p.position_rawcov];
    }
    throw std::logic_error("unknown entity kind");
}

const char* kind_name(EntityKind kind) {
    switch (kind) {
        case EntityKind::Item: return "item";
        case EntityKind::User: return "user";
        case EntityKind::Behavior: return "behavior";
        case EntityKind::Position: return "position";
    }
    return "?";
}

DiagonalGaussian row_gaussian(const Tensor& mean, const Tensor& rawcov, std::size_t row) {
    const auto m = mean.row(row);
    const auto r = rawcov.row(row);
    return {std::vector<double>(m.begin(), m.end()), elu_plus_one(r)};
}

}  // namespace

std::size_t ModelParams::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw std::out_of_range("no parameter named " + name);
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    if (dims.num_users == 0 || dims.num_items == 0 || dims.num_behaviors == 0) {
        throw std::invalid_argument("init_params: vocabulary sizes must be known");
    }
    ModelParams p;
    p.dims = dims;
    const std::size_t D = dims.D, dh = dims.head_dim(), dff = dims.ffl_dim();
    const Vocab vocab = p.vocab();
    Builder b(p, seed);

    p.item_mean = b.table("item.mean", {vocab.item_rows(), D});
    p.item_rawcov = b.table("item.rawcov", {vocab.item_rows(), D});
    p.user_mean = b.table("user.mean", {dims.num_users, D});
    p.user_rawcov = b.table("user.rawcov", {dims.num_users, D});
    p.behavior_mean = b.table("behavior.mean", {vocab.behavior_rows(), D});
    p.behavior_rawcov = b.table("behavior.rawcov", {vocab.behavior_rows(), D});
    p.position_mean = b.table("position.mean", {dims.L, D});
    p.position_rawcov = b.table("position.rawcov", {dims.L, D});
    p.relation_mean = b.table("relation.mean", {dims.num_behaviors, dims.num_behaviors, D});
    p.relation_rawcov = b.table("relation.rawcov", {dims.num_behaviors, dims.num_behaviors, D});
    p.pattern_align = b.identity("pattern.align", D);

    for (std::size_t n = 0; n < dims.blocks; ++n) {
        const std::string bp = "block" + std::to_string(n) + ".";
        BlockSlots blk;
        for (std::size_t h = 0; h < dims.heads; ++h) {
            const std::string hp = bp + "head" + std::to_string(h) + ".";
            HeadSlots s{};
            auto proj = [&](const std::string& name) { return b.glorot(hp + name, D, dh); };
            s.q_item_mean = proj("q.item_mean");
            s.q_beh_mean = proj("q.behavior_mean");
            s.q_item_var = proj("q.item_var");
            s.q_beh_var = proj("q.behavior_var");
            s.k_item_mean = proj("k.item_mean");
            s.k_beh_mean = proj("k.behavior_mean");
            s.k_item_var = proj("k.item_var");
            s.k_beh_var = proj("k.behavior_var");
            s.v_item_mean = proj("v.item_mean");
            s.v_beh_mean = proj("v.behavior_mean");
            s.v_item_var = proj("v.item_var");
            s.v_beh_var = proj("v.behavior_var");
            s.align_ip = b.identity(hp + "align_ip", dh);
            s.align_pos = b.identity(hp + "align_pos", dh);
            s.pattern_mean = proj("pattern.mean");
            s.pattern_var = proj("pattern.var");
            s.pos_mean = proj("position.mean");
            s.pos_var = proj("position.var");
            blk.heads.push_back(s);
        }
        for (std::uint32_t beh = 0; beh < vocab.behavior_rows(); ++beh) {
            for (const char* stream : {"mean", "var"}) {
                const std::string fp = bp + "ffl" + std::to_string(beh) + "." + stream + ".";
                FflSlots f{};
                f.w1 = b.glorot(fp + "w1", D, dff);
                f.b1 = b.constant(fp + "b1", dff, 0.0);
                f.w2 = b.glorot(fp + "w2", dff, D);
                f.b2 = b.constant(fp + "b2", D, 0.0);
                (std::string(stream) == "mean" ? blk.ffl_mean : blk.ffl_var).push_back(f);
            }
        }
        blk.ln_attn_mean_gain = b.constant(bp + "ln_attn.mean.gain", D, 1.0);
        blk.ln_attn_mean_bias = b.constant(bp + "ln_attn.mean.bias", D, 0.0);
        blk.ln_attn_var_gain = b.constant(bp + "ln_attn.var.gain", D, 1.0);
        blk.ln_attn_var_bias = b.constant(bp + "ln_attn.var.bias", D, 0.0);
        blk.ln_ffl_mean_gain = b.constant(bp + "ln_ffl.mean.gain", D, 1.0);
        blk.ln_ffl_mean_bias = b.constant(bp + "ln_ffl.mean.bias", D, 0.0);
        blk.ln_ffl_var_gain = b.constant(bp + "ln_ffl.var.gain", D, 1.0);
        blk.ln_ffl_var_bias = b.constant(bp + "ln_ffl.var.bias", D, 0.0);
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

void perturb_params(ModelParams& params, double scale, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& t : params.tensors)
        for (auto& v : t.data) v += dist(rng);
}

std::vector<Tensor> zeros_like(const ModelParams& params) {
    std::vector<Tensor> out;
    out.reserve(params.tensors.size());
    for (const auto& t : params.tensors) out.push_back(Tensor::with_shape(t.shape));
    return out;
}

DiagonalGaussian lookup_entity(const ModelParams& params, EntityKind kind, std::uint32_t id) {
    const Tensor& mean = table_for(params, kind, true);
    if (id >= mean.rows()) {
        throw std::out_of_range(std::string("lookup_entity: ") + kind_name(kind) + " id " + std::to_string(id) +
                                " outside table of " + std::to_string(mean.rows()) + " rows");
    }
    return row_gaussian(mean, table_for(params, kind, false), id);
}

DiagonalGaussian lookup_relation(const ModelParams& params, std::uint32_t from, std::uint32_t to) {
    const std::uint32_t B = params.dims.num_behaviors;
    if (from >= B || to >= B) {
        throw std::out_of_range("lookup_relation: behavior pair (" + std::to_string(from) + ", " +
                                std::to_string(to) + ") outside " + std::to_string(B) + " behaviors");
    }
    return row_gaussian(params.tensors[params.relation_mean], params.tensors[params.relation_rawcov],
                        static_cast<std::size_t>(from) * B + to);
}

DiagonalGaussian personalized_pattern(const ModelParams& params, std::uint32_t user, std::uint32_t behavior) {
    return sagp(lookup_entity(params, EntityKind::User, user), lookup_entity(params, EntityKind::Behavior, behavior),
                as_square(params.tensors[params.pattern_align]));
}

SquareMatrix as_square(const Tensor& t) {
    if (t.rows() != t.cols()) throw std::invalid_argument("as_square: tensor is not square");
    return {t.rows(), t.data};
}

}  // namespace pbat
