#include "pbat/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pbat/encoder.hpp"
#include "pbat/training.hpp"

namespace pbat {

MaskedRow inference_row(const MultiBehaviorSequence& history, std::uint32_t target_behavior,
                        const ModelParams& params) {
    const std::size_t L = params.dims.L;
    const Vocab vocab = params.vocab();
    if (target_behavior >= vocab.num_behaviors) {
        throw std::out_of_range("inference_row: target behavior " + std::to_string(target_behavior));
    }
    const std::size_t n = history.valid_len;
    const std::size_t keep = std::min(n, L - 1);
    const std::size_t skip = n - keep;
    MaskedRow row;
    row.user = history.user;
    row.items.assign(L, vocab.pad_item());
    row.behaviors.assign(L, vocab.pad_behavior());
    row.positions.resize(L);
    std::iota(row.positions.begin(), row.positions.end(), 0U);
    for (std::size_t i = 0; i < keep; ++i) {
        row.items[i] = history.items[skip + i];
        row.behaviors[i] = history.behaviors[skip + i];
    }
    row.items[keep] = vocab.mask_item();
    row.behaviors[keep] = target_behavior;
    row.valid_len = keep + 1;
    row.masked_positions = {static_cast<std::uint32_t>(keep)};
    return row;
}

RankResult predict_next(const MultiBehaviorSequence& history, std::uint32_t target_behavior,
                        const ModelParams& params, std::span<const std::uint32_t> candidates,
                        std::optional<std::uint32_t> target, std::size_t top_k) {
    if (candidates.empty()) throw std::invalid_argument("predict_next: no candidates");
    const MaskedRow row = inference_row(history, target_behavior, params);
    const EncoderState state = encode(row, params);
    const DiagonalGaussian refined =
        refine_state(state, row.valid_len - 1, history.user, target_behavior, params);

    std::vector<std::pair<double, std::uint32_t>> scored;
    scored.reserve(candidates.size());
    for (std::uint32_t item : candidates) scored.emplace_back(score_refined(refined, item, params), item);
    auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };

    RankResult out;
    out.user = history.user;
    if (target) {
        const auto it = std::find_if(scored.begin(), scored.end(), [&](const auto& s) { return s.second == *target; });
        if (it == scored.end()) throw std::invalid_argument("predict_next: target not among candidates");
        out.target = *target;
        out.rank = 1 + static_cast<std::size_t>(
                           std::count_if(scored.begin(), scored.end(), [&](const auto& s) { return better(s, *it); }));
    }
    const std::size_t k = std::min(top_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
    for (std::size_t i = 0; i < k; ++i) out.top.push_back(scored[i].second);
    return out;
}

double hr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw std::invalid_argument("hr_at_k: empty rank list");
    std::size_t hits = 0;
    for (std::size_t r : ranks) {
        if (r == 0) throw std::invalid_argument("hr_at_k: ranks are 1-based");
        if (r <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw std::invalid_argument("ndcg_at_k: empty rank list");
    double total = 0.0;
    for (std::size_t r : ranks) {
        if (r == 0) throw std::invalid_argument("ndcg_at_k: ranks are 1-based");
        if (r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    return total / static_cast<double>(ranks.size());
}

CandidateMode CandidateMode::parse(const std::string& text) {
    CandidateMode mode;
    if (text == "all") return mode;
    const std::string prefix = "sampled:";
    if (text.rfind(prefix, 0) == 0) {
        const std::string num = text.substr(prefix.size());
        std::size_t used = 0;
        unsigned long n = 0;
        try {
            n = std::stoul(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == num.size() && n > 0) {
            mode.kind = Kind::Sampled;
            mode.n = n;
            return mode;
        }
    }
    throw std::invalid_argument("candidate mode must be 'all' or 'sampled:N', got '" + text + "'");
}

MultiBehaviorSequence test_history(const UserSplit& user, std::size_t L, const Vocab& vocab) {
    const auto& tr = user.train;
    std::vector<std::uint32_t> items(tr.items.begin(), tr.items.begin() + static_cast<std::ptrdiff_t>(tr.valid_len));
    std::vector<std::uint32_t> behs(tr.behaviors.begin(),
                                    tr.behaviors.begin() + static_cast<std::ptrdiff_t>(tr.valid_len));
    items.push_back(user.validation.item);
    behs.push_back(user.validation.behavior);
    return make_sequence(tr.user, items, behs, L, vocab);
}

MetricsReport evaluate(const SplitDataset& split, const ModelParams& params, const CandidateMode& mode,
                       std::vector<RankResult>* ranks_out) {
    if (split.users.empty()) throw std::invalid_argument("evaluate: no users");
    const std::uint32_t V = params.dims.num_items;
    std::vector<std::size_t> ranks;
    for (const UserSplit& u : split.users) {
        const MultiBehaviorSequence hist = test_history(u, params.dims.L, split.vocab);
        std::set<std::uint32_t> seen(hist.items.begin(), hist.items.begin() + static_cast<std::ptrdiff_t>(hist.valid_len));
        std::vector<std::uint32_t> pool;
        for (std::uint32_t i = 0; i < V; ++i)
            if (i != u.test.item && !seen.count(i)) pool.push_back(i);
        std::vector<std::uint32_t> candidates;
        if (mode.kind == CandidateMode::Kind::AllItems) {
            candidates = pool;
        } else {
            Rng rng = row_rng(mode.seed, 0xe7a1ULL, u.train.user);
            std::shuffle(pool.begin(), pool.end(), rng);
            candidates.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(mode.n, pool.size())));
        }
        candidates.push_back(u.test.item);
        std::sort(candidates.begin(), candidates.end());
        RankResult r = predict_next(hist, u.test.behavior, params, candidates, u.test.item);
        ranks.push_back(r.rank);
        if (ranks_out) ranks_out->push_back(std::move(r));
    }
    return {hr_at_k(ranks, 5), hr_at_k(ranks, 10), ndcg_at_k(ranks, 5), ndcg_at_k(ranks, 10), ranks.size()};
}

double cloze_reconstruction_hr1(const SplitDataset& split, const ModelParams& params) {
    if (split.users.empty()) throw std::invalid_argument("cloze_reconstruction_hr1: no users");
    std::vector<std::uint32_t> all(params.dims.num_items);
    std::iota(all.begin(), all.end(), 0U);
    std::size_t hits = 0, counted = 0;
    for (const UserSplit& u : split.users) {
        const auto& tr = u.train;
        if (tr.valid_len < 1) continue;
        const std::size_t last = tr.valid_len - 1;
        // Context = prefix without its last pair; the mask slot carries that pair's behavior.
        MultiBehaviorSequence ctx = tr;
        ctx.valid_len = last;
        ctx.items[last] = split.vocab.pad_item();
        ctx.behaviors[last] = split.vocab.pad_behavior();
        const RankResult r = predict_next(ctx, tr.behaviors[last], params, all, tr.items[last], 1);
        ++counted;
        if (r.rank == 1) ++hits;
    }
    if (counted == 0) throw std::invalid_argument("cloze_reconstruction_hr1: no non-empty prefixes");
    return static_cast<double>(hits) / static_cast<double>(counted);
}

namespace {

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

Tensor export_behavior_matrix(const ModelParams& params, std::optional<std::uint32_t> user) {
    const std::uint32_t B = params.dims.num_behaviors;
    if (user && *user >= params.dims.num_users) {
        throw std::out_of_range("export_behavior_matrix: unknown user " + std::to_string(*user));
    }
    const Tensor& rel = params.tensors[params.relation_mean];
    Tensor out(B, B);
    std::vector<DiagonalGaussian> patterns;
    if (user)
        for (std::uint32_t b = 0; b < B; ++b) patterns.push_back(personalized_pattern(params, *user, b));
    for (std::uint32_t i = 0; i < B; ++i) {
        for (std::uint32_t j = 0; j < B; ++j) {
            double value = l2(rel.row(static_cast<std::size_t>(i) * B + j));
            if (user) {
                double m = 0.0;
                std::size_t count = 0;
                for (std::size_t blk = 0; blk < params.dims.blocks; ++blk) {
                    for (std::size_t h = 0; h < params.dims.heads; ++h) {
                        m += wasserstein_sq(project_pattern(patterns[i], params, blk, h),
                                            project_pattern(patterns[j], params, blk, h));
                        ++count;
                    }
                }
                value *= m / static_cast<double>(count);
            }
            out.at(i, j) = value;
        }
    }
    return out;
}

std::string matrix_csv(const Tensor& matrix) {
    std::ostringstream s;
    s.precision(9);
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        for (std::size_t j = 0; j < matrix.cols(); ++j) s << (j ? "," : "") << matrix.at(i, j);
        s << "\n";
    }
    return s.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'P', 'B', 'A', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    std::uint32_t u32(const std::string& field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string bytes(std::size_t n, const std::string& field) {
        need(n, field);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void floats(std::span<double> out, const std::string& field) {
        need(4 * out.size(), field);
        for (double& v : out) v = static_cast<double>(std::bit_cast<float>(u32(field)));
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n, const std::string& field) const {
        if (b_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated while reading " + field);
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

struct Entry {
    std::string name;
    std::vector<std::size_t> dims;
};

void expect_eq(std::size_t got, std::size_t want, const std::string& field) {
    if (got != want) {
        throw std::runtime_error("checkpoint shape mismatch: " + field + " is " + std::to_string(got) +
                                 ", expected " + std::to_string(want));
    }
}

const Entry& find_entry(const std::vector<Entry>& entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw std::runtime_error("checkpoint is missing tensor " + name);
}

ModelDims infer_dims(const std::vector<Entry>& entries) {
    auto shape = [&](const std::string& name, std::size_t rank) {
        const Entry& e = find_entry(entries, name);
        if (e.dims.size() != rank) throw std::runtime_error("checkpoint tensor " + name + " has wrong rank");
        return e.dims;
    };
    ModelDims d;
    const auto item = shape("item.mean", 2);
    d.D = item[1];
    if (item[0] < 2) throw std::runtime_error("checkpoint item table too small");
    d.num_items = static_cast<std::uint32_t>(item[0] - 2);
    d.num_users = static_cast<std::uint32_t>(shape("user.mean", 2)[0]);
    d.num_behaviors = static_cast<std::uint32_t>(shape("relation.mean", 3)[0]);
    d.L = shape("position.mean", 2)[0];
    std::set<std::string> blocks, heads;
    for (const auto& e : entries) {
        if (e.name.rfind("block", 0) != 0) continue;
        const auto dot = e.name.find('.');
        blocks.insert(e.name.substr(0, dot));
        if (e.name.compare(0, 7, "block0.") == 0 && e.name.compare(7, 4, "head") == 0)
            heads.insert(e.name.substr(7, e.name.find('.', 7) - 7));
    }
    d.blocks = blocks.size();
    d.heads = heads.size();
    d.d_ff = shape("block0.ffl0.mean.w1", 2)[1];
    if (d.d_ff == 4 * d.D) d.d_ff = 0;
    return d;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
    std::string out(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        put_u32(out, static_cast<std::uint32_t>(params.names[i].size()));
        out += params.names[i];
        put_u32(out, static_cast<std::uint32_t>(params.tensors[i].shape.size()));
        for (std::size_t d : params.tensors[i].shape) put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& t : params.tensors)
        for (double v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelParams parse_checkpoint(const std::string& bytes, const std::optional<ModelDims>& expected) {
    Reader r(bytes);
    if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw std::runtime_error("checkpoint: bad magic (want PBAT)");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32("tensor count");
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint32_t len = r.u32("name length");
        e.name = r.bytes(len, "tensor name");
        const std::uint32_t rank = r.u32("rank of " + e.name);
        for (std::uint32_t k = 0; k < rank; ++k) e.dims.push_back(r.u32("dims of " + e.name));
        entries.push_back(std::move(e));
    }

    const ModelDims dims = infer_dims(entries);
    if (expected) {
        expect_eq(dims.D, expected->D, "D");
        expect_eq(dims.L, expected->L, "L");
        expect_eq(dims.heads, expected->heads, "heads");
        expect_eq(dims.blocks, expected->blocks, "N_blocks");
        expect_eq(dims.ffl_dim(), expected->ffl_dim(), "D_ff");
        if (expected->num_users) expect_eq(dims.num_users, expected->num_users, "num_users");
        if (expected->num_items) expect_eq(dims.num_items, expected->num_items, "num_items");
        if (expected->num_behaviors) expect_eq(dims.num_behaviors, expected->num_behaviors, "num_behaviors");
    }
    ModelParams p = init_params(dims, 0);
    if (p.tensors.size() != entries.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(entries.size()) + " tensors, layout needs " +
                                 std::to_string(p.tensors.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != p.names[i]) {
            throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " is " + entries[i].name +
                                     ", expected " + p.names[i]);
        }
        if (entries[i].dims != p.tensors[i].shape) throw std::runtime_error("checkpoint shape mismatch in " + p.names[i]);
    }
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        r.floats(p.tensors[i].data, "data of " + p.names[i]);
    }
    if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
    return p;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelDims>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str(), expected);
}

}  // namespace pbat
