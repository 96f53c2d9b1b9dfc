#include "pbat/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace pbat {

namespace {

template <typename T>
bool parse_int(std::string_view field, T& out) {
    if (field.empty()) return false;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

InteractionLog parse_tsv(std::string_view text) {
    InteractionLog log;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        std::string_view fields[4];
        std::size_t count = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            const std::string_view f = line.substr(start, tab == std::string_view::npos ? line.npos : tab - start);
            if (count < 4) fields[count] = f;
            ++count;
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        if (count != 4) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                                     std::to_string(count));
        }
        Interaction rec;
        if (!parse_int(fields[0], rec.user) || !parse_int(fields[1], rec.item) ||
            !parse_int(fields[2], rec.behavior) || !parse_int(fields[3], rec.timestamp)) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": fields must be base-10 integers");
        }
        log.interactions.push_back(rec);
    }
    if (log.interactions.empty()) throw std::runtime_error("interaction log is empty");
    log.vocab = infer_vocab(log.interactions);
    return log;
}

InteractionLog ingest_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_tsv(buf.str());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::string format_tsv(std::span<const Interaction> interactions) {
    std::string out;
    for (const auto& r : interactions) {
        out += std::to_string(r.user);
        out += '\t';
        out += std::to_string(r.item);
        out += '\t';
        out += std::to_string(r.behavior);
        out += '\t';
        out += std::to_string(r.timestamp);
        out += '\n';
    }
    return out;
}

void write_tsv(const std::filesystem::path& path, std::span<const Interaction> interactions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << format_tsv(interactions);
}

Vocab infer_vocab(std::span<const Interaction> interactions) {
    Vocab v;
    for (const auto& r : interactions) {
        v.num_users = std::max(v.num_users, r.user + 1);
        v.num_items = std::max(v.num_items, r.item + 1);
        v.num_behaviors = std::max(v.num_behaviors, r.behavior + 1);
    }
    return v;
}

MultiBehaviorSequence make_sequence(std::uint32_t user, std::span<const std::uint32_t> items,
                                    std::span<const std::uint32_t> behaviors, std::size_t L,
                                    const Vocab& vocab) {
    if (items.size() != behaviors.size()) throw std::invalid_argument("make_sequence: length mismatch");
    const std::size_t keep = std::min(items.size(), L);
    const std::size_t skip = items.size() - keep;
    MultiBehaviorSequence seq;
    seq.user = user;
    seq.items.assign(L, vocab.pad_item());
    seq.behaviors.assign(L, vocab.pad_behavior());
    std::copy(items.begin() + static_cast<std::ptrdiff_t>(skip), items.end(), seq.items.begin());
    std::copy(behaviors.begin() + static_cast<std::ptrdiff_t>(skip), behaviors.end(), seq.behaviors.begin());
    seq.valid_len = keep;
    return seq;
}

std::vector<MultiBehaviorSequence> build_sequences(std::span<const Interaction> interactions,
                                                   const Vocab& vocab, std::size_t L) {
    if (L < 2) throw std::invalid_argument("build_sequences: L must be >= 2");
    std::map<std::uint32_t, std::vector<Interaction>> by_user;
    for (const auto& r : interactions) {
        if (r.item >= vocab.num_items || r.behavior >= vocab.num_behaviors || r.user >= vocab.num_users) {
            throw std::invalid_argument("build_sequences: interaction id outside vocabulary");
        }
        by_user[r.user].push_back(r);
    }
    std::vector<MultiBehaviorSequence> out;
    for (auto& [user, recs] : by_user) {
        if (recs.size() < 3) continue;
        std::stable_sort(recs.begin(), recs.end(),
                         [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
        std::vector<std::uint32_t> items, behaviors;
        for (const auto& r : recs) {
            items.push_back(r.item);
            behaviors.push_back(r.behavior);
        }
        out.push_back(make_sequence(user, items, behaviors, L, vocab));
    }
    return out;
}

SplitDataset leave_one_out_split(std::span<const MultiBehaviorSequence> sequences, const Vocab& vocab) {
    SplitDataset split;
    split.vocab = vocab;
    for (const auto& seq : sequences) {
        if (seq.valid_len < 3) {
            throw std::invalid_argument("leave_one_out_split: user " + std::to_string(seq.user) +
                                        " has fewer than 3 interactions");
        }
        split.max_len = std::max(split.max_len, seq.length());
        const std::size_t n = seq.valid_len;
        UserSplit u;
        u.test = {seq.items[n - 1], seq.behaviors[n - 1]};
        u.validation = {seq.items[n - 2], seq.behaviors[n - 2]};
        u.train = make_sequence(seq.user, std::span(seq.items).first(n - 2),
                                std::span(seq.behaviors).first(n - 2), seq.length(), vocab);
        split.users.push_back(std::move(u));
    }
    return split;
}

MaskedRow cloze_mask(const MultiBehaviorSequence& sequence, double rho, const Vocab& vocab, Rng& rng) {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("cloze_mask: rho must lie in (0, 1)");
    if (sequence.valid_len < 1) throw std::invalid_argument("cloze_mask: empty sequence");
    MaskedRow row;
    row.user = sequence.user;
    row.items = sequence.items;
    row.behaviors = sequence.behaviors;
    row.valid_len = sequence.valid_len;
    row.positions.resize(sequence.length());
    std::iota(row.positions.begin(), row.positions.end(), 0U);

    std::bernoulli_distribution coin(rho);
    for (std::size_t p = 0; p < sequence.valid_len; ++p) {
        if (coin(rng)) row.masked_positions.push_back(static_cast<std::uint32_t>(p));
    }
    if (row.masked_positions.empty()) {
        row.masked_positions.push_back(static_cast<std::uint32_t>(sequence.valid_len - 1));
    }
    for (auto p : row.masked_positions) {
        row.target_items.push_back(sequence.items[p]);
        row.items[p] = vocab.mask_item();
    }
    return row;
}

std::uint32_t sample_negative(const MultiBehaviorSequence& sequence, std::uint32_t num_items, Rng& rng) {
    std::unordered_set<std::uint32_t> seen;
    for (std::size_t p = 0; p < sequence.valid_len; ++p) {
        if (sequence.items[p] < num_items) seen.insert(sequence.items[p]);
    }
    if (seen.size() >= num_items) {
        throw std::runtime_error("sample_negative: every item occurs in the sequence of user " +
                                 std::to_string(sequence.user));
    }
    std::uniform_int_distribution<std::uint32_t> pick(0, num_items - 1);
    while (true) {
        const std::uint32_t c = pick(rng);
        if (!seen.contains(c)) return c;
    }
}

MaskedRow make_training_row(const MultiBehaviorSequence& sequence, double rho, const Vocab& vocab,
                            Rng& rng) {
    MaskedRow row = cloze_mask(sequence, rho, vocab, rng);
    for (std::size_t k = 0; k < row.masked_positions.size(); ++k) {
        row.negative_items.push_back(sample_negative(sequence, vocab.num_items, rng));
    }
    return row;
}

Rng row_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t user) {
    return Rng(splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ user));
}

// ---------------------------------------------------------------------------

BehaviorRoles BehaviorRoles::for_count(std::uint32_t num_behaviors) {
    if (num_behaviors < 3) {
        throw std::invalid_argument("planted rule needs at least 3 behaviors (favorite, cart, target)");
    }
    return {num_behaviors - 1, num_behaviors - 2, num_behaviors - 3};
}

namespace {

// Each user draws auxiliary items from a personal taste set with Zipf weights.
struct Taste {
    std::vector<std::uint32_t> items;
    std::discrete_distribution<std::size_t> pick;

    Taste(std::uint32_t num_items, Rng& rng) {
        const std::uint32_t size = std::clamp<std::uint32_t>(num_items / 4, std::min(num_items, 6U), num_items);
        std::vector<std::uint32_t> all(num_items);
        std::iota(all.begin(), all.end(), 0U);
        std::shuffle(all.begin(), all.end(), rng);
        items.assign(all.begin(), all.begin() + size);
        std::vector<double> w(size);
        for (std::size_t r = 0; r < size; ++r) w[r] = 1.0 / static_cast<double>(r + 1);
        pick = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }
    std::uint32_t draw(Rng& rng) { return items[pick(rng)]; }
};

std::vector<Interaction> planted_user(std::uint32_t user, UserType type, const SynthConfig& cfg, Rng& rng) {
    const auto roles = BehaviorRoles::for_count(cfg.num_behaviors);
    Taste taste(cfg.num_items, rng);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> events;  // (item, behavior)
    std::uniform_int_distribution<int> aux_count(3, 5);
    std::uniform_int_distribution<std::uint32_t> aux_behavior(0, cfg.num_behaviors - 2);
    while (events.size() < cfg.length) {
        const int n = aux_count(rng);
        std::vector<std::uint32_t> behaviors{roles.favorite, roles.cart};
        while (static_cast<int>(behaviors.size()) < n) behaviors.push_back(aux_behavior(rng));
        std::shuffle(behaviors.begin(), behaviors.end(), rng);
        std::uint32_t last_cart = 0, last_fav = 0;
        std::vector<std::uint32_t> used;
        for (auto b : behaviors) {
            std::uint32_t item = taste.draw(rng);
            // Distinct items inside an episode keep the planted copy unambiguous.
            for (int tries = 0; tries < 64 && std::find(used.begin(), used.end(), item) != used.end(); ++tries) {
                item = taste.draw(rng);
            }
            used.push_back(item);
            events.emplace_back(item, b);
            if (b == roles.cart) last_cart = item;
            if (b == roles.favorite) last_fav = item;
        }
        events.emplace_back(type == UserType::A ? last_cart : last_fav, roles.target);
    }
    const std::size_t skip = events.size() - cfg.length;
    std::vector<Interaction> out;
    for (std::size_t i = skip; i < events.size(); ++i) {
        out.push_back({user, events[i].first, events[i].second, static_cast<std::int64_t>(10 * (i - skip + 1))});
    }
    return out;
}

std::vector<Interaction> random_user(std::uint32_t user, const SynthConfig& cfg, Rng& rng) {
    Taste taste(cfg.num_items, rng);
    std::uniform_int_distribution<std::uint32_t> behavior(0, cfg.num_behaviors - 1);
    std::vector<Interaction> out;
    for (std::uint32_t i = 0; i < cfg.length; ++i) {
        const std::uint32_t item = taste.draw(rng);
        out.push_back({user, item, behavior(rng), static_cast<std::int64_t>(10 * (i + 1))});
    }
    return out;
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& config) {
    if (config.num_users < 2 || config.num_items < 2 || config.num_behaviors < 2 || config.length < 2) {
        throw std::invalid_argument("synth_generate: users, items, behaviors and length must all be >= 2");
    }
    if (config.rule == SynthRule::Planted) (void)BehaviorRoles::for_count(config.num_behaviors);
    SynthDataset ds;
    Rng type_rng(splitmix64(config.seed));
    // Balanced types, shuffled so they are not tied to id parity.
    for (std::uint32_t u = 0; u < config.num_users; ++u) {
        ds.user_types.push_back(u % 2 == 0 ? UserType::A : UserType::B);
    }
    std::shuffle(ds.user_types.begin(), ds.user_types.end(), type_rng);
    for (std::uint32_t u = 0; u < config.num_users; ++u) {
        Rng rng = row_rng(config.seed, 0x5e7ULL, u);
        auto recs = config.rule == SynthRule::Planted ? planted_user(u, ds.user_types[u], config, rng)
                                                      : random_user(u, config, rng);
        ds.interactions.insert(ds.interactions.end(), recs.begin(), recs.end());
    }
    return ds;
}

}  // namespace pbat
