#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pbat {

using Rng = std::mt19937_64;

struct Interaction {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::uint32_t behavior = 0;
    std::int64_t timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

/// Vocabulary sizes of the raw data. Reserved ids live just past the end:
/// item padding = num_items, [mask] = num_items + 1, behavior padding = num_behaviors.
struct Vocab {
    std::uint32_t num_users = 0;
    std::uint32_t num_items = 0;
    std::uint32_t num_behaviors = 0;

    std::uint32_t pad_item() const { return num_items; }
    std::uint32_t mask_item() const { return num_items + 1; }
    std::uint32_t pad_behavior() const { return num_behaviors; }
    std::uint32_t item_rows() const { return num_items + 2; }
    std::uint32_t behavior_rows() const { return num_behaviors + 1; }

    bool operator==(const Vocab&) const = default;
};

struct InteractionLog {
    std::vector<Interaction> interactions;
    Vocab vocab;  // max id + 1 per column
};

/// Parses `user<TAB>item<TAB>behavior<TAB>timestamp` lines. Order is preserved.
/// Throws std::runtime_error naming the offending line.
InteractionLog ingest_tsv(const std::filesystem::path& path);
InteractionLog parse_tsv(std::string_view text);
void write_tsv(const std::filesystem::path& path, std::span<const Interaction> interactions);
std::string format_tsv(std::span<const Interaction> interactions);

Vocab infer_vocab(std::span<const Interaction> interactions);

struct MultiBehaviorSequence {
    std::uint32_t user = 0;
    std::vector<std::uint32_t> items;      // length L
    std::vector<std::uint32_t> behaviors;  // length L
    std::size_t valid_len = 0;

    std::size_t length() const { return items.size(); }
};

/// Left-aligned, right-padded row of length L from the most recent L pairs.
MultiBehaviorSequence make_sequence(std::uint32_t user, std::span<const std::uint32_t> items,
                                    std::span<const std::uint32_t> behaviors, std::size_t L,
                                    const Vocab& vocab);

/// Groups by user, sorts each user's interactions by timestamp (stable), keeps
/// the most recent L and drops users with fewer than 3 interactions.
std::vector<MultiBehaviorSequence> build_sequences(std::span<const Interaction> interactions,
                                                   const Vocab& vocab, std::size_t L);

struct Target {
    std::uint32_t item = 0;
    std::uint32_t behavior = 0;
};

struct UserSplit {
    MultiBehaviorSequence train;  // prefix before the last two interactions
    Target validation;
    Target test;
};

struct SplitDataset {
    Vocab vocab;
    std::size_t max_len = 0;
    std::vector<UserSplit> users;
};

/// Leave-one-out split: last pair is the test target, penultimate the validation target.
SplitDataset leave_one_out_split(std::span<const MultiBehaviorSequence> sequences,
                                 const Vocab& vocab);

/// One Cloze-masked row of a training batch.
struct MaskedRow {
    std::uint32_t user = 0;
    std::vector<std::uint32_t> items;       // masked positions hold the [mask] id
    std::vector<std::uint32_t> behaviors;   // untouched
    std::vector<std::uint32_t> positions;   // absolute slot index
    std::size_t valid_len = 0;
    std::vector<std::uint32_t> masked_positions;
    std::vector<std::uint32_t> target_items;    // one per masked position
    std::vector<std::uint32_t> negative_items;  // one per masked position
};

using MaskedBatch = std::vector<MaskedRow>;

/// Bernoulli(rho) masking of valid positions; if nothing is drawn the last
/// valid position is masked. Negatives are left empty.
MaskedRow cloze_mask(const MultiBehaviorSequence& sequence, double rho, const Vocab& vocab, Rng& rng);

/// Uniform draw from items that do not occur in the sequence's valid prefix.
std::uint32_t sample_negative(const MultiBehaviorSequence& sequence, std::uint32_t num_items, Rng& rng);

/// cloze_mask plus one negative per masked position.
MaskedRow make_training_row(const MultiBehaviorSequence& sequence, double rho, const Vocab& vocab,
                            Rng& rng);

/// Deterministic per-row stream derived from (seed, epoch, user).
Rng row_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t user);

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthRule { Planted, Random };

struct SynthConfig {
    std::uint32_t num_users = 50;
    std::uint32_t num_items = 100;
    std::uint32_t num_behaviors = 3;
    std::uint32_t length = 16;  // interactions emitted per user
    std::uint64_t seed = 1;
    SynthRule rule = SynthRule::Planted;
};

/// Planted user types. Type A buys the most recent cart item, type B the most
/// recent favorite item.
enum class UserType : std::uint8_t { A, B };

struct SynthDataset {
    std::vector<Interaction> interactions;
    std::vector<UserType> user_types;  // indexed by user id
};

/// Behavior roles under the planted rule: target = |B|-1, cart = |B|-2,
/// favorite = |B|-3; anything below is an extra auxiliary behavior.
struct BehaviorRoles {
    std::uint32_t target, cart, favorite;
    static BehaviorRoles for_count(std::uint32_t num_behaviors);
};

SynthDataset synth_generate(const SynthConfig& config);

}  // namespace pbat
