#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "pbat/config.hpp"
#include "pbat/data.hpp"
#include "test_util.hpp"

using namespace pbat;

TEST_CASE("parse_tsv single record and order preservation") {
    const auto log = parse_tsv("0\t5\t1\t100\n");
    REQUIRE(log.interactions.size() == 1);
    CHECK(log.interactions[0] == Interaction{0, 5, 1, 100});
    CHECK(log.vocab == Vocab{1, 6, 2});

    const auto two = parse_tsv("3\t1\t0\t50\n3\t2\t0\t10\n");
    CHECK(two.interactions[0].timestamp == 50);
    CHECK(two.interactions[1].timestamp == 10);
    CHECK(parse_tsv("1\t2\t0\t7\r\n").interactions.size() == 1);
}

TEST_CASE("parse_tsv rejects malformed input with a line number") {
    try {
        parse_tsv("0\t1\t2\n");
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    try {
        parse_tsv("0\t1\t2\t3\n0\tx\t2\t3\n");
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_tsv(""), std::runtime_error);
    CHECK_THROWS_AS(parse_tsv("0\t1\t-2\t3\n"), std::runtime_error);
}

TEST_CASE("tsv round trip through a file") {
    const auto ds = synth_generate({10, 30, 3, 12, 4, SynthRule::Planted});
    const auto path = std::filesystem::temp_directory_path() / "pbat_roundtrip.tsv";
    write_tsv(path, ds.interactions);
    const auto back = ingest_tsv(path);
    CHECK(back.interactions == ds.interactions);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ingest_tsv(path), std::runtime_error);
}

TEST_CASE("build_sequences pads, truncates and drops short users") {
    const Vocab v{3, 20, 2};
    std::vector<Interaction> recs{{0, 1, 0, 3}, {0, 2, 1, 1}, {0, 3, 0, 2},  // user 0, out of order
                                  {1, 4, 0, 1}, {1, 5, 0, 2}};              // user 1: only 2
    for (int t = 0; t < 7; ++t) recs.push_back({2, static_cast<std::uint32_t>(10 + t), 1, t});
    const auto seqs = build_sequences(recs, v, 5);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].user == 0);
    CHECK(seqs[0].valid_len == 3);
    CHECK(seqs[0].items == std::vector<std::uint32_t>{2, 3, 1, v.pad_item(), v.pad_item()});
    CHECK(seqs[0].behaviors == std::vector<std::uint32_t>{1, 0, 0, v.pad_behavior(), v.pad_behavior()});
    CHECK(seqs[1].user == 2);
    CHECK(seqs[1].items == std::vector<std::uint32_t>{12, 13, 14, 15, 16});
    CHECK_THROWS_AS(build_sequences(recs, v, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_sequences(std::vector<Interaction>{{0, 99, 0, 0}}, v, 5), std::invalid_argument);
}

TEST_CASE("build_sequences keeps input order for equal timestamps") {
    const Vocab v{1, 10, 1};
    const std::vector<Interaction> recs{{0, 7, 0, 5}, {0, 3, 0, 5}, {0, 1, 0, 1}};
    const auto seqs = build_sequences(recs, v, 4);
    CHECK(seqs[0].items == std::vector<std::uint32_t>{1, 7, 3, v.pad_item()});
}

TEST_CASE("leave_one_out_split") {
    const Vocab v{2, 10, 2};
    const auto a = test::sequence(0, {1, 2, 3, 4}, {0, 1, 0, 1}, 6, v);
    const auto b = test::sequence(1, {5, 6, 7}, {0, 0, 1}, 6, v);
    const std::vector<MultiBehaviorSequence> seqs{a, b};
    const auto split = leave_one_out_split(seqs, v);
    REQUIRE(split.users.size() == 2);
    CHECK(split.users[0].train.valid_len == 2);
    CHECK(split.users[0].train.items[0] == 1);
    CHECK(split.users[0].train.items[1] == 2);
    CHECK(split.users[0].train.items[2] == v.pad_item());
    CHECK(split.users[0].validation.item == 3);
    CHECK(split.users[0].test.item == 4);
    CHECK(split.users[0].test.behavior == 1);
    CHECK(split.users[1].train.valid_len == 1);
    const auto short_seq = test::sequence(2, {1, 2}, {0, 0}, 6, v);
    CHECK_THROWS_AS(leave_one_out_split(std::vector<MultiBehaviorSequence>{short_seq}, v), std::invalid_argument);
}

TEST_CASE("cloze_mask keeps behaviors, never masks padding, is deterministic") {
    const Vocab v{1, 100, 3};
    std::vector<std::uint32_t> items, behs;
    for (std::uint32_t i = 0; i < 40; ++i) {
        items.push_back(i);
        behs.push_back(i % 3);
    }
    const auto seq = test::sequence(0, items, behs, 50, v);
    Rng r1(5), r2(5);
    const auto a = cloze_mask(seq, 0.2, v, r1);
    const auto b = cloze_mask(seq, 0.2, v, r2);
    CHECK(a.masked_positions == b.masked_positions);
    CHECK(a.behaviors == seq.behaviors);
    for (std::size_t k = 0; k < a.masked_positions.size(); ++k) {
        const auto p = a.masked_positions[k];
        CHECK(p < seq.valid_len);
        CHECK(a.items[p] == v.mask_item());
        CHECK(a.target_items[k] == seq.items[p]);
    }
    CHECK_THROWS_AS(cloze_mask(seq, 0.0, v, r1), std::invalid_argument);
    CHECK_THROWS_AS(cloze_mask(seq, 1.0, v, r1), std::invalid_argument);
}

TEST_CASE("cloze_mask forces the last position when the draw masks nothing") {
    const Vocab v{1, 10, 2};
    const auto seq = test::sequence(0, {4}, {1}, 5, v);
    bool saw_forced = false;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(s);
        const auto row = cloze_mask(seq, 0.2, v, rng);
        REQUIRE(row.masked_positions == std::vector<std::uint32_t>{0});
        saw_forced = true;
    }
    CHECK(saw_forced);
}

TEST_CASE("cloze_mask rate converges to rho") {
    const Vocab v{1, 100, 2};
    std::vector<std::uint32_t> items(50), behs(50, 0);
    for (std::uint32_t i = 0; i < 50; ++i) items[i] = i;
    const auto seq = test::sequence(0, items, behs, 50, v);
    Rng rng(17);
    double masked = 0.0;
    const int rows = 10000;
    for (int i = 0; i < rows; ++i) masked += static_cast<double>(cloze_mask(seq, 0.2, v, rng).masked_positions.size());
    const double n = 50.0 * rows;
    const double rate = masked / n;
    // The forced-mask floor contributes at most 0.8^50 per row, far below one standard error.
    CHECK(std::abs(rate - 0.2) < 3.0 * std::sqrt(0.2 * 0.8 / n));
}

TEST_CASE("sample_negative") {
    const Vocab v{1, 10, 1};
    const auto seq = test::sequence(0, {0, 1, 2, 3, 4, 5, 6, 7, 8}, std::vector<std::uint32_t>(9, 0), 12, v);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) CHECK(sample_negative(seq, 10, rng) == 9);
    const auto full = test::sequence(0, {0, 1, 2}, {0, 0, 0}, 4, v);
    CHECK_THROWS_AS(sample_negative(full, 3, rng), std::runtime_error);

    const auto some = test::sequence(0, {3, 8, 11, 4}, {0, 0, 0, 0}, 6, Vocab{1, 20, 1});
    for (int i = 0; i < 10000; ++i) {
        const auto n = sample_negative(some, 20, rng);
        CHECK((n != 3 && n != 8 && n != 11 && n != 4 && n < 20));
    }
}

TEST_CASE("sample_negative is uniform over the allowed items (chi-square, p = 0.01)") {
    // sequence uses 10 of 20 items -> 10 candidates, 9 degrees of freedom
    const Vocab v{1, 20, 1};
    std::vector<std::uint32_t> items;
    for (std::uint32_t i = 0; i < 20; i += 2) items.push_back(i);
    const auto seq = test::sequence(0, items, std::vector<std::uint32_t>(items.size(), 0), 12, v);
    Rng rng(99);
    std::map<std::uint32_t, double> counts;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[sample_negative(seq, 20, rng)] += 1.0;
    CHECK(counts.size() == 10);
    const double expected = draws / 10.0;
    double chi2 = 0.0;
    for (const auto& [item, c] : counts) {
        CHECK(item % 2 == 1);
        chi2 += (c - expected) * (c - expected) / expected;
    }
    const double critical_df9_p01 = 21.666;  // upper 1% point of chi-square with 9 dof
    CHECK(chi2 < critical_df9_p01);
}

TEST_CASE("make_training_row pairs every masked position with a negative") {
    const Vocab v{1, 30, 2};
    const auto seq = test::sequence(0, {1, 2, 3, 4, 5, 6}, {0, 1, 0, 1, 0, 1}, 8, v);
    Rng rng(3);
    const auto row = make_training_row(seq, 0.5, v, rng);
    CHECK(row.negative_items.size() == row.masked_positions.size());
    for (auto n : row.negative_items) CHECK(n >= 7);
}

TEST_CASE("row_rng streams are deterministic and distinct") {
    Rng a = row_rng(1, 2, 3), b = row_rng(1, 2, 3), c = row_rng(1, 2, 4), d = row_rng(1, 3, 3);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != d());
}

TEST_CASE("synth_generate is deterministic and validates its config") {
    const SynthConfig cfg{20, 50, 3, 16, 7, SynthRule::Planted};
    CHECK(synth_generate(cfg).interactions == synth_generate(cfg).interactions);
    SynthConfig other = cfg;
    other.seed = 8;
    CHECK(synth_generate(other).interactions != synth_generate(cfg).interactions);
    CHECK_THROWS_AS(synth_generate({1, 50, 3, 16, 1, SynthRule::Planted}), std::invalid_argument);
    CHECK_THROWS_AS(synth_generate({5, 50, 2, 16, 1, SynthRule::Planted}), std::invalid_argument);
    CHECK_NOTHROW(synth_generate({5, 50, 2, 16, 1, SynthRule::Random}));
}

TEST_CASE("planted rule: each purchase copies the most recent cart (A) or favorite (B) item") {
    const SynthConfig cfg{40, 100, 4, 30, 2, SynthRule::Planted};
    const auto ds = synth_generate(cfg);
    const auto roles = BehaviorRoles::for_count(4);
    std::size_t a_users = 0, checked = 0;
    for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
        std::vector<Interaction> recs;
        for (const auto& r : ds.interactions)
            if (r.user == u) recs.push_back(r);
        CHECK(recs.size() == cfg.length);
        if (ds.user_types[u] == UserType::A) ++a_users;
        const std::uint32_t source = ds.user_types[u] == UserType::A ? roles.cart : roles.favorite;
        std::optional<std::uint32_t> last_source;
        bool episode_started = false;  // the first kept episode may be cut at the front
        for (const auto& r : recs) {
            if (r.behavior == roles.target) {
                if (episode_started && last_source) {
                    CHECK(r.item == *last_source);
                    ++checked;
                }
                episode_started = true;
                last_source.reset();
            } else if (r.behavior == source) {
                last_source = r.item;
            }
        }
    }
    CHECK(a_users == cfg.num_users / 2);
    CHECK(checked > 100);
}

TEST_CASE("config parsing") {
    const auto cfg = parse_config("# comment\nD = 16\nheads=4\nN_blocks = 3\nlr = 0.01 # trailing\nrho = 0.3\n\n");
    CHECK(cfg.model.D == 16);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.model.blocks == 3);
    CHECK(cfg.model.L == 50);
    CHECK(cfg.train.lr == 0.01);
    CHECK(cfg.train.rho == 0.3);
    CHECK(cfg.train.batch_size == 128);
    CHECK(parse_config(format_config(cfg)).model == cfg.model);
    CHECK_THROWS_AS(parse_config("bogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("D = abc\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("D = 10\nheads = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("rho = 1.5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("D 16\n"), std::invalid_argument);
}
