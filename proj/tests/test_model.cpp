#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "pbat/model.hpp"
#include "test_util.hpp"

using namespace pbat;

TEST_CASE("init_params is deterministic per seed and registers unique names") {
    const auto dims = test::tiny_dims();
    const auto a = init_params(dims, 3), b = init_params(dims, 3), c = init_params(dims, 4);
    REQUIRE(a.tensors.size() == b.tensors.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        CHECK(a.tensors[i].data == b.tensors[i].data);
        differs = differs || a.tensors[i].data != c.tensors[i].data;
    }
    CHECK(differs);
    const std::set<std::string> names(a.names.begin(), a.names.end());
    CHECK(names.size() == a.names.size());
    CHECK(a.index_of("item.mean") == a.item_mean);
    CHECK_THROWS_AS(a.index_of("nope"), std::out_of_range);
}

TEST_CASE("table shapes follow the vocabulary") {
    const auto dims = test::tiny_dims();
    const auto p = init_params(dims, 1);
    CHECK(p.tensors[p.item_mean].shape == std::vector<std::size_t>{22, 8});
    CHECK(p.tensors[p.user_rawcov].shape == std::vector<std::size_t>{4, 8});
    CHECK(p.tensors[p.behavior_mean].shape == std::vector<std::size_t>{4, 8});
    CHECK(p.tensors[p.position_mean].shape == std::vector<std::size_t>{8, 8});
    CHECK(p.tensors[p.relation_mean].shape == std::vector<std::size_t>{3, 3, 8});
    CHECK(p.blocks.size() == 2);
    CHECK(p.blocks[0].heads.size() == 2);
    CHECK(p.blocks[0].ffl_mean.size() == 4);
    CHECK(p.tensors[p.blocks[0].heads[0].q_item_mean].shape == std::vector<std::size_t>{8, 4});
    CHECK(p.tensors[p.blocks[1].heads[1].align_ip].shape == std::vector<std::size_t>{4, 4});
}

TEST_CASE("distribution tables are drawn with standard deviation 0.02") {
    auto dims = test::tiny_dims(16);
    dims.num_items = 100000;  // 1.6M entries in the item mean table
    const auto p = init_params(dims, 11);
    for (std::size_t slot : {p.item_mean, p.item_rawcov}) {
        const auto& t = p.tensors[slot].data;
        double s = 0.0, s2 = 0.0;
        for (double x : t) {
            s += x;
            s2 += x * x;
        }
        const double n = static_cast<double>(t.size());
        const double mean = s / n;
        const double sd = std::sqrt(s2 / n - mean * mean);
        CHECK(n >= 1e6);
        CHECK(std::abs(sd - 0.02) / 0.02 < 0.01);
        CHECK(std::abs(mean) < 1e-4);
    }
}

TEST_CASE("alignment weights start at the identity, layer norms at gain 1 / bias 0") {
    const auto p = init_params(test::tiny_dims(), 2);
    const auto& a = p.tensors[p.pattern_align];
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) CHECK(a.at(r, c) == (r == c ? 1.0 : 0.0));
    for (double g : p.tensors[p.blocks[0].ln_attn_mean_gain].data) CHECK(g == 1.0);
    for (double b : p.tensors[p.blocks[1].ln_ffl_var_bias].data) CHECK(b == 0.0);
}

TEST_CASE("lookup_entity applies elu_plus_one to the raw covariance") {
    auto p = init_params(test::tiny_dims(), 5);
    p.tensors[p.item_mean].at(3, 0) = 1.5;
    p.tensors[p.item_rawcov].at(3, 0) = 2.0;
    p.tensors[p.item_rawcov].at(3, 1) = -1.0;
    const auto g = lookup_entity(p, EntityKind::Item, 3);
    CHECK(g.mean()[0] == 1.5);
    CHECK(g.var()[0] == doctest::Approx(3.0));
    CHECK(g.var()[1] == doctest::Approx(std::exp(-1.0)));
    CHECK(lookup_entity(p, EntityKind::Item, 21).dim() == 8);  // [mask] row
    CHECK_THROWS_AS(lookup_entity(p, EntityKind::Item, 22), std::out_of_range);
    CHECK_THROWS_AS(lookup_entity(p, EntityKind::User, 4), std::out_of_range);
    CHECK_THROWS_AS(lookup_entity(p, EntityKind::Position, 8), std::out_of_range);
}

TEST_CASE("relations are directed") {
    auto p = init_params(test::tiny_dims(), 6);
    const auto before = lookup_relation(p, 1, 0);
    p.tensors[p.relation_mean].data[(0 * 3 + 1) * 8] += 1.0;  // entry (0, 1), dim 0
    CHECK(lookup_relation(p, 1, 0) == before);
    CHECK(lookup_relation(p, 0, 1).mean()[0] != before.mean()[0]);
    CHECK_THROWS_AS(lookup_relation(p, 3, 0), std::out_of_range);
}

TEST_CASE("personalized_pattern matches sagp of the user and behavior") {
    auto p = init_params(test::tiny_dims(), 8);
    perturb_params(p, 0.5, 9);
    const auto u = lookup_entity(p, EntityKind::User, 2), b = lookup_entity(p, EntityKind::Behavior, 1);
    const auto want = sagp(u, b, as_square(p.tensors[p.pattern_align]));
    const auto got = personalized_pattern(p, 2, 1);
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(got.mean()[d] == doctest::Approx(want.mean()[d]).epsilon(1e-12));
        CHECK(got.var()[d] == doctest::Approx(want.var()[d]).epsilon(1e-12));
        CHECK(got.var()[d] >= std::min(u.var()[d], b.var()[d]) * (1 - 1e-12));
        CHECK(got.var()[d] <= std::max(u.var()[d], b.var()[d]) * (1 + 1e-12));
    }
    CHECK_THROWS_AS(personalized_pattern(p, 4, 0), std::out_of_range);
    CHECK_THROWS_AS(personalized_pattern(p, 0, 4), std::out_of_range);
}

TEST_CASE("personalized_pattern with identical inputs is a fixed point") {
    auto p = init_params(test::tiny_dims(), 10);
    for (std::size_t d = 0; d < 8; ++d) {
        p.tensors[p.user_mean].at(0, d) = 0.7;
        p.tensors[p.user_rawcov].at(0, d) = 0.2;
        p.tensors[p.behavior_mean].at(0, d) = 0.7;
        p.tensors[p.behavior_rawcov].at(0, d) = 0.2;
    }
    const auto g = personalized_pattern(p, 0, 0);
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(g.mean()[d] == doctest::Approx(0.7));
        CHECK(g.var()[d] == doctest::Approx(1.2));
    }
}

TEST_CASE("perturb_params and zeros_like") {
    const auto p = init_params(test::tiny_dims(), 1);
    auto q = p;
    perturb_params(q, 0.1, 2);
    CHECK(q.tensors[q.item_mean].data != p.tensors[p.item_mean].data);
    const auto z = zeros_like(p);
    REQUIRE(z.size() == p.tensors.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(z[i].shape == p.tensors[i].shape);
        for (double x : z[i].data) CHECK(x == 0.0);
    }
}

TEST_CASE("ModelDims validation") {
    auto d = test::tiny_dims();
    CHECK_NOTHROW(d.validate());
    d.heads = 3;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d = test::tiny_dims();
    d.D = 0;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}
