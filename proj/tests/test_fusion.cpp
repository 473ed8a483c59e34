#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "ssltraffic/fusion.hpp"
#include "ssltraffic/nn/losses.hpp"
#include "test_support.hpp"

using namespace ssltraffic;
using nn::Matrix;

namespace {

Matrix random_probs(std::size_t n, std::size_t k, Rng& rng) {
    return nn::softmax(testsupport::random_matrix(n, k, rng, 3.0));
}

}  // namespace

TEST_CASE("summarize: arithmetic cases", "[fusion]") {
    const auto b = summarize(Matrix{{0.7, 0.2, 0.1}});
    CHECK(b.labels[0] == 0);
    CHECK(b.confidence[0] == 0.7);
    CHECK(b.margin[0] == Catch::Approx(0.5).epsilon(1e-15));

    const auto u = summarize(Matrix{{0.25, 0.25, 0.25, 0.25}});
    CHECK(u.labels[0] == 0);
    CHECK(u.confidence[0] == 0.25);
    CHECK(u.margin[0] == 0.0);

    CHECK_THROWS_WITH(summarize(Matrix{{0.5, 0.5}, {0.5, 0.6}}), Catch::Matchers::ContainsSubstring("row 1"));
}

TEST_CASE("summarize: per-row oracle", "[fusion]") {
    Rng rng = make_rng(3);
    const auto p = random_probs(500, 6, rng);
    const auto b = summarize(p);
    for (std::size_t r = 0; r < p.rows(); ++r) {
        std::vector<double> row(p.row(r).begin(), p.row(r).end());
        const auto top = std::max_element(row.begin(), row.end());
        const double s = *top;
        const int label = static_cast<int>(top - row.begin());
        std::sort(row.begin(), row.end(), std::greater<>());
        CHECK(b.labels[r] == label);
        CHECK(b.confidence[r] == s);
        CHECK(b.margin[r] == s - row[1]);
        CHECK(b.margin[r] >= 0.0);
    }
}

TEST_CASE("fuse: the three decision lines", "[fusion]") {
    auto agree = fuse(summarize(Matrix{{0.3, 0.7}}), summarize(Matrix{{0.4, 0.6}}));
    CHECK(agree.labels[0] == 1);
    CHECK(agree.provenance[0] == Provenance::agree);

    auto conf = fuse(summarize(Matrix{{0.7, 0.3}}), summarize(Matrix{{0.4, 0.6}}));
    CHECK(conf.labels[0] == 0);
    CHECK(conf.provenance[0] == Provenance::conf_a);

    auto conf_b = fuse(summarize(Matrix{{0.55, 0.45}}), summarize(Matrix{{0.4, 0.6}}));
    CHECK(conf_b.labels[0] == 1);
    CHECK(conf_b.provenance[0] == Provenance::conf_b);

    auto tie = fuse(summarize(Matrix{{0.6, 0.4}}), summarize(Matrix{{0.4, 0.6}}));
    CHECK(tie.labels[0] == 0);
    CHECK(tie.provenance[0] == Provenance::margin_a);

    // Equal confidence, b has the larger margin.
    auto mb = fuse(summarize(Matrix{{0.5, 0.3, 0.2}}), summarize(Matrix{{0.25, 0.25, 0.5}}));
    CHECK(mb.provenance[0] == Provenance::margin_b);
    CHECK(mb.labels[0] == 2);

    CHECK_THROWS_AS(fuse(summarize(Matrix{{1.0, 0.0}}), summarize(Matrix{{1.0, 0.0, 0.0}})), DimensionError);
}

TEST_CASE("fuse: self-fusion, membership and swap symmetry", "[fusion]") {
    Rng rng = make_rng(9);
    const auto a = summarize(random_probs(400, 4, rng));
    const auto b = summarize(random_probs(400, 4, rng));
    const auto self = fuse(a, a);
    CHECK(self.labels == a.labels);
    CHECK(self.count(Provenance::agree) == 400);

    const auto ab = fuse(a, b), ba = fuse(b, a);
    for (std::size_t i = 0; i < 400; ++i) {
        CHECK((ab.labels[i] == a.labels[i] || ab.labels[i] == b.labels[i]));
        const bool full_tie = a.confidence[i] == b.confidence[i] && a.margin[i] == b.margin[i];
        if (!full_tie) CHECK(ab.labels[i] == ba.labels[i]);
    }
}
