#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "ssltraffic/eval/metrics.hpp"
#include "ssltraffic/rng.hpp"

using namespace ssltraffic;
using namespace ssltraffic::eval;

namespace {

struct Oracle {
    double precision, recall, f1;
};

// Counts straight from the label vectors, no confusion matrix.
Oracle class_oracle(const std::vector<int>& t, const std::vector<int>& p, int c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (p[i] == c && t[i] == c) ++tp;
        else if (p[i] == c) ++fp;
        else if (t[i] == c) ++fn;
    }
    const double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double re = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return {pr, re, pr + re > 0 ? 2 * pr * re / (pr + re) : 0.0};
}

void random_pairs(std::size_t n, int k, std::uint64_t seed, std::vector<int>& t, std::vector<int>& p) {
    Rng rng = make_rng(seed, 0);
    t.resize(n);
    p.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = int(uniform_index(rng, std::size_t(k)));
        p[i] = uniform01(rng) < 0.6 ? t[i] : int(uniform_index(rng, std::size_t(k)));
    }
}

}  // namespace

TEST_CASE("precision, recall and f1 on a hand example", "[eval]") {
    // class 0: TP 9, FP 1, FN 1
    std::vector<int> t, p;
    for (int i = 0; i < 9; ++i) t.push_back(0), p.push_back(0);
    t.push_back(0), p.push_back(1);
    t.push_back(1), p.push_back(0);
    for (int i = 0; i < 5; ++i) t.push_back(1), p.push_back(1);
    const auto r = metrics(confusion(t, p, 2));
    CHECK(r.per_class[0].precision == Catch::Approx(0.9));
    CHECK(r.per_class[0].recall == Catch::Approx(0.9));
    CHECK(r.per_class[0].f1 == Catch::Approx(0.9));
    CHECK(r.accuracy == Catch::Approx(14.0 / 16.0));
}

TEST_CASE("never-predicted class has precision 0 with a flag", "[eval]") {
    const std::vector<int> t{0, 1, 2, 2}, p{0, 1, 1, 1};
    const auto r = metrics(confusion(t, p, 3));
    CHECK(r.per_class[2].precision == 0.0);
    CHECK(r.per_class[2].precision_undefined);
    CHECK(r.per_class[2].recall == 0.0);
    CHECK_FALSE(r.per_class[2].recall_undefined);
    CHECK(r.per_class[2].f1_undefined);
    CHECK_FALSE(r.per_class[1].precision_undefined);
}

TEST_CASE("confusion counts match a pair-counting oracle", "[eval]") {
    std::vector<int> t, p;
    random_pairs(1000, 6, 11, t, p);
    const auto cm = confusion(t, p, 6);
    for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) {
            std::uint64_t n = 0;
            for (std::size_t i = 0; i < t.size(); ++i) n += t[i] == a && p[i] == b;
            CHECK(cm(a, b) == n);
        }
    CHECK(cm.total() == 1000);
    CHECK_THROWS_AS(confusion(std::vector<int>{0, 6}, std::vector<int>{0, 1}, 6), DataError);
    CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{-1}, 6), DataError);
    CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 6), DimensionError);
}

TEST_CASE("ten-class metrics match the loop oracle", "[eval]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::vector<int> t, p;
        random_pairs(2000, 10, seed, t, p);
        const auto r = metrics(confusion(t, p, 10));
        double mp = 0, mr = 0, mf = 0, wf = 0, hit = 0;
        for (int c = 0; c < 10; ++c) {
            const auto o = class_oracle(t, p, c);
            CHECK(std::abs(r.per_class[c].precision - o.precision) < 1e-12);
            CHECK(std::abs(r.per_class[c].recall - o.recall) < 1e-12);
            CHECK(std::abs(r.per_class[c].f1 - o.f1) < 1e-12);
            mp += o.precision / 10, mr += o.recall / 10, mf += o.f1 / 10;
            wf += o.f1 * double(std::count(t.begin(), t.end(), c)) / double(t.size());
        }
        for (std::size_t i = 0; i < t.size(); ++i) hit += t[i] == p[i];
        CHECK(std::abs(r.macro.precision - mp) < 1e-12);
        CHECK(std::abs(r.macro.recall - mr) < 1e-12);
        CHECK(std::abs(r.macro.f1 - mf) < 1e-12);
        CHECK(std::abs(r.weighted.f1 - wf) < 1e-12);
        CHECK(std::abs(r.accuracy - hit / double(t.size())) < 1e-12);
    }
}

TEST_CASE("macro f1 is invariant under relabeling", "[eval]") {
    std::vector<int> t, p;
    random_pairs(500, 7, 3, t, p);
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(9, 0);
    shuffle(perm, rng);
    std::vector<int> t2(t.size()), p2(p.size());
    for (std::size_t i = 0; i < t.size(); ++i) t2[i] = perm[t[i]], p2[i] = perm[p[i]];
    const auto a = metrics(confusion(t, p, 7)), b = metrics(confusion(t2, p2, 7));
    CHECK(a.macro.f1 == Catch::Approx(b.macro.f1).epsilon(1e-14));
    CHECK(a.weighted.f1 == Catch::Approx(b.weighted.f1).epsilon(1e-14));
}

TEST_CASE("weighted metrics with a single true class equal that class", "[eval]") {
    const std::vector<int> t{1, 1, 1, 1, 1}, p{1, 1, 0, 1, 2};
    const auto r = metrics(confusion(t, p, 3));
    CHECK(r.weighted.precision == Catch::Approx(r.per_class[1].precision));
    CHECK(r.weighted.recall == Catch::Approx(r.per_class[1].recall));
    CHECK(r.weighted.f1 == Catch::Approx(r.per_class[1].f1));
}

TEST_CASE("report writers", "[eval][report]") {
    const std::vector<int> t{0, 0, 1, 1, 2}, p{0, 1, 1, 1, 2};
    const auto cm = confusion(t, p, 3);
    const auto r = metrics(cm);
    const std::vector<std::string> names{"web", "mail", "dns"};
    std::ostringstream csv, grid, plot, hist;
    write_metrics_csv(r, csv, names);
    CHECK(csv.str().find("class,precision,recall,f1,accuracy,support\nweb,1,0.5,") == 0);
    CHECK(csv.str().find("\nmacro_avg,") != std::string::npos);
    CHECK(csv.str().find("\nweighted_avg,") != std::string::npos);
    write_confusion_csv(cm, grid, names);
    CHECK(grid.str() == "true\\pred,web,mail,dns\nweb,1,1,0\nmail,0,2,0\ndns,0,0,1\n");
    write_metrics_gnuplot(r, plot, names);
    CHECK(plot.str().find("\"dns\" 1 1 1\n") != std::string::npos);
    const auto j = to_json(r, names);
    CHECK(j["classes"][1]["class"] == "mail");
    CHECK(j["accuracy"].get<double>() == Catch::Approx(0.8));
    const std::vector<double> th{0.5}, mean{0.6};
    write_histogram_gnuplot({{1, 2}}, th, mean, hist);
    CHECK(hist.str() == "# class 0 threshold 0.5 mean 0.6\n0.25 1\n0.75 2\n\n\n");
}
