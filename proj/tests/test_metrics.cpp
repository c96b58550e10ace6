// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "invdet/metrics.hpp"
#include "invdet/rng.hpp"
#include "oracles.hpp"

using namespace invdet;
using namespace invdet::metrics;

namespace {

ScoreSet make_set(std::vector<std::pair<double, int>> items) {
    ScoreSet s;
    for (size_t i = 0; i < items.size(); ++i)
        s.records.push_back({"e" + std::to_string(i), items[i].second, items[i].first, "g"});
    return s;
}

ScoreSet random_set(Rng& rng, int n_fake, int n_real, bool allow_ties) {
    ScoreSet s;
    int i = 0;
    for (int k = 0; k < n_fake; ++k)
        s.records.push_back({"f" + std::to_string(i++), 1,
                             allow_ties ? std::round(rng.uniform() * 10) / 10 : rng.uniform(), "a"});
    for (int k = 0; k < n_real; ++k)
        s.records.push_back({"r" + std::to_string(i++), 0,
                             allow_ties ? std::round(rng.uniform() * 10) / 10 : rng.uniform(), "a"});
    return s;
}

}  // namespace

TEST_CASE("auroc: pinned examples") {
    CHECK(auroc(make_set({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}})) == 1.0);
    CHECK(auroc(make_set({{0.8, 1}, {0.3, 1}, {0.5, 0}, {0.1, 0}})) == 0.75);
    CHECK(auroc(make_set({{0.5, 1}, {0.5, 1}, {0.5, 0}, {0.5, 0}})) == 0.5);
}

TEST_CASE("average_precision: pinned examples") {
    CHECK(average_precision(make_set({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}})) == 1.0);
    CHECK(average_precision(make_set({{0.8, 1}, {0.3, 1}, {0.5, 0}, {0.1, 0}})) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    // single fake ranked last among 4
    CHECK(average_precision(make_set({{0.9, 0}, {0.8, 0}, {0.7, 0}, {0.1, 1}})) == 0.25);
}

TEST_CASE("acc_at_eer: pinned examples") {
    CHECK(acc_at_eer(make_set({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}})) == 1.0);
    CHECK(acc_at_eer(make_set({{0.5, 1}, {0.5, 1}, {0.5, 0}, {0.5, 0}})) == 0.5);
    // exhaustive 7-threshold sweep value: best split at threshold 0.6
    CHECK(acc_at_eer(make_set({{0.9, 1}, {0.6, 1}, {0.4, 1}, {0.7, 0}, {0.3, 0}, {0.2, 0}})) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("fpr_at_recall: pinned examples") {
    CHECK(fpr_at_recall(make_set({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}}), 0.8) == 0.0);
    // random scores, large n: FPR near the recall target
    Rng rng(31);
    double acc = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        ScoreSet s = random_set(rng, 4000, 4000, false);
        acc += fpr_at_recall(s, 0.8);
    }
    CHECK(acc / 3.0 == doctest::Approx(0.8).epsilon(0.0625));  // +/-0.05 absolute
}

TEST_CASE("metric quartet equals brute-force oracles on exhaustive small multisets") {
    // Grid includes repeated use of each value so ties across and within
    // labels are fully covered. Size <= 6 here; the acceptance suite runs
    // the full size <= 8 sweep.
    const std::vector<double> grid = {0.1, 0.25, 0.5, 0.75, 0.9};
    long checked = 0;
    oracles::for_each_multiset(grid, 6, [&](const ScoreSet& s) {
        ++checked;
        CHECK(auroc(s) == oracles::auroc(s));
        CHECK(average_precision(s) == oracles::average_precision(s));
        CHECK(acc_at_eer(s) == oracles::acc_at_eer(s));
        CHECK(fpr_at_recall(s, 0.8) == oracles::fpr_at_recall(s, 0.8));
    });
    CHECK(checked > 1000);
}

TEST_CASE("rank invariance under strictly increasing transforms") {
    Rng rng(33);
    for (int rep = 0; rep < 20; ++rep) {
        ScoreSet s = random_set(rng, 8, 10, true);
        ScoreSet t = s;
        for (auto& r : t.records) r.score = std::tanh(2.0 * r.score) + r.score * r.score * 0.1;
        CHECK(auroc(s) == auroc(t));
        CHECK(average_precision(s) == average_precision(t));
        CHECK(acc_at_eer(s) == acc_at_eer(t));
        CHECK(fpr_at_recall(s, 0.8) == fpr_at_recall(t, 0.8));
    }
}

TEST_CASE("label-swap duality for tie-free sets") {
    Rng rng(35);
    for (int rep = 0; rep < 20; ++rep) {
        ScoreSet s = random_set(rng, 7, 9, false);
        ScoreSet flipped = s;
        for (auto& r : flipped.records) r.label = 1 - r.label;
        CHECK(auroc(s) + auroc(flipped) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("roc endpoints and auroc consistency") {
    Rng rng(37);
    for (int rep = 0; rep < 25; ++rep) {
        ScoreSet s = random_set(rng, 6, 6, rep % 2 == 0);
        auto roc = roc_points(s);
        CHECK(roc.front().x == 0.0);
        CHECK(roc.front().y == 0.0);
        CHECK(roc.back().x == 1.0);
        CHECK(roc.back().y == 1.0);
        CHECK(std::fabs(trapezoid_area(roc) - auroc(s)) < 1e-12);
    }
}

TEST_CASE("det curve of perfect separation passes through origin") {
    auto det = det_points(make_set({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}}));
    bool hits_origin = false;
    for (const auto& p : det) hits_origin |= (p.x == 0.0 && p.y == 0.0);
    CHECK(hits_origin);
}

TEST_CASE("curves are monotone where required") {
    Rng rng(39);
    ScoreSet s = random_set(rng, 9, 9, true);
    auto roc = roc_points(s);
    for (size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].x >= roc[i - 1].x);
        CHECK(roc[i].y >= roc[i - 1].y);
    }
    auto pr = pr_points(s);
    for (size_t i = 1; i < pr.size(); ++i) CHECK(pr[i].x >= pr[i - 1].x);
}

TEST_CASE("single-label input rejected") {
    ScoreSet s = make_set({{0.9, 1}, {0.8, 1}});
    CHECK_THROWS(auroc(s));
    CHECK_THROWS(average_precision(s));
    CHECK_THROWS(acc_at_eer(s));
    CHECK_THROWS(fpr_at_recall(s, 0.8));
    CHECK_THROWS(auroc(ScoreSet{}));
}

TEST_CASE("scoreset jsonl round trip") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "invdet_scores_test.jsonl";
    ScoreSet s = make_set({{0.75, 1}, {0.25, 0}, {0.5, 1}});
    s.records[0].generator = "gen_a";
    save_scoreset_jsonl(s, path.string());
    ScoreSet back = load_scoreset_jsonl(path.string());
    REQUIRE(back.records.size() == s.records.size());
    for (size_t i = 0; i < s.records.size(); ++i) {
        CHECK(back.records[i].id == s.records[i].id);
        CHECK(back.records[i].label == s.records[i].label);
        CHECK(back.records[i].score == s.records[i].score);
    }
    fs::remove(path);
}

TEST_CASE("fid: identical sets give zero") {
    Rng rng(41);
    std::vector<Vec> feats;
    for (int i = 0; i < 40; ++i) {
        Vec v(5);
        for (auto& x : v) x = rng.normalf();
        feats.push_back(v);
    }
    CHECK(std::fabs(fid(feats, feats)) < 1e-9);
}

TEST_CASE("fid: mean-shifted Gaussians approach the closed form") {
    Rng rng(43);
    const int d = 6, n = 3000;
    const Vec shift = {1.5f, -0.5f, 2.0f, 0.0f, 1.0f, -1.0f};
    double shift_sq = 0.0;
    for (float v : shift) shift_sq += double(v) * v;  // 8.5
    std::vector<Vec> a, b;
    for (int i = 0; i < n; ++i) {
        Vec va(d), vb(d);
        for (int j = 0; j < d; ++j) {
            va[j] = rng.normalf();
            vb[j] = rng.normalf() + shift[j];
        }
        a.push_back(va);
        b.push_back(vb);
    }
    CHECK(fid(a, b) == doctest::Approx(shift_sq).epsilon(0.05));
    // symmetry and nonnegativity
    CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-9));
    CHECK(fid(a, b) >= 0.0);
}

TEST_CASE("fid: sample-size precondition") {
    std::vector<Vec> tiny = {{1.f, 2.f, 3.f}, {0.f, 1.f, 0.f}};
    CHECK_THROWS(fid(tiny, tiny));
}

TEST_CASE("kid: exactly zero on identical equal-sized sets") {
    Rng rng(45);
    std::vector<Vec> feats;
    for (int i = 0; i < 50; ++i) {
        Vec v(4);
        for (auto& x : v) x = rng.normalf();
        feats.push_back(v);
    }
    CHECK(std::fabs(kid(feats, feats)) < 1e-6);
}

TEST_CASE("kid: positive for well-separated sets, small for matched ones") {
    Rng rng(47);
    std::vector<Vec> a, b, c;
    for (int i = 0; i < 200; ++i) {
        Vec va(4), vb(4), vc(4);
        for (int j = 0; j < 4; ++j) {
            va[j] = rng.normalf();
            vb[j] = rng.normalf() + 2.0f;
            vc[j] = rng.normalf();
        }
        a.push_back(va);
        b.push_back(vb);
        c.push_back(vc);
    }
    CHECK(kid(a, b) > 1.0);
    CHECK(std::fabs(kid(a, c)) < 0.5);  // same distribution, small magnitude either sign
}

TEST_CASE("kid: unequal sizes supported") {
    Rng rng(49);
    std::vector<Vec> a, b;
    for (int i = 0; i < 60; ++i) {
        Vec v(3);
        for (auto& x : v) x = rng.normalf();
        a.push_back(v);
        if (i < 40) b.push_back(v);
    }
    CHECK(std::isfinite(kid(a, b)));
}
