// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations used by the unit and acceptance
// suites. These deliberately recompute everything from scratch and stay
// independent of the library's sweep-based implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "invdet/metrics.hpp"

namespace oracles {

using invdet::metrics::ScoreRecord;
using invdet::metrics::ScoreSet;

// Pairwise O(n^2) count: fake>real counts 1, tie counts 1/2.
inline double auroc(const ScoreSet& s) {
    double num = 0.0;
    double n_f = 0, n_r = 0;
    for (const auto& a : s.records) {
        if (a.label != 1) continue;
        n_f += 1;
        for (const auto& b : s.records) {
            if (b.label != 0) continue;
            if (a.score > b.score)
                num += 1.0;
            else if (a.score == b.score)
                num += 0.5;
        }
    }
    for (const auto& b : s.records) n_r += (b.label == 0);
    return num / (n_f * n_r);
}

// Prefix enumeration with the (score desc, id asc) tie order, recounting
// each prefix from scratch.
inline double average_precision(const ScoreSet& s) {
    std::vector<ScoreRecord> v = s.records;
    std::sort(v.begin(), v.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    double n_f = 0;
    for (const auto& r : v) n_f += (r.label == 1);
    double acc = 0.0;
    for (size_t k = 1; k <= v.size(); ++k) {
        if (v[k - 1].label != 1) continue;
        int fakes_in_prefix = 0;
        for (size_t i = 0; i < k; ++i) fakes_in_prefix += (v[i].label == 1);
        acc += static_cast<double>(fakes_in_prefix) / static_cast<double>(k);
    }
    return acc / n_f;
}

struct Confusion {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    double fpr() const { return static_cast<double>(fp) / (fp + tn); }
    double fnr() const { return static_cast<double>(fn) / (tp + fn); }
    double recall() const { return static_cast<double>(tp) / (tp + fn); }
};

inline Confusion confusion_at(const ScoreSet& s, double threshold) {
    Confusion c;
    for (const auto& r : s.records) {
        const bool pred_fake = r.score >= threshold;
        if (r.label == 1)
            pred_fake ? ++c.tp : ++c.fn;
        else
            pred_fake ? ++c.fp : ++c.tn;
    }
    return c;
}

inline std::vector<double> candidate_thresholds(const ScoreSet& s) {
    std::vector<double> t;
    for (const auto& r : s.records) t.push_back(r.score);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    t.push_back(t.back() + 1.0);  // nothing-predicted sentinel
    return t;
}

inline double acc_at_eer(const ScoreSet& s) {
    double best_gap = 2.0, best_acc = 0.0;
    for (double t : candidate_thresholds(s)) {
        const Confusion c = confusion_at(s, t);
        const double gap = std::fabs(c.fpr() - c.fnr());
        if (gap < best_gap) {
            best_gap = gap;
            best_acc = 1.0 - (c.fpr() + c.fnr()) / 2.0;
        }
    }
    return best_acc;
}

inline double fpr_at_recall(const ScoreSet& s, double target) {
    auto t = candidate_thresholds(s);
    t.pop_back();  // the above-max sentinel never reaches a positive recall target
    std::sort(t.rbegin(), t.rend());
    for (double thr : t) {
        const Confusion c = confusion_at(s, thr);
        if (c.recall() >= target) return c.fpr();
    }
    return 1.0;
}

// All labeled score multisets of size <= max_n over grid x {real,fake},
// visited with a callback. Items inside a multiset get ids "e0","e1",...
template <typename Fn>
inline void for_each_multiset(const std::vector<double>& grid, int max_n, Fn&& fn) {
    const int alphabet = static_cast<int>(grid.size()) * 2;
    std::vector<int> pick;
    auto emit = [&]() {
        ScoreSet s;
        bool has_f = false, has_r = false;
        for (size_t i = 0; i < pick.size(); ++i) {
            ScoreRecord r;
            r.id = "e" + std::to_string(i);
            r.score = grid[pick[i] / 2];
            r.label = pick[i] % 2;
            (r.label == 1 ? has_f : has_r) = true;
            s.records.push_back(std::move(r));
        }
        if (has_f && has_r) fn(s);
    };
    // non-decreasing index sequences enumerate multisets exactly once
    std::function<void(int, int)> rec = [&](int start, int remaining) {
        if (!pick.empty()) emit();
        if (remaining == 0) return;
        for (int a = start; a < alphabet; ++a) {
            pick.push_back(a);
            rec(a, remaining - 1);
            pick.pop_back();
        }
    };
    rec(0, max_n);
}

}  // namespace oracles
