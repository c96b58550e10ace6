// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "invdet/tensor.hpp"

namespace invdet::metrics {

struct ScoreRecord {
    std::string id;
    int label = 0;  // 0 real, 1 fake
    double score = 0.0;
    std::string generator;
};

/// Per-image detector outputs. Ranking metrics require both labels present.
struct ScoreSet {
    std::vector<ScoreRecord> records;

    int count_fake() const;
    int count_real() const;
    void require_both_labels(const char* where) const;
};

void save_scoreset_jsonl(const ScoreSet& s, const std::string& path);
ScoreSet load_scoreset_jsonl(const std::string& path);

/// Probability that a uniformly random fake outranks a uniformly random
/// real; ties count one half. Tie-aware sweep, exact in double for counts
/// below 2^52.
double auroc(const ScoreSet& s);

/// Step-interpolated average precision over descending-score prefixes,
/// fake as the positive class. Ties are broken by ascending id so the
/// prefix order is total and reproducible.
double average_precision(const ScoreSet& s);

/// Balanced accuracy at the observed-score threshold minimizing |FPR-FNR|
/// (ties resolved toward the lower threshold).
double acc_at_eer(const ScoreSet& s);

/// FPR on reals at the tightest observed-score threshold whose recall on
/// fakes reaches the target.
double fpr_at_recall(const ScoreSet& s, double recall_target = 0.8);

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

// Threshold sweeps over distinct observed scores plus the +/-inf sentinels.
std::vector<CurvePoint> roc_points(const ScoreSet& s);  // (FPR, TPR)
std::vector<CurvePoint> pr_points(const ScoreSet& s);   // (recall, precision)
std::vector<CurvePoint> det_points(const ScoreSet& s);  // (FPR, FNR)

double trapezoid_area(const std::vector<CurvePoint>& pts);

void save_curve_csv(const std::vector<CurvePoint>& pts, const std::string& path,
                    const std::string& x_name, const std::string& y_name);

/// Frechet distance between Gaussian fits of two feature sets.
/// Requires at least dim+1 samples per set; near-singular covariances are
/// repaired by clamping negative eigenvalues at zero (reported via warnings).
double fid(const std::vector<Vec>& real_feats, const std::vector<Vec>& fake_feats,
           std::vector<std::string>* warnings = nullptr);

/// Unbiased squared MMD with the cubic polynomial kernel (x.y/d + 1)^3.
/// Equal-sized sets use the paired U-statistic, which is exactly zero on
/// identical inputs; unequal sizes fall back to the full cross-term form.
double kid(const std::vector<Vec>& real_feats, const std::vector<Vec>& fake_feats);

}  // namespace invdet::metrics
