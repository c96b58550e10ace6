// SPDX-License-Identifier: Apache-2.0
#include "invdet/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

namespace invdet::metrics {

using nlohmann::json;

int ScoreSet::count_fake() const {
    int n = 0;
    for (const auto& r : records) n += (r.label == 1);
    return n;
}

int ScoreSet::count_real() const {
    int n = 0;
    for (const auto& r : records) n += (r.label == 0);
    return n;
}

void ScoreSet::require_both_labels(const char* where) const {
    if (records.empty()) throw std::invalid_argument(std::string(where) + ": empty score set");
    if (count_fake() == 0 || count_real() == 0)
        throw std::invalid_argument(std::string(where) + ": both labels must be present");
}

void save_scoreset_jsonl(const ScoreSet& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scoreset_jsonl: cannot open " + path);
    for (const auto& r : s.records) {
        json j;
        j["id"] = r.id;
        j["label"] = r.label;
        j["score"] = r.score;
        j["generator"] = r.generator;
        out << j.dump() << "\n";
    }
}

ScoreSet load_scoreset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scoreset_jsonl: cannot open " + path);
    ScoreSet s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ScoreRecord r;
        r.id = j.at("id").get<std::string>();
        r.label = j.at("label").get<int>();
        r.score = j.at("score").get<double>();
        r.generator = j.value("generator", "");
        s.records.push_back(std::move(r));
    }
    return s;
}

namespace {

// (score, label) pairs sorted ascending by score.
std::vector<std::pair<double, int>> sorted_by_score(const ScoreSet& s) {
    std::vector<std::pair<double, int>> v;
    v.reserve(s.records.size());
    for (const auto& r : s.records) v.emplace_back(r.score, r.label);
    std::sort(v.begin(), v.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return v;
}

// Distinct observed scores ascending.
std::vector<double> distinct_scores(const ScoreSet& s) {
    std::vector<double> v;
    v.reserve(s.records.size());
    for (const auto& r : s.records) v.push_back(r.score);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

struct Rates {
    double fpr = 0.0;
    double fnr = 0.0;
    double tpr = 0.0;
    double recall = 0.0;
};

// Rates under the rule "fake iff score >= threshold".
Rates rates_at(const ScoreSet& s, double threshold) {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& r : s.records) {
        const bool pred_fake = r.score >= threshold;
        if (r.label == 1) {
            pred_fake ? ++tp : ++fn;
        } else {
            pred_fake ? ++fp : ++tn;
        }
    }
    Rates out;
    out.fpr = static_cast<double>(fp) / (fp + tn);
    out.fnr = static_cast<double>(fn) / (tp + fn);
    out.tpr = static_cast<double>(tp) / (tp + fn);
    out.recall = out.tpr;
    return out;
}

}  // namespace

double auroc(const ScoreSet& s) {
    s.require_both_labels("auroc");
    const auto v = sorted_by_score(s);
    const double n_f = s.count_fake();
    const double n_r = s.count_real();

    // Sweep equal-score groups; every fake in a group dominates all reals
    // strictly below it and half-counts reals inside the group. Numerator is
    // a sum of half-integers, exact in double.
    double numerator = 0.0;
    double reals_below = 0.0;
    size_t i = 0;
    while (i < v.size()) {
        size_t j = i;
        int group_f = 0, group_r = 0;
        while (j < v.size() && v[j].first == v[i].first) {
            (v[j].second == 1) ? ++group_f : ++group_r;
            ++j;
        }
        numerator += group_f * reals_below + 0.5 * group_f * group_r;
        reals_below += group_r;
        i = j;
    }
    return numerator / (n_f * n_r);
}

double average_precision(const ScoreSet& s) {
    s.require_both_labels("average_precision");
    std::vector<const ScoreRecord*> order;
    order.reserve(s.records.size());
    for (const auto& r : s.records) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](const ScoreRecord* a, const ScoreRecord* b) {
        if (a->score != b->score) return a->score > b->score;
        return a->id < b->id;
    });
    const double n_f = s.count_fake();
    double acc = 0.0;
    int fakes_seen = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (order[k]->label == 1) {
            ++fakes_seen;
            acc += static_cast<double>(fakes_seen) / static_cast<double>(k + 1);
        }
    }
    return acc / n_f;
}

double acc_at_eer(const ScoreSet& s) {
    s.require_both_labels("acc_at_eer");
    auto cands = distinct_scores(s);
    // sentinel above every observed score: nothing classified fake
    cands.push_back(cands.back() + 1.0);

    double best_gap = 2.0, best_acc = 0.0;
    for (double t : cands) {  // ascending; strict improvement keeps the lowest threshold
        const Rates r = rates_at(s, t);
        const double gap = std::fabs(r.fpr - r.fnr);
        if (gap < best_gap) {
            best_gap = gap;
            best_acc = 1.0 - (r.fpr + r.fnr) / 2.0;
        }
    }
    return best_acc;
}

double fpr_at_recall(const ScoreSet& s, double recall_target) {
    s.require_both_labels("fpr_at_recall");
    if (!(recall_target > 0.0 && recall_target <= 1.0))
        throw std::invalid_argument("fpr_at_recall: target must be in (0,1]");
    const auto cands = distinct_scores(s);
    // Tightest threshold first: scan descending, stop at the first threshold
    // whose recall reaches the target (it admits the fewest reals).
    for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
        const Rates r = rates_at(s, *it);
        if (r.recall >= recall_target) return r.fpr;
    }
    return 1.0;  // unreachable: the minimum score always yields recall 1
}

std::vector<CurvePoint> roc_points(const ScoreSet& s) {
    s.require_both_labels("roc_points");
    const auto v = sorted_by_score(s);
    const double n_f = s.count_fake();
    const double n_r = s.count_real();
    std::vector<CurvePoint> pts;
    pts.push_back({0.0, 0.0});  // threshold above all scores
    double tp = 0, fp = 0;
    // descending threshold sweep over distinct scores
    size_t i = v.size();
    while (i > 0) {
        size_t j = i;
        const double score = v[i - 1].first;
        while (j > 0 && v[j - 1].first == score) {
            (v[j - 1].second == 1) ? ++tp : ++fp;
            --j;
        }
        pts.push_back({fp / n_r, tp / n_f});
        i = j;
    }
    return pts;  // last point is (1,1)
}

std::vector<CurvePoint> pr_points(const ScoreSet& s) {
    s.require_both_labels("pr_points");
    const auto v = sorted_by_score(s);
    const double n_f = s.count_fake();
    std::vector<CurvePoint> pts;
    pts.push_back({0.0, 1.0});  // empty prediction set: precision by convention 1
    double tp = 0, fp = 0;
    size_t i = v.size();
    while (i > 0) {
        size_t j = i;
        const double score = v[i - 1].first;
        while (j > 0 && v[j - 1].first == score) {
            (v[j - 1].second == 1) ? ++tp : ++fp;
            --j;
        }
        pts.push_back({tp / n_f, tp / (tp + fp)});
        i = j;
    }
    return pts;
}

std::vector<CurvePoint> det_points(const ScoreSet& s) {
    const auto roc = roc_points(s);
    std::vector<CurvePoint> pts;
    pts.reserve(roc.size());
    for (const auto& p : roc) pts.push_back({p.x, 1.0 - p.y});
    return pts;
}

double trapezoid_area(const std::vector<CurvePoint>& pts) {
    double area = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
        area += (pts[i].x - pts[i - 1].x) * (pts[i].y + pts[i - 1].y) / 2.0;
    return area;
}

void save_curve_csv(const std::vector<CurvePoint>& pts, const std::string& path,
                    const std::string& x_name, const std::string& y_name) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_curve_csv: cannot open " + path);
    out << x_name << "," << y_name << "\n";
    char buf[80];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p.x, p.y);
        out << buf;
    }
}

namespace {

Eigen::MatrixXd to_matrix(const std::vector<Vec>& feats, const char* where) {
    if (feats.empty()) throw std::invalid_argument(std::string(where) + ": empty feature set");
    const size_t d = feats[0].size();
    Eigen::MatrixXd m(feats.size(), d);
    for (size_t i = 0; i < feats.size(); ++i) {
        if (feats[i].size() != d)
            throw std::invalid_argument(std::string(where) + ": inconsistent feature dimension");
        for (size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feats[i][j];
    }
    return m;
}

// Symmetric PSD square root with negative eigenvalues clamped at zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, bool* clamped) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < 0) {
            ev(i) = 0;
            if (clamped) *clamped = true;
        }
    }
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const std::vector<Vec>& real_feats, const std::vector<Vec>& fake_feats,
           std::vector<std::string>* warnings) {
    const Eigen::MatrixXd xr = to_matrix(real_feats, "fid");
    const Eigen::MatrixXd xf = to_matrix(fake_feats, "fid");
    if (xr.cols() != xf.cols()) throw std::invalid_argument("fid: feature dimensions differ");
    const Eigen::Index d = xr.cols();
    if (xr.rows() < d + 1 || xf.rows() < d + 1)
        throw std::invalid_argument("fid: need at least dim+1 samples per set");

    const Eigen::VectorXd mu_r = xr.colwise().mean();
    const Eigen::VectorXd mu_f = xf.colwise().mean();
    const Eigen::MatrixXd cr = (xr.rowwise() - mu_r.transpose()).transpose() *
                               (xr.rowwise() - mu_r.transpose()) / double(xr.rows() - 1);
    const Eigen::MatrixXd cf = (xf.rowwise() - mu_f.transpose()).transpose() *
                               (xf.rowwise() - mu_f.transpose()) / double(xf.rows() - 1);

    bool clamped = false;
    const Eigen::MatrixXd sr = psd_sqrt(cr, &clamped);
    // tr((cr cf)^{1/2}) via the symmetric similar matrix sr cf sr
    bool clamped_inner = false;
    const Eigen::MatrixXd inner = psd_sqrt(sr * cf * sr, &clamped_inner);
    if ((clamped || clamped_inner) && warnings)
        warnings->push_back("fid: covariance had negative eigenvalues, clamped at zero");

    const double mean_term = (mu_r - mu_f).squaredNorm();
    const double trace_term = cr.trace() + cf.trace() - 2.0 * inner.trace();
    return mean_term + trace_term;
}

namespace {

double poly3_kernel(const Vec& a, const Vec& b) {
    const double d = static_cast<double>(a.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    const double u = s / d + 1.0;
    return u * u * u;
}

}  // namespace

double kid(const std::vector<Vec>& real_feats, const std::vector<Vec>& fake_feats) {
    if (real_feats.size() < 2 || fake_feats.size() < 2)
        throw std::invalid_argument("kid: need at least two samples per set");
    const size_t m = real_feats.size();
    const size_t n = fake_feats.size();
    if (m == n) {
        // h-statistic form: pairwise terms cancel exactly on identical sets
        double acc = 0.0;
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < m; ++j) {
                if (i == j) continue;
                acc += poly3_kernel(real_feats[i], real_feats[j]) +
                       poly3_kernel(fake_feats[i], fake_feats[j]) -
                       poly3_kernel(real_feats[i], fake_feats[j]) -
                       poly3_kernel(real_feats[j], fake_feats[i]);
            }
        }
        return acc / (static_cast<double>(m) * (m - 1));
    }
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j)
            if (i != j) kxx += poly3_kernel(real_feats[i], real_feats[j]);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (i != j) kyy += poly3_kernel(fake_feats[i], fake_feats[j]);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) kxy += poly3_kernel(real_feats[i], fake_feats[j]);
    return kxx / (static_cast<double>(m) * (m - 1)) + kyy / (static_cast<double>(n) * (n - 1)) -
           2.0 * kxy / (static_cast<double>(m) * n);
}

}  // namespace invdet::metrics
