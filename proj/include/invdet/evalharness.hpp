// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>

#include "invdet/detector.hpp"
#include "invdet/imageops.hpp"
#include "invdet/metrics.hpp"

namespace invdet::evalharness {

/// Image -> feature vector for distribution metrics. Pluggable; the default
/// pools the backbone encoder's latent per channel.
struct FeatureExtractor {
    std::string version;
    std::function<Vec(const Tensor& image)> fn;
};

FeatureExtractor default_feature_extractor(backbone::BackboneBundle& bundle);

struct EvalConfig {
    double recall_target = 0.8;
    std::optional<imageops::CorruptionSpec> corruption;
    uint64_t corruption_seed = 0;
    int workers = 2;
    std::string cache_dir;
    std::string out_dir;  // report and curve files land here
    bool compute_fid_kid = true;
};

struct MetricReport {
    int schema_version = 1;
    double auroc = 0.0;
    double ap = 0.0;
    double acc_at_eer = 0.0;
    double fpr_at_recall = 0.0;
    double recall_target = 0.8;
    bool fid_kid_valid = false;
    double fid = 0.0;
    double kid = 0.0;       // raw squared-MMD value
    double kid_x100 = 0.0;  // the conventional x10^-2 presentation
    int n_scored = 0;
    int n_fake = 0;
    int n_real = 0;
    int n_failed = 0;
    std::string corruption;  // empty when clean
    std::string roc_csv, pr_csv, det_csv, scores_file;
    std::string detector_hash, backbone_hash, extractor_version;
    int ddim_steps = 0;
    std::string detector_mode;

    std::string to_json() const;
    void save(const std::string& path) const;
};

/// Scores the manifest's test split, computes the full metric set, writes
/// ROC/PR/DET curve files plus scores and report JSON into out_dir.
/// Corruption, when configured, applies before preprocessing. Per-record
/// failures are excluded and counted.
MetricReport evaluate(const data::DatasetManifest& manifest, detector::DetectorBundle& det,
                      backbone::BackboneBundle& bundle, const ddim::NoiseSchedule& sched,
                      const EvalConfig& cfg);

}  // namespace invdet::evalharness
