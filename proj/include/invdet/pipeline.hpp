// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "invdet/backbone.hpp"
#include "invdet/imageops.hpp"
#include "invdet/manifest.hpp"

namespace invdet::pipeline {

/// Detector input stack of one image: the image itself, the decoded noise
/// map and the decoded reconstruction, in that channel order.
struct FeatureTriplet {
    Tensor original;
    Tensor noise_image;
    Tensor recon_image;

    Tensor stacked() const;  // 9 x H x W, order (original, noise, recon)
    void validate() const;
};

/// Rebuilds a triplet view from a stacked 9-channel tensor.
FeatureTriplet unstack_triplet(const Tensor& stacked);

using ConditionerFn = std::function<backbone::ConditionerOutput(const Tensor&)>;

/// Conditioning, encoding, inversion, reconstruction and decoding for one
/// already-augmented image. The conditioner override exists for swapping in
/// an external captioner path; by default the bundle's label conditioner
/// runs, always on the image exactly as handed in here.
FeatureTriplet build_feature_triplet(const Tensor& x_augmented, backbone::BackboneBundle& bundle,
                                     const ddim::NoiseSchedule& sched,
                                     const ConditionerFn& conditioner_override = {},
                                     bool standardize_noise_decode = false);

/// Elementwise |x - recon|.
Tensor compute_residual(const Tensor& x, const FeatureTriplet& triplet);

struct FeatureRecord {
    std::string id;
    int label = 0;
    std::string generator;
    uint64_t aug_seed = 0;
    int64_t index = -1;  // record position inside the flat binary file
};

/// Flat float32 records plus a JSON sidecar header.
struct FeatureFile {
    Shape3 shape;
    std::string channel_order;
    std::string bundle_hash;
    int version = 1;
    std::vector<FeatureRecord> records;
    std::string bin_path;

    Tensor read(size_t record_idx) const;
    static FeatureFile open(const std::string& sidecar_path);
};

class FeatureWriter {
public:
    FeatureWriter(const std::string& prefix, Shape3 shape, const std::string& bundle_hash);
    void append(const FeatureRecord& meta, const Tensor& stacked);
    FeatureFile finalize();

private:
    std::string prefix_;
    Shape3 shape_;
    std::string bundle_hash_;
    std::vector<FeatureRecord> records_;
    std::string tmp_bin_;
    std::shared_ptr<std::ofstream> out_;
};

/// Deterministic featurization recipe for a single image file.
struct FeaturizeSpec {
    bool augment = false;
    imageops::AugmentConfig aug;
    uint64_t aug_seed = 0;
    std::optional<imageops::CorruptionSpec> corruption;  // applied pre-preprocessing
    uint64_t corruption_seed = 0;
    bool standardize_noise_decode = false;
};

/// Loads, (optionally) corrupts, preprocesses, (optionally) augments and
/// feature-izes one image. Results are cached under cache_dir keyed by
/// image bytes, bundle hash, step count and the full spec; cache writes go
/// through a temp file and an atomic rename.
Tensor featurize_image_file(const std::string& path, backbone::BackboneBundle& bundle,
                            const ddim::NoiseSchedule& sched, const FeaturizeSpec& spec,
                            const std::string& cache_dir, bool* cache_hit);

struct ExtractConfig {
    int workers = 2;
    bool augment_train_split = true;  // augmentation is train-only
    imageops::AugmentConfig aug;
    uint64_t seed = 0;  // root of the per-image augmentation streams
    std::optional<imageops::CorruptionSpec> corruption;
    uint64_t corruption_seed = 0;
    bool standardize_noise_decode = false;
    std::string cache_dir;
};

struct ExtractResult {
    FeatureFile file;
    int cache_hits = 0;
    int computed = 0;
    std::vector<std::string> failed_ids;
};

/// Featurizes every listed record into <out_prefix>.bin/.json. Parallel
/// across images; each worker owns a bundle clone and a per-image rng
/// stream, so outputs are byte-identical for any worker count.
ExtractResult extract_features(const data::DatasetManifest& manifest,
                               const std::vector<const data::ManifestRecord*>& records,
                               backbone::BackboneBundle& bundle, const ddim::NoiseSchedule& sched,
                               const ExtractConfig& cfg, const std::string& out_prefix);

uint64_t per_image_aug_seed(uint64_t root_seed, const std::string& image_id);

}  // namespace invdet::pipeline
