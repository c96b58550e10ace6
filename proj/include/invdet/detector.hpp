// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "invdet/metrics.hpp"
#include "invdet/nn.hpp"
#include "invdet/pipeline.hpp"

namespace invdet::detector {

enum class InputMode { Rgb, Residual, Full };

InputMode parse_mode(const std::string& name);
std::string mode_name(InputMode mode);
int mode_channels(InputMode mode);  // 3 / 3 / 9

/// Maps a stacked 9-channel feature tensor to the mode's input view:
/// rgb reads only the original image, residual is |original - recon|,
/// full passes all nine channels through.
Tensor select_mode_input(const Tensor& stacked, InputMode mode);

/// Small residual conv net: stem, four residual blocks over three scales,
/// global average pool, linear head.
struct DetectorNet {
    int in_c = 0, width = 0;

    struct Block {
        nn::GroupNorm gn1, gn2;
        nn::SiLU a1, a2;
        nn::Conv2d conv1, conv2;
        Tensor x_cache;

        void init(int width, Rng& rng);
        Tensor forward(const Tensor& x);
        Tensor backward(const Tensor& gy);
        void collect(std::vector<nn::ParamRef>& out, const std::string& prefix);
    };

    nn::Conv2d conv_in;
    Block b1, b2, b3, b4;
    nn::Conv2d down1, down2;
    nn::GroupNorm gn_out;
    nn::SiLU a_out;
    nn::Linear head;

    void init(int in_channels, int base_width, Rng& rng);
    float forward(const Tensor& x);
    void backward(float g_logit);
    void collect(std::vector<nn::ParamRef>& out);
};

struct DetectorTrainConfig {
    int max_epochs = 25;  // validation picks the checkpoint inside this budget
    int batch_size = 16;
    float lr = 1e-4f;
    float beta1 = 0.9f;
    int base_width = 16;
};

struct LabeledExample {
    Tensor features;  // stacked 9-channel tensor; mode view taken at use
    int label = 0;
    std::string id;
    std::string generator;
};

struct DetectorBundle {
    DetectorNet net;
    InputMode mode = InputMode::Full;
    int image_size = 0;
    DetectorTrainConfig train_config;
    uint64_t train_seed = 0;
    int selected_epoch = -1;
    double val_score = 0.0;
    std::string backbone_hash;

    uint64_t content_hash();
    std::string content_hash_hex() { return hash_hex(content_hash()); }
};

/// Argmax over validation scores, earlier epoch on ties.
int select_best_epoch(const std::vector<double>& val_scores);

float predict_logit(const Tensor& features, DetectorBundle& det);
double predict_score(const Tensor& features, DetectorBundle& det);  // sigmoid(logit)

struct DetectorTrainStats {
    std::vector<double> epoch_loss;
    std::vector<double> val_auroc;
};

/// Binary cross-entropy training with 50/50 real/fake batches; after every
/// epoch the validation AUCROC is measured and the best checkpoint is kept.
DetectorBundle train_detector(const std::vector<LabeledExample>& train,
                              const std::vector<LabeledExample>& val, InputMode mode,
                              const DetectorTrainConfig& cfg, uint64_t seed,
                              DetectorTrainStats* stats = nullptr);

/// Scores one already-extracted feature file.
metrics::ScoreSet score_feature_file(const pipeline::FeatureFile& file, DetectorBundle& det);

struct ScoreManifestResult {
    metrics::ScoreSet scores;
    std::vector<std::string> missing_ids;
};

/// Scores every record of a manifest split with clean preprocessing
/// (augmentation is train-only); corruption, when present in the context,
/// applies before preprocessing. Missing files are reported, not fatal.
ScoreManifestResult score_manifest(const data::DatasetManifest& manifest,
                                   const std::vector<const data::ManifestRecord*>& records,
                                   DetectorBundle& det, backbone::BackboneBundle& bundle,
                                   const ddim::NoiseSchedule& sched,
                                   const pipeline::ExtractConfig& ctx);

void save_detector(DetectorBundle& det, const std::string& path);
DetectorBundle load_detector(const std::string& path);

}  // namespace invdet::detector
