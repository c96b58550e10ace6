// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "invdet/ddim.hpp"
#include "invdet/manifest.hpp"
#include "invdet/nn.hpp"
#include "invdet/rng.hpp"
#include "invdet/tensor.hpp"

namespace invdet::backbone {

struct BackboneConfig {
    int image_size = 32;
    int latent_channels = 4;
    int latent_size = 8;  // image_size / 4
    int d_c = 16;         // label embedding width
    int n_classes = 10;
    int ae_width = 32;
    int denoiser_width = 64;
    int cond_width = 64;
    int time_embed_dim = 32;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string beta_kind = "scaled_linear";
    int ddim_steps = 50;

    Shape3 pixel_shape() const { return {3, image_size, image_size}; }
    Shape3 latent_shape() const { return {latent_channels, latent_size, latent_size}; }
    ddim::NoiseSchedule schedule() const;
};

struct TrainConfig {
    int ae_epochs = 40;
    int encoder_consistency_epochs = 10;
    int classifier_epochs = 14;
    int denoiser_epochs = 60;
    int batch_size = 16;
    float ae_lr = 2e-3f;
    float classifier_lr = 2e-3f;
    float denoiser_lr = 2e-3f;
    bool augment_classifier = true;
    float ema_decay = 0.99f;  // 0 disables weight averaging
    bool lr_decay = true;  // halve at 60% and again at 85% of each phase
};

/// Pixel <-> latent coder. Encoder output is the deterministic posterior
/// mean; decoder output is tanh-bounded.
struct AutoEncoder {
    nn::Conv2d e1, e1b, e2, e2b, e3, e4;
    nn::SiLU ea1, ea1b, ea2, ea2b, ea3;
    nn::Conv2d d1, d2, d3, d3b, d4;
    nn::SiLU da1, da2, da3, da3b;
    nn::TanhLayer out_act;

    void init(const BackboneConfig& cfg, Rng& rng);
    Tensor encode(const Tensor& x);
    Tensor decode(const Tensor& z);
    Tensor backward_decode(const Tensor& gy);  // grad w.r.t. latent
    void backward_encode(const Tensor& gz);
    void collect(std::vector<nn::ParamRef>& out);
};

/// Conditional noise predictor over latents; one down/up level with a skip,
/// conditioning injected per block as a channel bias. The output convolution
/// starts at zero so an untrained network predicts zero noise.
struct Denoiser {
    int width = 0;
    nn::Linear t1, t2, c_proj;
    nn::SiLUVec ta;
    nn::Conv2d conv_in;

    struct ResBlock {
        nn::GroupNorm gn1, gn2;
        nn::SiLU a1, a2;
        nn::Conv2d conv1, conv2;
        nn::Linear cond_proj;  // emits per-channel (scale, shift)
        Tensor x_cache;
        Tensor h_pre_cache;
        Vec film_cache;

        void init(int width, int cond_width, Rng& rng);
        Tensor forward(const Tensor& x, const Vec& cond);
        Tensor backward(const Tensor& gy, Vec& g_cond_accum);
        void collect(std::vector<nn::ParamRef>& out, const std::string& prefix);
    };

    ResBlock rb1, rb2, rb3;
    nn::Conv2d down, up_conv;
    nn::GroupNorm gn_out;
    nn::SiLU a_out;
    nn::Conv2d conv_out;

    // caches for the composite backward
    Tensor h1_cache;
    int time_embed_dim = 0;

    void init(const BackboneConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& z_t, int t, const Vec& c);
    /// Backward through forward(); returns nothing useful for z (inputs are
    /// data), accumulates parameter grads and writes the conditioning grad.
    void backward(const Tensor& g_out, Vec* g_c);
    void collect(std::vector<nn::ParamRef>& out);
};

/// Label predictor standing in for the caption path: small conv net plus a
/// learned per-class embedding table. Pluggable: anything producing a
/// (label, embedding) pair can replace it behind conditioner_embed.
struct Classifier {
    nn::Conv2d c1, c2, c3;
    nn::SiLU a1, a2, a3;
    nn::Linear head;

    void init(const BackboneConfig& cfg, Rng& rng);
    Vec forward(const Tensor& x);
    void backward(const Vec& g_logits);
    void collect(std::vector<nn::ParamRef>& out);
};

struct ConditionerOutput {
    int label = -1;
    Vec embedding;
};

struct BackboneBundle {
    BackboneConfig config;
    AutoEncoder ae;
    Denoiser denoiser;
    Classifier classifier;
    nn::Embedding label_embed;
    float latent_scale = 1.f;

    uint64_t train_seed = 0;
    int trained_epochs = 0;
    std::string data_hash;
    std::string name = "backbone";

    void init(const BackboneConfig& cfg, uint64_t seed);
    bool is_trained() const { return trained_epochs > 0; }
    std::vector<nn::ParamRef> all_params();
    uint64_t content_hash();
    std::string content_hash_hex() { return hash_hex(content_hash()); }
};

/// Deterministic posterior-mean latent, scaled to unit-ish variance.
Tensor vae_encode(const Tensor& x, BackboneBundle& bundle);

/// Latent back to pixels, clamped to [-1,1].
Tensor vae_decode(const Tensor& z, BackboneBundle& bundle);

/// Noise prediction at (z_t, t) under conditioning c.
Tensor denoiser_eps(const Tensor& z_t, int t, const Vec& c, BackboneBundle& bundle);

/// Adapter to the DDIM traversal. The returned callable references the
/// bundle; concurrent callers must each own a bundle copy.
ddim::EpsFn make_eps_fn(BackboneBundle& bundle);

/// Predicted label plus its learned embedding. The input must already be
/// augmented: conditioning is computed on what the inversion will see.
ConditionerOutput conditioner_embed(const Tensor& x, BackboneBundle& bundle);

struct TrainStats {
    std::vector<double> ae_epoch_loss;
    std::vector<double> consistency_epoch_loss;
    std::vector<double> classifier_epoch_loss;
    std::vector<double> denoiser_epoch_loss;
    double classifier_val_accuracy = 0.0;
};

/// Two-phase training: (1) autoencoder reconstruction, (2) frozen
/// autoencoder, label classifier and conditional denoiser. Deterministic
/// given seed. Throws on empty data or non-finite loss.
BackboneBundle train_toy_ldm(const data::DatasetManifest& manifest, const BackboneConfig& cfg,
                             const TrainConfig& tcfg, uint64_t seed, TrainStats* stats = nullptr);

/// Seeded DDIM draw: z_T ~ N(0,I) -> reconstruct_R -> decode.
Tensor sample_fake(int class_label, BackboneBundle& bundle, const ddim::NoiseSchedule& sched,
                   uint64_t seed);

void save_bundle(BackboneBundle& bundle, const std::string& path);
BackboneBundle load_bundle(const std::string& path);

}  // namespace invdet::backbone
