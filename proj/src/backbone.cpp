// SPDX-License-Identifier: Apache-2.0
#include "invdet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "invdet/errors.hpp"
#include "invdet/imageio.hpp"
#include "invdet/imageops.hpp"

namespace invdet::backbone {

using nlohmann::json;

ddim::NoiseSchedule BackboneConfig::schedule() const {
    const auto kind = beta_kind == "linear" ? ddim::BetaKind::Linear : ddim::BetaKind::ScaledLinear;
    return ddim::build_schedule(T, beta_start, beta_end, kind, ddim_steps);
}

namespace {

json config_to_json(const BackboneConfig& c) {
    json j;
    j["image_size"] = c.image_size;
    j["latent_channels"] = c.latent_channels;
    j["latent_size"] = c.latent_size;
    j["d_c"] = c.d_c;
    j["n_classes"] = c.n_classes;
    j["ae_width"] = c.ae_width;
    j["denoiser_width"] = c.denoiser_width;
    j["cond_width"] = c.cond_width;
    j["time_embed_dim"] = c.time_embed_dim;
    j["T"] = c.T;
    j["beta_start"] = c.beta_start;
    j["beta_end"] = c.beta_end;
    j["beta_kind"] = c.beta_kind;
    j["ddim_steps"] = c.ddim_steps;
    return j;
}

BackboneConfig config_from_json(const json& j) {
    BackboneConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.latent_size = j.at("latent_size").get<int>();
    c.d_c = j.at("d_c").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.ae_width = j.at("ae_width").get<int>();
    c.denoiser_width = j.at("denoiser_width").get<int>();
    c.cond_width = j.at("cond_width").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.T = j.at("T").get<int>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.beta_kind = j.at("beta_kind").get<std::string>();
    c.ddim_steps = j.at("ddim_steps").get<int>();
    return c;
}

}  // namespace

void AutoEncoder::init(const BackboneConfig& cfg, Rng& rng) {
    const int w = cfg.ae_width;
    e1.init(3, 24, 3, 1, 1, rng);
    e1b.init(24, 24, 3, 1, 1, rng);
    e2.init(24, w, 3, 2, 1, rng);
    e2b.init(w, w, 3, 1, 1, rng);
    e3.init(w, w, 3, 2, 1, rng);
    e4.init(w, cfg.latent_channels, 3, 1, 1, rng);
    d1.init(cfg.latent_channels, w, 3, 1, 1, rng);
    d2.init(w, 4 * w, 3, 1, 1, rng);   // sub-pixel to 2x resolution
    d3.init(w, 128, 3, 1, 1, rng);     // sub-pixel to 4x resolution
    d3b.init(32, 32, 3, 1, 1, rng);
    d4.init(32, 3, 3, 1, 1, rng);
}

Tensor AutoEncoder::encode(const Tensor& x) {
    Tensor h = ea1.forward(e1.forward(x));
    h = ea1b.forward(e1b.forward(h));
    h = ea2.forward(e2.forward(h));
    h = ea2b.forward(e2b.forward(h));
    h = ea3.forward(e3.forward(h));
    return e4.forward(h);
}

Tensor AutoEncoder::decode(const Tensor& z) {
    Tensor h = da1.forward(d1.forward(z));
    h = da2.forward(nn::depth_to_space2(d2.forward(h)));
    h = da3.forward(nn::depth_to_space2(d3.forward(h)));
    h = da3b.forward(d3b.forward(h));
    return out_act.forward(d4.forward(h));
}

Tensor AutoEncoder::backward_decode(const Tensor& gy) {
    Tensor g = d4.backward(out_act.backward(gy));
    g = d3b.backward(da3b.backward(g));
    g = d3.backward(nn::depth_to_space2_backward(da3.backward(g)));
    g = d2.backward(nn::depth_to_space2_backward(da2.backward(g)));
    return d1.backward(da1.backward(g));
}

void AutoEncoder::backward_encode(const Tensor& gz) {
    Tensor g = e4.backward(gz);
    g = e3.backward(ea3.backward(g));
    g = e2b.backward(ea2b.backward(g));
    g = e2.backward(ea2.backward(g));
    g = e1b.backward(ea1b.backward(g));
    e1.backward(ea1.backward(g));
}

void AutoEncoder::collect(std::vector<nn::ParamRef>& out) {
    e1.collect(out, "ae.e1");
    e1b.collect(out, "ae.e1b");
    e2.collect(out, "ae.e2");
    e2b.collect(out, "ae.e2b");
    e3.collect(out, "ae.e3");
    e4.collect(out, "ae.e4");
    d1.collect(out, "ae.d1");
    d2.collect(out, "ae.d2");
    d3.collect(out, "ae.d3");
    d3b.collect(out, "ae.d3b");
    d4.collect(out, "ae.d4");
}

void Denoiser::ResBlock::init(int width, int cond_width, Rng& rng) {
    gn1.init(width, 8);
    gn2.init(width, 8);
    conv1.init(width, width, 3, 1, 1, rng);
    conv2.init(width, width, 3, 1, 1, rng);
    cond_proj.init(cond_width, 2 * width, rng);
}

Tensor Denoiser::ResBlock::forward(const Tensor& x, const Vec& cond) {
    x_cache = x;
    Tensor h = conv1.forward(a1.forward(gn1.forward(x)));
    h_pre_cache = h;
    film_cache = cond_proj.forward(cond);  // [scale..., shift...]
    const int ch = h.channels();
    const int hw = h.height() * h.width();
    for (int c = 0; c < ch; ++c) {
        const float scale = 1.f + film_cache[static_cast<size_t>(c)];
        const float shift = film_cache[static_cast<size_t>(ch + c)];
        for (int i = 0; i < hw; ++i) h.data()[c * hw + i] = h.data()[c * hw + i] * scale + shift;
    }
    Tensor g = conv2.forward(a2.forward(gn2.forward(h)));
    for (int i = 0; i < g.size(); ++i) g[i] += x[i];
    return g;
}

Tensor Denoiser::ResBlock::backward(const Tensor& gy, Vec& g_cond_accum) {
    Tensor gh = gn2.backward(a2.backward(conv2.backward(gy)));
    const int ch = gh.channels();
    const int hw = gh.height() * gh.width();
    Vec g_film(static_cast<size_t>(2 * ch), 0.f);
    for (int c = 0; c < ch; ++c) {
        const float scale = 1.f + film_cache[static_cast<size_t>(c)];
        double g_scale = 0, g_shift = 0;
        for (int i = 0; i < hw; ++i) {
            const float gv = gh.data()[c * hw + i];
            g_scale += static_cast<double>(gv) * h_pre_cache.data()[c * hw + i];
            g_shift += gv;
            gh.data()[c * hw + i] = gv * scale;
        }
        g_film[static_cast<size_t>(c)] = static_cast<float>(g_scale);
        g_film[static_cast<size_t>(ch + c)] = static_cast<float>(g_shift);
    }
    const Vec g_cond = cond_proj.backward(g_film);
    for (size_t i = 0; i < g_cond.size(); ++i) g_cond_accum[i] += g_cond[i];
    Tensor gx = gn1.backward(a1.backward(conv1.backward(gh)));
    for (int i = 0; i < gx.size(); ++i) gx[i] += gy[i];  // skip branch
    return gx;
}

void Denoiser::ResBlock::collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    gn1.collect(out, prefix + ".gn1");
    conv1.collect(out, prefix + ".conv1");
    cond_proj.collect(out, prefix + ".cond");
    gn2.collect(out, prefix + ".gn2");
    conv2.collect(out, prefix + ".conv2");
}

void Denoiser::init(const BackboneConfig& cfg, Rng& rng) {
    width = cfg.denoiser_width;
    time_embed_dim = cfg.time_embed_dim;
    t1.init(cfg.time_embed_dim, cfg.cond_width, rng);
    t2.init(cfg.cond_width, cfg.cond_width, rng);
    c_proj.init(cfg.d_c, cfg.cond_width, rng);
    conv_in.init(cfg.latent_channels, width, 3, 1, 1, rng);
    rb1.init(width, cfg.cond_width, rng);
    rb2.init(width, cfg.cond_width, rng);
    rb3.init(width, cfg.cond_width, rng);
    down.init(width, width, 3, 2, 1, rng);
    up_conv.init(width, width, 3, 1, 1, rng);
    gn_out.init(width, 8);
    conv_out.init(width, cfg.latent_channels, 3, 1, 1, rng);
    conv_out.init_zero_weights();  // untrained network predicts zero noise
}

Tensor Denoiser::forward(const Tensor& z_t, int t, const Vec& c) {
    const Vec temb = nn::sinusoidal_embedding(static_cast<float>(t), time_embed_dim);
    const Vec tw = t2.forward(ta.forward(t1.forward(temb)));
    const Vec cw = c_proj.forward(c);
    Vec cond(tw.size());
    for (size_t i = 0; i < cond.size(); ++i) cond[i] = tw[i] + cw[i];

    Tensor h0 = conv_in.forward(z_t);
    Tensor h1 = rb1.forward(h0, cond);
    h1_cache = h1;
    Tensor h3 = rb2.forward(down.forward(h1), cond);
    Tensor h4 = up_conv.forward(nn::upsample2x_nearest(h3));
    for (int i = 0; i < h4.size(); ++i) h4[i] += h1[i];
    Tensor h6 = rb3.forward(h4, cond);
    return conv_out.forward(a_out.forward(gn_out.forward(h6)));
}

void Denoiser::backward(const Tensor& g_out, Vec* g_c) {
    Vec g_cond(static_cast<size_t>(t2.out_n), 0.f);
    Tensor g_h6 = gn_out.backward(a_out.backward(conv_out.backward(g_out)));
    Tensor g_h4 = rb3.backward(g_h6, g_cond);
    // h4 fans out of the skip add: grads flow to both the up path and h1
    Tensor g_h3 = nn::upsample2x_backward(up_conv.backward(g_h4));
    Tensor g_h2 = rb2.backward(g_h3, g_cond);
    Tensor g_h1 = down.backward(g_h2);
    for (int i = 0; i < g_h1.size(); ++i) g_h1[i] += g_h4[i];
    Tensor g_h0 = rb1.backward(g_h1, g_cond);
    conv_in.backward(g_h0);

    const Vec g_cw = g_cond;  // cond = tw + cw
    const Vec g_c_local = c_proj.backward(g_cw);
    if (g_c) *g_c = g_c_local;
    t1.backward(ta.backward(t2.backward(g_cond)));
}

void Denoiser::collect(std::vector<nn::ParamRef>& out) {
    t1.collect(out, "den.t1");
    t2.collect(out, "den.t2");
    c_proj.collect(out, "den.cproj");
    conv_in.collect(out, "den.conv_in");
    rb1.collect(out, "den.rb1");
    down.collect(out, "den.down");
    rb2.collect(out, "den.rb2");
    up_conv.collect(out, "den.up_conv");
    rb3.collect(out, "den.rb3");
    gn_out.collect(out, "den.gn_out");
    conv_out.collect(out, "den.conv_out");
}

void Classifier::init(const BackboneConfig& cfg, Rng& rng) {
    c1.init(3, 16, 3, 2, 1, rng);
    c2.init(16, 24, 3, 2, 1, rng);
    c3.init(24, 32, 3, 2, 1, rng);
    head.init(32, cfg.n_classes, rng);
}

Vec Classifier::forward(const Tensor& x) {
    Tensor h = a3.forward(c3.forward(a2.forward(c2.forward(a1.forward(c1.forward(x))))));
    return head.forward(nn::global_avg_pool(h));
}

void Classifier::backward(const Vec& g_logits) {
    const Vec g_pool = head.backward(g_logits);
    const Shape3 feat_shape = a3.x_cache.shape();
    Tensor g = nn::global_avg_pool_backward(g_pool, feat_shape);
    c1.backward(a1.backward(c2.backward(a2.backward(c3.backward(a3.backward(g))))));
}

void Classifier::collect(std::vector<nn::ParamRef>& out) {
    c1.collect(out, "clf.c1");
    c2.collect(out, "clf.c2");
    c3.collect(out, "clf.c3");
    head.collect(out, "clf.head");
}

void BackboneBundle::init(const BackboneConfig& cfg, uint64_t seed) {
    config = cfg;
    train_seed = seed;
    trained_epochs = 0;
    latent_scale = 1.f;
    Rng rng(seed);
    Rng ae_rng = rng.substream("init_ae");
    Rng den_rng = rng.substream("init_denoiser");
    Rng clf_rng = rng.substream("init_classifier");
    Rng emb_rng = rng.substream("init_embed");
    ae.init(cfg, ae_rng);
    denoiser.init(cfg, den_rng);
    classifier.init(cfg, clf_rng);
    label_embed.init(cfg.n_classes, cfg.d_c, emb_rng);
}

std::vector<nn::ParamRef> BackboneBundle::all_params() {
    std::vector<nn::ParamRef> out;
    ae.collect(out);
    denoiser.collect(out);
    classifier.collect(out);
    label_embed.collect(out, "embed");
    return out;
}

uint64_t BackboneBundle::content_hash() {
    Fnv1a64 h;
    h.update_str(config_to_json(config).dump());
    h.update(&latent_scale, sizeof(latent_scale));
    h.update_u64(train_seed);
    h.update_u64(static_cast<uint64_t>(trained_epochs));
    h.update_str(data_hash);
    for (const auto& p : all_params()) {
        h.update_str(p.name);
        h.update(p.w->data(), p.w->size() * sizeof(float));
    }
    return h.digest();
}

Tensor vae_encode(const Tensor& x, BackboneBundle& bundle) {
    if (!(x.shape() == bundle.config.pixel_shape()))
        throw std::invalid_argument("vae_encode: input shape " + x.shape().str() +
                                    " does not match pixel shape " +
                                    bundle.config.pixel_shape().str());
    Tensor z = bundle.ae.encode(x);
    for (int i = 0; i < z.size(); ++i) z[i] *= bundle.latent_scale;
    return z;
}

Tensor vae_decode(const Tensor& z, BackboneBundle& bundle) {
    if (!(z.shape() == bundle.config.latent_shape()))
        throw std::invalid_argument("vae_decode: latent shape " + z.shape().str() +
                                    " does not match " + bundle.config.latent_shape().str());
    Tensor zs = z;
    for (int i = 0; i < zs.size(); ++i) zs[i] /= bundle.latent_scale;
    Tensor x = bundle.ae.decode(zs);
    x.clamp(-1.f, 1.f);
    return x;
}

Tensor denoiser_eps(const Tensor& z_t, int t, const Vec& c, BackboneBundle& bundle) {
    if (!(z_t.shape() == bundle.config.latent_shape()))
        throw std::invalid_argument("denoiser_eps: latent shape mismatch");
    if (static_cast<int>(c.size()) != bundle.config.d_c)
        throw std::invalid_argument("denoiser_eps: conditioning dimension mismatch");
    if (t < 0 || t > bundle.config.T) throw std::invalid_argument("denoiser_eps: t out of range");
    return bundle.denoiser.forward(z_t, t, c);
}

ddim::EpsFn make_eps_fn(BackboneBundle& bundle) {
    BackboneBundle* b = &bundle;
    return [b](const Tensor& z_t, int t, const Vec& c) { return denoiser_eps(z_t, t, c, *b); };
}

ConditionerOutput conditioner_embed(const Tensor& x, BackboneBundle& bundle) {
    const Vec logits = bundle.classifier.forward(x);
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[static_cast<size_t>(best)]) best = static_cast<int>(i);
    ConditionerOutput out;
    out.label = best;
    out.embedding = bundle.label_embed.forward(best);
    return out;
}

namespace {

struct TrainItem {
    Tensor image;
    int class_id = -1;
    std::string id;
};

std::vector<TrainItem> load_training_images(const data::DatasetManifest& manifest,
                                            const BackboneConfig& cfg) {
    std::vector<TrainItem> items;
    for (const auto* rec : manifest.split("train")) {
        if (rec->label != 0) continue;  // backbone trains on reals only
        if (rec->class_id < 0)
            throw DataError("train_toy_ldm: record " + rec->id + " lacks a class_id");
        TrainItem item;
        item.image = imageops::preprocess(img::load_image(manifest.resolve(*rec)), cfg.image_size);
        item.class_id = rec->class_id;
        item.id = rec->id;
        items.push_back(std::move(item));
    }
    if (items.empty()) throw DataError("train_toy_ldm: no labeled real training images");
    return items;
}

std::string hash_items(const std::vector<TrainItem>& items) {
    Fnv1a64 h;
    for (const auto& it : items) {
        h.update_str(it.id);
        h.update_u64(static_cast<uint64_t>(it.class_id));
    }
    return hash_hex(h.digest());
}

float decayed_lr(float base, int epoch, int total, bool enabled) {
    if (!enabled || total <= 0) return base;
    const double frac = static_cast<double>(epoch) / total;
    if (frac >= 0.85) return base * 0.25f;
    if (frac >= 0.6) return base * 0.5f;
    return base;
}

void check_finite(double loss, const char* phase, int epoch) {
    if (!std::isfinite(loss))
        throw NumericError(std::string("train_toy_ldm: non-finite loss in ") + phase + " at epoch " +
                           std::to_string(epoch));
}

}  // namespace

BackboneBundle train_toy_ldm(const data::DatasetManifest& manifest, const BackboneConfig& cfg,
                             const TrainConfig& tcfg, uint64_t seed, TrainStats* stats) {
    BackboneBundle bundle;
    bundle.init(cfg, seed);

    auto items = load_training_images(manifest, cfg);
    bundle.data_hash = hash_items(items);
    Rng root(seed);

    if (tcfg.ae_epochs == 0 && tcfg.denoiser_epochs == 0 && tcfg.classifier_epochs == 0 &&
        tcfg.encoder_consistency_epochs == 0)
        return bundle;  // zero-epoch run hands back the initialized bundle

    const int n = static_cast<int>(items.size());
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    // Phase 1: autoencoder reconstruction.
    {
        std::vector<nn::ParamRef> params;
        bundle.ae.collect(params);
        nn::Adam opt(params, {tcfg.ae_lr, 0.9f, 0.999f, 1e-8f});
        for (int epoch = 0; epoch < tcfg.ae_epochs; ++epoch) {
            opt.set_lr(decayed_lr(tcfg.ae_lr, epoch, tcfg.ae_epochs, tcfg.lr_decay));
            Rng shuffle_rng = root.substream("ae_shuffle", static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
            double epoch_loss = 0.0;
            int batch_count = 0;
            opt.zero_grad();
            for (int bi = 0; bi < n; ++bi) {
                const Tensor& x = items[static_cast<size_t>(order[static_cast<size_t>(bi)])].image;
                Tensor z = bundle.ae.encode(x);
                Tensor xh = bundle.ae.decode(z);
                Tensor gxh(xh.shape());
                double loss = 0.0;
                for (int i = 0; i < xh.size(); ++i) {
                    const float d = xh[i] - x[i];
                    loss += static_cast<double>(d) * d;
                    gxh[i] = 2.f * d / xh.size();
                }
                epoch_loss += loss / xh.size();
                bundle.ae.backward_encode(bundle.ae.backward_decode(gxh));
                ++batch_count;
                if (batch_count == tcfg.batch_size || bi == n - 1) {
                    opt.step(1.f / batch_count);
                    opt.zero_grad();
                    batch_count = 0;
                }
            }
            epoch_loss /= n;
            check_finite(epoch_loss, "autoencoder", epoch);
            if (stats) stats->ae_epoch_loss.push_back(epoch_loss);
        }
    }

    // Phase 1b: freeze the decoder, fine-tune the encoder to invert it on
    // jittered latents. Generated images are decoder outputs, so encode
    // must act as the decoder's inverse off the exact training points too;
    // the reconstruction term keeps the original objective satisfied.
    if (tcfg.encoder_consistency_epochs > 0 && tcfg.ae_epochs > 0) {
        // raw-latent spread for the jitter scale
        double s1 = 0, s2 = 0;
        int64_t cnt = 0;
        const int probe = std::min(n, 128);
        for (int i = 0; i < probe; ++i) {
            Tensor z = bundle.ae.encode(items[static_cast<size_t>(i)].image);
            for (int j = 0; j < z.size(); ++j) {
                s1 += z[j];
                s2 += static_cast<double>(z[j]) * z[j];
                ++cnt;
            }
        }
        const double mu0 = s1 / cnt;
        const float raw_std = static_cast<float>(std::sqrt(std::max(1e-12, s2 / cnt - mu0 * mu0)));

        std::vector<nn::ParamRef> enc_params;
        bundle.ae.e1.collect(enc_params, "ae.e1");
        bundle.ae.e1b.collect(enc_params, "ae.e1b");
        bundle.ae.e2.collect(enc_params, "ae.e2");
        bundle.ae.e2b.collect(enc_params, "ae.e2b");
        bundle.ae.e3.collect(enc_params, "ae.e3");
        bundle.ae.e4.collect(enc_params, "ae.e4");
        nn::Adam opt(enc_params, {tcfg.ae_lr * 0.5f, 0.9f, 0.999f, 1e-8f});
        for (int epoch = 0; epoch < tcfg.encoder_consistency_epochs; ++epoch) {
            opt.set_lr(decayed_lr(tcfg.ae_lr * 0.5f, epoch, tcfg.encoder_consistency_epochs,
                                  tcfg.lr_decay));
            Rng shuffle_rng = root.substream("cons_shuffle", static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
            Rng jitter_rng = root.substream("cons_jitter", static_cast<uint64_t>(epoch));
            double epoch_loss = 0.0;
            int batch_count = 0;
            opt.zero_grad();
            for (int bi = 0; bi < n; ++bi) {
                const Tensor& x = items[static_cast<size_t>(order[static_cast<size_t>(bi)])].image;
                // reconstruction term (gradient reaches the encoder through
                // the frozen decoder)
                Tensor z = bundle.ae.encode(x);
                Tensor xh = bundle.ae.decode(z);
                Tensor gxh(xh.shape());
                double loss = 0.0;
                for (int i = 0; i < xh.size(); ++i) {
                    const float d = xh[i] - x[i];
                    loss += static_cast<double>(d) * d;
                    gxh[i] = 2.f * d / xh.size();
                }
                loss /= xh.size();
                bundle.ae.backward_encode(bundle.ae.backward_decode(gxh));

                // consistency term: encode(decode(z_jittered)) == z_jittered
                Tensor zj = z;
                const float amp = jitter_rng.uniform_range(0.f, 1.2f) * raw_std;
                for (int i = 0; i < zj.size(); ++i) zj[i] += amp * jitter_rng.normalf();
                Tensor xj = bundle.ae.decode(zj);
                Tensor zb = bundle.ae.encode(xj);
                Tensor gzb(zb.shape());
                double closs = 0.0;
                for (int i = 0; i < zb.size(); ++i) {
                    const float d = (zb[i] - zj[i]) / raw_std;
                    closs += static_cast<double>(d) * d;
                    gzb[i] = 2.f * d / (zb.size() * raw_std);
                }
                closs /= zb.size();
                bundle.ae.backward_encode(gzb);

                epoch_loss += loss + closs;
                ++batch_count;
                if (batch_count == tcfg.batch_size || bi == n - 1) {
                    opt.step(1.f / batch_count);
                    opt.zero_grad();
                    batch_count = 0;
                }
            }
            epoch_loss /= n;
            check_finite(epoch_loss, "encoder consistency", epoch);
            if (stats) stats->consistency_epoch_loss.push_back(epoch_loss);
        }
    }

    // Latent scaling so diffusion runs near unit variance.
    if (tcfg.ae_epochs > 0) {
        double s2 = 0.0;
        double s1 = 0.0;
        int64_t count = 0;
        const int probe = std::min(n, 256);
        for (int i = 0; i < probe; ++i) {
            Tensor z = bundle.ae.encode(items[static_cast<size_t>(i)].image);
            for (int j = 0; j < z.size(); ++j) {
                s1 += z[j];
                s2 += static_cast<double>(z[j]) * z[j];
                ++count;
            }
        }
        const double mu = s1 / count;
        const double var = s2 / count - mu * mu;
        if (var > 1e-12) bundle.latent_scale = static_cast<float>(1.0 / std::sqrt(var));
    }

    // Phase 2a: label classifier (the conditioner's predictor).
    {
        std::vector<nn::ParamRef> params;
        bundle.classifier.collect(params);
        nn::Adam opt(params, {tcfg.classifier_lr, 0.9f, 0.999f, 1e-8f});
        imageops::AugmentConfig aug;
        for (int epoch = 0; epoch < tcfg.classifier_epochs; ++epoch) {
            opt.set_lr(decayed_lr(tcfg.classifier_lr, epoch, tcfg.classifier_epochs, tcfg.lr_decay));
            Rng shuffle_rng = root.substream("clf_shuffle", static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
            double epoch_loss = 0.0;
            int batch_count = 0;
            opt.zero_grad();
            for (int bi = 0; bi < n; ++bi) {
                const int idx = order[static_cast<size_t>(bi)];
                const TrainItem& item = items[static_cast<size_t>(idx)];
                Tensor x = item.image;
                if (tcfg.augment_classifier) {
                    Rng aug_rng = root.substream("clf_aug",
                                                 static_cast<uint64_t>(epoch) * n +
                                                     static_cast<uint64_t>(idx));
                    x = imageops::augment(x, aug, aug_rng);
                }
                Vec logits = bundle.classifier.forward(x);
                Vec g;
                epoch_loss += nn::softmax_cross_entropy(logits, item.class_id, &g);
                bundle.classifier.backward(g);
                ++batch_count;
                if (batch_count == tcfg.batch_size || bi == n - 1) {
                    opt.step(1.f / batch_count);
                    opt.zero_grad();
                    batch_count = 0;
                }
            }
            epoch_loss /= n;
            check_finite(epoch_loss, "classifier", epoch);
            if (stats) stats->classifier_epoch_loss.push_back(epoch_loss);
        }
    }

    // Phase 2b: conditional denoiser on frozen-autoencoder latents.
    {
        std::vector<Tensor> latents;
        latents.reserve(static_cast<size_t>(n));
        for (const auto& item : items) {
            Tensor z = bundle.ae.encode(item.image);
            for (int i = 0; i < z.size(); ++i) z[i] *= bundle.latent_scale;
            latents.push_back(std::move(z));
        }
        const auto sched = cfg.schedule();

        std::vector<nn::ParamRef> params;
        bundle.denoiser.collect(params);
        bundle.label_embed.collect(params, "embed");
        nn::Adam opt(params, {tcfg.denoiser_lr, 0.9f, 0.999f, 1e-8f});

        // exponential moving average of the weights; swapped in at the end
        const float ema_decay = tcfg.ema_decay;
        std::vector<std::vector<float>> ema;
        if (ema_decay > 0.f)
            for (const auto& p : params) ema.push_back(*p.w);

        for (int epoch = 0; epoch < tcfg.denoiser_epochs; ++epoch) {
            opt.set_lr(decayed_lr(tcfg.denoiser_lr, epoch, tcfg.denoiser_epochs, tcfg.lr_decay));
            Rng shuffle_rng = root.substream("den_shuffle", static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
            Rng noise_rng = root.substream("den_noise", static_cast<uint64_t>(epoch));
            double epoch_loss = 0.0;
            int batch_count = 0;
            opt.zero_grad();
            for (int bi = 0; bi < n; ++bi) {
                const int idx = order[static_cast<size_t>(bi)];
                const Tensor& z0 = latents[static_cast<size_t>(idx)];
                const int label = items[static_cast<size_t>(idx)].class_id;
                const int t = noise_rng.uniform_int(1, cfg.T);
                const float ab = sched.alpha_bar_at(t);
                const float sa = std::sqrt(ab), sb = std::sqrt(1.f - ab);
                Tensor eps(z0.shape()), z_t(z0.shape());
                for (int i = 0; i < z0.size(); ++i) {
                    eps[i] = noise_rng.normalf();
                    z_t[i] = sa * z0[i] + sb * eps[i];
                }
                const Vec c = bundle.label_embed.forward(label);
                Tensor pred = bundle.denoiser.forward(z_t, t, c);
                Tensor g(pred.shape());
                double loss = 0.0;
                for (int i = 0; i < pred.size(); ++i) {
                    const float d = pred[i] - eps[i];
                    loss += static_cast<double>(d) * d;
                    g[i] = 2.f * d / pred.size();
                }
                epoch_loss += loss / pred.size();
                Vec g_c;
                bundle.denoiser.backward(g, &g_c);
                bundle.label_embed.backward(label, g_c);
                ++batch_count;
                if (batch_count == tcfg.batch_size || bi == n - 1) {
                    opt.step(1.f / batch_count);
                    opt.zero_grad();
                    batch_count = 0;
                    if (ema_decay > 0.f)
                        for (size_t pi = 0; pi < params.size(); ++pi) {
                            const auto& w = *params[pi].w;
                            auto& e = ema[pi];
                            for (size_t k = 0; k < w.size(); ++k)
                                e[k] = ema_decay * e[k] + (1.f - ema_decay) * w[k];
                        }
                }
            }
            epoch_loss /= n;
            check_finite(epoch_loss, "denoiser", epoch);
            if (stats) stats->denoiser_epoch_loss.push_back(epoch_loss);
        }
        if (ema_decay > 0.f)
            for (size_t pi = 0; pi < params.size(); ++pi) *params[pi].w = ema[pi];
    }

    bundle.trained_epochs = tcfg.ae_epochs + tcfg.encoder_consistency_epochs +
                            tcfg.classifier_epochs + tcfg.denoiser_epochs;

    if (stats) {
        // held-out label accuracy, when a val split exists
        int correct = 0, total = 0;
        for (const auto* rec : manifest.split("val")) {
            if (rec->label != 0 || rec->class_id < 0) continue;
            Tensor x = imageops::preprocess(img::load_image(manifest.resolve(*rec)), cfg.image_size);
            if (conditioner_embed(x, bundle).label == rec->class_id) ++correct;
            ++total;
        }
        stats->classifier_val_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
    }
    return bundle;
}

Tensor sample_fake(int class_label, BackboneBundle& bundle, const ddim::NoiseSchedule& sched,
                   uint64_t seed) {
    if (!bundle.is_trained()) throw DataError("sample_fake: bundle is untrained");
    if (class_label < 0 || class_label >= bundle.config.n_classes)
        throw std::invalid_argument("sample_fake: label out of range");
    Rng rng(seed);
    Tensor z_T(bundle.config.latent_shape());
    for (int i = 0; i < z_T.size(); ++i) z_T[i] = rng.normalf();
    const Vec c = bundle.label_embed.forward(class_label);
    Tensor z0 = ddim::reconstruct_R(z_T, c, make_eps_fn(bundle), sched);
    return vae_decode(z0, bundle);
}

void save_bundle(BackboneBundle& bundle, const std::string& path) {
    auto params = bundle.all_params();
    json header;
    header["kind"] = "backbone";
    header["format_version"] = 1;
    header["config"] = config_to_json(bundle.config);
    header["latent_scale"] = bundle.latent_scale;
    header["train_seed"] = bundle.train_seed;
    header["trained_epochs"] = bundle.trained_epochs;
    header["data_hash"] = bundle.data_hash;
    header["name"] = bundle.name;
    header["content_hash"] = bundle.content_hash_hex();
    json tensors = json::array();
    for (const auto& p : params) {
        json t;
        t["name"] = p.name;
        t["count"] = p.w->size();
        tensors.push_back(t);
    }
    header["tensors"] = tensors;

    const std::string head = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_bundle: cannot open " + path);
    out.write("IVDB", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.w->data()),
                  static_cast<std::streamsize>(p.w->size() * sizeof(float)));
    if (!out) throw DataError("save_bundle: write failure on " + path);
}

BackboneBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_bundle: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "IVDB", 4) != 0)
        throw DataError("load_bundle: bad magic in " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != 1) throw DataError("load_bundle: unsupported version");
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw DataError("load_bundle: truncated header in " + path);
    const json header = json::parse(head);
    if (header.at("kind").get<std::string>() != "backbone")
        throw DataError("load_bundle: not a backbone checkpoint");

    BackboneBundle bundle;
    bundle.init(config_from_json(header.at("config")), header.at("train_seed").get<uint64_t>());
    bundle.latent_scale = header.at("latent_scale").get<float>();
    bundle.trained_epochs = header.at("trained_epochs").get<int>();
    bundle.data_hash = header.at("data_hash").get<std::string>();
    bundle.name = header.value("name", "backbone");

    auto params = bundle.all_params();
    size_t pi = 0;
    for (const auto& t : header.at("tensors")) {
        if (pi >= params.size()) throw DataError("load_bundle: too many tensors");
        if (t.at("name").get<std::string>() != params[pi].name)
            throw DataError("load_bundle: tensor order mismatch at " + params[pi].name);
        const size_t count = t.at("count").get<size_t>();
        if (count != params[pi].w->size())
            throw DataError("load_bundle: tensor size mismatch at " + params[pi].name);
        in.read(reinterpret_cast<char*>(params[pi].w->data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        ++pi;
    }
    if (!in || pi != params.size()) throw DataError("load_bundle: truncated tensor data");

    const std::string expect = header.at("content_hash").get<std::string>();
    if (bundle.content_hash_hex() != expect)
        throw DataError("load_bundle: content hash mismatch (corrupt checkpoint?)");
    return bundle;
}

}  // namespace invdet::backbone
