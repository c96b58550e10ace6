// SPDX-License-Identifier: Apache-2.0
#include "invdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "invdet/errors.hpp"
#include "invdet/threadpool.hpp"

namespace invdet::detector {

using nlohmann::json;

InputMode parse_mode(const std::string& name) {
    if (name == "rgb") return InputMode::Rgb;
    if (name == "residual") return InputMode::Residual;
    if (name == "full") return InputMode::Full;
    throw std::invalid_argument("detector mode must be rgb|residual|full, got " + name);
}

std::string mode_name(InputMode mode) {
    switch (mode) {
        case InputMode::Rgb: return "rgb";
        case InputMode::Residual: return "residual";
        case InputMode::Full: return "full";
    }
    return "?";
}

int mode_channels(InputMode mode) { return mode == InputMode::Full ? 9 : 3; }

Tensor select_mode_input(const Tensor& stacked, InputMode mode) {
    if (stacked.channels() != 9)
        throw std::invalid_argument("select_mode_input: expects stacked 9-channel features");
    const int h = stacked.height(), w = stacked.width();
    if (mode == InputMode::Full) return stacked;
    Tensor out(3, h, w);
    const int hw = h * w;
    if (mode == InputMode::Rgb) {
        std::memcpy(out.data(), stacked.data(), static_cast<size_t>(3) * hw * sizeof(float));
    } else {
        const float* orig = stacked.data();
        const float* recon = stacked.data() + static_cast<size_t>(6) * hw;
        for (int i = 0; i < 3 * hw; ++i) out.data()[i] = std::fabs(orig[i] - recon[i]);
    }
    return out;
}

void DetectorNet::Block::init(int width, Rng& rng) {
    gn1.init(width, 8);
    gn2.init(width, 8);
    conv1.init(width, width, 3, 1, 1, rng);
    conv2.init(width, width, 3, 1, 1, rng);
}

Tensor DetectorNet::Block::forward(const Tensor& x) {
    x_cache = x;
    Tensor h = conv1.forward(a1.forward(gn1.forward(x)));
    Tensor g = conv2.forward(a2.forward(gn2.forward(h)));
    for (int i = 0; i < g.size(); ++i) g[i] += x[i];
    return g;
}

Tensor DetectorNet::Block::backward(const Tensor& gy) {
    Tensor gh = gn2.backward(a2.backward(conv2.backward(gy)));
    Tensor gx = gn1.backward(a1.backward(conv1.backward(gh)));
    for (int i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    return gx;
}

void DetectorNet::Block::collect(std::vector<nn::ParamRef>& out, const std::string& prefix) {
    gn1.collect(out, prefix + ".gn1");
    conv1.collect(out, prefix + ".conv1");
    gn2.collect(out, prefix + ".gn2");
    conv2.collect(out, prefix + ".conv2");
}

void DetectorNet::init(int in_channels, int base_width, Rng& rng) {
    in_c = in_channels;
    width = base_width;
    conv_in.init(in_c, width, 3, 1, 1, rng);
    b1.init(width, rng);
    down1.init(width, 2 * width, 3, 2, 1, rng);
    b2.init(2 * width, rng);
    down2.init(2 * width, 3 * width, 3, 2, 1, rng);
    b3.init(3 * width, rng);
    b4.init(3 * width, rng);
    gn_out.init(3 * width, 8);
    head.init(3 * width, 1, rng);
}

float DetectorNet::forward(const Tensor& x) {
    if (x.channels() != in_c) throw std::invalid_argument("DetectorNet: channel mismatch");
    Tensor h = b1.forward(conv_in.forward(x));
    h = b2.forward(down1.forward(h));
    h = b4.forward(b3.forward(down2.forward(h)));
    h = a_out.forward(gn_out.forward(h));
    const Vec pooled = nn::global_avg_pool(h);
    return head.forward(pooled)[0];
}

void DetectorNet::backward(float g_logit) {
    const Vec g_pool = head.backward({g_logit});
    Tensor g = nn::global_avg_pool_backward(g_pool, a_out.x_cache.shape());
    g = gn_out.backward(a_out.backward(g));
    g = down2.backward(b3.backward(b4.backward(g)));
    g = down1.backward(b2.backward(g));
    conv_in.backward(b1.backward(g));
}

void DetectorNet::collect(std::vector<nn::ParamRef>& out) {
    conv_in.collect(out, "det.conv_in");
    b1.collect(out, "det.b1");
    down1.collect(out, "det.down1");
    b2.collect(out, "det.b2");
    down2.collect(out, "det.down2");
    b3.collect(out, "det.b3");
    b4.collect(out, "det.b4");
    gn_out.collect(out, "det.gn_out");
    head.collect(out, "det.head");
}

uint64_t DetectorBundle::content_hash() {
    Fnv1a64 h;
    h.update_str("detector");
    h.update_str(mode_name(mode));
    h.update_u64(static_cast<uint64_t>(image_size));
    h.update_u64(train_seed);
    h.update_u64(static_cast<uint64_t>(selected_epoch));
    h.update_str(backbone_hash);
    std::vector<nn::ParamRef> params;
    net.collect(params);
    for (const auto& p : params) {
        h.update_str(p.name);
        h.update(p.w->data(), p.w->size() * sizeof(float));
    }
    return h.digest();
}

int select_best_epoch(const std::vector<double>& val_scores) {
    if (val_scores.empty()) throw std::invalid_argument("select_best_epoch: empty score sequence");
    int best = 0;
    for (size_t i = 1; i < val_scores.size(); ++i)
        if (val_scores[i] > val_scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

float predict_logit(const Tensor& features, DetectorBundle& det) {
    const Tensor input = select_mode_input(features, det.mode);
    const float logit = det.net.forward(input);
    if (!std::isfinite(logit)) throw NumericError("predict_logit: non-finite logit");
    return logit;
}

double predict_score(const Tensor& features, DetectorBundle& det) {
    return 1.0 / (1.0 + std::exp(-static_cast<double>(predict_logit(features, det))));
}

namespace {

double val_auroc(const std::vector<LabeledExample>& val, DetectorBundle& det) {
    metrics::ScoreSet s;
    for (const auto& ex : val)
        s.records.push_back({ex.id, ex.label, predict_score(ex.features, det), ex.generator});
    return metrics::auroc(s);
}

struct Snapshot {
    std::vector<std::vector<float>> values;
};

Snapshot take_snapshot(std::vector<nn::ParamRef>& params) {
    Snapshot s;
    for (auto& p : params) s.values.push_back(*p.w);
    return s;
}

void restore_snapshot(const Snapshot& s, std::vector<nn::ParamRef>& params) {
    for (size_t i = 0; i < params.size(); ++i) *params[i].w = s.values[i];
}

}  // namespace

DetectorBundle train_detector(const std::vector<LabeledExample>& train,
                              const std::vector<LabeledExample>& val, InputMode mode,
                              const DetectorTrainConfig& cfg, uint64_t seed,
                              DetectorTrainStats* stats) {
    std::vector<int> fakes, reals;
    for (size_t i = 0; i < train.size(); ++i)
        (train[i].label == 1 ? fakes : reals).push_back(static_cast<int>(i));
    if (fakes.empty() || reals.empty())
        throw DataError("train_detector: training split needs both labels");
    bool val_has_fake = false, val_has_real = false;
    for (const auto& ex : val) (ex.label == 1 ? val_has_fake : val_has_real) = true;
    if (!val_has_fake || !val_has_real)
        throw DataError("train_detector: validation split needs both labels");
    if (train[0].features.channels() != 9)
        throw std::invalid_argument("train_detector: features must be stacked 9-channel tensors");

    DetectorBundle det;
    det.mode = mode;
    det.image_size = train[0].features.height();
    det.train_config = cfg;
    det.train_seed = seed;
    Rng root(seed);
    Rng init_rng = root.substream("det_init");
    det.net.init(mode_channels(mode), cfg.base_width, init_rng);

    std::vector<nn::ParamRef> params;
    det.net.collect(params);
    nn::Adam opt(params, {cfg.lr, cfg.beta1, 0.999f, 1e-8f});

    std::vector<double> val_history;
    Snapshot best;
    int best_epoch = -1;
    double best_score = -1.0;

    const int pairs_per_epoch = static_cast<int>(std::max(fakes.size(), reals.size()));
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng = root.substream("det_shuffle", static_cast<uint64_t>(epoch));
        std::vector<int> f_order = fakes, r_order = reals;
        shuffle_rng.shuffle(f_order);
        shuffle_rng.shuffle(r_order);

        double epoch_loss = 0.0;
        int seen = 0, in_batch = 0;
        opt.zero_grad();
        for (int k = 0; k < pairs_per_epoch; ++k) {
            // one fake and one real per pair keeps batches balanced
            const int pick[2] = {f_order[static_cast<size_t>(k) % f_order.size()],
                                 r_order[static_cast<size_t>(k) % r_order.size()]};
            for (int idx : pick) {
                const auto& ex = train[static_cast<size_t>(idx)];
                const Tensor input = select_mode_input(ex.features, mode);
                const float logit = det.net.forward(input);
                float g = 0.f;
                epoch_loss += nn::bce_with_logit(logit, ex.label, &g);
                det.net.backward(g);
                ++seen;
                ++in_batch;
                if (in_batch == cfg.batch_size || k == pairs_per_epoch - 1) {
                    opt.step(1.f / in_batch);
                    opt.zero_grad();
                    in_batch = 0;
                }
            }
        }
        epoch_loss /= std::max(1, seen);
        if (!std::isfinite(epoch_loss))
            throw NumericError("train_detector: loss diverged at epoch " + std::to_string(epoch));
        if (stats) stats->epoch_loss.push_back(epoch_loss);

        const double score = val_auroc(val, det);
        val_history.push_back(score);
        if (stats) stats->val_auroc.push_back(score);
        if (score > best_score) {
            best_score = score;
            best_epoch = epoch;
            best = take_snapshot(params);
        }
    }

    if (best_epoch >= 0) restore_snapshot(best, params);
    det.selected_epoch = best_epoch;
    det.val_score = best_score;
    // selection rule is also exposed standalone; keep them consistent
    if (!val_history.empty() && select_best_epoch(val_history) != best_epoch)
        throw std::logic_error("train_detector: checkpoint selection disagreement");
    return det;
}

metrics::ScoreSet score_feature_file(const pipeline::FeatureFile& file, DetectorBundle& det) {
    metrics::ScoreSet out;
    for (size_t i = 0; i < file.records.size(); ++i) {
        const Tensor feats = file.read(i);
        out.records.push_back({file.records[i].id, file.records[i].label,
                               predict_score(feats, det), file.records[i].generator});
    }
    return out;
}

ScoreManifestResult score_manifest(const data::DatasetManifest& manifest,
                                   const std::vector<const data::ManifestRecord*>& records,
                                   DetectorBundle& det, backbone::BackboneBundle& bundle,
                                   const ddim::NoiseSchedule& sched,
                                   const pipeline::ExtractConfig& ctx) {
    const int n = static_cast<int>(records.size());
    ScoreManifestResult result;
    if (n == 0) return result;

    const int workers = std::max(1, ctx.workers);
    struct Slot {
        double score = 0.0;
        bool ok = false;
    };
    std::vector<Slot> slots(static_cast<size_t>(n));
    std::vector<backbone::BackboneBundle> bclones(static_cast<size_t>(workers), bundle);
    std::vector<DetectorBundle> dclones(static_cast<size_t>(workers), det);

    auto process = [&](int i, backbone::BackboneBundle& bb, DetectorBundle& dd) {
        const auto* rec = records[static_cast<size_t>(i)];
        pipeline::FeaturizeSpec spec;  // no augmentation at scoring time
        spec.corruption = ctx.corruption;
        spec.corruption_seed = ctx.corruption_seed;
        spec.standardize_noise_decode = ctx.standardize_noise_decode;
        try {
            const Tensor feats = pipeline::featurize_image_file(manifest.resolve(*rec), bb, sched,
                                                                spec, ctx.cache_dir, nullptr);
            slots[static_cast<size_t>(i)].score = predict_score(feats, dd);
            slots[static_cast<size_t>(i)].ok = true;
        } catch (const std::exception&) {
            slots[static_cast<size_t>(i)].ok = false;
        }
    };
    if (workers == 1) {
        for (int i = 0; i < n; ++i) process(i, bclones[0], dclones[0]);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w)
            threads.emplace_back([&, w]() {
                for (int i = w; i < n; i += workers)
                    process(i, bclones[static_cast<size_t>(w)], dclones[static_cast<size_t>(w)]);
            });
        for (auto& t : threads) t.join();
    }

    for (int i = 0; i < n; ++i) {
        const auto* rec = records[static_cast<size_t>(i)];
        if (!slots[static_cast<size_t>(i)].ok) {
            result.missing_ids.push_back(rec->id);
            continue;
        }
        result.scores.records.push_back(
            {rec->id, rec->label, slots[static_cast<size_t>(i)].score, rec->generator});
    }
    return result;
}

void save_detector(DetectorBundle& det, const std::string& path) {
    std::vector<nn::ParamRef> params;
    det.net.collect(params);
    json header;
    header["kind"] = "detector";
    header["format_version"] = 1;
    header["mode"] = mode_name(det.mode);
    header["image_size"] = det.image_size;
    header["base_width"] = det.train_config.base_width;
    header["max_epochs"] = det.train_config.max_epochs;
    header["batch_size"] = det.train_config.batch_size;
    header["lr"] = det.train_config.lr;
    header["beta1"] = det.train_config.beta1;
    header["train_seed"] = det.train_seed;
    header["selected_epoch"] = det.selected_epoch;
    header["val_score"] = det.val_score;
    header["backbone_hash"] = det.backbone_hash;
    header["content_hash"] = det.content_hash_hex();
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
    if (!out) throw DataError("save_detector: cannot open " + path);
    out.write("IVDD", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.w->data()),
                  static_cast<std::streamsize>(p.w->size() * sizeof(float)));
    if (!out) throw DataError("save_detector: write failure on " + path);
}

DetectorBundle load_detector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_detector: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "IVDD", 4) != 0)
        throw DataError("load_detector: bad magic in " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw DataError("load_detector: truncated header");
    const json header = json::parse(head);
    if (header.at("kind").get<std::string>() != "detector")
        throw DataError("load_detector: not a detector checkpoint");

    DetectorBundle det;
    det.mode = parse_mode(header.at("mode").get<std::string>());
    det.image_size = header.at("image_size").get<int>();
    det.train_config.base_width = header.at("base_width").get<int>();
    det.train_config.max_epochs = header.at("max_epochs").get<int>();
    det.train_config.batch_size = header.at("batch_size").get<int>();
    det.train_config.lr = header.at("lr").get<float>();
    det.train_config.beta1 = header.at("beta1").get<float>();
    det.train_seed = header.at("train_seed").get<uint64_t>();
    det.selected_epoch = header.at("selected_epoch").get<int>();
    det.val_score = header.at("val_score").get<double>();
    det.backbone_hash = header.at("backbone_hash").get<std::string>();
    Rng init_rng = Rng(det.train_seed).substream("det_init");
    det.net.init(mode_channels(det.mode), det.train_config.base_width, init_rng);

    std::vector<nn::ParamRef> params;
    det.net.collect(params);
    size_t pi = 0;
    for (const auto& t : header.at("tensors")) {
        if (pi >= params.size()) throw DataError("load_detector: too many tensors");
        if (t.at("name").get<std::string>() != params[pi].name ||
            t.at("count").get<size_t>() != params[pi].w->size())
            throw DataError("load_detector: tensor mismatch at " + params[pi].name);
        in.read(reinterpret_cast<char*>(params[pi].w->data()),
                static_cast<std::streamsize>(params[pi].w->size() * sizeof(float)));
        ++pi;
    }
    if (!in || pi != params.size()) throw DataError("load_detector: truncated tensors");
    if (det.content_hash_hex() != header.at("content_hash").get<std::string>())
        throw DataError("load_detector: content hash mismatch");
    return det;
}

}  // namespace invdet::detector
