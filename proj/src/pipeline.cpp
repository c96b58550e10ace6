// SPDX-License-Identifier: Apache-2.0
#include "invdet/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>

#include "invdet/errors.hpp"
#include "invdet/imageio.hpp"
#include "invdet/threadpool.hpp"

namespace invdet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor FeatureTriplet::stacked() const {
    validate();
    const int h = original.height(), w = original.width();
    Tensor out(9, h, w);
    const Tensor* parts[3] = {&original, &noise_image, &recon_image};
    for (int p = 0; p < 3; ++p)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(p * 3 + c, y, x) = parts[p]->at(c, y, x);
    return out;
}

void FeatureTriplet::validate() const {
    require_same_shape(original, noise_image, "FeatureTriplet");
    require_same_shape(original, recon_image, "FeatureTriplet");
    if (original.channels() != 3) throw std::invalid_argument("FeatureTriplet: expects RGB parts");
    if (!original.all_finite() || !noise_image.all_finite() || !recon_image.all_finite())
        throw NumericError("FeatureTriplet: non-finite values");
}

FeatureTriplet unstack_triplet(const Tensor& stacked) {
    if (stacked.channels() != 9) throw std::invalid_argument("unstack_triplet: expects 9 channels");
    const int h = stacked.height(), w = stacked.width();
    FeatureTriplet t;
    Tensor* parts[3] = {&t.original, &t.noise_image, &t.recon_image};
    for (int p = 0; p < 3; ++p) {
        *parts[p] = Tensor(3, h, w);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) parts[p]->at(c, y, x) = stacked.at(p * 3 + c, y, x);
    }
    return t;
}

FeatureTriplet build_feature_triplet(const Tensor& x_augmented, backbone::BackboneBundle& bundle,
                                     const ddim::NoiseSchedule& sched,
                                     const ConditionerFn& conditioner_override,
                                     bool standardize_noise_decode) {
    if (!x_augmented.all_finite()) throw NumericError("build_feature_triplet: non-finite input");
    // Conditioning comes first and sees the augmented pixels.
    const backbone::ConditionerOutput cond = conditioner_override
                                                 ? conditioner_override(x_augmented)
                                                 : backbone::conditioner_embed(x_augmented, bundle);
    if (static_cast<int>(cond.embedding.size()) != bundle.config.d_c)
        throw std::invalid_argument("build_feature_triplet: conditioner embedding dimension");

    const Tensor z0 = backbone::vae_encode(x_augmented, bundle);
    const auto eps = backbone::make_eps_fn(bundle);
    const Tensor z_T = ddim::invert_F(z0, cond.embedding, eps, sched);
    const Tensor z0_hat = ddim::reconstruct_R(z_T, cond.embedding, eps, sched);

    Tensor noise_latent = z_T;
    if (standardize_noise_decode) {
        // optional per-channel standardization before decoding the noise map
        const int hw = noise_latent.height() * noise_latent.width();
        for (int c = 0; c < noise_latent.channels(); ++c) {
            double s1 = 0, s2 = 0;
            for (int i = 0; i < hw; ++i) {
                const float v = noise_latent.data()[c * hw + i];
                s1 += v;
                s2 += static_cast<double>(v) * v;
            }
            const double mu = s1 / hw;
            const double sd = std::sqrt(std::max(1e-12, s2 / hw - mu * mu));
            for (int i = 0; i < hw; ++i)
                noise_latent.data()[c * hw + i] =
                    static_cast<float>((noise_latent.data()[c * hw + i] - mu) / sd);
        }
    }

    FeatureTriplet t;
    t.original = x_augmented;
    t.noise_image = backbone::vae_decode(noise_latent, bundle);
    t.recon_image = backbone::vae_decode(z0_hat, bundle);
    t.validate();
    return t;
}

Tensor compute_residual(const Tensor& x, const FeatureTriplet& triplet) {
    require_same_shape(x, triplet.recon_image, "compute_residual");
    Tensor r(x.shape());
    for (int i = 0; i < x.size(); ++i) r[i] = std::fabs(x[i] - triplet.recon_image[i]);
    return r;
}

Tensor FeatureFile::read(size_t record_idx) const {
    if (record_idx >= records.size()) throw std::out_of_range("FeatureFile::read");
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw DataError("FeatureFile: cannot open " + bin_path);
    Tensor t(shape);
    const int64_t offset = records[record_idx].index * static_cast<int64_t>(shape.size()) *
                           static_cast<int64_t>(sizeof(float));
    in.seekg(offset);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw DataError("FeatureFile: truncated read from " + bin_path);
    return t;
}

FeatureFile FeatureFile::open(const std::string& sidecar_path) {
    std::ifstream in(sidecar_path);
    if (!in) throw DataError("FeatureFile: cannot open sidecar " + sidecar_path);
    json j = json::parse(in);
    FeatureFile f;
    f.version = j.at("version").get<int>();
    f.shape = {j.at("shape")[0].get<int>(), j.at("shape")[1].get<int>(), j.at("shape")[2].get<int>()};
    f.channel_order = j.at("channel_order").get<std::string>();
    f.bundle_hash = j.at("bundle_hash").get<std::string>();
    f.bin_path = (fs::path(sidecar_path).parent_path() / j.at("bin").get<std::string>()).string();
    for (const auto& r : j.at("records")) {
        FeatureRecord rec;
        rec.id = r.at("id").get<std::string>();
        rec.label = r.at("label").get<int>();
        rec.generator = r.value("generator", "");
        rec.aug_seed = r.at("aug_seed").get<uint64_t>();
        rec.index = r.at("index").get<int64_t>();
        f.records.push_back(std::move(rec));
    }
    return f;
}

FeatureWriter::FeatureWriter(const std::string& prefix, Shape3 shape, const std::string& bundle_hash)
    : prefix_(prefix), shape_(shape), bundle_hash_(bundle_hash) {
    tmp_bin_ = prefix_ + ".bin.tmp";
    out_ = std::make_shared<std::ofstream>(tmp_bin_, std::ios::binary);
    if (!*out_) throw DataError("FeatureWriter: cannot open " + tmp_bin_);
}

void FeatureWriter::append(const FeatureRecord& meta, const Tensor& stacked) {
    if (!(stacked.shape() == shape_)) throw std::invalid_argument("FeatureWriter: shape mismatch");
    FeatureRecord rec = meta;
    rec.index = static_cast<int64_t>(records_.size());
    out_->write(reinterpret_cast<const char*>(stacked.data()),
                static_cast<std::streamsize>(stacked.size() * sizeof(float)));
    records_.push_back(std::move(rec));
}

FeatureFile FeatureWriter::finalize() {
    out_->flush();
    if (!*out_) throw DataError("FeatureWriter: write failure");
    out_.reset();
    const std::string bin_final = prefix_ + ".bin";
    fs::rename(tmp_bin_, bin_final);

    json j;
    j["version"] = 1;
    j["dtype"] = "float32";
    j["shape"] = {shape_.c, shape_.h, shape_.w};
    j["channel_order"] = "original,noise,recon";
    j["bundle_hash"] = bundle_hash_;
    j["bin"] = fs::path(bin_final).filename().string();
    json recs = json::array();
    for (const auto& r : records_) {
        json e;
        e["id"] = r.id;
        e["label"] = r.label;
        e["generator"] = r.generator;
        e["aug_seed"] = r.aug_seed;
        e["index"] = r.index;
        recs.push_back(e);
    }
    j["records"] = recs;
    const std::string sidecar = prefix_ + ".json";
    const std::string tmp_json = sidecar + ".tmp";
    {
        std::ofstream out(tmp_json);
        out << j.dump(2) << "\n";
        if (!out) throw DataError("FeatureWriter: sidecar write failure");
    }
    fs::rename(tmp_json, sidecar);
    return FeatureFile::open(sidecar);
}

uint64_t per_image_aug_seed(uint64_t root_seed, const std::string& image_id) {
    Fnv1a64 h;
    h.update_u64(root_seed);
    h.update_str("augment");
    h.update_str(image_id);
    return h.digest();
}

namespace {

uint64_t file_bytes_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("featurize: cannot open " + path);
    Fnv1a64 h;
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h.update(buf, static_cast<size_t>(in.gcount()));
        if (in.eof()) break;
    }
    return h.digest();
}

std::string cache_key(uint64_t image_hash, backbone::BackboneBundle& bundle,
                      const ddim::NoiseSchedule& sched, const FeaturizeSpec& spec) {
    Fnv1a64 h;
    h.update_str("featurize/v1");
    h.update_u64(image_hash);
    h.update_u64(bundle.content_hash());
    h.update_u64(static_cast<uint64_t>(sched.steps()));
    h.update_u64(static_cast<uint64_t>(sched.T));
    h.update_u64(spec.augment ? spec.aug_seed : 0);
    h.update_u64(spec.augment ? 1 : 0);
    if (spec.corruption) {
        h.update_str(spec.corruption->str());
        h.update_u64(spec.corruption_seed);
    }
    h.update_u64(spec.standardize_noise_decode ? 1 : 0);
    return hash_hex(h.digest());
}

bool read_cached(const std::string& path, Shape3 shape, Tensor* out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in || in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float))) return false;
    *out = std::move(t);
    return true;
}

void write_cached(const std::string& path, const Tensor& t) {
    const std::string tmp = path + ".tmp." + std::to_string(
        static_cast<unsigned long long>(std::hash<std::thread::id>{}(std::this_thread::get_id())));
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) return;  // cache is best-effort
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!out) return;
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);  // atomic publish; losers of the race just vanish
    if (ec) fs::remove(tmp, ec);
}

}  // namespace

Tensor featurize_image_file(const std::string& path, backbone::BackboneBundle& bundle,
                            const ddim::NoiseSchedule& sched, const FeaturizeSpec& spec,
                            const std::string& cache_dir, bool* cache_hit) {
    if (cache_hit) *cache_hit = false;
    const int target = bundle.config.image_size;
    const Shape3 stacked_shape{9, target, target};

    std::string cache_path;
    if (!cache_dir.empty()) {
        const std::string key = cache_key(file_bytes_hash(path), bundle, sched, spec);
        fs::create_directories(cache_dir);
        cache_path = (fs::path(cache_dir) / (key + ".feat")).string();
        Tensor cached;
        if (read_cached(cache_path, stacked_shape, &cached)) {
            if (cache_hit) *cache_hit = true;
            return cached;
        }
    }

    const img::ImageU8 raw = img::load_image(path);
    Tensor x = img::to_tensor(raw);
    if (spec.corruption) {
        Rng crng(spec.corruption_seed);
        x = imageops::corrupt(x, *spec.corruption, crng);
    }
    if (x.height() != target || x.width() != target) {
        // shortest-side resize then center crop, matching preprocess()
        int nh, nw;
        if (x.height() <= x.width()) {
            nh = target;
            nw = std::max(target, static_cast<int>(std::lround(
                                      static_cast<double>(x.width()) * target / x.height())));
        } else {
            nw = target;
            nh = std::max(target, static_cast<int>(std::lround(
                                      static_cast<double>(x.height()) * target / x.width())));
        }
        Tensor resized = imageops::resize_bilinear(x, nh, nw);
        Tensor out(3, target, target);
        const int y0 = (nh - target) / 2, x0 = (nw - target) / 2;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < target; ++y)
                for (int xx = 0; xx < target; ++xx) out.at(c, y, xx) = resized.at(c, y0 + y, x0 + xx);
        x = std::move(out);
    }
    if (spec.augment) {
        Rng arng(spec.aug_seed);
        x = imageops::augment(x, spec.aug, arng);
    }

    const FeatureTriplet t =
        build_feature_triplet(x, bundle, sched, {}, spec.standardize_noise_decode);
    Tensor stacked = t.stacked();
    if (!cache_path.empty()) write_cached(cache_path, stacked);
    return stacked;
}

ExtractResult extract_features(const data::DatasetManifest& manifest,
                               const std::vector<const data::ManifestRecord*>& records,
                               backbone::BackboneBundle& bundle, const ddim::NoiseSchedule& sched,
                               const ExtractConfig& cfg, const std::string& out_prefix) {
    const int n = static_cast<int>(records.size());
    const int workers = std::max(1, cfg.workers);
    const std::string bundle_hash = bundle.content_hash_hex();
    const Shape3 shape{9, bundle.config.image_size, bundle.config.image_size};

    struct Slot {
        Tensor features;
        bool ok = false;
        bool hit = false;
        uint64_t aug_seed = 0;
    };
    std::vector<Slot> slots(static_cast<size_t>(n));

    // One bundle clone per worker thread; work is striped by index so each
    // clone stays single-threaded and output order never depends on timing.
    std::vector<backbone::BackboneBundle> clones(static_cast<size_t>(workers), bundle);
    auto process = [&](int i, backbone::BackboneBundle& mine) {
        const auto* rec = records[static_cast<size_t>(i)];
        FeaturizeSpec spec;
        spec.corruption = cfg.corruption;
        spec.corruption_seed = cfg.corruption_seed;
        spec.standardize_noise_decode = cfg.standardize_noise_decode;
        if (cfg.augment_train_split && rec->split == "train") {
            spec.augment = true;
            spec.aug = cfg.aug;
            spec.aug_seed = per_image_aug_seed(cfg.seed, rec->id);
        }
        auto& slot = slots[static_cast<size_t>(i)];
        slot.aug_seed = spec.augment ? spec.aug_seed : 0;
        try {
            bool hit = false;
            slot.features = featurize_image_file(manifest.resolve(*rec), mine, sched, spec,
                                                 cfg.cache_dir, &hit);
            slot.ok = true;
            slot.hit = hit;
        } catch (const std::exception&) {
            slot.ok = false;
        }
    };
    if (workers == 1) {
        for (int i = 0; i < n; ++i) process(i, clones[0]);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w)
            threads.emplace_back([&, w]() {
                for (int i = w; i < n; i += workers) process(i, clones[static_cast<size_t>(w)]);
            });
        for (auto& t : threads) t.join();
    }

    ExtractResult result;
    FeatureWriter writer(out_prefix, shape, bundle_hash);
    for (int i = 0; i < n; ++i) {
        const auto* rec = records[static_cast<size_t>(i)];
        auto& slot = slots[static_cast<size_t>(i)];
        if (!slot.ok) {
            result.failed_ids.push_back(rec->id);
            continue;
        }
        slot.hit ? ++result.cache_hits : ++result.computed;
        FeatureRecord meta;
        meta.id = rec->id;
        meta.label = rec->label;
        meta.generator = rec->generator;
        meta.aug_seed = slot.aug_seed;
        writer.append(meta, slot.features);
    }
    result.file = writer.finalize();
    return result;
}

}  // namespace invdet::pipeline
