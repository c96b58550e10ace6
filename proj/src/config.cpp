// SPDX-License-Identifier: Apache-2.0
#include "invdet/config.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace invdet::config {

namespace fs = std::filesystem;

json default_config() {
    json c;
    c["seed"] = 1;
    c["workers"] = 2;

    c["dataset"]["n_classes"] = 10;
    c["dataset"]["train_count"] = 600;
    c["dataset"]["val_count"] = 200;
    c["dataset"]["test_count"] = 400;
    c["dataset"]["image_size"] = 32;
    c["dataset"]["seed"] = 1234;

    c["backbone"]["name"] = "gen_a";
    c["backbone"]["image_size"] = 32;
    c["backbone"]["latent_channels"] = 4;
    c["backbone"]["latent_size"] = 8;
    c["backbone"]["d_c"] = 16;
    c["backbone"]["n_classes"] = 10;
    c["backbone"]["ae_width"] = 32;
    c["backbone"]["denoiser_width"] = 64;
    c["backbone"]["cond_width"] = 64;
    c["backbone"]["time_embed_dim"] = 32;
    c["backbone"]["T"] = 1000;
    c["backbone"]["beta_start"] = 1e-4;
    c["backbone"]["beta_end"] = 0.02;
    c["backbone"]["beta_kind"] = "scaled_linear";
    c["backbone"]["ddim_steps"] = 50;
    c["backbone"]["train"]["ae_epochs"] = 40;
    c["backbone"]["train"]["classifier_epochs"] = 14;
    c["backbone"]["train"]["encoder_consistency_epochs"] = 14;
    c["backbone"]["train"]["ema_decay"] = 0.99;
    c["backbone"]["train"]["denoiser_epochs"] = 60;
    c["backbone"]["train"]["batch_size"] = 16;
    c["backbone"]["train"]["ae_lr"] = 2e-3;
    c["backbone"]["train"]["classifier_lr"] = 2e-3;
    c["backbone"]["train"]["denoiser_lr"] = 2e-3;
    c["backbone"]["train"]["augment_classifier"] = true;

    c["augment"]["p_flip"] = 0.5;
    c["augment"]["p_crop"] = 0.35;
    c["augment"]["p_jitter"] = 0.5;
    c["augment"]["p_grayscale"] = 0.1;
    c["augment"]["p_cutout"] = 0.25;
    c["augment"]["p_noise"] = 0.25;
    c["augment"]["p_blur"] = 0.25;
    c["augment"]["p_jpeg"] = 0.35;
    c["augment"]["p_rotate"] = 0.25;
    c["augment"]["crop_min_area"] = 0.5;
    c["augment"]["jitter_strength"] = 0.2;
    c["augment"]["cutout_max_side"] = 0.3;
    c["augment"]["noise_sigma_max"] = 0.05;
    c["augment"]["blur_sigma_max"] = 1.5;
    c["augment"]["jpeg_quality_min"] = 30;
    c["augment"]["jpeg_quality_max"] = 95;
    c["augment"]["rotate_max_deg"] = 15.0;

    c["extract"]["augment"] = "auto";  // auto: train split only; on; off
    c["extract"]["standardize_noise_decode"] = false;

    c["detector"]["mode"] = "full";
    c["detector"]["max_epochs"] = 25;
    c["detector"]["batch_size"] = 16;
    c["detector"]["lr"] = 1e-4;
    c["detector"]["beta1"] = 0.9;
    c["detector"]["base_width"] = 16;

    c["eval"]["recall_target"] = 0.8;
    c["eval"]["fid_kid"] = true;
    c["eval"]["corruption"] = "";  // "", noise, blur, jpeg, crop
    c["eval"]["corruption_severity"] = 0.0;
    c["eval"]["corruption_seed"] = 7;

    c["gen"]["count"] = 200;
    c["gen"]["split"] = "test";

    c["verify"]["dim"] = 8;
    c["verify"]["trials"] = 100;
    c["verify"]["epsilon"] = 2e-3;
    c["verify"]["ladder"] = 4;  // epsilon, 2*epsilon, 4*epsilon, ...
    c["verify"]["hutchinson_probes"] = 64;
    return c;
}

namespace {

void merge_into(json& base, const json& layer) {
    if (!layer.is_object()) {
        base = layer;
        return;
    }
    for (auto it = layer.begin(); it != layer.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
            merge_into(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

}  // namespace

void apply_override(json& tree, const std::string& dotted_kv) {
    const auto eq = dotted_kv.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key.path=value: " + dotted_kv);
    const std::string key = dotted_kv.substr(0, eq);
    const std::string value = dotted_kv.substr(eq + 1);
    if (key.empty()) throw std::invalid_argument("override has an empty key: " + dotted_kv);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value;  // plain string
    }

    json* node = &tree;
    size_t start = 0;
    while (true) {
        const size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos
                                                                            : dot - start);
        if (part.empty()) throw std::invalid_argument("override key has an empty segment: " + key);
        if (dot == std::string::npos) {
            (*node)[part] = parsed;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

json load_layered(const std::string& config_file, const std::vector<std::string>& overrides) {
    json cfg = default_config();
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw std::invalid_argument("config file not found: " + config_file);
        json file_cfg;
        try {
            file_cfg = json::parse(in);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config file is not valid json: " + std::string(e.what()));
        }
        merge_into(cfg, file_cfg);
    }
    for (const auto& ov : overrides) apply_override(cfg, ov);
    return cfg;
}

std::string write_run_config(const json& cfg, const std::string& run_dir) {
    fs::create_directories(run_dir);
    const std::string path = (fs::path(run_dir) / "resolved_config.json").string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << cfg.dump(2) << "\n";
    return path;
}

}  // namespace invdet::config
