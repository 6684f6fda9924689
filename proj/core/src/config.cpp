#include "s3d/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace s3d {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw std::invalid_argument(path + ": " + why);
}

void check_known_keys(const json& j, const std::string& prefix, const std::set<std::string>& known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) fail(prefix + it.key(), "unknown field");
    }
}

template <typename T>
T get_field(const json& j, const std::string& key, const std::string& prefix, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(prefix + key, "has the wrong type");
    }
}

std::vector<double> get_channel_vector(const json& j, const std::string& key, const std::string& prefix,
                                       int channels, std::vector<double> fallback) {
    if (!j.contains(key)) {
        fallback.resize(channels, fallback.empty() ? 0.0 : fallback.back());
        return fallback;
    }
    const json& v = j.at(key);
    std::vector<double> out;
    if (v.is_number()) {
        out.assign(channels, v.get<double>());
    } else if (v.is_array()) {
        try {
            out = v.get<std::vector<double>>();
        } catch (const json::exception&) {
            fail(prefix + key, "must be a number or an array of numbers");
        }
        if (static_cast<int>(out.size()) != channels)
            fail(prefix + key, "needs one entry per channel (" + std::to_string(channels) + ")");
    } else {
        fail(prefix + key, "must be a number or an array of numbers");
    }
    return out;
}

DomainStyle parse_style(const json& j, const std::string& prefix, int channels, const DomainStyle& fallback) {
    check_known_keys(j, prefix, {"gain", "bias", "noise_std"});
    DomainStyle s;
    s.gain = get_channel_vector(j, "gain", prefix, channels, fallback.gain);
    s.bias = get_channel_vector(j, "bias", prefix, channels, fallback.bias);
    s.noise_std = get_field(j, "noise_std", prefix, fallback.noise_std);
    for (double g : s.gain)
        if (!(g > 0.0)) fail(prefix + "gain", "entries must be strictly positive");
    if (s.noise_std < 0.0) fail(prefix + "noise_std", "must be >= 0");
    return s;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    check_known_keys(doc, "", {"data", "model", "train"});

    RunConfig cfg;

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        check_known_keys(d, "data.",
                         {"num_classes", "image_shape", "samples_per_class", "val_per_class", "shots", "seed",
                          "source_style", "target_style"});
        cfg.data.num_classes = get_field(d, "num_classes", "data.", cfg.data.num_classes);
        if (cfg.data.num_classes < 2) fail("data.num_classes", "must be >= 2");
        if (d.contains("image_shape")) {
            std::vector<int> shape;
            try {
                shape = d.at("image_shape").get<std::vector<int>>();
            } catch (const json::exception&) {
                fail("data.image_shape", "must be [channels, height, width]");
            }
            if (shape.size() != 3) fail("data.image_shape", "must be [channels, height, width]");
            cfg.data.channels = shape[0];
            cfg.data.height = shape[1];
            cfg.data.width = shape[2];
        }
        if (cfg.data.channels <= 0 || cfg.data.height <= 0 || cfg.data.width <= 0)
            fail("data.image_shape", "entries must be positive");
        cfg.data.samples_per_class = get_field(d, "samples_per_class", "data.", cfg.data.samples_per_class);
        if (cfg.data.samples_per_class <= 0) fail("data.samples_per_class", "must be positive");
        cfg.val_per_class = get_field(d, "val_per_class", "data.", cfg.val_per_class);
        if (cfg.val_per_class <= 0) fail("data.val_per_class", "must be positive");
        cfg.train.shots = get_field(d, "shots", "data.", cfg.train.shots);
        if (cfg.train.shots < 0) fail("data.shots", "must be >= 0");
        cfg.data.seed = get_field(d, "seed", "data.", cfg.data.seed);
        const DomainStyle default_src = cfg.data.source_style;
        const DomainStyle default_tgt = cfg.data.target_style;
        cfg.data.source_style = d.contains("source_style")
                                    ? parse_style(d.at("source_style"), "data.source_style.", cfg.data.channels,
                                                  default_src)
                                    : parse_style(json::object(), "data.source_style.", cfg.data.channels,
                                                  default_src);
        cfg.data.target_style = d.contains("target_style")
                                    ? parse_style(d.at("target_style"), "data.target_style.", cfg.data.channels,
                                                  default_tgt)
                                    : parse_style(json::object(), "data.target_style.", cfg.data.channels,
                                                  default_tgt);
    } else {
        // Defaults still need channel-width style vectors.
        cfg.data.source_style.gain.resize(cfg.data.channels, 1.0);
        cfg.data.source_style.bias.resize(cfg.data.channels, 0.0);
        cfg.data.target_style.gain.resize(cfg.data.channels, cfg.data.target_style.gain.back());
        cfg.data.target_style.bias.resize(cfg.data.channels, cfg.data.target_style.bias.back());
    }

    cfg.model.in_channels = cfg.data.channels;
    cfg.model.height = cfg.data.height;
    cfg.model.width = cfg.data.width;
    cfg.model.num_classes = cfg.data.num_classes;

    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_known_keys(m, "model.",
                         {"conv1_channels", "conv2_channels", "embedding_dim", "temperature", "hook_mask"});
        cfg.model.conv1_channels = get_field(m, "conv1_channels", "model.", cfg.model.conv1_channels);
        cfg.model.conv2_channels = get_field(m, "conv2_channels", "model.", cfg.model.conv2_channels);
        cfg.model.embedding_dim = get_field(m, "embedding_dim", "model.", cfg.model.embedding_dim);
        cfg.model.temperature = get_field(m, "temperature", "model.", cfg.model.temperature);
        if (m.contains("hook_mask")) {
            std::vector<bool> mask;
            try {
                mask = m.at("hook_mask").get<std::vector<bool>>();
            } catch (const json::exception&) {
                fail("model.hook_mask", "must be an array of 2 booleans");
            }
            if (mask.size() != 2) fail("model.hook_mask", "must be an array of 2 booleans");
            cfg.model.hook_mask = {mask[0], mask[1]};
        }
        if (cfg.model.conv1_channels <= 0) fail("model.conv1_channels", "must be positive");
        if (cfg.model.conv2_channels <= 0) fail("model.conv2_channels", "must be positive");
        if (cfg.model.embedding_dim <= 0) fail("model.embedding_dim", "must be positive");
        if (!(cfg.model.temperature > 0.0)) fail("model.temperature", "must be positive");
    }
    if (cfg.model.height % 4 != 0 || cfg.model.width % 4 != 0)
        fail("data.image_shape", "height and width must be divisible by 4 (two 2x2 pools)");
    cfg.train.temperature = cfg.model.temperature;
    cfg.train.hook_mask = cfg.model.hook_mask;

    if (doc.contains("train")) {
        const json& t = doc.at("train");
        check_known_keys(t, "train.",
                         {"batch_size", "learning_rate", "momentum", "weight_decay", "alpha", "rho",
                          "student_interval", "ramp_slope", "max_iterations", "val_frequency", "patience",
                          "pretrain_max_iterations", "pretrain_val_frequency", "mode", "seed"});
        cfg.train.batch_size = get_field(t, "batch_size", "train.", cfg.train.batch_size);
        cfg.train.learning_rate = get_field(t, "learning_rate", "train.", cfg.train.learning_rate);
        cfg.train.momentum = get_field(t, "momentum", "train.", cfg.train.momentum);
        cfg.train.weight_decay = get_field(t, "weight_decay", "train.", cfg.train.weight_decay);
        cfg.train.alpha = get_field(t, "alpha", "train.", cfg.train.alpha);
        cfg.train.rho = get_field(t, "rho", "train.", cfg.train.rho);
        cfg.train.student_interval = get_field(t, "student_interval", "train.", cfg.train.student_interval);
        cfg.train.ramp_slope = get_field(t, "ramp_slope", "train.", cfg.train.ramp_slope);
        cfg.train.max_iterations = get_field(t, "max_iterations", "train.", cfg.train.max_iterations);
        cfg.train.val_frequency = get_field(t, "val_frequency", "train.", cfg.train.val_frequency);
        cfg.train.patience = get_field(t, "patience", "train.", cfg.train.patience);
        cfg.train.pretrain_max_iterations =
            get_field(t, "pretrain_max_iterations", "train.", cfg.train.pretrain_max_iterations);
        cfg.train.pretrain_val_frequency =
            get_field(t, "pretrain_val_frequency", "train.", cfg.train.pretrain_val_frequency);
        if (t.contains("mode")) {
            const std::string name = get_field<std::string>(t, "mode", "train.", "s3d");
            try {
                cfg.train.mode = parse_mode(name);
            } catch (const std::invalid_argument&) {
                fail("train.mode", "expected s3d, s3d-no-af or s-plus-t, got '" + name + "'");
            }
        }
        cfg.train.seed = get_field(t, "seed", "train.", cfg.train.seed);
    }
    cfg.train.validate();  // throws with train.<field> paths

    if (!(cfg.train.ramp_slope > 0.0)) fail("train.ramp_slope", "must be positive");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string canonical_config_json(const RunConfig& cfg) {
    json doc;  // std::map-backed: keys come out sorted
    doc["data"]["num_classes"] = cfg.data.num_classes;
    doc["data"]["image_shape"] = {cfg.data.channels, cfg.data.height, cfg.data.width};
    doc["data"]["samples_per_class"] = cfg.data.samples_per_class;
    doc["data"]["val_per_class"] = cfg.val_per_class;
    doc["data"]["shots"] = cfg.train.shots;
    doc["data"]["seed"] = cfg.data.seed;
    doc["data"]["source_style"] = {{"gain", cfg.data.source_style.gain},
                                   {"bias", cfg.data.source_style.bias},
                                   {"noise_std", cfg.data.source_style.noise_std}};
    doc["data"]["target_style"] = {{"gain", cfg.data.target_style.gain},
                                   {"bias", cfg.data.target_style.bias},
                                   {"noise_std", cfg.data.target_style.noise_std}};
    doc["model"]["conv1_channels"] = cfg.model.conv1_channels;
    doc["model"]["conv2_channels"] = cfg.model.conv2_channels;
    doc["model"]["embedding_dim"] = cfg.model.embedding_dim;
    doc["model"]["temperature"] = cfg.model.temperature;
    doc["model"]["hook_mask"] = {cfg.model.hook_mask[0], cfg.model.hook_mask[1]};
    doc["train"]["batch_size"] = cfg.train.batch_size;
    doc["train"]["learning_rate"] = cfg.train.learning_rate;
    doc["train"]["momentum"] = cfg.train.momentum;
    doc["train"]["weight_decay"] = cfg.train.weight_decay;
    doc["train"]["alpha"] = cfg.train.alpha;
    doc["train"]["rho"] = cfg.train.rho;
    doc["train"]["student_interval"] = cfg.train.student_interval;
    doc["train"]["ramp_slope"] = cfg.train.ramp_slope;
    doc["train"]["max_iterations"] = cfg.train.max_iterations;
    doc["train"]["val_frequency"] = cfg.train.val_frequency;
    doc["train"]["patience"] = cfg.train.patience;
    doc["train"]["pretrain_max_iterations"] = cfg.train.pretrain_max_iterations;
    doc["train"]["pretrain_val_frequency"] = cfg.train.pretrain_val_frequency;
    doc["train"]["mode"] = mode_name(cfg.train.mode);
    doc["train"]["seed"] = cfg.train.seed;
    return doc.dump();
}

std::string config_digest(const RunConfig& cfg) {
    const std::string canon = canonical_config_json(cfg);
    const uint64_t h = fnv1a64(canon.data(), canon.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace s3d
