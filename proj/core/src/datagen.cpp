#include "s3d/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "s3d/ops.hpp"

static_assert(std::endian::native == std::endian::little, "dataset container assumes a little-endian host");

namespace s3d {

namespace {

// Pattern constants. Every class is a mixture of kModesPerClass appearance
// modes: a mode picks one of the shared anchor positions and carries its own
// cross-channel code (the angle that weights the bump, DC and grating
// components per channel). Positions are shared between classes, so the code
// is what separates them; the per-channel style gain warps exactly that code.
// All sample-level stochasticity scales with the domain's noise_std, so a
// zero-noise domain renders each class prototype exactly (mode 0, no jitter).
constexpr double kBaseLevel = 0.1;
constexpr double kBumpAmplitude = 0.45;
constexpr double kBumpSigmaFrac = 0.115;   // bump width, fraction of min(H, W)
constexpr double kAnchorRadiusFrac = 0.3;  // anchor ring radius, fraction of min(H, W)
constexpr double kGratingAmplitude = 0.18;
constexpr int kModesPerClass = 3;
constexpr double kPositionJitterPerNoise = 20.0;  // anchor jitter (px) per unit noise_std
constexpr double kAmpJitterPerNoise = 8.0;        // relative amplitude jitter per unit noise_std
constexpr int kDistractorBumps = 2;               // class-free clutter bumps per sample
constexpr double kDistractorAmpPerNoise = 14.0;   // clutter amplitude (relative to the class bump) per unit noise_std
constexpr double kGolden = 0.6180339887498949;    // spreads the mode code angles

void render_sample(const DomainSpec& spec, const DomainStyle& style, int label, Rng& rng, float* out) {
    const int C = spec.channels, H = spec.height, W = spec.width, K = spec.num_classes;
    const double ns = style.noise_std;

    // Per-sample latents first, pixel noise last; the draw order is fixed.
    const double mode_draw = rng.uniform();
    const int mode = ns > 0.0 ? std::min(static_cast<int>(mode_draw * kModesPerClass), kModesPerClass - 1) : 0;
    const double jitter_y = kPositionJitterPerNoise * ns * rng.normal();
    const double jitter_x = kPositionJitterPerNoise * ns * rng.normal();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double bump_amp = kBumpAmplitude * (1.0 + kAmpJitterPerNoise * ns * rng.normal());
    const double grating_amp = kGratingAmplitude * (1.0 + kAmpJitterPerNoise * ns * rng.normal());

    struct Distractor {
        double cy, cx, amp;
        double w[3];
    };
    Distractor distractors[kDistractorBumps];
    for (auto& d : distractors) {
        d.cy = rng.uniform() * H;
        d.cx = rng.uniform() * W;
        d.amp = kDistractorAmpPerNoise * ns * kBumpAmplitude * rng.normal();
        for (double& w : d.w) w = rng.normal();
    }

    // Anchor positions are shared across classes: mode m of class k sits at
    // ring slot (k + 2m) mod K, so a position alone never identifies the
    // class.
    const double side = std::min(H, W);
    const int slot = (label + 2 * mode) % K;
    const double angle = 2.0 * std::numbers::pi * slot / K;
    const double cy = 0.5 * H + kAnchorRadiusFrac * side * std::sin(angle) + jitter_y;
    const double cx = 0.5 * W + kAnchorRadiusFrac * side * std::cos(angle) + jitter_x;
    const double sigma = kBumpSigmaFrac * side;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // The grating frequency/orientation is the class-indexed part; its phase
    // is free per sample.
    const double freq = 1.5 + 0.8 * label;
    const double theta = std::numbers::pi * label / K + std::numbers::pi / 7.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    // Channel-code angle per (class, mode), spread over the circle so no
    // single global recalibration explains every mode.
    const double code = 2.0 * std::numbers::pi *
                        std::fmod((label * kModesPerClass + mode) * kGolden, 1.0);

    for (int c = 0; c < C; ++c) {
        // The bump's signed channel weighting carries the mode code; the
        // grating's channel profile is class-free so that per-channel feature
        // statistics stay dominated by the domain style.
        const double channel_phase = 2.0 * std::numbers::pi * c / C;
        const double wb = std::cos(code + channel_phase);
        const double wg = 0.75 + 0.5 * std::cos(channel_phase + 0.9);
        const double gain = style.gain[c];
        const double bias = style.bias[c];
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double bump = bump_amp * std::exp(-(dy * dy + dx * dx) * inv2s2);
                const double grating =
                    grating_amp * std::cos(2.0 * std::numbers::pi * freq * (x * ct + y * st) / W + phase);
                double content = kBaseLevel + wb * bump + wg * grating;
                for (const auto& d : distractors) {
                    const double ddy = y - d.cy, ddx = x - d.cx;
                    content += d.amp * d.w[c % 3] * std::exp(-(ddy * ddy + ddx * ddx) * inv2s2);
                }
                const double v = gain * content + bias + ns * rng.normal();
                out[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<float>(v);
            }
        }
    }
}

Tensor widen(const std::vector<float>& v, std::vector<int> shape) {
    std::vector<double> d(v.size());
    for (size_t i = 0; i < v.size(); ++i) d[i] = static_cast<double>(v[i]);
    return Tensor::from(std::move(shape), std::move(d));
}

}  // namespace

void DomainSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("DomainSpec: num_classes must be >= 2");
    if (channels <= 0 || height <= 0 || width <= 0)
        throw std::invalid_argument("DomainSpec: image shape must be positive");
    if (samples_per_class <= 0) throw std::invalid_argument("DomainSpec: samples_per_class must be positive");
    for (const auto* s : {&source_style, &target_style}) {
        if (static_cast<int>(s->gain.size()) != channels || static_cast<int>(s->bias.size()) != channels)
            throw std::invalid_argument("DomainSpec: style gain/bias must have one entry per channel");
        for (double g : s->gain)
            if (!(g > 0.0)) throw std::invalid_argument("DomainSpec: gains must be strictly positive");
        if (s->noise_std < 0.0) throw std::invalid_argument("DomainSpec: noise_std must be >= 0");
    }
}

const DomainStyle& DomainSpec::style(const std::string& domain_id) const {
    if (domain_id == "source") return source_style;
    if (domain_id == "target") return target_style;
    throw std::invalid_argument("DomainSpec: unknown domain id '" + domain_id + "'");
}

LabeledSet generate_domain(const DomainSpec& spec, const std::string& domain_id, Rng& rng) {
    spec.validate();
    const DomainStyle& style = spec.style(domain_id);
    const int64_t per_image = static_cast<int64_t>(spec.channels) * spec.height * spec.width;
    const int64_t total = static_cast<int64_t>(spec.num_classes) * spec.samples_per_class;

    std::vector<float> raw(total * per_image);
    std::vector<int> labels(total);
    int64_t s = 0;
    for (int k = 0; k < spec.num_classes; ++k) {
        for (int i = 0; i < spec.samples_per_class; ++i, ++s) {
            render_sample(spec, style, k, rng, &raw[s * per_image]);
            labels[s] = k;
        }
    }
    LabeledSet set;
    set.images = widen(raw, {static_cast<int>(total), spec.channels, spec.height, spec.width});
    set.labels = std::move(labels);
    return set;
}

DatasetSplits make_splits(const LabeledSet& source_set, const LabeledSet& target_set, int shots,
                          int val_per_class, Rng& rng) {
    if (shots < 0) throw std::invalid_argument("make_splits: shots must be >= 0");
    if (val_per_class <= 0) throw std::invalid_argument("make_splits: val_per_class must be positive");

    int num_classes = 0;
    for (int y : target_set.labels) num_classes = std::max(num_classes, y + 1);
    for (int y : source_set.labels) num_classes = std::max(num_classes, y + 1);

    std::vector<std::vector<int>> by_class(num_classes);
    for (size_t i = 0; i < target_set.labels.size(); ++i) by_class[target_set.labels[i]].push_back(static_cast<int>(i));

    std::vector<int> tl_idx, val_idx, tu_idx;
    for (int k = 0; k < num_classes; ++k) {
        auto& pool = by_class[k];
        if (static_cast<int>(pool.size()) < shots + val_per_class)
            throw std::invalid_argument("make_splits: class " + std::to_string(k) + " has " +
                                        std::to_string(pool.size()) + " target samples, needs >= " +
                                        std::to_string(shots + val_per_class));
        for (size_t i = pool.size(); i > 1; --i) {
            const size_t j = rng.uniform_int(i);
            std::swap(pool[i - 1], pool[j]);
        }
        tl_idx.insert(tl_idx.end(), pool.begin(), pool.begin() + shots);
        val_idx.insert(val_idx.end(), pool.begin() + shots, pool.begin() + shots + val_per_class);
        tu_idx.insert(tu_idx.end(), pool.begin() + shots + val_per_class, pool.end());
    }
    std::sort(tu_idx.begin(), tu_idx.end());

    auto take = [&](const std::vector<int>& idx) {
        LabeledSet out;
        if (idx.empty()) return out;
        out.images = gather_rows(target_set.images, idx);
        out.labels.reserve(idx.size());
        for (int i : idx) out.labels.push_back(target_set.labels[i]);
        return out;
    };

    DatasetSplits splits;
    splits.source = source_set;
    splits.target_labeled = take(tl_idx);
    splits.target_val = take(val_idx);
    LabeledSet tu = take(tu_idx);
    splits.target_unlabeled.images = tu.images;
    splits.target_unlabeled_eval_labels = std::move(tu.labels);
    splits.num_classes = num_classes;
    return splits;
}

DatasetSplits generate_dataset(const DomainSpec& spec, int shots, int val_per_class) {
    Rng root(spec.seed);
    Rng src_rng = root.derive("domain/source");
    Rng tgt_rng = root.derive("domain/target");
    Rng split_rng = root.derive("splits");
    LabeledSet source = generate_domain(spec, "source", src_rng);
    LabeledSet target = generate_domain(spec, "target", tgt_rng);
    DatasetSplits splits = make_splits(source, target, shots, val_per_class, split_rng);
    splits.seed = spec.seed;
    return splits;
}

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void write_f32(const fs::path& path, const Tensor& images) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
    if (images.defined()) {
        std::vector<float> buf(images.values().begin(), images.values().end());
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("dataset: write failed for " + path.string());
}

void write_i32(const fs::path& path, const std::vector<int>& labels) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
    std::vector<int32_t> buf(labels.begin(), labels.end());
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(int32_t)));
    if (!f) throw std::runtime_error("dataset: write failed for " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("dataset: cannot open " + path.string());
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<size_t>(size));
    f.read(buf.data(), size);
    if (!f) throw std::runtime_error("dataset: read failed for " + path.string());
    return buf;
}

Tensor read_f32(const fs::path& path, int64_t count, int C, int H, int W) {
    const std::vector<char> buf = read_file(path);
    const size_t record_bytes = static_cast<size_t>(C) * H * W * sizeof(float);
    if (buf.size() % record_bytes != 0)
        throw std::runtime_error("dataset record truncated: " + path.string() + " holds " +
                                 std::to_string(buf.size()) + " bytes, not a whole number of records");
    const int64_t records = static_cast<int64_t>(buf.size() / record_bytes);
    if (records != count)
        throw std::runtime_error("dataset length disagreement: manifest declares " + std::to_string(count) +
                                 " records but " + path.string() + " holds " + std::to_string(records));
    if (count == 0) return Tensor();
    std::vector<float> raw(static_cast<size_t>(count) * C * H * W);
    std::memcpy(raw.data(), buf.data(), buf.size());
    return widen(raw, {static_cast<int>(count), C, H, W});
}

std::vector<int> read_i32(const fs::path& path, int64_t count) {
    const std::vector<char> buf = read_file(path);
    if (buf.size() % sizeof(int32_t) != 0)
        throw std::runtime_error("dataset record truncated: " + path.string());
    const int64_t records = static_cast<int64_t>(buf.size() / sizeof(int32_t));
    if (records != count)
        throw std::runtime_error("dataset length disagreement: manifest declares " + std::to_string(count) +
                                 " labels but " + path.string() + " holds " + std::to_string(records));
    std::vector<int32_t> raw(static_cast<size_t>(count));
    if (count > 0) std::memcpy(raw.data(), buf.data(), buf.size());
    return {raw.begin(), raw.end()};
}

}  // namespace

void write_dataset(const DatasetSplits& splits, const std::filesystem::path& dir) {
    fs::create_directories(dir);

    ordered_json manifest;
    manifest["format"] = "s3d-dataset";
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["num_classes"] = splits.num_classes;
    const auto& shape = splits.source.images.shape();
    manifest["image_shape"] = {shape[1], shape[2], shape[3]};
    manifest["seed"] = splits.seed;
    manifest["splits"] = ordered_json::object();
    manifest["splits"]["source"] = {{"count", splits.source.size()}};
    manifest["splits"]["target_labeled"] = {{"count", splits.target_labeled.size()}};
    manifest["splits"]["target_unlabeled"] = {{"count", splits.target_unlabeled.size()}, {"labels_eval_only", true}};
    manifest["splits"]["target_val"] = {{"count", splits.target_val.size()}};

    std::ofstream mf(dir / "dataset.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("dataset: cannot open " + (dir / "dataset.json").string() + " for writing");
    mf << manifest.dump(2) << "\n";

    write_f32(dir / "source.f32", splits.source.images);
    write_i32(dir / "source.labels.i32", splits.source.labels);
    write_f32(dir / "target_labeled.f32", splits.target_labeled.images);
    write_i32(dir / "target_labeled.labels.i32", splits.target_labeled.labels);
    write_f32(dir / "target_unlabeled.f32", splits.target_unlabeled.images);
    write_i32(dir / "target_unlabeled.labels.i32", splits.target_unlabeled_eval_labels);
    write_f32(dir / "target_val.f32", splits.target_val.images);
    write_i32(dir / "target_val.labels.i32", splits.target_val.labels);
}

DatasetSplits read_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "dataset.json");
    if (!mf) throw std::runtime_error("dataset: cannot open " + (dir / "dataset.json").string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("dataset: malformed manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "s3d-dataset")
        throw std::runtime_error("dataset version mismatch: not an s3d-dataset manifest");
    if (manifest.value("format_version", -1) != kDatasetFormatVersion)
        throw std::runtime_error("dataset version mismatch: manifest declares version " +
                                 manifest["format_version"].dump() + ", reader supports " +
                                 std::to_string(kDatasetFormatVersion));

    const auto shape = manifest.at("image_shape");
    const int C = shape.at(0), H = shape.at(1), W = shape.at(2);
    auto count_of = [&](const char* split) -> int64_t {
        return manifest.at("splits").at(split).at("count").get<int64_t>();
    };

    DatasetSplits splits;
    splits.num_classes = manifest.at("num_classes").get<int>();
    splits.seed = manifest.value("seed", 0ull);
    splits.source.images = read_f32(dir / "source.f32", count_of("source"), C, H, W);
    splits.source.labels = read_i32(dir / "source.labels.i32", count_of("source"));
    splits.target_labeled.images = read_f32(dir / "target_labeled.f32", count_of("target_labeled"), C, H, W);
    splits.target_labeled.labels = read_i32(dir / "target_labeled.labels.i32", count_of("target_labeled"));
    splits.target_unlabeled.images =
        read_f32(dir / "target_unlabeled.f32", count_of("target_unlabeled"), C, H, W);
    splits.target_unlabeled_eval_labels =
        read_i32(dir / "target_unlabeled.labels.i32", count_of("target_unlabeled"));
    splits.target_val.images = read_f32(dir / "target_val.f32", count_of("target_val"), C, H, W);
    splits.target_val.labels = read_i32(dir / "target_val.labels.i32", count_of("target_val"));
    return splits;
}

}  // namespace s3d
