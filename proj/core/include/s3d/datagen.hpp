#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s3d/rng.hpp"
#include "s3d/tensor.hpp"

namespace s3d {

struct DomainStyle {
    std::vector<double> gain;  // per-channel, strictly positive
    std::vector<double> bias;  // per-channel
    double noise_std = 0.05;
};

// Synthetic styled-domains source: every class is a spatial pattern (a
// Gaussian bump anchored at a class-indexed position plus a class-indexed
// frequency grating); a domain renders the pattern through its per-channel
// gain/bias and adds pixel noise. Sample-level pattern variation (bump
// position, grating phase, amplitudes) scales with noise_std, so zero noise
// reproduces the class prototype exactly.
struct DomainSpec {
    int num_classes = 5;
    int channels = 3;
    int height = 16;
    int width = 16;
    int samples_per_class = 100;
    DomainStyle source_style{{1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 0.05};
    // Mean gain 1.8 and mean bias 0.3, spread across channels; a per-channel
    // color cast is what actually separates the domains for a conv net with a
    // cosine classifier (a uniform gain/bias is almost exactly neutralized by
    // positive homogeneity plus embedding normalization).
    DomainStyle target_style{{3.0, 1.8, 0.6}, {0.6, 0.3, 0.0}, 0.05};
    uint64_t seed = 1;

    void validate() const;  // throws std::invalid_argument naming the field
    const DomainStyle& style(const std::string& domain_id) const;
};

struct LabeledSet {
    Tensor images;  // [N,C,H,W]
    std::vector<int> labels;
    int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

struct UnlabeledSet {
    Tensor images;  // [N,C,H,W]
    int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

struct DatasetSplits {
    LabeledSet source;          // D_S
    LabeledSet target_labeled;  // D_TL, |shots| per class
    UnlabeledSet target_unlabeled;  // D_TU, no labels visible to training
    LabeledSet target_val;      // D_val
    // Ground truth of D_TU, retained for evaluation and diagnostics only.
    // Training code paths take UnlabeledSet and cannot reach this field.
    std::vector<int> target_unlabeled_eval_labels;
    int num_classes = 0;
    uint64_t seed = 0;
};

// Samples `samples_per_class` per class in class-major order, styled by the
// named domain. Deterministic given (spec, domain_id, rng state).
LabeledSet generate_domain(const DomainSpec& spec, const std::string& domain_id, Rng& rng);

// Splits the target set into shots/class labeled, val_per_class/class
// validation, remainder unlabeled. shots = 0 gives the fully unsupervised
// protocol (empty D_TL).
DatasetSplits make_splits(const LabeledSet& source_set, const LabeledSet& target_set, int shots,
                          int val_per_class, Rng& rng);

DatasetSplits generate_dataset(const DomainSpec& spec, int shots, int val_per_class);

// Container format: dataset.json manifest + one raw little-endian float32
// record file and int32 label file per split. Round-trips bit-exactly.
void write_dataset(const DatasetSplits& splits, const std::filesystem::path& dir);
DatasetSplits read_dataset(const std::filesystem::path& dir);

inline constexpr int kDatasetFormatVersion = 1;

}  // namespace s3d
