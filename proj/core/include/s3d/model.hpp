#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3d/rng.hpp"
#include "s3d/tensor.hpp"

namespace s3d {

// Two conv blocks with spatial outputs (the style-hook sites) followed by a
// flatten+affine head, classified by cosine similarity against per-class
// weight columns under a softmax temperature.
struct ArchConfig {
    int in_channels = 3;
    int height = 16;
    int width = 16;
    int conv1_channels = 16;
    int conv2_channels = 32;
    int embedding_dim = 64;
    int num_classes = 5;
    double temperature = 0.05;
    std::array<bool, 2> hook_mask{true, true};

    int flat_dim() const { return conv2_channels * (height / 4) * (width / 4); }
    void validate() const;
};

struct Model {
    ArchConfig arch;
    // Copying a Model shares parameter storage; use clone_model for snapshots.
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b, classifier_w;

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    static const std::vector<std::string>& parameter_names();
};

inline constexpr int kNumBlocks = 2;

double he_std(int fan_in);

// Gaussian weights with std sqrt(2 / fan_in), zero biases; deterministic in
// the rng stream.
Model init_model(const ArchConfig& arch, Rng& rng);

Model clone_model(const Model& m);
std::vector<double> flatten_params(const Model& m);
void load_params(Model& m, const std::vector<double>& flat);

// conv(3x3, pad 1) + ReLU + 2x2 average pool of the given block.
Tensor forward_block(const Model& m, int block_index, const Tensor& input);
// flatten + affine map of the final block output to the embedding.
Tensor head_embedding(const Model& m, const Tensor& last_block);

struct Features {
    Tensor embedding;             // [B, E]
    std::vector<Tensor> hooked;   // output of each hooked block, in block order
    std::vector<int> hook_blocks; // block index per hooked entry
};

Features extract(const Model& m, const Tensor& x);

// Cosine scores in [-1, 1] per class, before temperature scaling.
Tensor cosine_scores(const Model& m, const Tensor& h);
// softmax(cosine_scores / T) rows.
Tensor classify(const Model& m, const Tensor& h);
// classify(extract(x).embedding); the only forward path, so the fused and
// two-step forms agree bit for bit.
Tensor predict(const Model& m, const Tensor& x);

// Checkpoint: magic + JSON header (arch, iteration, seed) + raw little-endian
// float64 parameter blob in canonical parameter order. Bit-exact round trip.
struct Checkpoint {
    Model model;
    int64_t iteration = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const Model& m, const std::filesystem::path& path, int64_t iteration, uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace s3d
