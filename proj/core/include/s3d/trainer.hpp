#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "s3d/datagen.hpp"
#include "s3d/model.hpp"
#include "s3d/selection.hpp"

namespace s3d {

enum class TrainMode { S3D, S3DNoAF, SPlusT };

TrainMode parse_mode(const std::string& name);  // s3d | s3d-no-af | s-plus-t
std::string mode_name(TrainMode mode);

struct TrainConfig {
    int shots = 3;
    int batch_size = 32;  // teachers + students; even
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double temperature = 0.05;
    double alpha = 0.95;          // confidence threshold of the reliability filter
    double rho = 0.1;             // Beta concentration for blend coefficients
    int student_interval = 100;   // student-set regeneration interval M
    double ramp_slope = 8.0;      // ramp-up slope m
    int max_iterations = 10000;
    int val_frequency = 250;
    int patience = 5;             // non-improving validations before stopping
    int pretrain_max_iterations = 5000;
    int pretrain_val_frequency = 200;
    std::array<bool, 2> hook_mask{true, true};
    TrainMode mode = TrainMode::S3D;
    uint64_t seed = 7;

    void validate() const;  // throws naming the offending field
};

struct SgdState {
    std::vector<std::vector<double>> velocity;  // one buffer per parameter block
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Aborts naming the parameter block if a gradient is non-finite.
void sgd_step(Model& m, SgdState& state, double lr, double momentum, double weight_decay);

struct ValRecord {
    int64_t iteration = 0;
    double l_lab = 0.0;
    double l_unl = 0.0;
    double l_pair = 0.0;
    double lambda = 0.0;
    double val_acc = 0.0;
    int64_t student_set_size = 0;
    double pseudo_precision = 0.0;  // NaN when no diagnostic callback is wired
};

struct PretrainResult {
    Model model;  // best-validation snapshot
    double best_val_acc = 0.0;
    int64_t iterations_run = 0;
    std::vector<ValRecord> metrics;
};

// Cross-entropy training on the labeled sets (batches half source, half
// labeled target when the latter is nonempty); early-stops on a validation
// plateau and returns the best snapshot.
PretrainResult pretrain(const Model& init, const LabeledSet& source, const LabeledSet& target_labeled,
                        const LabeledSet& val, const TrainConfig& cfg);

// Pseudo-label precision diagnostic, computed outside the trainer so that
// unlabeled ground truth never enters a training code path.
using PrecisionFn = std::function<double(const StudentSet&)>;

struct TrainResult {
    Model model;  // best-validation snapshot
    double best_val_acc = 0.0;
    int64_t iterations_run = 0;
    double delta_bar = 0.0;
    std::vector<ValRecord> metrics;
    std::vector<int64_t> refresh_iterations;  // student-set regeneration points
    StudentSet final_student_set;
};

// The adaptation stage: alternates student-set regeneration (every
// student_interval iterations, starting at 0) with paired self-distillation
// steps, validating every val_frequency iterations and returning the best
// snapshot. delta_bar is the margin threshold frozen from the pre-trained
// model.
TrainResult train_s3d(const Model& pretrained, double delta_bar, const LabeledSet& source,
                      const LabeledSet& target_labeled, const UnlabeledSet& target_unlabeled,
                      const LabeledSet& val, const TrainConfig& cfg, const PrecisionFn& precision = {});

void write_metrics_jsonl(const std::vector<ValRecord>& metrics, const std::filesystem::path& path);
std::vector<ValRecord> read_metrics_jsonl(const std::filesystem::path& path);

}  // namespace s3d
