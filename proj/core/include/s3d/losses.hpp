#pragma once

#include <vector>

#include "s3d/tensor.hpp"

namespace s3d {

// Mean over the batch of -log p(y|x). Probabilities are floored at 1e-12
// inside the log.
Tensor labeled_ce(const Tensor& probabilities, const std::vector<int>& labels);

// Confidence-weighted cross-entropy on pseudo-labels: mean of
// -w * log p(yhat|x') with w = p(yhat|x') treated as a constant, so low
// confidence samples move the model less.
Tensor weighted_ce(const Tensor& probabilities, const std::vector<int>& pseudo_labels);

// Mean over pairs of KL(assistant || student). The assistant side is
// detached internally; gradient flows only into the student probabilities.
Tensor pair_kl(const Tensor& assistant_probs, const Tensor& student_probs);

// Sigmoid-shaped schedule 2 / (1 + exp(-m t)) - 1 on t in [0, 1]; t outside
// the range is clamped with a warning on stderr.
double lambda_rampup(double t, double m);

struct LossBreakdown {
    double l_lab = 0.0;
    double l_unl = 0.0;
    double l_pair = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// total = l_lab + l_unl + lambda * l_pair. Undefined tensors stand for
// absent terms (no valid pairs in the batch) and contribute zero.
Tensor total_loss(const Tensor& l_lab, const Tensor& l_unl, const Tensor& l_pair, double lambda,
                  LossBreakdown* breakdown = nullptr);

}  // namespace s3d
