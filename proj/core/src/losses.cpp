#include "s3d/losses.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "s3d/ops.hpp"

namespace s3d {

namespace {

void check_prob_matrix(const Tensor& p, const char* op) {
    if (!p.defined() || p.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": probabilities must be [B,K], got " +
                                    (p.defined() ? shape_to_string(p.shape()) : "empty"));
}

void check_labels(const Tensor& p, const std::vector<int>& labels, const char* op) {
    const int B = p.shape()[0], K = p.shape()[1];
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(B) + " rows");
    for (int y : labels)
        if (y < 0 || y >= K)
            throw std::invalid_argument(std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(K) + ")");
}

}  // namespace

Tensor labeled_ce(const Tensor& probabilities, const std::vector<int>& labels) {
    check_prob_matrix(probabilities, "labeled_ce");
    check_labels(probabilities, labels, "labeled_ce");
    const int B = probabilities.shape()[0], K = probabilities.shape()[1];
    std::vector<double> mask(static_cast<size_t>(B) * K, 0.0);
    for (int i = 0; i < B; ++i) mask[static_cast<size_t>(i) * K + labels[i]] = 1.0;
    Tensor picked = mul(Tensor::from({B, K}, std::move(mask)), log(probabilities));
    return scalar_mul(sum(picked), -1.0 / B);
}

Tensor weighted_ce(const Tensor& probabilities, const std::vector<int>& pseudo_labels) {
    check_prob_matrix(probabilities, "weighted_ce");
    check_labels(probabilities, pseudo_labels, "weighted_ce");
    const int B = probabilities.shape()[0], K = probabilities.shape()[1];
    // The confidence weight is the current prediction itself, detached.
    std::vector<double> mask(static_cast<size_t>(B) * K, 0.0);
    const double* pv = probabilities.values().data();
    for (int i = 0; i < B; ++i) {
        const size_t at = static_cast<size_t>(i) * K + pseudo_labels[i];
        mask[at] = pv[at];
    }
    Tensor picked = mul(Tensor::from({B, K}, std::move(mask)), log(probabilities));
    return scalar_mul(sum(picked), -1.0 / B);
}

Tensor pair_kl(const Tensor& assistant_probs, const Tensor& student_probs) {
    check_prob_matrix(assistant_probs, "pair_kl");
    check_prob_matrix(student_probs, "pair_kl");
    if (assistant_probs.shape() != student_probs.shape())
        throw std::invalid_argument("pair_kl: shape mismatch " + shape_to_string(assistant_probs.shape()) +
                                    " vs " + shape_to_string(student_probs.shape()));
    const int B = assistant_probs.shape()[0];
    Tensor a = detach(assistant_probs);
    Tensor kl = mul(a, sub(log(a), log(student_probs)));
    return scalar_mul(sum(kl), 1.0 / B);
}

double lambda_rampup(double t, double m) {
    if (!(m > 0.0)) throw std::invalid_argument("lambda_rampup: m must be positive");
    if (t < 0.0 || t > 1.0) {
        std::cerr << "lambda_rampup: t=" << t << " outside [0, 1], clamping\n";
        t = std::min(std::max(t, 0.0), 1.0);
    }
    return 2.0 / (1.0 + std::exp(-m * t)) - 1.0;
}

Tensor total_loss(const Tensor& l_lab, const Tensor& l_unl, const Tensor& l_pair, double lambda,
                  LossBreakdown* breakdown) {
    if (!l_lab.defined()) throw std::invalid_argument("total_loss: labeled term is required");
    Tensor total = l_lab;
    if (l_unl.defined()) total = add(total, l_unl);
    if (l_pair.defined()) total = add(total, scalar_mul(l_pair, lambda));
    if (breakdown) {
        breakdown->l_lab = l_lab.item();
        breakdown->l_unl = l_unl.defined() ? l_unl.item() : 0.0;
        breakdown->l_pair = l_pair.defined() ? l_pair.item() : 0.0;
        breakdown->lambda = lambda;
        breakdown->total = total.item();
    }
    return total;
}

}  // namespace s3d
