#pragma once

#include <vector>

#include "s3d/model.hpp"
#include "s3d/rng.hpp"
#include "s3d/tensor.hpp"

namespace s3d {

// Per-channel spatial mean and population std of a feature map; carried as
// plain value tensors (no gradient path).
struct FeatureStats {
    Tensor mu;     // [B, C]
    Tensor sigma;  // [B, C]
};

// z is [B,C,H,W] (or [C,H,W], treated as a batch of one).
FeatureStats feature_stats(const Tensor& z);

// Blend coefficient drawn from Beta(rho, rho); one draw per teacher-student
// pair, shared across every hooked layer of that pair.
double sample_epsilon(double rho, Rng& rng);

// Re-normalizes the student feature per channel to the interpolated style
//   beta  = eps * mu(teacher)    + (1 - eps) * mu(student)
//   gamma = eps * sigma(teacher) + (1 - eps) * sigma(student)
//   out   = gamma * (z - mu(student)) / max(sigma(student), eps_guard) + beta
// The result carries no gradient (the assistant branch is fully detached).
Tensor ag_blend(const Tensor& z_student, const FeatureStats& teacher, const std::vector<double>& eps_per_sample);
Tensor ag_blend(const Tensor& z_student, const FeatureStats& teacher, double eps);

// Assistant prediction: the extractor forward with ag_blend applied at every
// hooked block output (same eps at all hooks), then the cosine classifier.
// teacher_stats holds one entry per hooked block, in hook order. The output
// is a detached probability tensor.
Tensor assistant_forward(const Model& m, const Tensor& x_student, const std::vector<FeatureStats>& teacher_stats,
                         double eps);

// Batched fast path: resumes from the plain student's hooked block outputs
// (the branch is identical to the plain forward up to the first hook).
// plain_hooked holds the plain forward's hooked features in hook order;
// eps_per_sample has one blend coefficient per row.
Tensor assistant_forward_batch(const Model& m, const std::vector<Tensor>& plain_hooked,
                               const std::vector<FeatureStats>& teacher_stats,
                               const std::vector<double>& eps_per_sample);

}  // namespace s3d
