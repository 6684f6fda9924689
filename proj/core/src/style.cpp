#include "s3d/style.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "s3d/ops.hpp"

namespace s3d {

namespace {

void check_feature_rank(const Tensor& z, const char* op) {
    if (!z.defined() || (z.shape().size() != 3 && z.shape().size() != 4))
        throw std::invalid_argument(std::string(op) + ": feature must be [B,C,H,W] or [C,H,W], got " +
                                    (z.defined() ? shape_to_string(z.shape()) : "empty"));
}

}  // namespace

FeatureStats feature_stats(const Tensor& z) {
    check_feature_rank(z, "feature_stats");
    NoGradGuard ng;
    Tensor z4 = z;
    if (z.shape().size() == 3) {
        std::vector<int> s = z.shape();
        z4 = reshape(z, {1, s[0], s[1], s[2]});
    }
    return FeatureStats{channel_mean(z4), channel_std(z4)};
}

double sample_epsilon(double rho, Rng& rng) {
    if (!(rho > 0.0)) throw std::invalid_argument("sample_epsilon: rho must be positive");
    return rng.beta(rho, rho);
}

Tensor ag_blend(const Tensor& z_student, const FeatureStats& teacher, const std::vector<double>& eps_per_sample) {
    check_feature_rank(z_student, "ag_blend");
    const bool batched = z_student.shape().size() == 4;
    const int B = batched ? z_student.shape()[0] : 1;
    const int C = batched ? z_student.shape()[1] : z_student.shape()[0];
    const int HW = batched ? z_student.shape()[2] * z_student.shape()[3]
                           : z_student.shape()[1] * z_student.shape()[2];
    if (!teacher.mu.defined() || !teacher.sigma.defined() || teacher.mu.shape() != teacher.sigma.shape())
        throw std::invalid_argument("ag_blend: malformed teacher stats");
    if (teacher.mu.numel() != static_cast<int64_t>(B) * C)
        throw std::invalid_argument("ag_blend: channel mismatch, feature " + shape_to_string(z_student.shape()) +
                                    " vs teacher stats " + shape_to_string(teacher.mu.shape()));
    if (static_cast<int>(eps_per_sample.size()) != B)
        throw std::invalid_argument("ag_blend: expected " + std::to_string(B) + " blend coefficients, got " +
                                    std::to_string(eps_per_sample.size()));
    for (double e : eps_per_sample)
        if (!(e >= 0.0 && e <= 1.0))
            throw std::invalid_argument("ag_blend: blend coefficient " + std::to_string(e) + " outside [0, 1]");

    const double* zv = z_student.values().data();
    const double* tmu = teacher.mu.values().data();
    const double* tsig = teacher.sigma.values().data();
    std::vector<double> out(z_student.numel());
    for (int b = 0; b < B; ++b) {
        const double eps = eps_per_sample[b];
        for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(b) * C + c) * HW;
            const double* plane = &zv[off];
            double m = 0.0;
            for (int i = 0; i < HW; ++i) m += plane[i];
            m /= HW;
            double s = 0.0;
            for (int i = 0; i < HW; ++i) {
                const double d = plane[i] - m;
                s += d * d;
            }
            const double sigma = std::sqrt(s / HW);
            const double beta = eps * tmu[b * C + c] + (1.0 - eps) * m;
            const double gamma = eps * tsig[b * C + c] + (1.0 - eps) * sigma;
            const double denom = std::max(sigma, kNormEpsilon);
            double* dst = &out[off];
            for (int i = 0; i < HW; ++i) dst[i] = gamma * (plane[i] - m) / denom + beta;
        }
    }
    return Tensor::from(z_student.shape(), std::move(out));
}

Tensor ag_blend(const Tensor& z_student, const FeatureStats& teacher, double eps) {
    const int B = z_student.defined() && z_student.shape().size() == 4 ? z_student.shape()[0] : 1;
    return ag_blend(z_student, teacher, std::vector<double>(B, eps));
}

namespace {

int hook_count(const Model& m) {
    int n = 0;
    for (bool h : m.arch.hook_mask) n += h;
    return n;
}

}  // namespace

Tensor assistant_forward(const Model& m, const Tensor& x_student, const std::vector<FeatureStats>& teacher_stats,
                         double eps) {
    if (static_cast<int>(teacher_stats.size()) != hook_count(m))
        throw std::invalid_argument("assistant_forward: missing hook stats, model has " +
                                    std::to_string(hook_count(m)) + " hooked blocks, got " +
                                    std::to_string(teacher_stats.size()));
    NoGradGuard ng;
    Tensor cur = x_student;
    size_t hook = 0;
    for (int b = 0; b < kNumBlocks; ++b) {
        cur = forward_block(m, b, cur);
        if (m.arch.hook_mask[b]) cur = ag_blend(cur, teacher_stats[hook++], eps);
    }
    return classify(m, head_embedding(m, cur));
}

Tensor assistant_forward_batch(const Model& m, const std::vector<Tensor>& plain_hooked,
                               const std::vector<FeatureStats>& teacher_stats,
                               const std::vector<double>& eps_per_sample) {
    const int hooks = hook_count(m);
    if (hooks == 0)
        throw std::invalid_argument("assistant_forward_batch: model has no hooked blocks");
    if (static_cast<int>(teacher_stats.size()) != hooks || static_cast<int>(plain_hooked.size()) != hooks)
        throw std::invalid_argument("assistant_forward_batch: missing hook stats or features (" +
                                    std::to_string(hooks) + " hooked blocks)");

    std::vector<int> hook_blocks;
    for (int b = 0; b < kNumBlocks; ++b)
        if (m.arch.hook_mask[b]) hook_blocks.push_back(b);

    NoGradGuard ng;
    // Up to the first hook the branch equals the plain forward, so resume
    // from the cached feature there.
    Tensor cur = ag_blend(plain_hooked[0], teacher_stats[0], eps_per_sample);
    size_t hook = 1;
    for (int b = hook_blocks[0] + 1; b < kNumBlocks; ++b) {
        cur = forward_block(m, b, cur);
        if (m.arch.hook_mask[b]) cur = ag_blend(cur, teacher_stats[hook++], eps_per_sample);
    }
    return classify(m, head_embedding(m, cur));
}

}  // namespace s3d
