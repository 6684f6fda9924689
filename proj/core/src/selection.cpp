#include "s3d/selection.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "s3d/ops.hpp"

namespace s3d {

namespace {
constexpr int kScanChunk = 128;
}

int pseudo_label(std::span<const double> probabilities) {
    if (probabilities.empty()) throw std::invalid_argument("pseudo_label: empty probability vector");
    int best = 0;
    for (size_t i = 1; i < probabilities.size(); ++i)
        if (probabilities[i] > probabilities[best]) best = static_cast<int>(i);
    return best;
}

UnlabeledScan scan_unlabeled(const Model& m, const UnlabeledSet& dtu) {
    if (dtu.size() == 0) throw std::invalid_argument("scan_unlabeled: empty unlabeled set");
    if (m.arch.num_classes < 2) throw std::invalid_argument("scan_unlabeled: need at least 2 classes");
    const int N = static_cast<int>(dtu.size());
    const int K = m.arch.num_classes;

    UnlabeledScan scan;
    scan.margin.resize(N);
    scan.top_prob.resize(N);
    scan.pseudo.resize(N);

    NoGradGuard ng;
    for (int start = 0; start < N; start += kScanChunk) {
        const int count = std::min(kScanChunk, N - start);
        std::vector<int> idx(count);
        for (int i = 0; i < count; ++i) idx[i] = start + i;
        Tensor batch = gather_rows(dtu.images, idx);
        Tensor logits = scalar_mul(cosine_scores(m, extract(m, batch).embedding), 1.0 / m.arch.temperature);
        Tensor probs = softmax_rows(logits);
        const double* lv = logits.values().data();
        const double* pv = probs.values().data();
        for (int i = 0; i < count; ++i) {
            const double* row = &lv[static_cast<size_t>(i) * K];
            double top1 = row[0], top2 = -1e300;
            for (int k = 1; k < K; ++k) {
                if (row[k] > top1) {
                    top2 = top1;
                    top1 = row[k];
                } else if (row[k] > top2) {
                    top2 = row[k];
                }
            }
            const std::span<const double> prow(&pv[static_cast<size_t>(i) * K], K);
            scan.margin[start + i] = top1 - top2;
            scan.pseudo[start + i] = pseudo_label(prow);
            scan.top_prob[start + i] = prow[scan.pseudo[start + i]];
        }
    }
    return scan;
}

double average_margin(const Model& m, const UnlabeledSet& dtu) {
    const UnlabeledScan scan = scan_unlabeled(m, dtu);
    double acc = 0.0;
    for (double v : scan.margin) acc += v;
    return acc / static_cast<double>(scan.margin.size());
}

bool reliable(double margin, double top_prob, double delta, double alpha) {
    return margin > delta || top_prob > alpha;
}

StudentSet build_student_set(const Model& m, const UnlabeledSet& dtu, double delta, double alpha,
                             int64_t iteration) {
    if (!(delta >= 0.0)) throw std::invalid_argument("build_student_set: delta must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("build_student_set: alpha must be in (0, 1)");
    const UnlabeledScan scan = scan_unlabeled(m, dtu);

    StudentSet s;
    s.generation_iteration = iteration;
    s.by_label.resize(m.arch.num_classes);
    for (size_t i = 0; i < scan.margin.size(); ++i) {
        if (!reliable(scan.margin[i], scan.top_prob[i], delta, alpha)) continue;
        s.by_label[scan.pseudo[i]].push_back(static_cast<int>(s.entries.size()));
        s.entries.push_back({static_cast<int>(i), scan.pseudo[i], scan.top_prob[i], scan.margin[i]});
    }
    return s;
}

void dump_student_set(const StudentSet& s, std::ostream& os) {
    for (const auto& e : s.entries) {
        os << "{\"index\":" << e.index << ",\"pseudo_label\":" << e.pseudo << ",\"confidence\":" << e.confidence
           << ",\"margin\":" << e.margin << "}\n";
    }
}

PairBatch sample_pair_batch(const std::vector<int>& source_labels, const std::vector<int>& target_labeled_labels,
                            const StudentSet& students, int batch_size, Rng& rng) {
    if (batch_size <= 0 || batch_size % 2 != 0)
        throw std::invalid_argument("sample_pair_batch: batch_size must be positive and even");
    if (source_labels.empty() && target_labeled_labels.empty())
        throw std::invalid_argument("sample_pair_batch: no teacher samples available");

    const int teachers = batch_size / 2;
    int from_tl = target_labeled_labels.empty() ? 0 : teachers / 2;
    if (source_labels.empty()) from_tl = teachers;
    const int from_src = teachers - from_tl;

    PairBatch batch;
    batch.pairs.reserve(teachers);
    for (int i = 0; i < from_src; ++i) {
        const int idx = static_cast<int>(rng.uniform_int(source_labels.size()));
        batch.pairs.push_back({TeacherOrigin::Source, idx, source_labels[idx]});
    }
    for (int i = 0; i < from_tl; ++i) {
        const int idx = static_cast<int>(rng.uniform_int(target_labeled_labels.size()));
        batch.pairs.push_back({TeacherOrigin::TargetLabeled, idx, target_labeled_labels[idx]});
    }
    for (auto& pair : batch.pairs) {
        if (pair.label < 0 || pair.label >= static_cast<int>(students.by_label.size())) continue;
        const auto& pool = students.by_label[pair.label];
        if (pool.empty()) continue;
        pair.student_entry = pool[rng.uniform_int(pool.size())];
        pair.has_student = true;
    }
    return batch;
}

}  // namespace s3d
