#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "s3d/datagen.hpp"
#include "s3d/model.hpp"
#include "s3d/rng.hpp"

namespace s3d {

// Index of the maximum entry; ties break toward the lowest index.
int pseudo_label(std::span<const double> probabilities);

// Per-sample quantities the reliability filter looks at, all computed from
// the temperature-scaled cosine logits of one forward pass.
struct UnlabeledScan {
    std::vector<double> margin;    // top1 - top2 of the scaled logits
    std::vector<double> top_prob;  // max softmax probability
    std::vector<int> pseudo;       // argmax class
};

UnlabeledScan scan_unlabeled(const Model& m, const UnlabeledSet& dtu);

// Mean top-two scaled-logit gap over the unlabeled target set, computed on
// the pre-trained model and frozen as the reliability margin threshold.
double average_margin(const Model& m, const UnlabeledSet& dtu);

// The reliability filter: high margin OR high absolute confidence.
bool reliable(double margin, double top_prob, double delta, double alpha);

struct StudentEntry {
    int index;         // position in D_TU
    int pseudo;        // pseudo-label
    double confidence; // max probability at selection time
    double margin;     // scaled-logit margin at selection time
};

struct StudentSet {
    std::vector<StudentEntry> entries;
    std::vector<std::vector<int>> by_label;  // entry positions per pseudo-label
    int64_t generation_iteration = 0;
    int64_t size() const { return static_cast<int64_t>(entries.size()); }
};

StudentSet build_student_set(const Model& m, const UnlabeledSet& dtu, double delta, double alpha,
                             int64_t iteration);

// Diagnostics dump, one JSON object per line: index, pseudo-label,
// confidence, margin.
void dump_student_set(const StudentSet& s, std::ostream& os);

enum class TeacherOrigin { Source, TargetLabeled };

struct Pair {
    TeacherOrigin origin;
    int teacher_index;  // into the origin set
    int label;          // teacher ground-truth label
    bool has_student = false;
    int student_entry = -1;  // into StudentSet.entries
};

struct PairBatch {
    std::vector<Pair> pairs;  // batch_size / 2 teachers
};

// Draws batch_size/2 teachers uniformly, half from the source set and half
// from the labeled target set when it is nonempty, then pairs each teacher
// with a uniform student of the same pseudo-label. Teachers whose label has
// no student stay in the batch pair-less (labeled loss only).
PairBatch sample_pair_batch(const std::vector<int>& source_labels, const std::vector<int>& target_labeled_labels,
                            const StudentSet& students, int batch_size, Rng& rng);

}  // namespace s3d
