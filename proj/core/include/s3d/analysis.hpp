#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3d/datagen.hpp"
#include "s3d/model.hpp"

namespace s3d {

// Fraction of samples whose argmax prediction matches the ground truth.
double evaluate(const Model& m, const Tensor& images, const std::vector<int>& labels);
double evaluate(const Model& m, const LabeledSet& set);

// Embeddings of every sample, [N, E], computed without recording a graph.
Tensor embed_all(const Model& m, const Tensor& images);

// Cosine similarities of all same-class pairs across two embedding
// populations, binned over [-1, 1].
struct SimilarityHistogram {
    std::string population;  // "inter-domain" or "intra-domain"
    int64_t checkpoint_iteration = 0;
    std::vector<double> edges;    // 51 strictly increasing bin edges
    std::vector<int64_t> counts;  // 50 bins; sums to pair_count
    int64_t pair_count = 0;
    double mean_similarity = 0.0;
};

inline constexpr int kHistogramBins = 50;

SimilarityHistogram similarity_histogram(const Tensor& embeddings_a, const std::vector<int>& labels_a,
                                         const Tensor& embeddings_b, const std::vector<int>& labels_b,
                                         const std::string& population, int64_t checkpoint_iteration);

// Inter-domain (source vs unlabeled target) and intra-domain (labeled target
// vs unlabeled target) same-class histograms for one checkpoint.
std::vector<SimilarityHistogram> discrepancy_histograms(const Model& m, const DatasetSplits& splits,
                                                        int64_t checkpoint_iteration);

void write_histograms_json(const std::vector<SimilarityHistogram>& series, const std::filesystem::path& path);
std::vector<SimilarityHistogram> read_histograms_json(const std::filesystem::path& path);

// CSV with one row per sample across all splits: split tag, domain tag,
// class label, then the embedding coordinates.
void export_embeddings(const Model& m, const DatasetSplits& splits, const std::filesystem::path& path);

}  // namespace s3d
