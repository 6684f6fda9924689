#include "s3d/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <stdexcept>

#include "json.hpp"
#include "s3d/ops.hpp"
#include "s3d/selection.hpp"

namespace s3d {

namespace {
constexpr int kChunk = 128;
}

double evaluate(const Model& m, const Tensor& images, const std::vector<int>& labels) {
    if (!images.defined() || labels.empty()) throw std::invalid_argument("evaluate: empty set");
    const int N = images.shape()[0];
    if (static_cast<int>(labels.size()) != N)
        throw std::invalid_argument("evaluate: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(N) + " samples");
    const int K = m.arch.num_classes;
    NoGradGuard ng;
    int64_t correct = 0;
    for (int start = 0; start < N; start += kChunk) {
        const int count = std::min(kChunk, N - start);
        std::vector<int> idx(count);
        for (int i = 0; i < count; ++i) idx[i] = start + i;
        Tensor probs = predict(m, gather_rows(images, idx));
        const double* pv = probs.values().data();
        for (int i = 0; i < count; ++i) {
            const std::span<const double> row(&pv[static_cast<size_t>(i) * K], K);
            if (pseudo_label(row) == labels[start + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / N;
}

double evaluate(const Model& m, const LabeledSet& set) { return evaluate(m, set.images, set.labels); }

Tensor embed_all(const Model& m, const Tensor& images) {
    if (!images.defined()) throw std::invalid_argument("embed_all: empty set");
    const int N = images.shape()[0];
    const int E = m.arch.embedding_dim;
    NoGradGuard ng;
    std::vector<double> out(static_cast<size_t>(N) * E);
    for (int start = 0; start < N; start += kChunk) {
        const int count = std::min(kChunk, N - start);
        std::vector<int> idx(count);
        for (int i = 0; i < count; ++i) idx[i] = start + i;
        Tensor h = extract(m, gather_rows(images, idx)).embedding;
        std::copy(h.values().begin(), h.values().end(), out.begin() + static_cast<size_t>(start) * E);
    }
    return Tensor::from({N, E}, std::move(out));
}

SimilarityHistogram similarity_histogram(const Tensor& embeddings_a, const std::vector<int>& labels_a,
                                         const Tensor& embeddings_b, const std::vector<int>& labels_b,
                                         const std::string& population, int64_t checkpoint_iteration) {
    if (!embeddings_a.defined() || !embeddings_b.defined())
        throw std::invalid_argument("similarity_histogram: empty embedding population");
    const int E = embeddings_a.shape()[1];
    if (embeddings_b.shape()[1] != E)
        throw std::invalid_argument("similarity_histogram: embedding widths disagree");

    SimilarityHistogram hist;
    hist.population = population;
    hist.checkpoint_iteration = checkpoint_iteration;
    hist.edges.resize(kHistogramBins + 1);
    for (int i = 0; i <= kHistogramBins; ++i) hist.edges[i] = -1.0 + 2.0 * i / kHistogramBins;
    hist.counts.assign(kHistogramBins, 0);

    int max_label = -1;
    for (int y : labels_a) max_label = std::max(max_label, y);
    for (int y : labels_b) max_label = std::max(max_label, y);

    std::vector<std::vector<int>> by_a(max_label + 1), by_b(max_label + 1);
    for (size_t i = 0; i < labels_a.size(); ++i) by_a[labels_a[i]].push_back(static_cast<int>(i));
    for (size_t i = 0; i < labels_b.size(); ++i) by_b[labels_b[i]].push_back(static_cast<int>(i));

    const double* av = embeddings_a.values().data();
    const double* bv = embeddings_b.values().data();
    double sim_sum = 0.0;

    auto norm_of = [E](const double* v) {
        double sq = 0.0;
        for (int e = 0; e < E; ++e) sq += v[e] * v[e];
        return std::max(std::sqrt(sq), kNormEpsilon);
    };

    for (int k = 0; k <= max_label; ++k) {
        if (by_a[k].empty() || by_b[k].empty()) {
            std::cerr << "similarity_histogram(" << population << "): class " << k
                      << " absent from one population, skipped\n";
            continue;
        }
        for (int ia : by_a[k]) {
            const double* ea = &av[static_cast<size_t>(ia) * E];
            const double na = norm_of(ea);
            for (int ib : by_b[k]) {
                const double* eb = &bv[static_cast<size_t>(ib) * E];
                double dot = 0.0;
                for (int e = 0; e < E; ++e) dot += ea[e] * eb[e];
                const double c = dot / (na * norm_of(eb));
                int bin = static_cast<int>((c + 1.0) / 2.0 * kHistogramBins);
                bin = std::min(std::max(bin, 0), kHistogramBins - 1);
                ++hist.counts[bin];
                ++hist.pair_count;
                sim_sum += c;
            }
        }
    }
    hist.mean_similarity = hist.pair_count > 0 ? sim_sum / hist.pair_count : 0.0;
    return hist;
}

std::vector<SimilarityHistogram> discrepancy_histograms(const Model& m, const DatasetSplits& splits,
                                                        int64_t checkpoint_iteration) {
    std::vector<SimilarityHistogram> out;
    Tensor tu_emb = embed_all(m, splits.target_unlabeled.images);
    Tensor src_emb = embed_all(m, splits.source.images);
    out.push_back(similarity_histogram(src_emb, splits.source.labels, tu_emb, splits.target_unlabeled_eval_labels,
                                       "inter-domain", checkpoint_iteration));
    if (splits.target_labeled.size() > 0) {
        Tensor tl_emb = embed_all(m, splits.target_labeled.images);
        out.push_back(similarity_histogram(tl_emb, splits.target_labeled.labels, tu_emb,
                                           splits.target_unlabeled_eval_labels, "intra-domain",
                                           checkpoint_iteration));
    }
    return out;
}

void write_histograms_json(const std::vector<SimilarityHistogram>& series, const std::filesystem::path& path) {
    nlohmann::ordered_json doc;
    doc["format"] = "s3d-histograms";
    doc["format_version"] = 1;
    doc["series"] = nlohmann::ordered_json::array();
    for (const auto& h : series) {
        nlohmann::ordered_json j;
        j["population"] = h.population;
        j["checkpoint_iteration"] = h.checkpoint_iteration;
        j["edges"] = h.edges;
        j["counts"] = h.counts;
        j["pair_count"] = h.pair_count;
        j["mean_similarity"] = h.mean_similarity;
        doc["series"].push_back(std::move(j));
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("histograms: cannot open " + path.string() + " for writing");
    f << doc.dump(2) << "\n";
    if (!f) throw std::runtime_error("histograms: write failed for " + path.string());
}

std::vector<SimilarityHistogram> read_histograms_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("histograms: cannot open " + path.string());
    nlohmann::json doc;
    f >> doc;
    if (doc.value("format", "") != "s3d-histograms" || doc.value("format_version", -1) != 1)
        throw std::runtime_error("histograms: unrecognized format in " + path.string());
    std::vector<SimilarityHistogram> out;
    for (const auto& j : doc.at("series")) {
        SimilarityHistogram h;
        h.population = j.at("population");
        h.checkpoint_iteration = j.at("checkpoint_iteration");
        h.edges = j.at("edges").get<std::vector<double>>();
        h.counts = j.at("counts").get<std::vector<int64_t>>();
        h.pair_count = j.at("pair_count");
        h.mean_similarity = j.at("mean_similarity");
        out.push_back(std::move(h));
    }
    return out;
}

void export_embeddings(const Model& m, const DatasetSplits& splits, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("embeddings: cannot open " + path.string() + " for writing");
    f << "# s3d-embeddings v1\n";
    f << "split,domain,label";
    for (int e = 0; e < m.arch.embedding_dim; ++e) f << ",e" << e;
    f << "\n";
    f << std::setprecision(17);

    auto dump = [&](const char* split, const char* domain, const Tensor& images, const std::vector<int>& labels) {
        if (!images.defined()) return;
        Tensor emb = embed_all(m, images);
        const int E = m.arch.embedding_dim;
        const double* ev = emb.values().data();
        for (int i = 0; i < images.shape()[0]; ++i) {
            f << split << ',' << domain << ',' << labels[i];
            for (int e = 0; e < E; ++e) f << ',' << ev[static_cast<size_t>(i) * E + e];
            f << '\n';
        }
    };

    dump("source", "source", splits.source.images, splits.source.labels);
    dump("target_labeled", "target", splits.target_labeled.images, splits.target_labeled.labels);
    dump("target_unlabeled", "target", splits.target_unlabeled.images, splits.target_unlabeled_eval_labels);
    dump("target_val", "target", splits.target_val.images, splits.target_val.labels);
    if (!f) throw std::runtime_error("embeddings: write failed for " + path.string());
}

}  // namespace s3d
