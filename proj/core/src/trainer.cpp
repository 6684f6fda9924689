#include "s3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "s3d/analysis.hpp"
#include "s3d/losses.hpp"
#include "s3d/ops.hpp"
#include "s3d/style.hpp"

namespace s3d {

TrainMode parse_mode(const std::string& name) {
    if (name == "s3d") return TrainMode::S3D;
    if (name == "s3d-no-af") return TrainMode::S3DNoAF;
    if (name == "s-plus-t") return TrainMode::SPlusT;
    throw std::invalid_argument("mode: expected s3d, s3d-no-af or s-plus-t, got '" + name + "'");
}

std::string mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::S3D: return "s3d";
        case TrainMode::S3DNoAF: return "s3d-no-af";
        case TrainMode::SPlusT: return "s-plus-t";
    }
    return "?";
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("train." + field + ": " + why);
    };
    if (shots < 0) fail("shots", "must be >= 0");
    if (batch_size <= 0 || batch_size % 2 != 0) fail("batch_size", "must be positive and even");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (momentum < 0.0 || momentum >= 1.0) fail("momentum", "must be in [0, 1)");
    if (weight_decay < 0.0) fail("weight_decay", "must be >= 0");
    if (!(temperature > 0.0)) fail("temperature", "must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha", "must be in (0, 1)");
    if (!(rho > 0.0)) fail("rho", "must be positive");
    if (student_interval < 1) fail("student_interval", "must be >= 1");
    if (max_iterations < 1) fail("max_iterations", "must be >= 1");
    if (val_frequency < 1) fail("val_frequency", "must be >= 1");
    if (patience < 1) fail("patience", "must be >= 1");
    if (pretrain_max_iterations < 1) fail("pretrain_max_iterations", "must be >= 1");
    if (pretrain_val_frequency < 1) fail("pretrain_val_frequency", "must be >= 1");
}

void sgd_step(Model& m, SgdState& state, double lr, double momentum, double weight_decay) {
    auto params = m.parameters();
    const auto& names = Model::parameter_names();
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) state.velocity[i].assign(params[i]->numel(), 0.0);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const int64_t n = p.numel();
        std::span<double> pv = p.leaf_values();
        std::vector<double>& v = state.velocity[i];
        if (!p.has_grad()) {
            // Never reached in a recorded step; decay still applies.
            for (int64_t j = 0; j < n; ++j) {
                v[j] = momentum * v[j] + weight_decay * pv[j];
                pv[j] -= lr * v[j];
            }
            continue;
        }
        std::span<const double> g = p.grad();
        for (int64_t j = 0; j < n; ++j) {
            if (!std::isfinite(g[j]))
                throw std::runtime_error("sgd_step: non-finite gradient in parameter block " + names[i]);
            v[j] = momentum * v[j] + g[j] + weight_decay * pv[j];
            pv[j] -= lr * v[j];
        }
    }
}

namespace {

struct LabeledBatch {
    Tensor images;
    std::vector<int> labels;
};

int64_t row_size(const Tensor& t) { return t.numel() / t.shape()[0]; }

void copy_row(std::vector<double>& dst, size_t row, const Tensor& src, int idx) {
    const int64_t rs = row_size(src);
    std::memcpy(&dst[row * rs], &src.values()[static_cast<size_t>(idx) * rs], rs * sizeof(double));
}

// Half source / half labeled target when both are available; the draw order
// (all source indices, then all target indices) is part of the stream
// contract.
LabeledBatch sample_labeled_batch(const LabeledSet& source, const LabeledSet& target_labeled, int batch_size,
                                  Rng& rng) {
    const Tensor& ref = source.size() > 0 ? source.images : target_labeled.images;
    int from_tl = target_labeled.size() == 0 ? 0 : batch_size / 2;
    if (source.size() == 0) from_tl = batch_size;
    const int from_src = batch_size - from_tl;

    LabeledBatch batch;
    std::vector<double> buf(static_cast<size_t>(batch_size) * row_size(ref));
    batch.labels.resize(batch_size);
    for (int i = 0; i < from_src; ++i) {
        const int idx = static_cast<int>(rng.uniform_int(source.size()));
        copy_row(buf, i, source.images, idx);
        batch.labels[i] = source.labels[idx];
    }
    for (int i = 0; i < from_tl; ++i) {
        const int idx = static_cast<int>(rng.uniform_int(target_labeled.size()));
        copy_row(buf, from_src + i, target_labeled.images, idx);
        batch.labels[from_src + i] = target_labeled.labels[idx];
    }
    std::vector<int> shape = ref.shape();
    shape[0] = batch_size;
    batch.images = Tensor::from(std::move(shape), std::move(buf));
    return batch;
}

LabeledBatch gather_teachers(const LabeledSet& source, const LabeledSet& target_labeled,
                             const std::vector<Pair>& pairs) {
    const Tensor& ref = source.size() > 0 ? source.images : target_labeled.images;
    LabeledBatch batch;
    std::vector<double> buf(pairs.size() * row_size(ref));
    batch.labels.resize(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        const Tensor& images = pairs[i].origin == TeacherOrigin::Source ? source.images : target_labeled.images;
        copy_row(buf, i, images, pairs[i].teacher_index);
        batch.labels[i] = pairs[i].label;
    }
    std::vector<int> shape = ref.shape();
    shape[0] = static_cast<int>(pairs.size());
    batch.images = Tensor::from(std::move(shape), std::move(buf));
    return batch;
}

void zero_param_grads(Model& m) {
    for (Tensor* p : m.parameters())
        if (p->has_grad()) p->zero_grad();
}

}  // namespace

PretrainResult pretrain(const Model& init, const LabeledSet& source, const LabeledSet& target_labeled,
                        const LabeledSet& val, const TrainConfig& cfg) {
    cfg.validate();
    if (source.size() == 0 && target_labeled.size() == 0)
        throw std::invalid_argument("pretrain: labeled set is empty");
    if (val.size() == 0) throw std::invalid_argument("pretrain: validation set is empty");

    PretrainResult res;
    res.model = clone_model(init);
    Model& model = res.model;
    SgdState sgd;
    Rng batch_rng = Rng(cfg.seed).derive("pretrain-batch");

    std::vector<double> best_params = flatten_params(model);
    double best_acc = evaluate(model, val);
    int since_best = 0;
    LossBreakdown bd;

    for (int i = 0; i < cfg.pretrain_max_iterations; ++i) {
        LabeledBatch batch = sample_labeled_batch(source, target_labeled, cfg.batch_size, batch_rng);
        Tensor l_lab = labeled_ce(predict(model, batch.images), batch.labels);
        Tensor total = total_loss(l_lab, Tensor(), Tensor(), 0.0, &bd);
        zero_param_grads(model);
        total.backward();
        sgd_step(model, sgd, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        res.iterations_run = i + 1;

        if ((i + 1) % cfg.pretrain_val_frequency == 0) {
            const double acc = evaluate(model, val);
            res.metrics.push_back({i + 1, bd.l_lab, 0.0, 0.0, 0.0, acc, 0,
                                   std::numeric_limits<double>::quiet_NaN()});
            if (acc > best_acc) {
                best_acc = acc;
                best_params = flatten_params(model);
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    load_params(model, best_params);
    res.best_val_acc = best_acc;
    return res;
}

TrainResult train_s3d(const Model& pretrained, double delta_bar, const LabeledSet& source,
                      const LabeledSet& target_labeled, const UnlabeledSet& target_unlabeled,
                      const LabeledSet& val, const TrainConfig& cfg, const PrecisionFn& precision) {
    cfg.validate();
    if (target_unlabeled.size() == 0)
        throw std::invalid_argument("train_s3d: unlabeled target set is empty, nothing to adapt to");
    if (source.size() == 0 && target_labeled.size() == 0)
        throw std::invalid_argument("train_s3d: no teacher samples available");
    if (val.size() == 0) throw std::invalid_argument("train_s3d: validation set is empty");
    if (!(delta_bar >= 0.0)) throw std::invalid_argument("train_s3d: delta_bar must be >= 0");

    TrainResult res;
    res.model = clone_model(pretrained);
    res.delta_bar = delta_bar;
    Model& model = res.model;
    SgdState sgd;
    Rng batch_rng = Rng(cfg.seed).derive("s3d-batch");
    Rng eps_rng = Rng(cfg.seed).derive("s3d-epsilon");

    int hook_count = 0;
    for (bool h : model.arch.hook_mask) hook_count += h;

    std::vector<double> best_params = flatten_params(model);
    double best_acc = evaluate(model, val);
    int since_best = 0;
    StudentSet students;
    LossBreakdown bd;

    for (int i = 0; i < cfg.max_iterations; ++i) {
        if (i % cfg.student_interval == 0) {
            students = build_student_set(model, target_unlabeled, delta_bar, cfg.alpha, i);
            res.refresh_iterations.push_back(i);
        }
        const double lambda = lambda_rampup(static_cast<double>(i) / cfg.max_iterations, cfg.ramp_slope);

        Tensor total;
        if (cfg.mode == TrainMode::SPlusT) {
            LabeledBatch batch = sample_labeled_batch(source, target_labeled, cfg.batch_size, batch_rng);
            Tensor l_lab = labeled_ce(predict(model, batch.images), batch.labels);
            total = total_loss(l_lab, Tensor(), Tensor(), lambda, &bd);
        } else {
            PairBatch pb = sample_pair_batch(source.labels, target_labeled.labels, students, cfg.batch_size,
                                             batch_rng);
            LabeledBatch teachers = gather_teachers(source, target_labeled, pb.pairs);
            Features tf = extract(model, teachers.images);
            Tensor teacher_probs = classify(model, tf.embedding);
            Tensor l_lab = labeled_ce(teacher_probs, teachers.labels);

            std::vector<int> paired_rows;
            std::vector<int> student_indices;
            std::vector<int> student_pseudo;
            for (size_t j = 0; j < pb.pairs.size(); ++j) {
                if (!pb.pairs[j].has_student) continue;
                paired_rows.push_back(static_cast<int>(j));
                const StudentEntry& e = students.entries[pb.pairs[j].student_entry];
                student_indices.push_back(e.index);
                student_pseudo.push_back(e.pseudo);
            }

            Tensor l_unl, l_pair;
            if (!paired_rows.empty()) {
                Tensor student_images = gather_rows(target_unlabeled.images, student_indices);
                Features sf = extract(model, student_images);
                Tensor student_probs = classify(model, sf.embedding);
                l_unl = weighted_ce(student_probs, student_pseudo);

                Tensor assistant_probs;
                if (cfg.mode == TrainMode::S3DNoAF) {
                    assistant_probs = gather_rows(detach(teacher_probs), paired_rows);
                } else if (hook_count == 0) {
                    assistant_probs = detach(student_probs);
                } else {
                    std::vector<FeatureStats> pair_stats;
                    for (size_t h = 0; h < tf.hooked.size(); ++h) {
                        FeatureStats full = feature_stats(tf.hooked[h]);
                        pair_stats.push_back({gather_rows(full.mu, paired_rows),
                                              gather_rows(full.sigma, paired_rows)});
                    }
                    std::vector<double> eps(paired_rows.size());
                    for (double& e : eps) e = sample_epsilon(cfg.rho, eps_rng);
                    assistant_probs = assistant_forward_batch(model, sf.hooked, pair_stats, eps);
                }
                l_pair = pair_kl(assistant_probs, student_probs);
            }
            total = total_loss(l_lab, l_unl, l_pair, lambda, &bd);
        }

        zero_param_grads(model);
        total.backward();
        sgd_step(model, sgd, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        res.iterations_run = i + 1;

        if ((i + 1) % cfg.val_frequency == 0) {
            const double acc = evaluate(model, val);
            const double prec = precision ? precision(students) : std::numeric_limits<double>::quiet_NaN();
            res.metrics.push_back({i + 1, bd.l_lab, bd.l_unl, bd.l_pair, bd.lambda, acc, students.size(), prec});
            if (acc > best_acc) {
                best_acc = acc;
                best_params = flatten_params(model);
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }

    load_params(model, best_params);
    res.best_val_acc = best_acc;
    res.final_student_set = std::move(students);
    return res;
}

void write_metrics_jsonl(const std::vector<ValRecord>& metrics, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("metrics: cannot open " + path.string() + " for writing");
    for (const auto& r : metrics) {
        nlohmann::ordered_json j;
        j["schema_version"] = 1;
        j["iteration"] = r.iteration;
        j["l_lab"] = r.l_lab;
        j["l_unl"] = r.l_unl;
        j["l_pair"] = r.l_pair;
        j["lambda"] = r.lambda;
        j["val_acc"] = r.val_acc;
        j["student_set_size"] = r.student_set_size;
        if (std::isnan(r.pseudo_precision))
            j["pseudo_label_precision"] = nullptr;
        else
            j["pseudo_label_precision"] = r.pseudo_precision;
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("metrics: write failed for " + path.string());
}

std::vector<ValRecord> read_metrics_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("metrics: cannot open " + path.string());
    std::vector<ValRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ValRecord r;
        r.iteration = j.at("iteration");
        r.l_lab = j.at("l_lab");
        r.l_unl = j.at("l_unl");
        r.l_pair = j.at("l_pair");
        r.lambda = j.at("lambda");
        r.val_acc = j.at("val_acc");
        r.student_set_size = j.at("student_set_size");
        r.pseudo_precision = j.at("pseudo_label_precision").is_null()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : j.at("pseudo_label_precision").get<double>();
        out.push_back(r);
    }
    return out;
}

}  // namespace s3d
