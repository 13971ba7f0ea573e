// Mini-batch training, seeded ensembles, and ensemble averaging.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osr/dataset.hpp"
#include "osr/ini.hpp"
#include "osr/losses.hpp"
#include "osr/network.hpp"
#include "osr/tensor.hpp"

namespace osr {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// splitmix64 of (seed, stream): independent-looking seeds for ensemble runs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

enum class OptimizerKind { adam, sgd };
enum class Schedule { cosine, constant };

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double final_learning_rate = 1e-5;
    Schedule schedule = Schedule::cosine;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;  // sgd only
    std::uint64_t seed = 1;
    LossSpec loss;
    std::size_t ensemble_size = 5;

    void validate() const {
        if (ensemble_size < 1) throw TrainingError("train: ensemble size must be at least 1");
        if (batch_size < 1) throw TrainingError("train: batch size must be at least 1");
        if (!(learning_rate > 0.0)) throw TrainingError("train: learning rate must be positive");
        loss.validate();
    }

    /// Cosine decay from learning_rate to final_learning_rate over `total` steps.
    double learning_rate_at(std::size_t step, std::size_t total) const {
        if (schedule == Schedule::constant || total <= 1) return learning_rate;
        const double t = static_cast<double>(step) / static_cast<double>(total - 1);
        return final_learning_rate + 0.5 * (learning_rate - final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
    }

    IniSection to_ini() const {
        IniSection s{"train", {}};
        s.set("epochs", std::to_string(epochs));
        s.set("batch_size", std::to_string(batch_size));
        s.set("learning_rate", ini::format(learning_rate));
        s.set("final_learning_rate", ini::format(final_learning_rate));
        s.set("schedule", schedule == Schedule::cosine ? "cosine" : "constant");
        s.set("optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd");
        s.set("momentum", ini::format(momentum));
        s.set("ensemble_size", std::to_string(ensemble_size));
        return s;
    }

    static TrainConfig from_ini(const IniSection& s) { return from_ini(s, TrainConfig{}); }

    static TrainConfig from_ini(const IniSection& s, TrainConfig base) {
        if (auto v = s.get("epochs")) base.epochs = ini::to_uint(*v, "epochs");
        if (auto v = s.get("batch_size")) base.batch_size = ini::to_uint(*v, "batch_size");
        if (auto v = s.get("learning_rate")) base.learning_rate = ini::to_double(*v, "learning_rate");
        if (auto v = s.get("final_learning_rate")) base.final_learning_rate = ini::to_double(*v, "final_learning_rate");
        if (auto v = s.get("schedule")) {
            if (*v == "cosine") base.schedule = Schedule::cosine;
            else if (*v == "constant") base.schedule = Schedule::constant;
            else throw ConfigError("train: unknown schedule '" + *v + "'");
        }
        if (auto v = s.get("optimizer")) {
            if (*v == "adam") base.optimizer = OptimizerKind::adam;
            else if (*v == "sgd") base.optimizer = OptimizerKind::sgd;
            else throw ConfigError("train: unknown optimizer '" + *v + "'");
        }
        if (auto v = s.get("momentum")) base.momentum = ini::to_double(*v, "momentum");
        if (auto v = s.get("ensemble_size")) base.ensemble_size = ini::to_uint(*v, "ensemble_size");
        return base;
    }
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay) or SGD with momentum.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::span<Parameter* const> params, double momentum = 0.9)
        : kind_(kind), momentum_(momentum) {
        for (auto* p : params) {
            first_.emplace_back(p->value.shape());
            if (kind_ == OptimizerKind::adam) second_.emplace_back(p->value.shape());
        }
    }

    void step(std::span<Parameter* const> params, double lr) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto w = params[i]->value.values();
            const auto g = params[i]->grad.values();
            auto m = first_[i].values();
            if (kind_ == OptimizerKind::adam) {
                auto v = second_[i].values();
                for (std::size_t k = 0; k < w.size(); ++k) {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
                }
            } else {
                for (std::size_t k = 0; k < w.size(); ++k) {
                    m[k] = momentum_ * m[k] + g[k];
                    w[k] -= lr * m[k];
                }
            }
        }
    }

private:
    OptimizerKind kind_;
    double momentum_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> history;
    double initial_loss = 0.0;  // first batch, before any update
};

/// Rejects NEVER_SEEN samples and labels outside [0, C). Runs before epoch 0.
inline void audit_training_set(std::span<const Sample> samples, const LossSpec& spec) {
    for (const auto& s : samples) {
        if (s.role == ClassRole::never_seen)
            throw DatasetError("training set contains never-seen record " + std::to_string(s.record_id));
        if (s.role == ClassRole::known && (s.label < 0 || static_cast<std::size_t>(s.label) >= spec.known_classes))
            throw DatasetError("record " + std::to_string(s.record_id) + " has label " + std::to_string(s.label) +
                               " outside the " + std::to_string(spec.known_classes) + " known classes");
    }
}

/// Samples the strategy trains on: softmax thresholding sees known classes only.
inline std::vector<const Sample*> trainable_samples(std::span<const Sample> samples, const LossSpec& spec) {
    std::vector<const Sample*> out;
    for (const auto& s : samples)
        if (spec.strategy != Strategy::softmax_threshold || s.role == ClassRole::known) out.push_back(&s);
    return out;
}

inline TrainResult train(Model model, const TrainConfig& config, std::span<const Sample> train_set,
                         AccessLog* log = nullptr) {
    config.validate();
    audit_training_set(train_set, config.loss);
    if (model.output_count() != config.loss.output_count())
        throw TrainingError("train: " + std::string(to_string(config.loss.strategy)) + " needs " +
                            std::to_string(config.loss.output_count()) + " outputs, model has " +
                            std::to_string(model.output_count()));
    const auto pool = trainable_samples(train_set, config.loss);
    if (pool.empty()) throw TrainingError("train: empty training set");

    auto params = model.parameters();
    Optimizer optimizer(config.optimizer, params, config.momentum);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    // A trailing batch of one would give degenerate batch statistics; fold it
    // into the previous batch.
    const std::size_t bs = config.batch_size;
    std::size_t batches = (pool.size() + bs - 1) / bs;
    if (batches > 1 && pool.size() % bs == 1) --batches;
    const std::size_t total_steps = batches * config.epochs;
    const std::size_t c = config.loss.known_classes;

    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, counted = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t begin = b * bs;
            const std::size_t end = b + 1 == batches ? pool.size() : begin + bs;
            std::vector<const Sample*> batch;
            std::vector<LossTarget> targets;
            for (std::size_t k = begin; k < end; ++k) {
                const Sample* s = pool[order[k]];
                if (log) log->record(Phase::training, s->record_id);
                batch.push_back(s);
                targets.push_back({s->role, s->label});
            }
            for (auto* p : params) p->zero_grad();
            Tape tape;
            auto out = model.forward(tape, make_batch(batch, [](const Sample* s) -> const std::vector<double>& { return s->x; }), Mode::train);
            Var loss = batch_loss(out.logits, out.features, targets, config.loss);
            const double value = loss.value().item();
            if (!std::isfinite(value)) throw TrainingError("train: diverged at epoch " + std::to_string(epoch));
            if (step == 0) result.initial_loss = value;
            tape.backward(loss);
            optimizer.step(params, config.learning_rate_at(step, total_steps));
            ++step;
            loss_sum += value * static_cast<double>(batch.size());

            const auto& logits = out.logits.value();
            const std::size_t o = logits.dim(1);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const double* row = logits.data() + i * o;
                const auto arg = static_cast<std::size_t>(std::max_element(row, row + o) - row);
                if (batch[i]->role == ClassRole::known) {
                    ++counted;
                    correct += arg == static_cast<std::size_t>(batch[i]->label);
                } else if (config.loss.strategy == Strategy::background_class) {
                    ++counted;
                    correct += arg == c;
                }
            }
        }
        result.history.push_back(EpochLog{epoch, loss_sum / static_cast<double>(pool.size()),
                                          counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0});
    }
    result.model = std::move(model);
    return result;
}

/// Initialization and shuffle seeds of ensemble run `run`.
inline std::uint64_t run_seed(std::uint64_t seed, std::size_t run) { return derive_seed(seed, run); }

/// `config.ensemble_size` runs that differ only in their seeds.
inline std::vector<TrainResult> train_ensemble(const NetworkConfig& network, const TrainConfig& config,
                                               std::span<const Sample> train_set, AccessLog* log = nullptr) {
    config.validate();
    std::vector<TrainResult> runs;
    for (std::size_t r = 0; r < config.ensemble_size; ++r) {
        TrainConfig run_config = config;
        run_config.seed = run_seed(config.seed, r);
        NetworkConfig net = network;
        net.output_count = config.loss.output_count();
        runs.push_back(train(Model(net, derive_seed(run_config.seed, 0xC0FFEE)), run_config, train_set, log));
    }
    return runs;
}

/// Epochs at which the loss, averaged over a trailing window, went up.
inline std::vector<std::size_t> smoothed_loss_increases(std::span<const EpochLog> history, std::size_t window = 5) {
    std::vector<std::size_t> out;
    if (window == 0 || history.size() < window + 1) return out;
    auto mean = [&](std::size_t end) {
        double s = 0.0;
        for (std::size_t i = end - window; i < end; ++i) s += history[i].loss;
        return s / static_cast<double>(window);
    };
    for (std::size_t end = window + 1; end <= history.size(); ++end)
        if (mean(end) > mean(end - 1)) out.push_back(history[end - 1].epoch);
    return out;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax_rows: expected (n, m), got " + to_string(logits.shape()));
    const std::size_t n = logits.dim(0), m = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    return out;
}

/// Element-wise mean of equally shaped score matrices.
inline Tensor mean_scores(std::span<const Tensor> runs) {
    if (runs.empty()) throw TrainingError("mean_scores: no runs");
    Tensor out(runs.front().shape());
    for (const auto& s : runs) {
        if (s.shape() != out.shape()) throw TrainingError("mean_scores: runs disagree on shape");
        for (std::size_t i = 0; i < s.size(); ++i) out[i] += s[i];
    }
    const double inv = 1.0 / static_cast<double>(runs.size());
    for (auto& v : out.values()) v *= inv;
    return out;
}

struct EnsemblePrediction {
    std::vector<Tensor> run_scores;    // per-run softmax, (n, outputs)
    std::vector<Tensor> run_features;  // per-run deep features, (n, f)
    Tensor scores;                     // (1/R) sum of run_scores
};

inline EnsemblePrediction ensemble_predict(std::span<const Model> models, const Tensor& batch) {
    if (models.empty()) throw TrainingError("ensemble_predict: no models");
    const std::size_t outputs = models.front().output_count();
    for (const auto& m : models)
        if (m.output_count() != outputs) throw TrainingError("ensemble_predict: models disagree on output count");
    EnsemblePrediction out;
    for (const auto& m : models) {
        auto p = m.predict(batch);
        out.run_scores.push_back(softmax_rows(p.logits));
        out.run_features.push_back(std::move(p.features));
    }
    out.scores = mean_scores(out.run_scores);
    return out;
}

}  // namespace osr
