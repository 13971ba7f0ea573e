// Open-set training objectives.
//
// Four strategies share one network shape and differ in targets and loss:
//
//   softmax_threshold  cross entropy over C known classes; ignored samples
//                      are not used for training
//   background_class   cross entropy over C + 1 outputs; ignored samples
//                      target the extra slot C
//   entropic_open_set  known:   -log S_label
//                      ignored: -(1/C) sum_c log S_c
//   objectosphere      entropic + alpha * max(beta - |F|^2, 0) on known,
//                      entropic + alpha * |F|^2 on ignored
//
// Natural logarithms throughout. Never-seen samples are rejected everywhere.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "osr/dataset.hpp"
#include "osr/ini.hpp"
#include "osr/tensor.hpp"

namespace osr {

enum class Strategy { softmax_threshold, background_class, entropic_open_set, objectosphere };

inline constexpr Strategy all_strategies[] = {Strategy::softmax_threshold, Strategy::background_class,
                                              Strategy::entropic_open_set, Strategy::objectosphere};

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::softmax_threshold: return "softmax_threshold";
        case Strategy::background_class: return "background_class";
        case Strategy::entropic_open_set: return "entropic_open_set";
        case Strategy::objectosphere: return "objectosphere";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view text) {
    for (auto s : all_strategies)
        if (text == to_string(s)) return s;
    if (text == "softmax") return Strategy::softmax_threshold;
    if (text == "background") return Strategy::background_class;
    if (text == "entropic") return Strategy::entropic_open_set;
    throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

class LossError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct LossSpec {
    Strategy strategy = Strategy::softmax_threshold;
    double alpha = 0.0;  // objectosphere only
    double beta = 0.0;   // objectosphere only
    std::size_t known_classes = 2;

    std::size_t output_count() const {
        return strategy == Strategy::background_class ? known_classes + 1 : known_classes;
    }

    void validate() const {
        if (known_classes < 2) throw LossError("loss: at least two known classes required");
        if (!(alpha >= 0.0) || !(beta >= 0.0)) throw LossError("loss: alpha and beta must be non-negative");
    }

    /// The `[loss]` section of a training config. `known_classes` comes from the dataset.
    IniSection to_ini() const {
        IniSection s{"loss", {}};
        s.set("strategy", std::string(to_string(strategy)));
        s.set("alpha", ini::format(alpha));
        s.set("beta", ini::format(beta));
        return s;
    }

    static LossSpec from_ini(const IniSection& s) { return from_ini(s, LossSpec{}); }

    static LossSpec from_ini(const IniSection& s, LossSpec base) {
        if (auto v = s.get("strategy")) base.strategy = parse_strategy(*v);
        if (auto v = s.get("alpha")) base.alpha = ini::to_double(*v, "alpha");
        if (auto v = s.get("beta")) base.beta = ini::to_double(*v, "beta");
        return base;
    }
};

namespace detail {

inline void require_trainable(ClassRole role) {
    if (role == ClassRole::never_seen) throw LossError("loss: unknowns are test-only");
}

}  // namespace detail

/// -log S_label.
inline double cross_entropy(std::span<const double> scores, std::size_t label) {
    if (label >= scores.size())
        throw LossError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                        std::to_string(scores.size()) + " classes");
    return -std::log(scores[label]);
}

inline double entropic_open_set_loss(std::span<const double> scores, ClassRole role, int label) {
    detail::require_trainable(role);
    if (role == ClassRole::known) {
        if (label < 0) throw LossError("entropic_open_set_loss: known sample without a label");
        return cross_entropy(scores, static_cast<std::size_t>(label));
    }
    double s = 0.0;
    for (double p : scores) s += std::log(p);
    return -s / static_cast<double>(scores.size());
}

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double objectosphere_loss(std::span<const double> scores, std::span<const double> feature, ClassRole role,
                                 int label, double alpha, double beta) {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw LossError("objectosphere_loss: alpha and beta must be non-negative");
    const double base = entropic_open_set_loss(scores, role, label);
    const double sq = squared_norm(feature);
    const double penalty = role == ClassRole::known ? std::max(beta - sq, 0.0) : sq;
    return base + alpha * penalty;
}

/// One-hot target of length C + 1; ignored samples take slot C.
inline std::vector<double> background_class_encode(ClassRole role, int label, std::size_t known_classes) {
    detail::require_trainable(role);
    std::vector<double> target(known_classes + 1, 0.0);
    if (role == ClassRole::ignored) {
        target[known_classes] = 1.0;
    } else {
        if (label < 0 || static_cast<std::size_t>(label) >= known_classes)
            throw LossError("background_class_encode: label " + std::to_string(label) + " out of range");
        target[static_cast<std::size_t>(label)] = 1.0;
    }
    return target;
}

struct LossTarget {
    ClassRole role = ClassRole::known;
    int label = -1;
};

/// Row-major (n, outputs) soft-target matrix whose rows weight -log S.
inline Tensor target_weights(std::span<const LossTarget> targets, const LossSpec& spec) {
    const std::size_t c = spec.known_classes, o = spec.output_count();
    Tensor t({targets.size(), o});
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& tg = targets[i];
        detail::require_trainable(tg.role);
        if (tg.role == ClassRole::known && (tg.label < 0 || static_cast<std::size_t>(tg.label) >= c))
            throw LossError("loss: label " + std::to_string(tg.label) + " out of range for " + std::to_string(c) +
                            " known classes");
        switch (spec.strategy) {
            case Strategy::softmax_threshold:
                if (tg.role != ClassRole::known) throw LossError("softmax_threshold: trains on known samples only");
                t[i * o + static_cast<std::size_t>(tg.label)] = 1.0;
                break;
            case Strategy::background_class: {
                const auto row = background_class_encode(tg.role, tg.label, c);
                std::copy(row.begin(), row.end(), t.data() + i * o);
                break;
            }
            case Strategy::entropic_open_set:
            case Strategy::objectosphere:
                if (tg.role == ClassRole::known) t[i * o + static_cast<std::size_t>(tg.label)] = 1.0;
                else
                    for (std::size_t j = 0; j < c; ++j) t[i * o + j] = 1.0 / static_cast<double>(c);
                break;
        }
    }
    return t;
}

/// Mean loss over the batch, recorded on the logits' tape.
inline Var batch_loss(Var logits, Var features, std::span<const LossTarget> targets, const LossSpec& spec) {
    spec.validate();
    const std::size_t n = targets.size();
    if (logits.shape() != Shape{n, spec.output_count()})
        throw ShapeError("batch_loss: logits " + to_string(logits.shape()) + " do not match " + std::to_string(n) +
                         " targets x " + std::to_string(spec.output_count()) + " outputs");
    Tape& tape = logits.tape();
    const double inv_n = 1.0 / static_cast<double>(n);
    Var weights = tape.constant(target_weights(targets, spec));
    Var loss = scale(sum(multiply(weights, log_softmax(logits))), -inv_n);
    if (spec.strategy != Strategy::objectosphere) return loss;

    if (features.shape().size() != 2 || features.shape()[0] != n)
        throw ShapeError("batch_loss: features " + to_string(features.shape()) + " do not match the batch");
    Tensor known_mask({n}), ignored_mask({n});
    for (std::size_t i = 0; i < n; ++i) (targets[i].role == ClassRole::known ? known_mask : ignored_mask)[i] = 1.0;
    Var sq = row_sum(square(features));
    Var hinge = relu(add_constant(scale(sq, -1.0), spec.beta));
    Var penalty = add(sum(multiply(tape.constant(std::move(known_mask)), hinge)),
                      sum(multiply(tape.constant(std::move(ignored_mask)), sq)));
    return add(loss, scale(penalty, spec.alpha * inv_n));
}

}  // namespace osr
