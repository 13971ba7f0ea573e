// Open-set decisions and metrics.
//
// A sample is accepted as argmax of its (ensemble-averaged) softmax scores
// when the maximum score reaches the cutoff lambda, and rejected otherwise.
// For the background-class strategy a sample is rejected when the background
// slot wins; otherwise the cutoff applies to the known scores renormalized
// to sum to one.
//
// Metrics on the known partition (accuracy, wrong outcome, inconclusive) sum
// to one. False positives are accepted samples of the ignored or never-seen
// partitions. A metric whose partition is empty is absent, not zero.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "osr/dataset.hpp"
#include "osr/losses.hpp"
#include "osr/network.hpp"
#include "osr/training.hpp"

namespace osr {

class EvaluationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Decision {
    bool accepted = false;
    std::size_t class_id = 0;  // index among known classes; meaningful when accepted

    static Decision accept(std::size_t c) { return {true, c}; }
    static Decision reject() { return {false, 0}; }

    bool operator==(const Decision&) const = default;
};

namespace detail {

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline void require_probabilities(std::span<const double> scores) {
    if (scores.size() < 2) throw EvaluationError("decide: need at least two scores");
    double total = 0.0;
    for (double p : scores) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw EvaluationError("decide: scores must be finite and non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw EvaluationError("decide: scores do not sum to one");
}

inline void require_cutoff(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw EvaluationError("decide: cutoff " + std::to_string(lambda) + " outside [0, 1]");
}

// Decision without input validation; `lambda` already in [0, 1].
inline Decision decide_unchecked(std::span<const double> scores, double lambda, Strategy strategy) {
    if (strategy == Strategy::background_class) {
        const std::size_t c = scores.size() - 1;
        const std::size_t arg = argmax(scores);
        if (arg == c) return Decision::reject();
        double known_mass = 0.0;
        for (std::size_t j = 0; j < c; ++j) known_mass += scores[j];
        if (!(known_mass > 0.0)) return Decision::reject();
        return scores[arg] / known_mass >= lambda ? Decision::accept(arg) : Decision::reject();
    }
    const std::size_t arg = argmax(scores);
    return scores[arg] >= lambda ? Decision::accept(arg) : Decision::reject();
}

}  // namespace detail

/// Background-class scores have C + 1 entries with the background slot last.
inline Decision decide(std::span<const double> scores, double lambda, Strategy strategy) {
    detail::require_cutoff(lambda);
    detail::require_probabilities(scores);
    if (strategy == Strategy::background_class && scores.size() < 3)
        throw EvaluationError("decide: background class needs at least two known scores plus the background");
    return detail::decide_unchecked(scores, lambda, strategy);
}

/// The unthresholded class: argmax over the known scores only.
inline std::size_t closed_set_class(std::span<const double> scores, Strategy strategy) {
    const std::size_t c = strategy == Strategy::background_class ? scores.size() - 1 : scores.size();
    return detail::argmax(scores.first(c));
}

// ---------------------------------------------------------------------------
// Scoring

struct ScoredSample {
    std::size_t record_id = 0;
    std::size_t class_id = 0;
    ClassRole role = ClassRole::known;
    int label = -1;
};

/// Ensemble scores of a test set, computed once and reused across cutoffs.
struct ScoredSet {
    Strategy strategy = Strategy::softmax_threshold;
    std::size_t known_classes = 0;
    std::vector<ScoredSample> samples;
    Tensor scores;                      // (n, outputs), mean over runs
    std::vector<Tensor> run_scores;     // per run, (n, outputs)
    std::vector<Tensor> run_features;   // per run, (n, feature_dim)
    std::vector<double> feature_norms;  // per sample, mean of ||F|| over runs

    std::size_t size() const noexcept { return samples.size(); }
    std::size_t outputs() const { return scores.dim(1); }
    std::span<const double> row(std::size_t i) const { return scores.values().subspan(i * outputs(), outputs()); }
};

inline ScoredSet score(std::span<const Model> models, std::span<const Sample> samples, Strategy strategy) {
    if (samples.empty()) throw EvaluationError("score: empty test set");
    if (models.empty()) throw EvaluationError("score: no models");
    const std::size_t outputs = models.front().output_count();
    const std::size_t c = strategy == Strategy::background_class ? outputs - 1 : outputs;
    if (c < 2)
        throw EvaluationError("score: " + std::string(to_string(strategy)) + " with " + std::to_string(outputs) +
                              " outputs leaves fewer than two known classes");
    for (const auto& s : samples)
        if (s.role == ClassRole::known && (s.label < 0 || static_cast<std::size_t>(s.label) >= c))
            throw EvaluationError("score: record " + std::to_string(s.record_id) + " has label " +
                                  std::to_string(s.label) + " but the model knows " + std::to_string(c) + " classes");

    auto pred = ensemble_predict(models, make_batch(samples, [](const Sample& s) -> const std::vector<double>& { return s.x; }));
    ScoredSet out;
    out.strategy = strategy;
    out.known_classes = c;
    for (const auto& s : samples) out.samples.push_back({s.record_id, s.class_id, s.role, s.label});
    out.scores = std::move(pred.scores);
    out.run_scores = std::move(pred.run_scores);
    out.run_features = std::move(pred.run_features);
    out.feature_norms.assign(samples.size(), 0.0);
    for (const auto& f : out.run_features) {
        const auto norms = feature_norm(f);
        for (std::size_t i = 0; i < norms.size(); ++i) out.feature_norms[i] += norms[i];
    }
    for (auto& v : out.feature_norms) v /= static_cast<double>(out.run_features.size());
    return out;
}

// ---------------------------------------------------------------------------
// Feature norms

inline constexpr std::size_t histogram_bins = 50;

/// Histogram of ||F|| for one role: `histogram_bins` uniform bins on
/// [0, upper] followed by one overflow bin for values above `upper`.
struct FeatureNormStats {
    ClassRole role = ClassRole::known;
    std::size_t count = 0;
    double mean = 0.0;
    double upper = 0.0;
    std::vector<std::size_t> histogram;  // histogram_bins + 1 entries

    double bin_width() const { return upper / static_cast<double>(histogram_bins); }
};

/// Nearest-rank percentile, q in (0, 1].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw EvaluationError("percentile: no values");
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

inline std::size_t histogram_bin(double value, double upper) {
    if (value > upper) return histogram_bins;
    if (upper <= 0.0) return 0;
    return std::min(histogram_bins - 1, static_cast<std::size_t>(value / upper * static_cast<double>(histogram_bins)));
}

/// Per-role statistics; the bin range is the 99th percentile of all norms
/// pooled over roles, so the histograms share bins. Empty roles are omitted.
inline std::vector<FeatureNormStats> feature_norm_stats(std::span<const double> norms, std::span<const ClassRole> roles) {
    if (norms.size() != roles.size()) throw EvaluationError("feature_norm_stats: norms and roles differ in length");
    std::vector<FeatureNormStats> out;
    if (norms.empty()) return out;
    const double upper = percentile(std::vector<double>(norms.begin(), norms.end()), 0.99);
    for (ClassRole role : {ClassRole::known, ClassRole::ignored, ClassRole::never_seen}) {
        FeatureNormStats st{role, 0, 0.0, upper, std::vector<std::size_t>(histogram_bins + 1, 0)};
        double sum = 0.0;
        for (std::size_t i = 0; i < norms.size(); ++i) {
            if (roles[i] != role) continue;
            ++st.count;
            sum += norms[i];
            ++st.histogram[histogram_bin(norms[i], upper)];
        }
        if (st.count == 0) continue;
        st.mean = sum / static_cast<double>(st.count);
        out.push_back(std::move(st));
    }
    return out;
}

inline std::vector<FeatureNormStats> feature_norm_stats(const ScoredSet& set) {
    std::vector<ClassRole> roles;
    for (const auto& s : set.samples) roles.push_back(s.role);
    return feature_norm_stats(set.feature_norms, roles);
}

inline const FeatureNormStats* find_role(std::span<const FeatureNormStats> stats, ClassRole role) {
    for (const auto& s : stats)
        if (s.role == role) return &s;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Reports

/// Rows are the classes present in the test set (ascending class id);
/// columns are the C known classes followed by one reject column.
struct ConfusionTable {
    struct Row {
        std::size_t class_id = 0;
        ClassRole role = ClassRole::known;
        std::vector<std::size_t> counts;

        std::size_t total() const {
            std::size_t n = 0;
            for (auto v : counts) n += v;
            return n;
        }
    };
    std::size_t known_classes = 0;
    std::vector<Row> rows;
};

struct EvalReport {
    Strategy strategy = Strategy::softmax_threshold;
    double threshold = 0.0;
    std::size_t known_count = 0;
    std::size_t ignored_count = 0;
    std::size_t never_seen_count = 0;

    std::optional<double> accuracy;           // correct accepts / |K|
    std::optional<double> wrong_rate;         // wrong accepts / |K|
    std::optional<double> inconclusive_rate;  // rejects / |K|
    std::optional<double> fp_never_seen;      // accepts / |N|
    std::optional<double> fp_ignored;         // accepts / |I|
    std::optional<double> closed_set_accuracy;  // argmax over known scores, no rejection
    std::vector<double> run_accuracy;          // per-run accuracy at the same cutoff

    ConfusionTable confusion;
    std::vector<FeatureNormStats> feature_norms;
};

namespace detail {

inline std::optional<double> rate(std::size_t hits, std::size_t total) {
    if (total == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(total);
}

inline double clamp_cutoff(double lambda) { return std::clamp(lambda, 0.0, 1.0); }

struct Tally {
    std::size_t known = 0, correct = 0, wrong = 0, rejected = 0;
    std::size_t ignored = 0, ignored_accepted = 0;
    std::size_t never_seen = 0, never_seen_accepted = 0;
};

inline Tally tally(const ScoredSet& set, const Tensor& scores, double lambda) {
    Tally t;
    const std::size_t o = scores.dim(1);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& s = set.samples[i];
        const auto d = decide_unchecked(scores.values().subspan(i * o, o), lambda, set.strategy);
        switch (s.role) {
            case ClassRole::known:
                ++t.known;
                if (!d.accepted) ++t.rejected;
                else if (d.class_id == static_cast<std::size_t>(s.label)) ++t.correct;
                else ++t.wrong;
                break;
            case ClassRole::ignored:
                ++t.ignored;
                t.ignored_accepted += d.accepted;
                break;
            case ClassRole::never_seen:
                ++t.never_seen;
                t.never_seen_accepted += d.accepted;
                break;
        }
    }
    return t;
}

}  // namespace detail

/// Metrics at cutoff `lambda` (must lie in [0, 1]) over the ensemble scores.
inline EvalReport evaluate(const ScoredSet& set, double lambda) {
    detail::require_cutoff(lambda);
    const auto t = detail::tally(set, set.scores, lambda);

    EvalReport r;
    r.strategy = set.strategy;
    r.threshold = lambda;
    r.known_count = t.known;
    r.ignored_count = t.ignored;
    r.never_seen_count = t.never_seen;
    r.accuracy = detail::rate(t.correct, t.known);
    r.wrong_rate = detail::rate(t.wrong, t.known);
    r.inconclusive_rate = detail::rate(t.rejected, t.known);
    r.fp_ignored = detail::rate(t.ignored_accepted, t.ignored);
    r.fp_never_seen = detail::rate(t.never_seen_accepted, t.never_seen);

    std::size_t closed_correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (set.samples[i].role == ClassRole::known &&
            closed_set_class(set.row(i), set.strategy) == static_cast<std::size_t>(set.samples[i].label))
            ++closed_correct;
    r.closed_set_accuracy = detail::rate(closed_correct, t.known);

    if (t.known > 0)
        for (const auto& scores : set.run_scores) r.run_accuracy.push_back(*detail::rate(detail::tally(set, scores, lambda).correct, t.known));

    const std::size_t c = set.known_classes;
    r.confusion.known_classes = c;
    std::vector<std::size_t> order(set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return set.samples[a].class_id < set.samples[b].class_id; });
    for (std::size_t i : order) {
        const auto& s = set.samples[i];
        if (r.confusion.rows.empty() || r.confusion.rows.back().class_id != s.class_id)
            r.confusion.rows.push_back({s.class_id, s.role, std::vector<std::size_t>(c + 1, 0)});
        const auto d = detail::decide_unchecked(set.row(i), lambda, set.strategy);
        ++r.confusion.rows.back().counts[d.accepted ? d.class_id : c];
    }

    r.feature_norms = feature_norm_stats(set);
    return r;
}

inline EvalReport evaluate(std::span<const Model> models, std::span<const Sample> test_set, double lambda,
                           Strategy strategy) {
    detail::require_cutoff(lambda);
    return evaluate(score(models, test_set, strategy), lambda);
}

// ---------------------------------------------------------------------------
// Threshold sweeps

struct SweepRow {
    double threshold = 0.0;
    std::optional<double> fp_never_seen;
    std::optional<double> fp_ignored;
    std::optional<double> inconclusive_rate;
    std::optional<double> accuracy;
    std::optional<double> wrong_rate;
};

/// 0.00, 0.01, ..., 1.00.
inline std::vector<double> default_threshold_grid() {
    std::vector<double> grid(101);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 100.0;
    return grid;
}

/// One row per cutoff. Cutoffs outside [0, 1] are clamped to the nearest end.
inline std::vector<SweepRow> threshold_sweep(const ScoredSet& set, std::span<const double> grid) {
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] >= grid[i - 1])) throw EvaluationError("threshold_sweep: grid must be ascending");
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (double lambda : grid) {
        if (std::isnan(lambda)) throw EvaluationError("threshold_sweep: NaN cutoff");
        const auto t = detail::tally(set, set.scores, detail::clamp_cutoff(lambda));
        rows.push_back(SweepRow{lambda, detail::rate(t.never_seen_accepted, t.never_seen),
                                detail::rate(t.ignored_accepted, t.ignored), detail::rate(t.rejected, t.known),
                                detail::rate(t.correct, t.known), detail::rate(t.wrong, t.known)});
    }
    return rows;
}

inline std::vector<SweepRow> threshold_sweep(std::span<const Model> models, std::span<const Sample> test_set,
                                             std::span<const double> grid, Strategy strategy) {
    return threshold_sweep(score(models, test_set, strategy), grid);
}

struct OperatingPoint {
    std::size_t index = 0;
    SweepRow row;
    bool fp_free = true;  // false when no row reaches zero FP on the ignored partition
};

/// The cutoff with zero false positives on the ignored partition and the
/// fewest inconclusive known samples, the smallest cutoff on ties. When no
/// row reaches zero, the row with the fewest such false positives instead.
/// The never-seen columns are not consulted.
inline OperatingPoint select_operating_point(std::span<const SweepRow> table) {
    if (table.empty()) throw EvaluationError("select_operating_point: empty sweep table");
    auto fp = [](const SweepRow& r) { return r.fp_ignored.value_or(0.0); };
    auto inconclusive = [](const SweepRow& r) { return r.inconclusive_rate.value_or(0.0); };

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (fp(table[i]) != 0.0) continue;
        if (!best || inconclusive(table[i]) < inconclusive(table[*best]) ||
            (inconclusive(table[i]) == inconclusive(table[*best]) && table[i].threshold < table[*best].threshold))
            best = i;
    }
    if (best) return {*best, table[*best], true};

    std::size_t pick = 0;
    for (std::size_t i = 1; i < table.size(); ++i)
        if (fp(table[i]) < fp(table[pick]) ||
            (fp(table[i]) == fp(table[pick]) && table[i].threshold < table[pick].threshold))
            pick = i;
    return {pick, table[pick], false};
}

/// The largest-cutoff row whose inconclusive rate does not exceed `target`;
/// used to compare strategies at a matched rate of inconclusive outcomes.
inline std::optional<std::size_t> row_at_inconclusive(std::span<const SweepRow> table, double target) {
    std::optional<std::size_t> out;
    for (std::size_t i = 0; i < table.size(); ++i)
        if (table[i].inconclusive_rate && *table[i].inconclusive_rate <= target &&
            (!out || table[i].threshold >= table[*out].threshold))
            out = i;
    return out;
}

}  // namespace osr
