// Grid search over the objectosphere weights (alpha, beta).
#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "osr/evaluation.hpp"
#include "osr/network.hpp"
#include "osr/training.hpp"

namespace osr {

struct GridPoint {
    double alpha = 0.0;
    double beta = 0.0;
};

struct TuningRow {
    GridPoint point;
    OperatingPoint operating;  // on the validation set
};

struct TuningResult {
    std::size_t best = 0;
    std::vector<TuningRow> table;

    const TuningRow& best_row() const { return table.at(best); }
};

namespace detail {

// Strict weak "better than" for tuning rows: reaching zero FP on ignored
// samples first, then fewer inconclusive (or, without zero FP, fewer FP),
// then smaller alpha, then smaller beta.
inline bool tuning_better(const TuningRow& a, const TuningRow& b) {
    if (a.operating.fp_free != b.operating.fp_free) return a.operating.fp_free;
    const auto key = [](const TuningRow& r) {
        return r.operating.fp_free ? r.operating.row.inconclusive_rate.value_or(0.0)
                                   : r.operating.row.fp_ignored.value_or(0.0);
    };
    if (key(a) != key(b)) return key(a) < key(b);
    if (!a.operating.fp_free) {
        const double ia = a.operating.row.inconclusive_rate.value_or(0.0);
        const double ib = b.operating.row.inconclusive_rate.value_or(0.0);
        if (ia != ib) return ia < ib;
    }
    if (a.point.alpha != b.point.alpha) return a.point.alpha < b.point.alpha;
    return a.point.beta < b.point.beta;
}

}  // namespace detail

/// Trains one objectosphere ensemble per grid point on `train_set` and picks
/// the point whose validation operating point has the fewest inconclusive
/// known samples at zero false positives on ignored samples.
inline TuningResult tune_alpha_beta(std::span<const GridPoint> grid, const NetworkConfig& network,
                                    const TrainConfig& config, std::span<const Sample> train_set,
                                    std::span<const Sample> validation, std::span<const double> thresholds,
                                    AccessLog* log = nullptr) {
    if (grid.empty()) throw std::invalid_argument("tune_alpha_beta: empty grid");
    if (thresholds.empty()) throw std::invalid_argument("tune_alpha_beta: empty cutoff grid");
    for (const auto& s : validation)
        if (s.role == ClassRole::never_seen)
            throw DatasetError("tune_alpha_beta: validation contains never-seen record " + std::to_string(s.record_id));

    TuningResult result;
    for (const auto& p : grid) {
        TrainConfig c = config;
        c.loss.strategy = Strategy::objectosphere;
        c.loss.alpha = p.alpha;
        c.loss.beta = p.beta;
        auto runs = train_ensemble(network, c, train_set, log);
        std::vector<Model> models;
        for (auto& r : runs) models.push_back(std::move(r.model));
        const auto sweep = threshold_sweep(score(models, validation, Strategy::objectosphere), thresholds);
        result.table.push_back({p, select_operating_point(sweep)});
    }
    for (std::size_t i = 1; i < result.table.size(); ++i)
        if (detail::tuning_better(result.table[i], result.table[result.best])) result.best = i;
    return result;
}

}  // namespace osr
