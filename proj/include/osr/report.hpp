// CSV and text output for evaluation results. Numbers are written in the
// shortest form that reads back to the same double; absent metrics are "NA".
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "osr/evaluation.hpp"
#include "osr/spectra.hpp"
#include "osr/training.hpp"

namespace osr {

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace report {

inline std::string num(double v) { return detail::format_double(v); }
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

inline std::string percent(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * *v);
    return buf;
}

/// Class names by class id; falls back to the numeric id.
inline std::string class_name(std::span<const std::string> names, std::size_t id) {
    return id < names.size() ? names[id] : std::to_string(id);
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation; zero for fewer than two values.
inline double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace report

inline void write_metrics_csv(std::ostream& out, const EvalReport& r) {
    out << "metric,value\n";
    out << "strategy," << to_string(r.strategy) << '\n';
    out << "threshold," << report::num(r.threshold) << '\n';
    out << "known_count," << r.known_count << '\n';
    out << "ignored_count," << r.ignored_count << '\n';
    out << "never_seen_count," << r.never_seen_count << '\n';
    out << "accuracy," << report::num(r.accuracy) << '\n';
    out << "wrong_rate," << report::num(r.wrong_rate) << '\n';
    out << "inconclusive_rate," << report::num(r.inconclusive_rate) << '\n';
    out << "fp_ignored," << report::num(r.fp_ignored) << '\n';
    out << "fp_never_seen," << report::num(r.fp_never_seen) << '\n';
    out << "closed_set_accuracy," << report::num(r.closed_set_accuracy) << '\n';
    if (!r.run_accuracy.empty()) {
        out << "run_accuracy_mean," << report::num(report::mean(r.run_accuracy)) << '\n';
        out << "run_accuracy_std," << report::num(report::stddev(r.run_accuracy)) << '\n';
        for (std::size_t i = 0; i < r.run_accuracy.size(); ++i)
            out << "run_accuracy_" << i << ',' << report::num(r.run_accuracy[i]) << '\n';
    }
    for (const auto& f : r.feature_norms) out << "mean_feature_norm_" << to_string(f.role) << ',' << report::num(f.mean) << '\n';
}

/// One row per test class. `class_names` is indexed by class id,
/// `known_names` by known label.
inline void write_confusion_csv(std::ostream& out, const EvalReport& r, std::span<const std::string> class_names = {},
                                std::span<const std::string> known_names = {}) {
    out << "class,role";
    for (std::size_t c = 0; c < r.confusion.known_classes; ++c) out << ',' << report::class_name(known_names, c);
    out << ",reject,total\n";
    for (const auto& row : r.confusion.rows) {
        out << report::class_name(class_names, row.class_id) << ',' << to_string(row.role);
        for (auto v : row.counts) out << ',' << v;
        out << ',' << row.total() << '\n';
    }
}

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "threshold,fp_never_seen,fp_ignored,inconclusive_rate,accuracy,wrong_rate\n";
    for (const auto& r : rows)
        out << report::num(r.threshold) << ',' << report::num(r.fp_never_seen) << ',' << report::num(r.fp_ignored)
            << ',' << report::num(r.inconclusive_rate) << ',' << report::num(r.accuracy) << ','
            << report::num(r.wrong_rate) << '\n';
}

/// Bin `histogram_bins` is the overflow bin, with upper edge "inf".
inline void write_histogram_csv(std::ostream& out, std::span<const FeatureNormStats> stats) {
    out << "role,bin,lower,upper,count\n";
    for (const auto& s : stats)
        for (std::size_t b = 0; b < s.histogram.size(); ++b) {
            const bool overflow = b == histogram_bins;
            out << to_string(s.role) << ',' << b << ','
                << report::num(overflow ? s.upper : s.bin_width() * static_cast<double>(b)) << ','
                << (overflow ? std::string("inf") : report::num(s.bin_width() * static_cast<double>(b + 1))) << ','
                << s.histogram[b] << '\n';
        }
}

/// Deep features of every run, for external embedding tools.
inline void write_features_csv(std::ostream& out, const ScoredSet& set) {
    if (set.run_features.empty()) throw ReportError("write_features_csv: no features");
    const std::size_t f = set.run_features.front().dim(1);
    out << "record_id,class,role,run";
    for (std::size_t j = 0; j < f; ++j) out << ",f" << j;
    out << '\n';
    for (std::size_t r = 0; r < set.run_features.size(); ++r)
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto& s = set.samples[i];
            out << s.record_id << ',' << s.class_id << ',' << to_string(s.role) << ',' << r;
            for (std::size_t j = 0; j < f; ++j) out << ',' << report::num(set.run_features[r][i * f + j]);
            out << '\n';
        }
}

inline void write_training_log_csv(std::ostream& out, std::span<const EpochLog> history) {
    out << "epoch,loss,train_accuracy\n";
    for (const auto& e : history)
        out << e.epoch << ',' << report::num(e.loss) << ',' << report::num(e.train_accuracy) << '\n';
}

/// Published reference operating points, for orientation only; they were
/// measured on a real Raman dataset and are not expected on synthetic data.
struct ReferencePoint {
    Strategy strategy;
    double threshold;
    double fp;
    double inconclusive;
};

inline constexpr ReferencePoint reference_points[] = {
    {Strategy::softmax_threshold, 0.99, 0.100, 0.070},
    {Strategy::entropic_open_set, 0.93, 0.0, 0.0237},
    {Strategy::objectosphere, 0.91, 0.0, 0.0026},
};

inline void write_summary(std::ostream& out, const EvalReport& r, const std::optional<OperatingPoint>& op = std::nullopt) {
    out << "strategy            " << to_string(r.strategy) << '\n';
    out << "cutoff              " << report::num(r.threshold);
    if (op && !op->fp_free) out << "  (no cutoff reached zero false positives on ignored classes)";
    out << '\n';
    out << "test samples        known " << r.known_count << ", ignored " << r.ignored_count << ", never seen "
        << r.never_seen_count << '\n';
    out << "known accuracy      " << report::percent(r.accuracy) << '\n';
    out << "wrong outcomes      " << report::percent(r.wrong_rate) << '\n';
    out << "inconclusive        " << report::percent(r.inconclusive_rate) << '\n';
    out << "FP on ignored       " << report::percent(r.fp_ignored) << '\n';
    out << "FP on never seen    " << report::percent(r.fp_never_seen) << '\n';
    out << "closed-set accuracy " << report::percent(r.closed_set_accuracy) << '\n';
    if (!r.run_accuracy.empty()) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.2f%% +- %.2f%% over %zu runs", 100.0 * report::mean(r.run_accuracy),
                      100.0 * report::stddev(r.run_accuracy), r.run_accuracy.size());
        out << "per-run accuracy    " << buf << '\n';
    }
    for (const auto& f : r.feature_norms)
        out << "mean |F|, " << to_string(f.role) << ": " << report::num(f.mean) << '\n';
    for (const auto& p : reference_points)
        if (p.strategy == r.strategy)
            out << "reference           cutoff " << report::num(p.threshold) << ": FP " << report::percent(p.fp)
                << ", inconclusive " << report::percent(p.inconclusive) << " (real Raman data)\n";
}

struct ComparisonRow {
    Strategy strategy;
    OperatingPoint point;
    EvalReport report;
    std::vector<SweepRow> sweep;
};

/// Inconclusive budget shared by every strategy in the matched comparison:
/// the objectosphere inconclusive rate at its selected operating point.
inline std::optional<double> matched_target(std::span<const ComparisonRow> rows) {
    for (const auto& r : rows)
        if (r.strategy == Strategy::objectosphere) return r.point.row.inconclusive_rate;
    return std::nullopt;
}

/// The strategy's sweep row with the largest cutoff whose inconclusive rate
/// stays within `target`; FP rates are lowest there for that budget.
inline std::optional<SweepRow> matched_row(const ComparisonRow& r, std::optional<double> target) {
    if (!target) return std::nullopt;
    const auto i = row_at_inconclusive(r.sweep, *target);
    if (!i) return std::nullopt;
    return r.sweep[*i];
}

/// One row per strategy at its selected operating point, followed by the
/// matched-inconclusive columns.
inline void write_comparison_csv(std::ostream& out, std::span<const ComparisonRow> rows) {
    out << "strategy,threshold,fp_free,fp_ignored,fp_never_seen,inconclusive_rate,accuracy,wrong_rate,"
           "closed_set_accuracy,matched_threshold,matched_inconclusive_rate,matched_fp_never_seen\n";
    const auto target = matched_target(rows);
    for (const auto& r : rows) {
        const auto m = matched_row(r, target);
        out << to_string(r.strategy) << ',' << report::num(r.point.row.threshold) << ','
            << (r.point.fp_free ? "yes" : "no") << ',' << report::num(r.report.fp_ignored) << ','
            << report::num(r.report.fp_never_seen) << ',' << report::num(r.report.inconclusive_rate) << ','
            << report::num(r.report.accuracy) << ',' << report::num(r.report.wrong_rate) << ','
            << report::num(r.report.closed_set_accuracy) << ',' << (m ? report::num(m->threshold) : "NA") << ','
            << (m ? report::num(m->inconclusive_rate) : "NA") << ',' << (m ? report::num(m->fp_never_seen) : "NA")
            << '\n';
    }
}

inline void write_comparison_text(std::ostream& out, std::span<const ComparisonRow> rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-18s %7s %10s %13s %13s %10s\n", "strategy", "cutoff", "FP ignored",
                  "FP never seen", "inconclusive", "accuracy");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-18s %7.2f %10s %13s %13s %10s%s\n", std::string(to_string(r.strategy)).c_str(),
                      r.point.row.threshold, report::percent(r.report.fp_ignored).c_str(),
                      report::percent(r.report.fp_never_seen).c_str(),
                      report::percent(r.report.inconclusive_rate).c_str(), report::percent(r.report.accuracy).c_str(),
                      r.point.fp_free ? "" : "  *");
        out << buf;
    }
    bool flagged = false;
    for (const auto& r : rows) flagged = flagged || !r.point.fp_free;
    if (flagged) out << "* no cutoff reached zero false positives on ignored classes\n";

    const auto target = matched_target(rows);
    if (!target) return;
    out << "\nat matched inconclusive rate <= " << report::percent(target) << " (largest cutoff within the budget)\n";
    std::snprintf(buf, sizeof buf, "%-18s %7s %10s %13s %13s\n", "strategy", "cutoff", "FP ignored", "FP never seen",
                  "inconclusive");
    out << buf;
    for (const auto& r : rows) {
        const auto m = matched_row(r, target);
        if (!m) {
            std::snprintf(buf, sizeof buf, "%-18s %7s\n", std::string(to_string(r.strategy)).c_str(), "none");
        } else {
            std::snprintf(buf, sizeof buf, "%-18s %7.2f %10s %13s %13s\n", std::string(to_string(r.strategy)).c_str(),
                          m->threshold, report::percent(m->fp_ignored).c_str(),
                          report::percent(m->fp_never_seen).c_str(), report::percent(m->inconclusive_rate).c_str());
        }
        out << buf;
    }
}

/// Opens `path` for writing or throws naming it.
inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ReportError("cannot write " + path.string());
    return out;
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
    auto out = open_output(path);
    writer(out);
    if (!out) throw ReportError("write failed: " + path.string());
}

}  // namespace osr
