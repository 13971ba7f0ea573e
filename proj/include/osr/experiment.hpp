// End-to-end runs driven by one INI config: dataset generation, ensemble
// training, evaluation, cutoff sweeps and the four-strategy comparison.
//
//   [run]      manifest, output, checkpoints (defaults to output), seed
//   [generate] per_class, bins, known, ignored, never_seen, noise, jitter,
//              train_fraction
//   [network]  see NetworkConfig (input_length and output_count are derived)
//   [train]    see TrainConfig
//   [loss]     strategy, alpha, beta
//   [eval]     threshold (a number, or "auto" for the selected operating
//              point), grid_step
//
// Every command writes the fully resolved config to <output>/config.ini.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "osr/dataset.hpp"
#include "osr/evaluation.hpp"
#include "osr/ini.hpp"
#include "osr/losses.hpp"
#include "osr/network.hpp"
#include "osr/report.hpp"
#include "osr/synthetic.hpp"
#include "osr/training.hpp"

namespace osr {

struct GenerateOptions {
    std::size_t per_class = 200;
    std::size_t bins = 1024;
    std::size_t known = 20;
    std::size_t ignored = 10;
    std::size_t never_seen = 10;
    double noise = 0.02;
    double jitter = 0.05;
    double train_fraction = 5.0 / 6.0;
};

struct EvalOptions {
    std::optional<double> threshold;  // nullopt: selected operating point
    double grid_step = 0.01;

    std::vector<double> grid() const {
        if (!(grid_step > 0.0 && grid_step <= 1.0)) throw ConfigError("eval: grid_step must lie in (0, 1]");
        const auto steps = static_cast<std::size_t>(std::llround(1.0 / grid_step));
        std::vector<double> out;
        for (std::size_t i = 0; i <= steps; ++i) out.push_back(std::min(1.0, static_cast<double>(i) / static_cast<double>(steps)));
        return out;
    }
};

struct RunConfig {
    std::filesystem::path manifest = "data/manifest.ini";
    std::filesystem::path output = "run";
    std::optional<std::filesystem::path> checkpoints;
    std::uint64_t seed = 1;
    GenerateOptions generate;
    NetworkConfig network;
    TrainConfig train = default_train();
    EvalOptions eval;

    /// Objectosphere weights default to alpha 0.1, beta 4.
    static TrainConfig default_train() {
        TrainConfig t;
        t.loss.alpha = 0.1;
        t.loss.beta = 4.0;
        return t;
    }

    std::filesystem::path checkpoint_dir() const { return checkpoints.value_or(output); }

    IniDocument to_ini() const {
        IniDocument doc;
        auto& run = doc.section("run");
        run.set("manifest", manifest.string());
        run.set("output", output.string());
        run.set("checkpoints", checkpoint_dir().string());
        run.set("seed", std::to_string(seed));
        auto& gen = doc.section("generate");
        gen.set("per_class", std::to_string(generate.per_class));
        gen.set("bins", std::to_string(generate.bins));
        gen.set("known", std::to_string(generate.known));
        gen.set("ignored", std::to_string(generate.ignored));
        gen.set("never_seen", std::to_string(generate.never_seen));
        gen.set("noise", ini::format(generate.noise));
        gen.set("jitter", ini::format(generate.jitter));
        gen.set("train_fraction", ini::format(generate.train_fraction));
        doc.sections.push_back(network.to_ini());
        doc.sections.push_back(train.to_ini());
        doc.sections.push_back(train.loss.to_ini());
        auto& ev = doc.section("eval");
        ev.set("threshold", eval.threshold ? ini::format(*eval.threshold) : "auto");
        ev.set("grid_step", ini::format(eval.grid_step));
        return doc;
    }

    static RunConfig from_ini(const IniDocument& doc) {
        RunConfig c;
        if (const auto* s = doc.find("run")) {
            if (auto v = s->get("manifest")) c.manifest = *v;
            if (auto v = s->get("output")) c.output = *v;
            if (auto v = s->get("checkpoints")) c.checkpoints = std::filesystem::path(*v);
            if (auto v = s->get("seed")) c.seed = ini::to_uint(*v, "seed");
        }
        if (const auto* s = doc.find("generate")) {
            auto& g = c.generate;
            if (auto v = s->get("per_class")) g.per_class = ini::to_uint(*v, "per_class");
            if (auto v = s->get("bins")) g.bins = ini::to_uint(*v, "bins");
            if (auto v = s->get("known")) g.known = ini::to_uint(*v, "known");
            if (auto v = s->get("ignored")) g.ignored = ini::to_uint(*v, "ignored");
            if (auto v = s->get("never_seen")) g.never_seen = ini::to_uint(*v, "never_seen");
            if (auto v = s->get("noise")) g.noise = ini::to_double(*v, "noise");
            if (auto v = s->get("jitter")) g.jitter = ini::to_double(*v, "jitter");
            if (auto v = s->get("train_fraction")) g.train_fraction = ini::to_double(*v, "train_fraction");
        }
        if (const auto* s = doc.find("network")) c.network = NetworkConfig::from_ini(*s, c.network);
        if (const auto* s = doc.find("train")) c.train = TrainConfig::from_ini(*s, c.train);
        if (const auto* s = doc.find("loss")) c.train.loss = LossSpec::from_ini(*s, c.train.loss);
        if (const auto* s = doc.find("eval")) {
            if (auto v = s->get("threshold")) {
                if (*v == "auto") c.eval.threshold.reset();
                else c.eval.threshold = ini::to_double(*v, "threshold");
            }
            if (auto v = s->get("grid_step")) c.eval.grid_step = ini::to_double(*v, "grid_step");
        }
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) { return from_ini(read_ini(path)); }

    void validate() const {
        if (eval.threshold && !(*eval.threshold >= 0.0 && *eval.threshold <= 1.0))
            throw ConfigError("eval: threshold must lie in [0, 1]");
        eval.grid();
        train.validate();
    }
};

namespace detail {

inline void prepare_output(const RunConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(config.output, ec);
    if (ec || !std::filesystem::is_directory(config.output))
        throw ReportError("cannot create output directory " + config.output.string());
    write_file(config.output / "config.ini", [&](std::ostream& out) { write_ini(out, config.to_ini()); });
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t run) {
    return dir / ("run_" + std::to_string(run) + ".ckpt");
}

inline std::vector<std::string> known_names(const DatasetManifest& m) {
    std::vector<std::string> out;
    for (const auto& c : m.classes)
        if (c.role == ClassRole::known) out.push_back(c.name);
    return out;
}

inline std::vector<std::string> class_names(const DatasetManifest& m) {
    std::vector<std::string> out;
    for (const auto& c : m.classes) out.push_back(c.name);
    return out;
}

// Strategy settings that depend on the dataset.
inline TrainConfig resolved_train(const RunConfig& config, const DatasetManifest& m) {
    TrainConfig t = config.train;
    t.seed = config.seed;
    t.loss.known_classes = m.known_count();
    return t;
}

inline void write_access_log(const std::filesystem::path& path, const AccessLog& log) {
    write_file(path, [&](std::ostream& out) {
        out << "phase,record_id\n";
        for (const auto& e : log.entries()) out << to_string(e.phase) << ',' << e.record_id << '\n';
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate

/// Writes <output>/classes/<name>/<name>_NNN.csv for every benchmark class
/// and <output>/manifest.ini.
inline DatasetManifest cmd_generate(const RunConfig& config, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    detail::prepare_output(config);
    const auto& g = config.generate;
    BenchmarkOptions opt;
    opt.known = g.known;
    opt.ignored = g.ignored;
    opt.never_seen = g.never_seen;
    opt.grid.bins = g.bins;
    opt.noise_sigma = g.noise;
    opt.jitter = g.jitter;
    opt.seed = config.seed;
    const auto classes = default_benchmark(opt);

    DatasetManifest m = synthesize_manifest(classes, g.per_class, config.seed, g.train_fraction);
    const int width = g.per_class > 1000 ? 5 : 3;
    std::vector<std::size_t> index_in_class(classes.size(), 0);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const fs::path dir = config.output / "classes" / classes[c].name;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw ReportError("cannot create " + dir.string());
        m.classes[c].patterns = {"classes/" + classes[c].name + "/*.csv"};
    }
    for (auto& r : m.records) {
        const auto& name = classes[r.class_id].name;
        std::ostringstream file;
        file << name << '_' << std::setw(width) << std::setfill('0') << index_in_class[r.class_id]++ << ".csv";
        r.path = config.output / "classes" / name / file.str();
        write_file(r.path, [&](std::ostream& out) { write_csv(out, *r.data); });
    }
    write_file(config.output / "manifest.ini", [&](std::ostream& out) { write_manifest(out, m); });
    if (log)
        *log << "generated " << m.records.size() << " spectra in " << classes.size() << " classes under "
             << config.output.string() << '\n';
    return m;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
    DatasetManifest manifest;
    std::vector<TrainResult> runs;
    AccessLog access;
};

/// Trains the configured ensemble on the train split. Writes run_<r>.ckpt,
/// train_log_<r>.csv and access_log.csv into the checkpoint directory.
inline TrainOutcome cmd_train(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    detail::prepare_output(config);
    TrainOutcome out;
    out.manifest = read_manifest(config.manifest);
    const auto train_set = load_split(out.manifest, Split::train, Phase::training, &out.access);
    if (train_set.empty()) throw DatasetError("train: no training records in " + config.manifest.string());

    const TrainConfig tc = detail::resolved_train(config, out.manifest);
    NetworkConfig net = config.network;
    net.input_length = train_set.front().x.size();
    if (log)
        *log << "training " << tc.ensemble_size << " x " << to_string(tc.loss.strategy) << " on " << train_set.size()
             << " spectra\n";
    out.runs = train_ensemble(net, tc, train_set, &out.access);

    if (const auto bad = audit_training_access(out.access, out.manifest); !bad.empty())
        throw DatasetError("audit: never-seen record " + std::to_string(bad.front()) + " was read during training");

    const auto dir = config.checkpoint_dir();
    std::filesystem::create_directories(dir);
    for (std::size_t r = 0; r < out.runs.size(); ++r) {
        out.runs[r].model.save(detail::checkpoint_path(dir, r));
        write_file(dir / ("train_log_" + std::to_string(r) + ".csv"),
                   [&](std::ostream& o) { write_training_log_csv(o, out.runs[r].history); });
        if (log) {
            const auto& h = out.runs[r].history;
            *log << "run " << r << ": final loss " << report::num(h.empty() ? 0.0 : h.back().loss);
            if (!smoothed_loss_increases(h).empty()) *log << " (warning: smoothed loss went up during training)";
            *log << '\n';
        }
    }
    detail::write_access_log(dir / "access_log.csv", out.access);
    return out;
}

// ---------------------------------------------------------------------------
// evaluate / sweep

/// Loads run_0 .. run_{R-1} and checks them against the manifest and strategy.
inline std::vector<Model> load_ensemble(const RunConfig& config, const DatasetManifest& m) {
    const TrainConfig tc = detail::resolved_train(config, m);
    std::vector<Model> models;
    for (std::size_t r = 0; r < tc.ensemble_size; ++r) {
        const auto path = detail::checkpoint_path(config.checkpoint_dir(), r);
        if (!std::filesystem::exists(path)) throw CheckpointError("missing checkpoint " + path.string());
        models.push_back(Model::load(path));
        if (models.back().output_count() != tc.loss.output_count())
            throw CheckpointError(path.string() + " has " + std::to_string(models.back().output_count()) +
                                  " outputs but " + std::string(to_string(tc.loss.strategy)) + " with " +
                                  std::to_string(tc.loss.known_classes) + " known classes needs " +
                                  std::to_string(tc.loss.output_count()));
    }
    return models;
}

struct EvaluationOutcome {
    ScoredSet scored;
    std::vector<SweepRow> sweep;
    OperatingPoint operating;
    EvalReport report;
};

/// Scores the test split, sweeps the cutoff grid and evaluates at the
/// configured cutoff (or the selected operating point).
inline EvaluationOutcome evaluate_models(const RunConfig& config, const DatasetManifest& m,
                                         std::span<const Model> models, AccessLog* access = nullptr) {
    const auto test_set = load_split(m, Split::test, Phase::evaluation, access);
    if (test_set.empty()) throw DatasetError("evaluate: no test records");
    if (test_set.front().x.size() != models.front().config().input_length)
        throw CheckpointError("evaluate: checkpoints expect " + std::to_string(models.front().config().input_length) +
                              " bins, the manifest yields " + std::to_string(test_set.front().x.size()));
    EvaluationOutcome out;
    out.scored = score(models, test_set, config.train.loss.strategy);
    const auto grid = config.eval.grid();
    out.sweep = threshold_sweep(out.scored, grid);
    out.operating = select_operating_point(out.sweep);
    out.report = evaluate(out.scored, config.eval.threshold.value_or(out.operating.row.threshold));
    return out;
}

inline void write_evaluation(const std::filesystem::path& dir, const EvaluationOutcome& e, const DatasetManifest& m,
                             bool selected) {
    const auto names = detail::class_names(m), known = detail::known_names(m);
    write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, e.report); });
    write_file(dir / "confusion.csv", [&](std::ostream& o) { write_confusion_csv(o, e.report, names, known); });
    write_file(dir / "histogram.csv", [&](std::ostream& o) { write_histogram_csv(o, e.report.feature_norms); });
    write_file(dir / "features.csv", [&](std::ostream& o) { write_features_csv(o, e.scored); });
    write_file(dir / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, e.sweep); });
    write_file(dir / "summary.txt", [&](std::ostream& o) {
        write_summary(o, e.report, selected ? std::optional<OperatingPoint>(e.operating) : std::nullopt);
    });
}

inline EvaluationOutcome cmd_evaluate(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    const auto m = read_manifest(config.manifest);
    const auto models = load_ensemble(config, m);
    detail::prepare_output(config);
    auto e = evaluate_models(config, m, models);
    write_evaluation(config.output, e, m, !config.eval.threshold);
    if (log) write_summary(*log, e.report, config.eval.threshold ? std::nullopt : std::optional<OperatingPoint>(e.operating));
    return e;
}

/// Writes sweep.csv and operating_point.csv.
inline EvaluationOutcome cmd_sweep(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    const auto m = read_manifest(config.manifest);
    const auto models = load_ensemble(config, m);
    detail::prepare_output(config);
    auto e = evaluate_models(config, m, models);
    write_file(config.output / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, e.sweep); });
    write_file(config.output / "operating_point.csv", [&](std::ostream& o) {
        o << "threshold,fp_free,fp_ignored,inconclusive_rate\n"
          << report::num(e.operating.row.threshold) << ',' << (e.operating.fp_free ? "yes" : "no") << ','
          << report::num(e.operating.row.fp_ignored) << ',' << report::num(e.operating.row.inconclusive_rate) << '\n';
    });
    if (log) {
        *log << "selected cutoff " << report::num(e.operating.row.threshold) << ": FP on ignored "
             << report::percent(e.operating.row.fp_ignored) << ", inconclusive "
             << report::percent(e.operating.row.inconclusive_rate);
        if (!e.operating.fp_free) *log << " (no cutoff reached zero false positives on ignored classes)";
        *log << '\n';
    }
    return e;
}

// ---------------------------------------------------------------------------
// compare

/// Trains and evaluates each strategy under <output>/<strategy>/ and writes
/// comparison.csv and comparison.txt into <output>.
inline std::vector<ComparisonRow> cmd_compare(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    detail::prepare_output(config);
    std::vector<ComparisonRow> rows;
    for (Strategy s : all_strategies) {
        RunConfig sub = config;
        sub.train.loss.strategy = s;
        sub.output = config.output / std::string(to_string(s));
        sub.checkpoints.reset();
        sub.eval.threshold.reset();
        auto trained = cmd_train(sub, log);
        std::vector<Model> models;
        for (auto& r : trained.runs) models.push_back(std::move(r.model));
        auto e = evaluate_models(sub, trained.manifest, models);
        write_evaluation(sub.output, e, trained.manifest, !sub.eval.threshold);
        rows.push_back({s, e.operating, e.report, e.sweep});
    }
    write_file(config.output / "comparison.csv", [&](std::ostream& o) { write_comparison_csv(o, rows); });
    write_file(config.output / "comparison.txt", [&](std::ostream& o) { write_comparison_text(o, rows); });
    if (log) write_comparison_text(*log, rows);
    return rows;
}

}  // namespace osr
