#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "osr/experiment.hpp"

using namespace osr;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("osr_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Relative path -> contents for every regular file under `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return out;
}

RunConfig tiny(const fs::path& root) {
    RunConfig c;
    c.output = root / "data";
    c.manifest = root / "data" / "manifest.ini";
    c.seed = 3;
    c.generate.per_class = 6;
    c.generate.bins = 96;
    c.network.stem_kernel = 5;
    c.network.stem_stride = 2;
    c.network.widths = {4, 8};
    c.network.blocks = {1, 1};
    c.network.strides = {2, 2};
    c.train.epochs = 2;
    c.train.batch_size = 16;
    c.train.ensemble_size = 2;
    c.eval.grid_step = 0.05;
    return c;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(OSR_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return status;
}

}  // namespace

TEST_CASE("generate writes 40 classes with roles 20/10/10") {
    TempDir dir("generate");
    auto c = tiny(dir.path);
    const auto m = cmd_generate(c);
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(c.output / "classes")) dirs += e.is_directory();
    CHECK(dirs == 40);

    const auto back = read_manifest(c.manifest);
    std::map<ClassRole, std::size_t> roles;
    for (const auto& cls : back.classes) ++roles[cls.role];
    CHECK(roles[ClassRole::known] == 20);
    CHECK(roles[ClassRole::ignored] == 10);
    CHECK(roles[ClassRole::never_seen] == 10);
    CHECK(back.records.size() == 240);
    CHECK(fs::exists(c.output / "config.ini"));

    // 6 per class with a 5/6 split: 5 train and 1 test per known class
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> split;
    for (const auto& r : back.records)
        (r.split == Split::train ? split[r.class_id].first : split[r.class_id].second)++;
    for (std::size_t id = 0; id < back.classes.size(); ++id) {
        if (back.classes[id].role == ClassRole::never_seen) {
            CHECK(split[id].first == 0);
            CHECK(split[id].second == 6);
        } else {
            CHECK(split[id].first == 5);
            CHECK(split[id].second == 1);
        }
    }
}

TEST_CASE("generate is byte-identical for the same seed") {
    TempDir a("gen_a"), b("gen_b");
    auto ca = tiny(a.path), cb = tiny(b.path);
    cmd_generate(ca);
    cmd_generate(cb);
    auto ta = tree(ca.output), tb = tree(cb.output);
    ta.erase("config.ini");
    tb.erase("config.ini");
    CHECK(ta == tb);

    TempDir d("gen_d");
    auto cd = tiny(d.path);
    cd.seed = 4;
    cmd_generate(cd);
    CHECK(tree(cd.output)["classes/K00/K00_000.csv"] != ta["classes/K00/K00_000.csv"]);
}

TEST_CASE("run config round trips through the echo file") {
    TempDir dir("config");
    auto c = tiny(dir.path);
    c.train.loss.strategy = Strategy::objectosphere;
    c.eval.threshold = 0.85;
    std::stringstream text;
    write_ini(text, c.to_ini());
    const auto back = RunConfig::from_ini(parse_ini(text, "echo"));
    CHECK(back.output == c.output);
    CHECK(back.manifest == c.manifest);
    CHECK(back.seed == 3);
    CHECK(back.generate.bins == 96);
    CHECK(back.network.widths == c.network.widths);
    CHECK(back.train.epochs == 2);
    CHECK(back.train.loss.strategy == Strategy::objectosphere);
    CHECK(back.train.loss.alpha == 0.1);
    CHECK(back.train.loss.beta == 4.0);
    CHECK(back.eval.threshold == 0.85);

    c.eval.threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("train then evaluate twice gives identical reports") {
    TempDir dir("twice");
    auto c = tiny(dir.path);
    c.train.loss.strategy = Strategy::entropic_open_set;
    cmd_generate(c);

    std::vector<std::map<std::string, std::string>> outputs;
    for (const char* name : {"first", "second"}) {
        auto r = c;
        r.output = dir.path / name;
        const auto trained = cmd_train(r);
        CHECK(trained.runs.size() == 2);
        CHECK(audit_training_access(trained.access, trained.manifest).empty());
        const auto e = cmd_evaluate(r);
        CHECK(e.report.known_count == 20);
        CHECK(e.report.never_seen_count == 60);
        auto files = tree(r.output);
        files.erase("config.ini");
        outputs.push_back(std::move(files));
    }
    for (const char* f : {"metrics.csv", "confusion.csv", "sweep.csv", "histogram.csv", "features.csv",
                          "train_log_0.csv", "train_log_1.csv", "run_0.ckpt", "summary.txt"}) {
        INFO(f);
        REQUIRE(outputs[0].count(f));
        CHECK(outputs[0][f] == outputs[1][f]);
    }

    // Re-running from the echoed config reproduces the outputs.
    const auto echo = RunConfig::load(dir.path / "first" / "config.ini");
    cmd_train(echo);
    cmd_evaluate(echo);
    CHECK(slurp(dir.path / "first" / "metrics.csv") == outputs[0]["metrics.csv"]);
    CHECK(slurp(dir.path / "first" / "run_1.ckpt") == outputs[0]["run_1.ckpt"]);
}

TEST_CASE("sweep writes the selected operating point") {
    TempDir dir("sweep");
    auto c = tiny(dir.path);
    c.train.ensemble_size = 1;
    cmd_generate(c);
    c.output = dir.path / "run";
    cmd_train(c);
    const auto e = cmd_sweep(c);
    CHECK(e.sweep.size() == 21);
    const auto text = slurp(c.output / "operating_point.csv");
    CHECK(text.rfind("threshold,fp_free,fp_ignored,inconclusive_rate\n", 0) == 0);
    CHECK(fs::exists(c.output / "sweep.csv"));
}

TEST_CASE("evaluate refuses checkpoints that do not match the strategy") {
    TempDir dir("mismatch");
    auto c = tiny(dir.path);
    c.train.ensemble_size = 1;
    cmd_generate(c);
    c.output = dir.path / "run";
    cmd_train(c);
    c.train.loss.strategy = Strategy::background_class;
    CHECK_THROWS_WITH(cmd_evaluate(c), ContainsSubstring("outputs"));
}

TEST_CASE("compare produces one row per strategy") {
    TempDir dir("compare");
    auto c = tiny(dir.path);
    c.train.ensemble_size = 1;
    c.train.epochs = 1;
    cmd_generate(c);
    c.output = dir.path / "cmp";
    const auto rows = cmd_compare(c);
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(rows[i].strategy == all_strategies[i]);
    const auto csv = slurp(c.output / "comparison.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK_THAT(csv, ContainsSubstring("fp_never_seen"));
    CHECK_THAT(csv, ContainsSubstring("inconclusive_rate"));
    const auto txt = slurp(c.output / "comparison.txt");
    CHECK_THAT(txt, ContainsSubstring("objectosphere"));
    CHECK_THAT(txt, ContainsSubstring("matched inconclusive"));
    for (auto s : all_strategies) CHECK(fs::exists(c.output / std::string(to_string(s)) / "metrics.csv"));
}

TEST_CASE("cli reports a missing checkpoint with its path") {
    TempDir dir("cli_missing");
    auto c = tiny(dir.path);
    cmd_generate(c);
    const auto log = dir.path / "log.txt";
    const auto ckpt = dir.path / "nowhere";
    const int status = run_cli("evaluate -q -m \"" + c.manifest.string() + "\" -o \"" + ckpt.string() + "\"", log);
    CHECK(status != 0);
    const auto text = slurp(log);
    CHECK_THAT(text, ContainsSubstring("osr: "));
    CHECK_THAT(text, ContainsSubstring((ckpt / "run_0.ckpt").string()));
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
}

TEST_CASE("cli runs generate, train and evaluate from a config file") {
    TempDir dir("cli_run");
    auto c = tiny(dir.path);
    c.train.ensemble_size = 1;
    const auto cfg = dir.path / "run.ini";
    write_file(cfg, [&](std::ostream& o) { write_ini(o, c.to_ini()); });
    const auto log = dir.path / "log.txt";
    CHECK(run_cli("generate -q -c \"" + cfg.string() + "\"", log) == 0);
    const auto out = dir.path / "model";
    CHECK(run_cli("train -q -c \"" + cfg.string() + "\" -o \"" + out.string() + "\" --strategy objectosphere", log) == 0);
    CHECK(run_cli("evaluate -q -c \"" + cfg.string() + "\" -o \"" + out.string() +
                      "\" --strategy objectosphere --threshold 0.5",
                  log) == 0);
    CHECK_THAT(slurp(out / "metrics.csv"), ContainsSubstring("threshold,0.5\n"));
    CHECK_THAT(slurp(out / "config.ini"), ContainsSubstring("objectosphere"));
    CHECK(run_cli("evaluate -q -c \"" + cfg.string() + "\" -o \"" + out.string() + "\" --strategy nonsense", log) != 0);
    CHECK_THAT(slurp(log), ContainsSubstring("unknown strategy"));
}
