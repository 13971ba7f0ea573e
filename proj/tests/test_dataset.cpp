#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "osr/dataset.hpp"
#include "osr/synthetic.hpp"

using namespace osr;

namespace {

std::vector<Record> records_for(std::span<const std::size_t> per_class) {
    std::vector<Record> out;
    for (std::size_t c = 0; c < per_class.size(); ++c)
        for (std::size_t i = 0; i < per_class[c]; ++i) out.push_back(Record{out.size(), c, {}, std::nullopt, Split::train});
    return out;
}

std::size_t count_class(const std::vector<Record>& rs, std::size_t c) {
    return static_cast<std::size_t>(std::count_if(rs.begin(), rs.end(), [&](const Record& r) { return r.class_id == c; }));
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("osr_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("role names parse both ways") {
    for (auto r : {ClassRole::known, ClassRole::ignored, ClassRole::never_seen}) CHECK(parse_role(to_string(r)) == r);
    CHECK(parse_role("K") == ClassRole::known);
    CHECK_THROWS(parse_role("maybe"));
}

TEST_CASE("twelve known records split 10 / 2") {
    const std::size_t counts[] = {12};
    const ClassRole roles[] = {ClassRole::known};
    const auto parts = split_dataset(records_for(counts), roles, 5.0 / 6.0, 1);
    CHECK(parts.train.size() == 10);
    CHECK(parts.test.size() == 2);
}

TEST_CASE("never-seen records all go to test") {
    const std::size_t counts[] = {6, 6, 6};
    const ClassRole roles[] = {ClassRole::known, ClassRole::known, ClassRole::never_seen};
    const auto parts = split_dataset(records_for(counts), roles, 5.0 / 6.0, 1);
    CHECK(count_class(parts.train, 2) == 0);
    CHECK(count_class(parts.test, 2) == 6);
}

TEST_CASE("split is a deterministic partition with per-class fractions") {
    const std::size_t counts[] = {7, 13, 2, 30, 9};
    const ClassRole roles[] = {ClassRole::known, ClassRole::ignored, ClassRole::known, ClassRole::never_seen,
                               ClassRole::ignored};
    const auto rs = records_for(counts);
    const auto a = split_dataset(rs, roles, 5.0 / 6.0, 77);
    const auto b = split_dataset(rs, roles, 5.0 / 6.0, 77);
    auto ids = [](const std::vector<Record>& v) {
        std::vector<std::size_t> out;
        for (const auto& r : v) out.push_back(r.id);
        return out;
    };
    CHECK(ids(a.train) == ids(b.train));
    CHECK(ids(a.test) == ids(b.test));

    std::set<std::size_t> all;
    for (auto id : ids(a.train)) all.insert(id);
    for (auto id : ids(a.test)) CHECK(all.insert(id).second);
    CHECK(all.size() == rs.size());

    for (std::size_t c = 0; c < 5; ++c) {
        if (roles[c] == ClassRole::never_seen) continue;
        const double expected = 5.0 / 6.0 * static_cast<double>(counts[c]);
        CHECK(std::abs(static_cast<double>(count_class(a.train, c)) - expected) <= 1.0);
    }
    CHECK(ids(split_dataset(rs, roles, 5.0 / 6.0, 78).train) != ids(a.train));
}

TEST_CASE("split errors") {
    const std::size_t counts[] = {1, 5};
    const ClassRole roles[] = {ClassRole::known, ClassRole::known};
    CHECK_THROWS_AS(split_dataset(records_for(counts), roles, 5.0 / 6.0, 1), DatasetError);
    const std::size_t ok[] = {5, 5};
    CHECK_THROWS(split_dataset(records_for(ok), roles, 1.0, 1));
    CHECK_THROWS(split_dataset(records_for(ok), roles, 0.0, 1));
}

TEST_CASE("manifest round trip through files") {
    const auto dir = scratch_dir("manifest");
    BenchmarkOptions opt;
    opt.known = 2;
    opt.ignored = 1;
    opt.never_seen = 1;
    opt.grid.bins = 64;
    const auto classes = default_benchmark(opt);
    DatasetManifest m = synthesize_manifest(classes, 6, 9);
    std::vector<std::size_t> index(classes.size(), 0);
    for (auto& c : m.classes) c.patterns = {"data/" + c.name + "_*.csv"};
    std::filesystem::create_directories(dir / "data");
    for (const auto& r : m.records) {
        std::ofstream out(dir / "data" / (classes[r.class_id].name + "_" + std::to_string(index[r.class_id]++) + ".csv"));
        write_csv(out, *r.data);
    }
    {
        std::ofstream out(dir / "manifest.ini");
        write_manifest(out, m);
    }
    const auto back = read_manifest(dir / "manifest.ini");
    REQUIRE(back.classes.size() == 4);
    CHECK(back.records.size() == 24);
    CHECK(back.seed == 9);
    CHECK(back.known_count() == 2);
    CHECK(back.classes[3].role == ClassRole::never_seen);
    for (const auto& r : back.records)
        if (back.role_of(r) == ClassRole::never_seen) CHECK(r.split == Split::test);
    CHECK(back.known_label(1) == 1);
    CHECK(back.known_label(2) == -1);
}

TEST_CASE("manifest errors name the problem") {
    const auto dir = scratch_dir("manifest_err");
    {
        std::ofstream out(dir / "m.ini");
        out << "[class]\nname = a\nrole = known\nfiles = missing/*.csv\n";
    }
    CHECK_THROWS_WITH(read_manifest(dir / "m.ini"), Catch::Matchers::ContainsSubstring("missing"));
    CHECK_THROWS(read_manifest(dir / "absent.ini"));
}

TEST_CASE("manifest needs two known classes") {
    DatasetManifest m;
    m.classes = {{"a", ClassRole::known, {}}, {"b", ClassRole::ignored, {}}};
    CHECK_THROWS_AS(m.validate(), DatasetError);
}

TEST_CASE("training loads refuse never-seen records and the audit sees every read") {
    BenchmarkOptions opt;
    opt.known = 2;
    opt.ignored = 1;
    opt.never_seen = 1;
    opt.grid.bins = 32;
    auto m = synthesize_manifest(default_benchmark(opt), 6, 3);

    AccessLog log;
    const auto train = load_split(m, Split::train, Phase::training, &log);
    for (const auto& s : train) CHECK(s.role != ClassRole::never_seen);
    CHECK(audit_training_access(log, m).empty());
    CHECK(log.entries().size() == train.size());

    const auto test = load_split(m, Split::test, Phase::evaluation, &log);
    CHECK(std::any_of(test.begin(), test.end(), [](const Sample& s) { return s.role == ClassRole::never_seen; }));
    CHECK(audit_training_access(log, m).empty());

    // A never-seen record touched while training is reported.
    const auto n_id = std::find_if(m.records.begin(), m.records.end(),
                                   [&](const Record& r) { return m.role_of(r) == ClassRole::never_seen; })->id;
    log.record(Phase::training, n_id);
    CHECK(audit_training_access(log, m) == std::vector<std::size_t>{n_id});

    // Forcing a never-seen record into the train split is refused before reading.
    for (auto& r : m.records)
        if (r.id == n_id) r.split = Split::train;
    AccessLog fresh;
    CHECK_THROWS_AS(load_split(m, Split::train, Phase::training, &fresh), DatasetError);
    for (const auto& e : fresh.entries()) CHECK(e.record_id != n_id);
}

TEST_CASE("samples carry known labels in manifest order") {
    BenchmarkOptions opt;
    opt.known = 3;
    opt.ignored = 1;
    opt.never_seen = 0;
    opt.grid.bins = 16;
    const auto m = synthesize_manifest(default_benchmark(opt), 4, 1);
    for (const auto& s : load_split(m, Split::train, Phase::training)) {
        if (s.role == ClassRole::known) CHECK(s.label == static_cast<int>(s.class_id));
        else CHECK(s.label == -1);
        CHECK(s.x.size() == 16);
    }
}
