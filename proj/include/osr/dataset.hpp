// Class roles, dataset manifests, stratified splits, and audited loading.
//
// Manifest text format (see README):
//
//   [dataset]
//   seed = 42
//   train_fraction = 0.8333333333333334
//   cut_below = 150
//
//   [class]                 # one section per class, in label order
//   name = K00
//   role = known            # known | ignored | never_seen
//   files = classes/K00/*.csv
//
// `files` may repeat; patterns are resolved relative to the manifest and
// matched with fnmatch(3) against the directory listing. Records are numbered
// in class order, then sorted path order.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fnmatch.h>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "osr/ini.hpp"
#include "osr/spectra.hpp"

namespace osr {

enum class ClassRole { known, ignored, never_seen };

inline std::string_view to_string(ClassRole role) {
    switch (role) {
        case ClassRole::known: return "known";
        case ClassRole::ignored: return "ignored";
        case ClassRole::never_seen: return "never_seen";
    }
    return "?";
}

inline ClassRole parse_role(std::string_view text) {
    if (text == "known" || text == "K") return ClassRole::known;
    if (text == "ignored" || text == "I") return ClassRole::ignored;
    if (text == "never_seen" || text == "N") return ClassRole::never_seen;
    throw ConfigError("unknown class role '" + std::string(text) + "'");
}

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClassInfo {
    std::string name;
    ClassRole role = ClassRole::known;
    std::vector<std::string> patterns;
};

/// One spectrum of the dataset, either a file or inline data.
struct Record {
    std::size_t id = 0;
    std::size_t class_id = 0;
    std::filesystem::path path;
    std::optional<Spectrum> data;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<ClassInfo> classes;
    std::vector<Record> records;
    double train_fraction = 5.0 / 6.0;
    double cut_below = default_rayleigh_cut;
    std::uint64_t seed = 42;

    std::size_t known_count() const {
        return static_cast<std::size_t>(std::count_if(classes.begin(), classes.end(),
                                                      [](const ClassInfo& c) { return c.role == ClassRole::known; }));
    }

    /// Index among KNOWN classes in manifest order, or -1.
    int known_label(std::size_t class_id) const {
        if (classes.at(class_id).role != ClassRole::known) return -1;
        int label = 0;
        for (std::size_t i = 0; i < class_id; ++i)
            if (classes[i].role == ClassRole::known) ++label;
        return label;
    }

    ClassRole role_of(const Record& r) const { return classes.at(r.class_id).role; }

    void validate() const {
        if (known_count() < 2) throw DatasetError("manifest: at least two known classes required");
        for (const auto& r : records) {
            if (r.class_id >= classes.size())
                throw DatasetError("manifest: record " + std::to_string(r.id) + " has unknown class id");
            if (role_of(r) == ClassRole::never_seen && r.split != Split::test)
                throw DatasetError("manifest: never-seen record " + std::to_string(r.id) + " assigned to train");
        }
    }
};

struct SplitResult {
    std::vector<Record> train;
    std::vector<Record> test;
};

/// Per-class stratified split. Each KNOWN / IGNORED class contributes
/// floor(n * fraction) records to train, clamped to [1, n - 1]; NEVER_SEEN
/// records always go to test. Shuffling is seeded per class, so the result
/// depends only on (records, roles, fraction, seed).
inline SplitResult split_dataset(std::span<const Record> records, std::span<const ClassRole> roles,
                                 double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DatasetError("split: train fraction must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(roles.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].class_id >= roles.size()) throw DatasetError("split: record with unknown class id");
        by_class[records[i].class_id].push_back(i);
    }

    SplitResult out;
    std::vector<Split> assignment(records.size(), Split::test);
    for (std::size_t c = 0; c < roles.size(); ++c) {
        auto& idx = by_class[c];
        if (roles[c] == ClassRole::never_seen || idx.empty()) continue;
        if (idx.size() < 2) {
            if (roles[c] == ClassRole::known)
                throw DatasetError("split: known class " + std::to_string(c) + " has fewer than 2 records");
            continue;
        }
        std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (c + 1)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const double exact = static_cast<double>(idx.size()) * train_fraction;
        auto n_train = static_cast<std::size_t>(std::floor(exact + 1e-9));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        for (std::size_t k = 0; k < n_train; ++k) assignment[idx[k]] = Split::train;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        Record r = records[i];
        r.split = assignment[i];
        (r.split == Split::train ? out.train : out.test).push_back(std::move(r));
    }
    return out;
}

/// Re-assigns every record's split from the manifest's fraction and seed.
inline void assign_splits(DatasetManifest& m) {
    std::vector<ClassRole> roles;
    for (const auto& c : m.classes) roles.push_back(c.role);
    auto parts = split_dataset(m.records, roles, m.train_fraction, m.seed);
    std::vector<Split> split_of(m.records.size());
    for (const auto& r : parts.train) split_of[r.id] = Split::train;
    for (const auto& r : parts.test) split_of[r.id] = Split::test;
    for (auto& r : m.records) r.split = split_of[r.id];
}

namespace detail {

inline std::vector<std::filesystem::path> expand_pattern(const std::filesystem::path& base, const std::string& pattern) {
    namespace fs = std::filesystem;
    const fs::path full = fs::path(pattern).is_absolute() ? fs::path(pattern) : base / pattern;
    const fs::path dir = full.parent_path();
    const std::string leaf = full.filename().string();
    std::vector<fs::path> out;
    if (leaf.find_first_of("*?[") == std::string::npos) {
        if (!fs::exists(full)) throw DatasetError("manifest: missing file " + full.string());
        out.push_back(full);
        return out;
    }
    if (!fs::is_directory(dir)) throw DatasetError("manifest: missing directory " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && ::fnmatch(leaf.c_str(), entry.path().filename().c_str(), 0) == 0)
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Parses a manifest and resolves its file patterns into split records.
inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    const auto doc = read_ini(path);
    DatasetManifest m;
    if (const auto* ds = doc.find("dataset")) {
        if (auto v = ds->get("seed")) m.seed = ini::to_uint(*v, "seed");
        if (auto v = ds->get("train_fraction")) m.train_fraction = ini::to_double(*v, "train_fraction");
        if (auto v = ds->get("cut_below")) m.cut_below = ini::to_double(*v, "cut_below");
    }
    const auto base = path.parent_path();
    for (const auto* sec : doc.find_all("class")) {
        ClassInfo info;
        info.name = sec->get("name").value_or("class" + std::to_string(m.classes.size()));
        info.role = parse_role(sec->get("role").value_or("known"));
        info.patterns = sec->get_all("files");
        const std::size_t class_id = m.classes.size();
        for (const auto& pattern : info.patterns)
            for (auto& file : detail::expand_pattern(base, pattern))
                m.records.push_back(Record{m.records.size(), class_id, std::move(file), std::nullopt, Split::train});
        m.classes.push_back(std::move(info));
    }
    if (m.classes.empty()) throw DatasetError("manifest: no [class] sections in " + path.string());
    assign_splits(m);
    m.validate();
    return m;
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
    IniDocument doc;
    auto& ds = doc.section("dataset");
    ds.set("seed", std::to_string(m.seed));
    ds.set("train_fraction", ini::format(m.train_fraction));
    ds.set("cut_below", ini::format(m.cut_below));
    for (const auto& c : m.classes) {
        doc.sections.push_back(IniSection{"class", {}});
        auto& s = doc.sections.back();
        s.entries.emplace_back("name", c.name);
        s.entries.emplace_back("role", std::string(to_string(c.role)));
        for (const auto& p : c.patterns) s.entries.emplace_back("files", p);
    }
    out << "# open-set spectra dataset manifest\n";
    write_ini(out, doc);
}

// ---------------------------------------------------------------------------
// Loading

enum class Phase { training, evaluation };

inline std::string_view to_string(Phase p) { return p == Phase::training ? "training" : "evaluation"; }

/// Append-only record of which dataset records were read, and when.
class AccessLog {
public:
    struct Entry {
        Phase phase;
        std::size_t record_id;
    };

    void record(Phase phase, std::size_t record_id) { entries_.push_back({phase, record_id}); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

private:
    std::vector<Entry> entries_;
};

/// Ids of NEVER_SEEN records that were touched during a training phase.
inline std::vector<std::size_t> audit_training_access(const AccessLog& log, const DatasetManifest& m) {
    std::vector<std::size_t> violations;
    for (const auto& e : log.entries()) {
        if (e.phase != Phase::training) continue;
        if (e.record_id >= m.records.size() || m.role_of(m.records[e.record_id]) == ClassRole::never_seen)
            violations.push_back(e.record_id);
    }
    std::sort(violations.begin(), violations.end());
    violations.erase(std::unique(violations.begin(), violations.end()), violations.end());
    return violations;
}

/// A preprocessed spectrum with its labels, ready for the network.
struct Sample {
    std::size_t record_id = 0;
    std::size_t class_id = 0;
    ClassRole role = ClassRole::known;
    int label = -1;  // index among KNOWN classes, -1 otherwise
    std::vector<double> x;
};

/// Reads and preprocesses every record of `split`. Under Phase::training,
/// NEVER_SEEN records are refused before anything is read.
inline std::vector<Sample> load_split(const DatasetManifest& m, Split split, Phase phase, AccessLog* log = nullptr) {
    std::vector<Sample> out;
    for (const auto& r : m.records) {
        if (r.split != split) continue;
        const ClassRole role = m.role_of(r);
        if (phase == Phase::training && role == ClassRole::never_seen)
            throw DatasetError("never-seen record " + std::to_string(r.id) + " requested during training");
        if (log) log->record(phase, r.id);
        const Spectrum raw = r.data ? *r.data : read_csv(r.path);
        const Spectrum clean = preprocess(raw, m.cut_below);
        const auto in = clean.intensities();
        out.push_back(Sample{r.id, r.class_id, role, m.known_label(r.class_id), std::vector<double>(in.begin(), in.end())});
    }
    const std::size_t len = out.empty() ? 0 : out.front().x.size();
    for (const auto& s : out)
        if (s.x.size() != len)
            throw DatasetError("record " + std::to_string(s.record_id) + " has " + std::to_string(s.x.size()) +
                               " bins after preprocessing, expected " + std::to_string(len));
    return out;
}

}  // namespace osr
