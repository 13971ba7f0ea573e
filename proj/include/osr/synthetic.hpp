// Synthetic Raman-like spectra: Gaussian peaks on a linear baseline with
// white noise, plus the default 20 known / 10 ignored / 10 never-seen
// benchmark built from them.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "osr/dataset.hpp"
#include "osr/spectra.hpp"

namespace osr {

struct WavenumberGrid {
    double start = 200.0;
    double end = 3200.0;
    std::size_t bins = 1024;

    std::vector<double> axis() const {
        std::vector<double> out(bins);
        const double step = bins > 1 ? (end - start) / static_cast<double>(bins - 1) : 0.0;
        for (std::size_t i = 0; i < bins; ++i) out[i] = start + step * static_cast<double>(i);
        return out;
    }
};

/// `width` is the Gaussian standard deviation in cm^-1.
struct Peak {
    double position = 0.0;
    double width = 1.0;
    double amplitude = 1.0;
};

struct SyntheticClassProfile {
    WavenumberGrid grid;
    std::vector<Peak> peaks;
    double baseline_offset = 0.0;
    double baseline_slope = 0.0;  // intensity per cm^-1, measured from grid.start
    double noise_sigma = 0.0;
    // Per-sample relative jitter: widths, amplitudes and baseline are scaled by
    // exp(jitter * z); positions move by jitter * width * z.
    double jitter = 0.0;

    void validate() const {
        if (grid.bins < 2 || !(grid.end > grid.start)) throw SpectrumError("profile: degenerate wavenumber grid");
        for (const auto& p : peaks) {
            if (p.position < grid.start || p.position > grid.end)
                throw SpectrumError("profile: peak at " + std::to_string(p.position) + " outside the grid");
            if (!(p.width > 0.0)) throw SpectrumError("profile: peak width must be positive");
            if (!(p.amplitude > 0.0)) throw SpectrumError("profile: peak amplitude must be positive");
        }
        if (noise_sigma < 0.0 || jitter < 0.0) throw SpectrumError("profile: negative noise or jitter");
    }
};

inline std::vector<Spectrum> generate_synthetic(const SyntheticClassProfile& profile, std::size_t n,
                                                std::uint64_t seed) {
    profile.validate();
    if (n == 0) throw SpectrumError("generate_synthetic: n must be at least 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto axis = profile.grid.axis();

    std::vector<Spectrum> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> y(axis.size());
        const double j = profile.jitter;
        const double offset = profile.baseline_offset * std::exp(j * normal(rng));
        const double slope = profile.baseline_slope * std::exp(j * normal(rng));
        for (std::size_t i = 0; i < axis.size(); ++i) y[i] = offset + slope * (axis[i] - profile.grid.start);
        for (const auto& p : profile.peaks) {
            const double width = p.width * std::exp(j * normal(rng));
            const double amplitude = p.amplitude * std::exp(j * normal(rng));
            const double position = p.position + j * p.width * normal(rng);
            const double inv = 1.0 / (2.0 * width * width);
            for (std::size_t i = 0; i < axis.size(); ++i) {
                const double d = axis[i] - position;
                y[i] += amplitude * std::exp(-d * d * inv);
            }
        }
        if (profile.noise_sigma > 0.0)
            for (auto& v : y) v += profile.noise_sigma * normal(rng);
        out.emplace_back(axis, std::move(y));
    }
    return out;
}

struct BenchmarkClass {
    std::string name;
    ClassRole role = ClassRole::known;
    SyntheticClassProfile profile;
};

struct BenchmarkOptions {
    std::size_t known = 20;
    std::size_t ignored = 10;
    std::size_t never_seen = 10;
    WavenumberGrid grid;
    double noise_sigma = 0.02;
    double jitter = 0.05;
    std::size_t library_size = 36;
    std::size_t shared_bands = 3;  // drawn per class from the library
    std::size_t unique_bands = 1;  // placed anywhere on the grid
    std::uint64_t seed = 2024;
};

/// Class profiles for the open-set benchmark. Each class draws
/// `shared_bands` distinct bands from a common band library, so unrelated
/// classes still overlap, and adds `unique_bands` bands of its own.
inline std::vector<BenchmarkClass> default_benchmark(const BenchmarkOptions& opt = {}) {
    std::mt19937_64 rng(opt.seed);
    const double lo = opt.grid.start + 0.05 * (opt.grid.end - opt.grid.start);
    const double hi = opt.grid.end - 0.05 * (opt.grid.end - opt.grid.start);
    std::uniform_real_distribution<double> where(lo, hi);
    std::uniform_real_distribution<double> width(8.0, 20.0);
    std::uniform_real_distribution<double> amplitude(0.3, 1.0);
    std::uniform_real_distribution<double> offset(0.0, 0.3);
    std::uniform_real_distribution<double> slope(-1e-4, 1e-4);

    if (opt.shared_bands > opt.library_size) throw SpectrumError("benchmark: more shared bands than the library holds");
    if (opt.shared_bands + opt.unique_bands == 0) throw SpectrumError("benchmark: classes need at least one band");
    std::vector<double> library(opt.library_size);
    for (auto& b : library) b = where(rng);

    std::vector<BenchmarkClass> out;
    auto add = [&](const std::string& prefix, std::size_t count, ClassRole role) {
        for (std::size_t i = 0; i < count; ++i) {
            BenchmarkClass c;
            c.name = prefix + (i < 10 ? "0" : "") + std::to_string(i);
            c.role = role;
            c.profile.grid = opt.grid;
            c.profile.noise_sigma = opt.noise_sigma;
            c.profile.jitter = opt.jitter;
            c.profile.baseline_offset = offset(rng);
            c.profile.baseline_slope = slope(rng);
            std::vector<std::size_t> picks(library.size());
            for (std::size_t k = 0; k < picks.size(); ++k) picks[k] = k;
            std::shuffle(picks.begin(), picks.end(), rng);
            for (std::size_t k = 0; k < opt.shared_bands; ++k)
                c.profile.peaks.push_back(Peak{library[picks[k]], width(rng), amplitude(rng)});
            for (std::size_t k = 0; k < opt.unique_bands; ++k) c.profile.peaks.push_back(Peak{where(rng), width(rng), 1.0});
            out.push_back(std::move(c));
        }
    };
    add("K", opt.known, ClassRole::known);
    add("I", opt.ignored, ClassRole::ignored);
    add("N", opt.never_seen, ClassRole::never_seen);
    return out;
}

/// In-memory manifest with `per_class` generated spectra per class, split
/// with `train_fraction` and `seed`.
inline DatasetManifest synthesize_manifest(const std::vector<BenchmarkClass>& classes, std::size_t per_class,
                                           std::uint64_t seed, double train_fraction = 5.0 / 6.0) {
    DatasetManifest m;
    m.seed = seed;
    m.train_fraction = train_fraction;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        m.classes.push_back(ClassInfo{classes[c].name, classes[c].role, {}});
        auto spectra = generate_synthetic(classes[c].profile, per_class, seed * 1000003ULL + c);
        for (auto& s : spectra) m.records.push_back(Record{m.records.size(), c, {}, std::move(s), Split::train});
    }
    assign_splits(m);
    m.validate();
    return m;
}

}  // namespace osr
