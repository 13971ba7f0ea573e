// Spectrum values, Rayleigh-cut + min-max preprocessing, and the two-column
// CSV format (`wavenumber,intensity`, one spectrum per file).
#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace osr {

class SpectrumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& where, std::size_t row, const std::string& what)
        : std::runtime_error(where + ": row " + std::to_string(row) + ": " + what), row_(row) {}

    /// 1-based line number of the offending row.
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

/// Intensities on a strictly increasing wavenumber axis (cm^-1).
class Spectrum {
public:
    Spectrum() = default;

    Spectrum(std::vector<double> wavenumbers, std::vector<double> intensities)
        : wavenumbers_(std::move(wavenumbers)), intensities_(std::move(intensities)) {
        if (wavenumbers_.size() != intensities_.size())
            throw SpectrumError("spectrum: " + std::to_string(wavenumbers_.size()) + " wavenumbers but " +
                                std::to_string(intensities_.size()) + " intensities");
        for (std::size_t i = 1; i < wavenumbers_.size(); ++i)
            if (!(wavenumbers_[i] > wavenumbers_[i - 1]))
                throw SpectrumError("spectrum: wavenumbers not strictly increasing at bin " + std::to_string(i));
    }

    std::span<const double> wavenumbers() const noexcept { return wavenumbers_; }
    std::span<const double> intensities() const noexcept { return intensities_; }
    std::size_t length() const noexcept { return intensities_.size(); }
    bool empty() const noexcept { return intensities_.empty(); }

    bool operator==(const Spectrum&) const = default;

private:
    std::vector<double> wavenumbers_;
    std::vector<double> intensities_;
};

inline constexpr double default_rayleigh_cut = 150.0;

/// Drops every bin below `cut_below` and rescales the rest to [0, 1].
/// A constant remainder maps to all zeros.
inline Spectrum preprocess(const Spectrum& raw, double cut_below = default_rayleigh_cut) {
    if (raw.empty()) throw SpectrumError("preprocess: empty spectrum");
    const auto wn = raw.wavenumbers();
    const auto in = raw.intensities();
    const auto first = static_cast<std::size_t>(std::lower_bound(wn.begin(), wn.end(), cut_below) - wn.begin());
    if (first >= wn.size()) throw SpectrumError("preprocess: empty after cut");
    if (wn.size() - first < 2) throw SpectrumError("preprocess: fewer than two bins after cut");

    std::vector<double> w(wn.begin() + static_cast<std::ptrdiff_t>(first), wn.end());
    std::vector<double> v(in.begin() + static_cast<std::ptrdiff_t>(first), in.end());
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(v.begin(), v.end(), 0.0);
    } else {
        const double range = hi - lo;
        for (auto& x : v) x = (x - lo) / range;
    }
    return Spectrum(std::move(w), std::move(v));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Parses the two-column CSV text. The first row may be a header.
inline Spectrum parse_csv(std::istream& in, const std::string& where = "csv") {
    std::vector<double> wn, intensity;
    std::string line;
    std::size_t row = 0;
    bool any_line = false;
    while (std::getline(in, line)) {
        ++row;
        const auto text = detail::trim(line);
        if (text.empty()) continue;
        const auto comma = text.find(',');
        if (comma == std::string_view::npos) throw ParseError(where, row, "expected two comma-separated columns");
        const auto a = text.substr(0, comma), b = text.substr(comma + 1);
        if (b.find(',') != std::string_view::npos) throw ParseError(where, row, "expected two columns");
        double x = 0.0, y = 0.0;
        const bool ok = detail::parse_double(a, x) && detail::parse_double(b, y);
        if (!ok) {
            if (!any_line) {
                any_line = true;  // header
                continue;
            }
            throw ParseError(where, row, "non-numeric cell");
        }
        any_line = true;
        if (!wn.empty() && !(x > wn.back())) throw ParseError(where, row, "wavenumbers not strictly increasing");
        wn.push_back(x);
        intensity.push_back(y);
    }
    if (wn.empty()) throw ParseError(where, row, "no rows");
    return Spectrum(std::move(wn), std::move(intensity));
}

inline Spectrum read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SpectrumError("cannot open " + path.string());
    return parse_csv(in, path.string());
}

/// Shortest round-trip decimal form, so reading back is exact.
inline void write_csv(std::ostream& out, const Spectrum& s) {
    out << "wavenumber,intensity\n";
    const auto wn = s.wavenumbers();
    const auto in = s.intensities();
    for (std::size_t i = 0; i < s.length(); ++i)
        out << detail::format_double(wn[i]) << ',' << detail::format_double(in[i]) << '\n';
}

inline void write_csv(const std::filesystem::path& path, const Spectrum& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SpectrumError("cannot write " + path.string());
    write_csv(out, s);
    if (!out) throw SpectrumError("write failed: " + path.string());
}

}  // namespace osr
