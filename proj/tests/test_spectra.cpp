#include <catch_amalgamated.hpp>

#include <sstream>

#include "osr/spectra.hpp"
#include "osr/synthetic.hpp"

using namespace osr;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Spectrum on_axis(std::vector<double> y, double start = 200.0) {
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = start + 10.0 * static_cast<double>(i);
    return Spectrum(std::move(x), std::move(y));
}

std::vector<double> values(const Spectrum& s) { return {s.intensities().begin(), s.intensities().end()}; }

}  // namespace

TEST_CASE("spectrum rejects unsorted or ragged axes") {
    CHECK_THROWS_AS(Spectrum({1.0, 1.0}, {0.0, 1.0}), SpectrumError);
    CHECK_THROWS_AS(Spectrum({2.0, 1.0}, {0.0, 1.0}), SpectrumError);
    CHECK_THROWS_AS(Spectrum({1.0, 2.0}, {0.0}), SpectrumError);
}

TEST_CASE("preprocess min-max scales") {
    CHECK(values(preprocess(on_axis({5, 3, 1, 9}), 0.0)) == std::vector<double>{0.5, 0.25, 0.0, 1.0});
}

TEST_CASE("preprocess cuts bins below the threshold") {
    // axis 200, 210, 220: cutting below 205 drops the first bin
    const auto out = preprocess(on_axis({100, 2, 4}), 205.0);
    CHECK(values(out) == std::vector<double>{0.0, 1.0});
    CHECK(out.wavenumbers()[0] == 210.0);
}

TEST_CASE("preprocess maps a constant spectrum to zeros") {
    CHECK(values(preprocess(on_axis({7, 7, 7}), 0.0)) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("preprocess errors") {
    CHECK_THROWS_WITH(preprocess(on_axis({1, 2, 3}), 1000.0), Catch::Matchers::ContainsSubstring("empty after cut"));
    CHECK_THROWS_AS(preprocess(on_axis({1, 2, 3}), 215.0), SpectrumError);
}

TEST_CASE("preprocess bounds are exact and it is idempotent") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 40.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> y(64);
        for (auto& v : y) v = u(rng);
        const auto once = preprocess(on_axis(y), 0.0);
        const auto v = values(once);
        CHECK(*std::min_element(v.begin(), v.end()) == 0.0);
        CHECK(*std::max_element(v.begin(), v.end()) == 1.0);
        CHECK(values(preprocess(once, 0.0)) == v);
    }
}

TEST_CASE("csv round trip is exact") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1e3);
    std::vector<double> y(40);
    for (auto& v : y) v = n(rng);
    const auto s = on_axis(y, 123.456789);
    std::stringstream io;
    write_csv(io, s);
    const auto back = parse_csv(io);
    CHECK(values(back) == y);
    CHECK(std::vector<double>(back.wavenumbers().begin(), back.wavenumbers().end()) ==
          std::vector<double>(s.wavenumbers().begin(), s.wavenumbers().end()));
}

TEST_CASE("csv header is optional on read") {
    std::istringstream in("100,1\n200,2.5\n");
    CHECK(values(parse_csv(in)) == std::vector<double>{1.0, 2.5});
}

TEST_CASE("csv parse errors") {
    SECTION("decreasing wavenumbers name the row") {
        std::istringstream in("wavenumber,intensity\n100,1\n300,2\n200,3\n");
        try {
            parse_csv(in);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.row() == 4);
        }
    }
    SECTION("non-numeric cell") {
        std::istringstream in("wavenumber,intensity\n100,abc\n");
        CHECK_THROWS_AS(parse_csv(in), ParseError);
    }
    SECTION("empty file") {
        std::istringstream in("");
        CHECK_THROWS_WITH(parse_csv(in), Catch::Matchers::ContainsSubstring("no rows"));
    }
}

TEST_CASE("noiseless single peak sits at the nearest bin") {
    SyntheticClassProfile p;
    p.peaks = {Peak{1000.0, 15.0, 1.0}};
    const auto s = generate_synthetic(p, 1, 3).front();
    const auto wn = s.wavenumbers();
    const auto in = s.intensities();
    const auto arg = static_cast<std::size_t>(std::max_element(in.begin(), in.end()) - in.begin());
    std::size_t nearest = 0;
    for (std::size_t i = 0; i < wn.size(); ++i)
        if (std::abs(wn[i] - 1000.0) < std::abs(wn[nearest] - 1000.0)) nearest = i;
    CHECK(arg == nearest);
}

TEST_CASE("generator without noise or jitter is a pure function of the profile") {
    SyntheticClassProfile p;
    p.peaks = {Peak{800.0, 10.0, 0.7}, Peak{1500.0, 20.0, 1.0}};
    p.baseline_offset = 0.1;
    p.baseline_slope = 2e-5;
    const auto a = generate_synthetic(p, 3, 1);
    const auto b = generate_synthetic(p, 3, 999);
    for (const auto& s : a) CHECK(values(s) == values(a.front()));
    CHECK(values(a.front()) == values(b.front()));
}

TEST_CASE("generator is deterministic per seed") {
    SyntheticClassProfile p;
    p.peaks = {Peak{800.0, 10.0, 0.7}};
    p.noise_sigma = 0.05;
    p.jitter = 0.1;
    CHECK(values(generate_synthetic(p, 2, 4)[1]) == values(generate_synthetic(p, 2, 4)[1]));
    CHECK(values(generate_synthetic(p, 2, 4)[1]) != values(generate_synthetic(p, 2, 5)[1]));
}

TEST_CASE("profile invariants") {
    SyntheticClassProfile p;
    p.peaks = {Peak{50.0, 10.0, 1.0}};
    CHECK_THROWS_AS(p.validate(), SpectrumError);
    p.peaks = {Peak{500.0, 0.0, 1.0}};
    CHECK_THROWS_AS(p.validate(), SpectrumError);
    p.peaks = {Peak{500.0, 1.0, 1.0}};
    CHECK_THROWS_AS(generate_synthetic(p, 0, 1), SpectrumError);
}

TEST_CASE("disjoint profiles are farther apart than samples of one profile") {
    // Frozen from a direct numerical evaluation of both mean squared distances
    // over 20 samples per class (noise 0.02, jitter 0.05).
    SyntheticClassProfile a, b;
    a.peaks = {Peak{700.0, 12.0, 1.0}, Peak{1400.0, 15.0, 0.6}};
    b.peaks = {Peak{1900.0, 12.0, 1.0}, Peak{2600.0, 15.0, 0.6}};
    for (auto* p : {&a, &b}) {
        p->noise_sigma = 0.02;
        p->jitter = 0.05;
    }
    const auto sa = generate_synthetic(a, 20, 1), sb = generate_synthetic(b, 20, 2);
    auto msd = [](const Spectrum& x, const Spectrum& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.length(); ++i) {
            const double d = x.intensities()[i] - y.intensities()[i];
            s += d * d;
        }
        return s / static_cast<double>(x.length());
    };
    double within = 0.0, cross = 0.0;
    std::size_t nw = 0, nc = 0;
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 20; ++j) {
            if (i < j) {
                within += msd(sa[i], sa[j]) + msd(sb[i], sb[j]);
                nw += 2;
            }
            cross += msd(sa[i], sb[j]);
            ++nc;
        }
    within /= static_cast<double>(nw);
    cross /= static_cast<double>(nc);
    CHECK(cross > 5.0 * within);
}

TEST_CASE("default benchmark has 20/10/10 classes inside the grid") {
    const auto classes = default_benchmark();
    REQUIRE(classes.size() == 40);
    std::size_t k = 0, i = 0, n = 0;
    for (const auto& c : classes) {
        c.profile.validate();
        k += c.role == ClassRole::known;
        i += c.role == ClassRole::ignored;
        n += c.role == ClassRole::never_seen;
    }
    CHECK(k == 20);
    CHECK(i == 10);
    CHECK(n == 10);
    CHECK(classes.front().name == "K00");
    CHECK(classes.back().name == "N09");
}
