#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "tnet/io_util.hpp"
#include "tnet/lightcurve.hpp"
#include "tnet/rng.hpp"
#include "tnet/spline.hpp"

using tnet::Error;
using tnet::ErrorCategory;
using tnet::FlattenConfig;
using tnet::LabelRaw;
using tnet::LightCurve;
using tnet::Rng;
using tnet::TceMeta;
using tnet::ViewConfig;
using tnet::ViewSet;

namespace {

// Scratch directory for the CSV reader cases; wiped on destruction so
// reruns start clean.
struct TempDir {
    std::filesystem::path path;

    TempDir() : path(std::filesystem::temp_directory_path() / "tnet_lc_test") {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }

    std::filesystem::path file(const std::string& name, const std::string& text) const {
        std::filesystem::path p = path / name;
        tnet::atomic_write(p, text);
        return p;
    }
};

template <typename Fn>
void check_error(ErrorCategory category, const std::string& fragment, Fn&& fn) {
    try {
        fn();
        FAIL("expected an error mentioning '" << fragment << "'");
    } catch (const Error& e) {
        CHECK(e.category() == category);
        INFO(e.what());
        CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
}

TceMeta meta(double period_days, double epoch_days, double duration_hours) {
    TceMeta m;
    m.period_days = period_days;
    m.epoch_days = epoch_days;
    m.duration_hours = duration_hours;
    return m;
}

std::vector<double> ramp_times(std::size_t n, double step) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = double(i) * step;
    return t;
}

}  // namespace

TEST_CASE("phase folding centers transits in a half-open window") {
    std::vector<double> phases = tnet::fold({0, 1, 2, 3, 4, 5}, 4.0, 0.0);
    REQUIRE(phases.size() == 6);
    CHECK(phases[0] == 0.0);
    CHECK(phases[1] == 1.0);
    CHECK(phases[2] == -2.0);
    CHECK(phases[3] == -1.0);
    CHECK(phases[4] == 0.0);
    CHECK(phases[5] == 1.0);

    // Moving the reference epoch moves the zero phase with it.
    std::vector<double> shifted = tnet::fold({0, 1, 2, 3}, 4.0, 1.0);
    CHECK(shifted[0] == -1.0);
    CHECK(shifted[1] == 0.0);
    CHECK(shifted[2] == 1.0);
    CHECK(shifted[3] == -2.0);

    // Every phase lands in [-period/2, period/2) for arbitrary inputs.
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        double period = rng.uniform(0.5, 30.0);
        double t0 = rng.uniform(-40.0, 40.0);
        std::vector<double> time(50);
        for (double& t : time) t = rng.uniform(-50.0, 50.0);
        for (double ph : tnet::fold(time, period, t0)) {
            CHECK(ph >= -period / 2.0);
            CHECK(ph < period / 2.0);
        }
    }

    // Sliding the whole series by a multiple of the period is a no-op.
    std::vector<double> base{0.3, 1.7, 4.1, 9.9, 12.4};
    std::vector<double> moved = base;
    for (double& t : moved) t += 7.0 * 2.5;
    std::vector<double> a = tnet::fold(base, 2.5, 0.4);
    std::vector<double> b = tnet::fold(moved, 2.5, 0.4);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b[i] == Catch::Approx(a[i]).margin(1e-9));

    check_error(ErrorCategory::argument, "period",
                [] { tnet::fold({1.0, 2.0}, 0.0, 0.0); });
}

TEST_CASE("median handles odd, even and single-element vectors") {
    CHECK(tnet::median_of({3, 1, 2}) == 2.0);
    CHECK(tnet::median_of({4, 1, 3, 2}) == 2.5);
    CHECK(tnet::median_of({5}) == 5.0);
    CHECK(tnet::median_of({2, 2}) == 2.0);

    // Agreement with the sort-based definition on random input.
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(1 + rng.below(25));
        for (double& x : v) x = rng.uniform(-5.0, 5.0);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        std::size_t mid = sorted.size() / 2;
        double expected = sorted.size() % 2 == 1
                              ? sorted[mid]
                              : (sorted[mid - 1] + sorted[mid]) / 2.0;
        CHECK(tnet::median_of(v) == expected);
    }
}

TEST_CASE("median binning interpolates across empty bins") {
    std::vector<double> two = tnet::bin_view({0, 1, 2, 3}, {1, 2, 3, 4}, 2, 0.0, 4.0);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == 1.5);
    CHECK(two[1] == 3.5);

    // The window is half-open: a phase exactly at hi is dropped.
    std::vector<double> edge = tnet::bin_view({0.0, 4.0}, {10, 99}, 2, 0.0, 4.0);
    CHECK(edge[0] == 10.0);
    CHECK(edge[1] == 10.0);  // empty tail bin copies its left neighbour

    // An interior gap is bridged linearly between its neighbours.
    std::vector<double> gap = tnet::bin_view({0.5, 2.5}, {1, 3}, 3, 0.0, 3.0);
    CHECK(gap[0] == 1.0);
    CHECK(gap[1] == 2.0);
    CHECK(gap[2] == 3.0);

    std::vector<double> wide = tnet::bin_view({0.5, 4.5}, {0, 4}, 5, 0.0, 5.0);
    for (int i = 0; i < 5; ++i) CHECK(wide[i] == double(i));

    // Empty bins before the first (after the last) filled bin copy it.
    std::vector<double> lead = tnet::bin_view({2.5}, {7}, 3, 0.0, 3.0);
    std::vector<double> tail = tnet::bin_view({0.5}, {7}, 3, 0.0, 3.0);
    for (double v : lead) CHECK(v == 7.0);
    for (double v : tail) CHECK(v == 7.0);

    // Reordering the samples cannot change the per-bin medians.
    Rng rng(2024);
    std::vector<double> phases(300), flux(300);
    for (std::size_t i = 0; i < phases.size(); ++i) {
        phases[i] = rng.uniform(0.0, 10.0);
        flux[i] = rng.uniform(-5.0, 5.0);
    }
    std::vector<double> binned = tnet::bin_view(phases, flux, 25, 0.0, 10.0);
    for (std::size_t i = phases.size(); i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(phases[i - 1], phases[j]);
        std::swap(flux[i - 1], flux[j]);
    }
    CHECK(tnet::bin_view(phases, flux, 25, 0.0, 10.0) == binned);

    // Samples outside [lo, hi) are ignored entirely.
    phases.push_back(-1.0);
    flux.push_back(1e6);
    phases.push_back(10.5);
    flux.push_back(-1e6);
    CHECK(tnet::bin_view(phases, flux, 25, 0.0, 10.0) == binned);

    check_error(ErrorCategory::dimension, "equal-length",
                [] { tnet::bin_view({1.0}, {1.0, 2.0}, 2, 0.0, 1.0); });
    check_error(ErrorCategory::argument, "n_bins",
                [] { tnet::bin_view({1.0}, {1.0}, 0, 0.0, 1.0); });
    check_error(ErrorCategory::argument, "lo < hi",
                [] { tnet::bin_view({1.0}, {1.0}, 2, 1.0, 1.0); });
    check_error(ErrorCategory::preprocessing, "all bins empty",
                [] { tnet::bin_view({5.0}, {1.0}, 3, 0.0, 3.0); });
}

TEST_CASE("view normalization pins the median to 0 and the minimum to -1") {
    std::vector<double> a = tnet::normalize_view({2, 3, 5});
    REQUIRE(a.size() == 3);
    CHECK(a[0] == -1.0);
    CHECK(a[1] == 0.0);
    CHECK(a[2] == 2.0);

    std::vector<double> b = tnet::normalize_view({0, 10, 10, 10, 30});
    CHECK(b == std::vector<double>{-1, 0, 0, 0, 2});

    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(2 * rng.below(40) + 5);
        for (double& x : v) x = rng.uniform(-20.0, 20.0);
        std::vector<double> out = tnet::normalize_view(v);

        CHECK(*std::min_element(out.begin(), out.end()) == -1.0);
        CHECK(tnet::median_of(out) == 0.0);  // odd length: the median is an element
        CHECK(tnet::normalize_view(out) == out);

        // Positive affine rescalings of the input are invisible.
        std::vector<double> scaled = v;
        for (double& x : scaled) x = 2.5 * x + 7.0;
        std::vector<double> out2 = tnet::normalize_view(scaled);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out2[i] == Catch::Approx(out[i]).margin(1e-12));
    }

    check_error(ErrorCategory::argument, "nonempty",
                [] { tnet::normalize_view({}); });
    check_error(ErrorCategory::preprocessing, "cannot normalize",
                [] { tnet::normalize_view({3, 3, 3}); });
    // A minimum equal to the median centers to 0, which cannot scale to -1.
    check_error(ErrorCategory::preprocessing, "cannot normalize",
                [] { tnet::normalize_view({1, 1, 2}); });
}

TEST_CASE("pyramid reduction halves length and preserves flat signals") {
    std::vector<double> flat = tnet::pyramid_reduce(std::vector<double>(9, 1.0));
    REQUIRE(flat.size() == 5);
    for (double v : flat) CHECK(v == 1.0);

    // A centered unit impulse spreads into the binomial kernel taps.
    std::vector<double> impulse(9, 0.0);
    impulse[4] = 1.0;
    std::vector<double> spread = tnet::pyramid_reduce(impulse);
    CHECK(spread == std::vector<double>{0.0, 0.0625, 0.375, 0.0625, 0.0});

    // A linear ramp passes through unchanged away from the edges.
    std::vector<double> ramp = tnet::pyramid_reduce({0, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(ramp[1] == 2.0);
    CHECK(ramp[2] == 4.0);
    CHECK(ramp[3] == 6.0);

    // Output length is ceil(n / 2); five levels take 8004 down to 251.
    Rng rng(5);
    for (std::size_t n = 5; n <= 40; ++n) {
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform(-3.0, 3.0);
        std::vector<double> out = tnet::pyramid_reduce(v);
        CHECK(out.size() == (n + 1) / 2);
        double lo = *std::min_element(v.begin(), v.end());
        double hi = *std::max_element(v.begin(), v.end());
        for (double x : out) {
            CHECK(x >= lo);  // every output is a convex combination
            CHECK(x <= hi);
        }
    }
    std::vector<std::size_t> lengths{8004};
    std::vector<double> chain(8004, 0.5);
    for (int level = 0; level < 5; ++level) {
        chain = tnet::pyramid_reduce(chain);
        lengths.push_back(chain.size());
    }
    CHECK(lengths == std::vector<std::size_t>{8004, 4002, 2001, 1001, 501, 251});

    check_error(ErrorCategory::argument, "length >= 5, got 4",
                [] { tnet::pyramid_reduce({1, 2, 3, 4}); });
}

TEST_CASE("BIC scoring trades fit quality against coefficient count") {
    // n * log(rss / n) + k * log(n) at rss = 1, n = e^2, k = 1.
    double n = std::exp(2.0);
    CHECK(tnet::bic(1.0, n, 1.0) == Catch::Approx(2.0 - 2.0 * n).margin(1e-12));

    for (double k = 1.0; k < 10.0; k += 1.0)
        CHECK(tnet::bic(5.0, 100.0, k + 1.0) > tnet::bic(5.0, 100.0, k));
    CHECK(tnet::bic(2.0, 100.0, 3.0) < tnet::bic(4.0, 100.0, 3.0));

    check_error(ErrorCategory::argument, "n > k",
                [] { tnet::bic(1.0, 5.0, 5.0); });
    check_error(ErrorCategory::argument, "n > k",
                [] { tnet::bic(1.0, 10.0, 0.5); });
    check_error(ErrorCategory::argument, "rss >= 0",
                [] { tnet::bic(-1.0, 10.0, 1.0); });
    check_error(ErrorCategory::preprocessing, "degenerate",
                [] { tnet::bic(0.0, 10.0, 1.0); });
}

TEST_CASE("BIC selects the coarsest spline for featureless noise") {
    // On pure white noise every extra coefficient buys only chance-level
    // rss, so the penalty term should push the choice to the largest
    // knot spacing (1 span, 4 coefficients over this 20-day series).
    // Clipping is disabled so all candidates score the same point set.
    tnet::SplineConfig cfg;
    cfg.clip_rounds = 0;
    int coarsest = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(Rng::mix(20260823, std::uint64_t(trial)));
        std::vector<double> time = ramp_times(400, 0.05);
        std::vector<double> flux(time.size());
        for (double& f : flux) f = 1.0 + 0.001 * rng.normal();
        tnet::TrendFit fit =
            tnet::fit_trend(time, flux, std::vector<char>(time.size(), 0), cfg);

        REQUIRE(fit.trend.size() == time.size());
        CHECK(fit.spacing >= 0.5);
        CHECK(fit.spacing <= 20.0);
        CHECK(fit.n_used == 400);
        CHECK(std::isfinite(fit.bic_value));
        if (fit.n_coef == 4) ++coarsest;
    }
    CHECK(coarsest >= 90);
}

TEST_CASE("spline detrending recovers flat and slowly varying baselines") {
    TceMeta m = meta(10.0, 0.0, 2.0);

    LightCurve constant;
    constant.time = ramp_times(800, 0.05);
    constant.flux.assign(constant.time.size(), 2.5);
    LightCurve flat = tnet::flatten(constant, m);
    REQUIRE(flat.time == constant.time);
    for (double f : flat.flux) CHECK(f == Catch::Approx(1.0).margin(1e-9));

    LightCurve linear;
    linear.time = ramp_times(800, 0.05);
    linear.flux.resize(linear.time.size());
    for (std::size_t i = 0; i < linear.time.size(); ++i)
        linear.flux[i] = 1.0 + 0.002 * (linear.time[i] - 20.0);
    LightCurve leveled = tnet::flatten(linear, m);
    for (std::size_t i = 40; i + 40 < leveled.flux.size(); ++i)
        CHECK(leveled.flux[i] == Catch::Approx(1.0).margin(1e-3));

    check_error(ErrorCategory::preprocessing, "at least 20 points, got 10", [&] {
        LightCurve tiny;
        tiny.time = ramp_times(10, 0.05);
        tiny.flux.assign(10, 1.0);
        tnet::flatten(tiny, m);
    });
}

TEST_CASE("detrending preserves transit depth under stellar variability") {
    TceMeta m = meta(10.0, 2.0, 5.0);
    double half_width = m.duration_days() / 2.0;
    double depth = 0.01;

    LightCurve lc;
    lc.time = ramp_times(3000, 0.02);
    std::vector<double> phases = tnet::fold(lc.time, m.period_days, m.epoch_days);
    lc.flux.resize(lc.time.size());
    for (std::size_t i = 0; i < lc.time.size(); ++i) {
        double base = 1.0 + 0.004 * std::sin(2.0 * std::numbers::pi * lc.time[i] / 30.0);
        double dip = std::abs(phases[i]) <= half_width ? 1.0 - depth : 1.0;
        lc.flux[i] = base * dip;
    }

    LightCurve out = tnet::flatten(lc, m);
    double in_sum = 0.0, out_sum = 0.0;
    int in_n = 0, out_n = 0;
    for (std::size_t i = 0; i < out.flux.size(); ++i) {
        if (std::abs(phases[i]) <= 0.8 * half_width) {
            in_sum += out.flux[i];
            ++in_n;
        } else if (std::abs(phases[i]) > 0.3) {
            out_sum += out.flux[i];
            ++out_n;
        }
    }
    REQUIRE(in_n > 50);
    REQUIRE(out_n > 2000);
    CHECK(out_sum / out_n == Catch::Approx(1.0).margin(1e-3));
    double measured = 1.0 - in_sum / in_n;
    CHECK(measured == Catch::Approx(depth).epsilon(0.1));
}

TEST_CASE("light curve and ephemeris validation") {
    LightCurve good;
    good.time = {0.0, 1.0, 2.0};
    good.flux = {1.0, 1.0, 1.0};
    CHECK_NOTHROW(tnet::validate_light_curve(good));

    check_error(ErrorCategory::argument, "lengths differ", [] {
        tnet::validate_light_curve({{0.0, 1.0}, {1.0}});
    });
    check_error(ErrorCategory::argument, "at least 2 points", [] {
        tnet::validate_light_curve({{0.0}, {1.0}});
    });
    check_error(ErrorCategory::argument, "non-finite values at row 1", [] {
        tnet::validate_light_curve({{0.0, 1.0}, {1.0, std::nan("")}});
    });
    check_error(ErrorCategory::argument, "strictly increasing at row 2", [] {
        tnet::validate_light_curve({{0.0, 1.0, 1.0}, {1.0, 1.0, 1.0}});
    });

    CHECK(meta(10.0, 0.0, 12.0).duration_days() == 0.5);
    CHECK_NOTHROW(tnet::validate_tce_meta(meta(10.0, -3.0, 12.0)));
    check_error(ErrorCategory::argument, "period must be > 0",
                [] { tnet::validate_tce_meta(meta(0.0, 0.0, 1.0)); });
    check_error(ErrorCategory::argument, "duration must be > 0",
                [] { tnet::validate_tce_meta(meta(1.0, 0.0, 0.0)); });
    check_error(ErrorCategory::argument, "shorter than its period",
                [] { tnet::validate_tce_meta(meta(1.0, 0.0, 24.0)); });

    CHECK(tnet::label_from_string("PC") == LabelRaw::PC);
    CHECK(tnet::label_from_string("AFP") == LabelRaw::AFP);
    CHECK(tnet::label_from_string("NTP") == LabelRaw::NTP);
    CHECK(tnet::label_from_string("UNK") == LabelRaw::UNK);
    CHECK(std::string(tnet::to_string(LabelRaw::AFP)) == "AFP");
    check_error(ErrorCategory::argument, "unknown label 'pc'",
                [] { tnet::label_from_string("pc"); });
}

TEST_CASE("light curve CSV reader tolerates column order and padding") {
    TempDir dir;
    std::filesystem::path p = dir.file("curve.csv",
                                      "flux, time ,note\r\n"
                                      "2.5,0.0,a\n"
                                      "\n"
                                      "2.25,0.5,b\r\n"
                                      "1.75,1.0,c\n");
    LightCurve lc = tnet::read_lightcurve_csv(p);
    CHECK(lc.time == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(lc.flux == std::vector<double>{2.5, 2.25, 1.75});

    check_error(ErrorCategory::format, "missing column 'flux'", [&] {
        tnet::read_lightcurve_csv(dir.file("nocol.csv", "time,brightness\n1,2\n"));
    });
    check_error(ErrorCategory::format, ":3: bad number 'oops'", [&] {
        tnet::read_lightcurve_csv(dir.file("bad.csv", "time,flux\n0,1\n0.5,oops\n"));
    });
    check_error(ErrorCategory::format, "expected 3 fields, got 2", [&] {
        tnet::read_lightcurve_csv(dir.file("short.csv", "time,flux,extra\n1,2\n"));
    });
    check_error(ErrorCategory::format, "strictly increasing", [&] {
        tnet::read_lightcurve_csv(dir.file("dup.csv", "time,flux\n1,2\n1,3\n"));
    });
    check_error(ErrorCategory::format, "empty light curve file", [&] {
        tnet::read_lightcurve_csv(dir.file("empty.csv", ""));
    });
}

TEST_CASE("TCE table reader parses labels and flags bad rows") {
    TempDir dir;
    std::filesystem::path p = dir.file("tce.csv",
                                      "label,id,period_days,epoch_days,duration_hours,score\n"
                                      "PC,K001,3.5,1.25,2.4,0.9\n"
                                      "NTP,K002,10,0,5,0.1\n"
                                      "UNK,K003,1.5,0.2,1.0,0.5\n"
                                      "AFP,K004,7.25,3.5,3.6,0.2\n");
    std::vector<tnet::TceTableRow> rows = tnet::read_tce_table(p);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].id == "K001");
    CHECK(rows[0].meta.period_days == 3.5);
    CHECK(rows[0].meta.epoch_days == 1.25);
    CHECK(rows[0].meta.duration_hours == 2.4);
    CHECK(rows[0].meta.label_raw == LabelRaw::PC);
    CHECK(rows[1].meta.label_raw == LabelRaw::NTP);
    CHECK(rows[2].meta.label_raw == LabelRaw::UNK);
    CHECK(rows[3].meta.label_raw == LabelRaw::AFP);

    std::string header = "id,period_days,epoch_days,duration_hours,label\n";
    check_error(ErrorCategory::format, "unknown label 'MAYBE'", [&] {
        tnet::read_tce_table(dir.file("badlabel.csv", header + "K1,1,0,1,MAYBE\n"));
    });
    check_error(ErrorCategory::format, "empty id", [&] {
        tnet::read_tce_table(dir.file("noid.csv", header + ",1,0,1,PC\n"));
    });
    check_error(ErrorCategory::format, "missing column 'label'", [&] {
        tnet::read_tce_table(dir.file("nolabel.csv", "id,period_days,epoch_days,duration_hours\n"));
    });
    check_error(ErrorCategory::format, "empty TCE table", [&] {
        tnet::read_tce_table(dir.file("none.csv", ""));
    });
}

TEST_CASE("view construction produces normalized inputs at the model lengths") {
    // Noise-free box transit: period 5 d, duration 4 h, depth 2%.
    TceMeta m = meta(5.0, 1.0, 4.0);
    double half_width = m.duration_days() / 2.0;
    LightCurve lc;
    lc.time = ramp_times(15000, 0.001);
    std::vector<double> phases = tnet::fold(lc.time, m.period_days, m.epoch_days);
    lc.flux.resize(lc.time.size());
    for (std::size_t i = 0; i < lc.time.size(); ++i)
        lc.flux[i] = std::abs(phases[i]) <= half_width ? 0.98 : 1.0;

    ViewSet views = tnet::make_views(lc, m);
    REQUIRE(views.global.size() == 2001);
    REQUIRE(views.local.size() == 201);
    REQUIRE(views.gaussian.size() == 251);

    for (const std::vector<double>* view : {&views.global, &views.local, &views.gaussian}) {
        CHECK(*std::min_element(view->begin(), view->end()) == -1.0);
        CHECK(tnet::median_of(*view) == Catch::Approx(0.0).margin(1e-9));
    }

    // The center bin of each view sits at full depth; the flat transit
    // bottom ties at -1, so the first minimum can lead the center by up
    // to the transit half-width in bins (33 global, 25 local).
    CHECK(views.global[1000] == -1.0);
    CHECK(views.local[100] == -1.0);
    auto argmin = [](const std::vector<double>& v) {
        return std::min_element(v.begin(), v.end()) - v.begin();
    };
    CHECK(std::abs(argmin(views.global) - 1000) <= 35);
    CHECK(std::abs(argmin(views.local) - 100) <= 26);
    CHECK(std::abs(argmin(views.gaussian) - 125) <= 10);

    // The local window spans +/-2 durations, so its edges are far enough
    // from the transit to sit exactly at the out-of-transit level.
    CHECK(views.local.front() == 0.0);
    CHECK(views.local.back() == 0.0);
    CHECK(views.global.front() == 0.0);

    ViewConfig small;
    small.global_bins = 101;
    small.local_bins = 21;
    small.pyramid_bins = 64;
    small.pyramid_levels = 2;
    small.local_span_durations = 3.0;
    ViewSet coarse = tnet::make_views(lc, m, small);
    CHECK(coarse.global.size() == 101);
    CHECK(coarse.local.size() == 21);
    CHECK(coarse.gaussian.size() == 16);
    CHECK(*std::min_element(coarse.global.begin(), coarse.global.end()) == -1.0);

    check_error(ErrorCategory::preprocessing, "cannot normalize", [&] {
        LightCurve dull;
        dull.time = ramp_times(100, 0.05);
        dull.flux.assign(100, 1.0);
        tnet::make_views(dull, m);
    });
}
