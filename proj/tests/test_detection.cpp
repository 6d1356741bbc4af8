#include "v2xguard/detection.hpp"

#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace v2xguard;
using Catch::Approx;

namespace {

Thresholds half() { return Thresholds{0.5, 0.5, 0, 0, 0, 0}; }

AbnormalityTrace trace_of(const std::vector<Hypothesis>& decided, const std::vector<Hypothesis>& truth)
{
    AbnormalityTrace tr;
    for (std::size_t k = 0; k < decided.size(); ++k) {
        AbnormalityStep s;
        s.t = static_cast<int>(k);
        s.decided = decided[k];
        s.truth = truth[k];
        tr.steps.push_back(s);
        tr.predictions.emplace_back();
    }
    return tr;
}

std::vector<Hypothesis> repeat(Hypothesis h, int n) { return std::vector<Hypothesis>(static_cast<std::size_t>(n), h); }

std::vector<Hypothesis> concat(std::vector<Hypothesis> a, const std::vector<Hypothesis>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("abnormality examples")
{
    GaussianMixture<1> a;
    a.add(0.5, {Vec<1>(-1.0), Mat<1>::Constant(1.0)});
    a.add(0.5, {Vec<1>(1.0), Mat<1>::Constant(0.5)});
    CHECK(abnormality<1>(a, a) == 0.0);

    GaussianMixture<1> n01, n21;
    n01.add(1.0, {Vec<1>(0.0), Mat<1>::Constant(1.0)});
    n21.add(1.0, {Vec<1>(2.0), Mat<1>::Constant(1.0)});
    CHECK(abnormality<1>(n01, n21) == Approx(0.5).margin(1e-12));

    // Shift the whole mixture by 10 moment-matched standard deviations; closed form is 100 / 8.
    const auto mm = a.moment_matched();
    GaussianMixture<1> shifted = a;
    const double shift = 10.0 * std::sqrt(mm.covariance(0, 0));
    for (auto& c : shifted.components) c.mean(0) += shift;
    const double u = abnormality<1>(a, shifted);
    CHECK(u > 10.0);
    CHECK(u == Approx(100.0 / 8.0).epsilon(1e-9));
}

TEST_CASE("abnormality saturates at the floor and is never negative")
{
    const Gaussian<2> a(Vec2::Zero(), Mat<2>::Identity());
    const Gaussian<2> far(Vec2(1e6, 0), Mat<2>::Identity());
    CHECK(abnormality<2>(a, far) == Approx(-std::log(1e-300)));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const Gaussian<2> b(Vec2(n(rng), n(rng)), (1.0 + std::abs(n(rng))) * Mat<2>::Identity());
        const double v = abnormality<2>(a, b);
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("threshold calibration")
{
    SECTION("constant series")
    {
        const auto th = calibrate_thresholds(std::vector<UpsilonPair>(100, {0.2, 0.2}));
        CHECK(th.xi1 == Approx(0.2));
        CHECK(th.xi2 == Approx(0.2));
        CHECK(th.trainStd1 == Approx(0.0).margin(1e-12));
    }
    SECTION("mean 0.2 and std 0.1")
    {
        std::vector<UpsilonPair> steps;
        for (int i = 0; i < 100; ++i) steps.push_back({i % 2 ? 0.3 : 0.1, i % 2 ? 0.1 : 0.3});
        const auto th = calibrate_thresholds(steps);
        CHECK(th.trainMean1 == Approx(0.2));
        CHECK(th.trainStd1 == Approx(0.1));
        CHECK(th.xi1 == Approx(0.5));
        CHECK(th.xi2 == Approx(0.5));
        CHECK(th.xi1 == th.trainMean1 + 3.0 * th.trainStd1);
        CHECK(th.xi2 == th.trainMean2 + 3.0 * th.trainStd2);
    }
    SECTION("pooling two runs equals calibrating their concatenation")
    {
        std::mt19937_64 rng(2);
        std::gamma_distribution<double> g(2.0, 0.5);
        std::vector<UpsilonPair> run1, run2;
        for (int i = 0; i < 120; ++i) run1.push_back({g(rng), g(rng)});
        for (int i = 0; i < 80; ++i) run2.push_back({g(rng), g(rng)});
        std::vector<UpsilonPair> all = run1;
        all.insert(all.end(), run2.begin(), run2.end());
        const auto th = calibrate_thresholds(all);
        // Direct pooled moments.
        double m = 0.0;
        for (const auto& p : all) m += p.rf;
        m /= 200.0;
        double v = 0.0;
        for (const auto& p : all) v += (p.rf - m) * (p.rf - m);
        CHECK(th.xi1 == Approx(m + 3.0 * std::sqrt(v / 200.0)).epsilon(1e-12));
    }
    SECTION("too few steps")
    {
        CHECK_THROWS_AS(calibrate_thresholds(std::vector<UpsilonPair>(99)), ContractViolation);
    }
}

TEST_CASE("ternary decision rule")
{
    CHECK(classify_step(0.1, 0.1, half()) == Hypothesis::H0);
    CHECK(classify_step(0.9, 0.9, half()) == Hypothesis::H1);
    CHECK(classify_step(0.1, 0.9, half()) == Hypothesis::H2);
    CHECK(classify_step(0.9, 0.1, half()) == Hypothesis::Indeterminate);
    CHECK(classify_step(0.5, 0.5, half()) == Hypothesis::H1);  // thresholds are inclusive
}

TEST_CASE("raising the trajectory indicator never moves H2 back to H0")
{
    for (double rf : {0.0, 0.2, 0.49}) {
        bool seenH2 = false;
        for (double gps = 0.0; gps < 5.0; gps += 0.01) {
            const auto h = classify_step(rf, gps, half());
            if (seenH2) CHECK(h == Hypothesis::H2);
            seenH2 = seenH2 || h == Hypothesis::H2;
        }
        CHECK(seenH2);
    }
}

TEST_CASE("per-step false-alarm rate under the calibration distribution")
{
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> d(0.0, 0.3);
    std::vector<UpsilonPair> train;
    for (int i = 0; i < 10000; ++i) train.push_back({d(rng), d(rng)});
    const auto th = calibrate_thresholds(train);
    int rfAlarms = 0, gpsAlarms = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        rfAlarms += d(rng) >= th.xi1;
        gpsAlarms += d(rng) >= th.xi2;
    }
    CHECK(rfAlarms / static_cast<double>(n) <= 0.02);
    CHECK(gpsAlarms / static_cast<double>(n) <= 0.02);
}

TEST_CASE("windowed decisions")
{
    using H = Hypothesis;
    CHECK(windowed_decision(repeat(H::H0, 20), 20, 12) == std::vector<H>{H::H0});
    CHECK(windowed_decision({H::H1, H::H1, H::H1, H::H0, H::H0}, 5, 3) == std::vector<H>{H::H1});
    CHECK(windowed_decision({H::H1, H::H1, H::H0, H::H0, H::H0}, 5, 3) == std::vector<H>{H::H0});
    CHECK(windowed_decision({H::H2, H::H2, H::H2, H::H1, H::H1}, 5, 3) == std::vector<H>{H::H2});
    CHECK(windowed_decision({H::Indeterminate, H::Indeterminate, H::Indeterminate, H::H0, H::H0}, 5, 3) ==
          std::vector<H>{H::H0});
    // Both attacks reach quorum: the larger count wins, ties go to H1.
    CHECK(window_label(std::vector<H>{H::H1, H::H2, H::H2}, 1) == H::H2);
    CHECK(window_label(std::vector<H>{H::H1, H::H2}, 1) == H::H1);
    CHECK(windowed_decision(repeat(H::H0, 30), 20, 12).size() == 11);
    CHECK(windowed_decision(repeat(H::H0, 5), 20, 12).empty());
    CHECK_THROWS_AS(windowed_decision(repeat(H::H0, 5), 0, 1), ContractViolation);
    CHECK_THROWS_AS(windowed_decision(repeat(H::H0, 5), 5, 6), ContractViolation);
    CHECK_THROWS_AS(windowed_decision(repeat(H::H0, 5), 5, 0), ContractViolation);
}

TEST_CASE("report probabilities reproduce hand counts")
{
    using H = Hypothesis;
    SECTION("8 of 10 jammed windows detected")
    {
        const auto tr = trace_of(concat(repeat(H::H1, 8), repeat(H::H0, 2)), repeat(H::H1, 10));
        const auto r = compute_report({tr}, 1, 1);
        REQUIRE(r.pdJammer);
        CHECK(*r.pdJammer == Approx(0.8));
        CHECK(r.windowsH1 == 10);
        CHECK_FALSE(r.pdSpoofer);
        CHECK_FALSE(r.pfSpoofer);
    }
    SECTION("all normal windows decided H0")
    {
        const auto tr = trace_of(repeat(H::H0, 30), repeat(H::H0, 30));
        const auto r = compute_report({tr}, 5, 3);
        CHECK(*r.pfSpoofer == 0.0);
        CHECK(*r.pfJammer == 0.0);
        CHECK(*r.normalContainment == 1.0);
        CHECK(r.windowsH0 == 26);
        CHECK_FALSE(r.pdSpoofer);
        CHECK_FALSE(r.pdJammer);
    }
    SECTION("mixed traces with windows spanning the onset excluded")
    {
        // 10 normal steps then 10 spoofed steps, W = 4: 7 + 7 pure windows, 3 mixed ones dropped.
        auto decided = concat(repeat(H::H0, 8), repeat(H::H2, 2));  // two false alarms at the end of H0
        decided = concat(decided, concat(repeat(H::H0, 3), repeat(H::H2, 7)));
        const auto tr = trace_of(decided, concat(repeat(H::H0, 10), repeat(H::H2, 10)));
        const auto r = compute_report({tr}, 4, 2);
        CHECK(r.windowsH0 == 7);
        CHECK(r.windowsH2 == 7);
        // H0 windows start at 0..6; those starting at 6 hold steps 6..9 with two H2 -> decided H2.
        CHECK(*r.pfSpoofer == Approx(1.0 / 7.0));
        // H2 windows start at 10..16; window at 10 holds steps 10..13 with one H2 -> H0.
        CHECK(*r.pdSpoofer == Approx(6.0 / 7.0));
    }
    SECTION("traces without truth are rejected")
    {
        auto tr = trace_of(repeat(H::H0, 3), repeat(H::H0, 3));
        tr.steps[1].truth.reset();
        CHECK_THROWS_AS(compute_report({tr}, 1, 1), ContractViolation);
    }
}

TEST_CASE("report RMSE uses normal steps only")
{
    using H = Hypothesis;
    auto tr = trace_of(repeat(H::H0, 4), {H::H0, H::H0, H::H2, H::H2});
    tr.predictions[0].gpsPredicted = Vec2(3, 4);
    tr.predictions[1].gpsPredicted = Vec2(3, 4);
    tr.predictions[2].gpsPredicted = Vec2(100, 100);  // attacked steps are excluded
    const auto r = compute_report({tr}, 1, 1);
    CHECK(*r.rmseGps == Approx(std::sqrt(12.5)));
    CHECK(*r.rmseRf == 0.0);
}

TEST_CASE("trace CSV layout")
{
    using H = Hypothesis;
    auto tr = trace_of({H::H0, H::H2}, {H::H0, H::H2});
    tr.steps[1].upsilonGps = 7.5;
    tr.steps[1].truth.reset();
    std::ostringstream out;
    write_trace_csv(out, tr);
    CHECK(out.str() == "t,upsilon_rf,upsilon_gps,decided,truth\n0,0,0,H0,H0\n1,0,7.5,H2,\n");
}
