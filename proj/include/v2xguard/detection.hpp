// Abnormality indicators, 3-sigma threshold calibration, the ternary decision rule, windowed
// aggregation and detection metrics.
#pragma once

#include "v2xguard/core.hpp"
#include "v2xguard/inference.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace v2xguard {

/// -ln BC between the moment-matched predictive and diagnostic densities; BC floored at 1e-300.
template <int N>
double abnormality(const GaussianMixture<N>& predictive, const GaussianMixture<N>& diagnostic)
{
    const double bc = gaussian_bhattacharyya<N>(predictive.moment_matched(), diagnostic.moment_matched());
    const double v = -std::log(std::max(bc, 1e-300));
    return v > 0.0 ? v : 0.0;
}

template <int N>
double abnormality(const Gaussian<N>& predictive, const Gaussian<N>& diagnostic)
{
    const double bc = gaussian_bhattacharyya<N>(predictive, diagnostic);
    const double v = -std::log(std::max(bc, 1e-300));
    return v > 0.0 ? v : 0.0;
}

struct AbnormalityStep {
    int t = 0;
    double upsilonRf = 0.0;
    double upsilonGps = 0.0;
    Hypothesis decided = Hypothesis::H0;
    std::optional<Hypothesis> truth;
};

/// Point predictions next to what was observed, kept for RMSE.
struct PredictionPair {
    Vec2 rfPredicted = Vec2::Zero(), rfObserved = Vec2::Zero();
    Vec2 gpsPredicted = Vec2::Zero(), gpsObserved = Vec2::Zero();
};

struct AbnormalityTrace {
    int vehicleId = 0;
    std::vector<AbnormalityStep> steps;
    std::vector<PredictionPair> predictions;  // aligned with steps
};

struct Thresholds {
    double xi1 = 0.0;
    double xi2 = 0.0;
    double trainMean1 = 0.0, trainStd1 = 0.0;
    double trainMean2 = 0.0, trainStd2 = 0.0;
};

struct UpsilonPair {
    double rf = 0.0;
    double gps = 0.0;
};

/// xi = mean + 3 std per channel over the pooled normal-situation steps.
inline Thresholds calibrate_thresholds(const std::vector<UpsilonPair>& normalSteps)
{
    require(normalSteps.size() >= 100, "calibrate_thresholds: need at least 100 pooled steps");
    const double n = static_cast<double>(normalSteps.size());
    double s1 = 0.0, s2 = 0.0;
    for (const auto& p : normalSteps) {
        s1 += p.rf;
        s2 += p.gps;
    }
    Thresholds th;
    th.trainMean1 = s1 / n;
    th.trainMean2 = s2 / n;
    double v1 = 0.0, v2 = 0.0;
    for (const auto& p : normalSteps) {
        v1 += (p.rf - th.trainMean1) * (p.rf - th.trainMean1);
        v2 += (p.gps - th.trainMean2) * (p.gps - th.trainMean2);
    }
    th.trainStd1 = std::sqrt(v1 / n);
    th.trainStd2 = std::sqrt(v2 / n);
    th.xi1 = th.trainMean1 + 3.0 * th.trainStd1;
    th.xi2 = th.trainMean2 + 3.0 * th.trainStd2;
    return th;
}

/// Ternary rule; the fourth quadrant (RF abnormal, trajectory normal) is indeterminate.
inline Hypothesis classify_step(double upsilonRf, double upsilonGps, const Thresholds& th)
{
    const bool rf = upsilonRf >= th.xi1;
    const bool gps = upsilonGps >= th.xi2;
    if (!rf && !gps) return Hypothesis::H0;
    if (rf && gps) return Hypothesis::H1;
    if (!rf && gps) return Hypothesis::H2;
    return Hypothesis::Indeterminate;
}

/// Label of one window: the attack hypothesis with at least `quorum` steps (the larger count wins,
/// H1 on ties), otherwise H0. Indeterminate steps count toward nothing.
inline Hypothesis window_label(std::span<const Hypothesis> steps, int quorum)
{
    int h1 = 0, h2 = 0;
    for (auto h : steps) {
        h1 += h == Hypothesis::H1;
        h2 += h == Hypothesis::H2;
    }
    const bool j = h1 >= quorum, s = h2 >= quorum;
    if (j && (!s || h1 >= h2)) return Hypothesis::H1;
    if (s) return Hypothesis::H2;
    return Hypothesis::H0;
}

/// Sliding windows of W steps with stride 1 (T - W + 1 windows).
inline std::vector<Hypothesis> windowed_decision(const std::vector<Hypothesis>& stepDecisions, int W, int quorum)
{
    require(W >= 1, "windowed_decision: W must be >= 1");
    require(quorum >= 1 && quorum <= W, "windowed_decision: quorum must be in [1, W]");
    std::vector<Hypothesis> out;
    if (stepDecisions.size() < static_cast<std::size_t>(W)) return out;
    for (std::size_t s = 0; s + static_cast<std::size_t>(W) <= stepDecisions.size(); ++s)
        out.push_back(window_label(std::span<const Hypothesis>(stepDecisions.data() + s, static_cast<std::size_t>(W)), quorum));
    return out;
}

/// Turns filter records into a trace. `truthAt(t)` gives the ground truth of step t, if known.
template <int D, typename TruthFn>
AbnormalityTrace make_trace(int vehicleId, const std::vector<StepRecord<D>>& records, const Thresholds& th,
                            TruthFn truthAt)
{
    AbnormalityTrace trace;
    trace.vehicleId = vehicleId;
    trace.steps.reserve(records.size());
    for (const auto& r : records) {
        AbnormalityStep s;
        s.t = r.t;
        s.upsilonRf = abnormality<2 * D>(r.rfPredictive, r.rfDiagnostic);
        s.upsilonGps = abnormality<2 * D>(r.gpsPredictive, r.gpsDiagnostic);
        s.decided = classify_step(s.upsilonRf, s.upsilonGps, th);
        s.truth = truthAt(r.t);
        trace.steps.push_back(s);
        PredictionPair p;
        p.rfPredicted = r.rfPoint.template head<2>();
        p.rfObserved = r.rfObserved.template head<2>();
        p.gpsPredicted = r.gpsPoint.template head<2>();
        p.gpsObserved = r.gpsObserved.template head<2>();
        trace.predictions.push_back(p);
    }
    return trace;
}

struct DetectionReport {
    std::optional<double> pdJammer, pdSpoofer, pfJammer, pfSpoofer;
    std::optional<double> rmseRf, rmseGps;
    /// Labeled window counts per true hypothesis (H0, H1, H2).
    long windowsH0 = 0, windowsH1 = 0, windowsH2 = 0;
    /// Share of truth-H0 windows decided H0.
    std::optional<double> normalContainment;
};

struct WindowCounts {
    // counts[truth][decided] over H0, H1, H2.
    long counts[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    void add(const WindowCounts& o)
    {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) counts[i][j] += o.counts[i][j];
    }
    long total(int truth) const { return counts[truth][0] + counts[truth][1] + counts[truth][2]; }
};

/// Windows whose steps do not all share one ground-truth label are not counted.
inline WindowCounts count_windows(const AbnormalityTrace& trace, int W, int quorum)
{
    WindowCounts wc;
    std::vector<Hypothesis> decided;
    for (const auto& s : trace.steps) decided.push_back(s.decided);
    const auto labels = windowed_decision(decided, W, quorum);
    for (std::size_t w = 0; w < labels.size(); ++w) {
        const auto& first = trace.steps[w].truth;
        if (!first) continue;
        bool pure = true;
        for (std::size_t k = w; k < w + static_cast<std::size_t>(W) && pure; ++k)
            pure = trace.steps[k].truth == first;
        if (!pure) continue;
        ++wc.counts[static_cast<int>(*first)][static_cast<int>(labels[w])];
    }
    return wc;
}

/// Pd / Pf from windowed decisions and RMSE over truth-H0 steps. Probabilities whose conditioning
/// class has no windows stay empty.
inline DetectionReport compute_report(const std::vector<AbnormalityTrace>& traces, int W, int quorum)
{
    WindowCounts wc;
    std::vector<Vec2> rfP, rfO, gpsP, gpsO;
    for (const auto& tr : traces) {
        for (const auto& s : tr.steps) require(s.truth.has_value(), "compute_report: every step needs a truth label");
        wc.add(count_windows(tr, W, quorum));
        for (std::size_t k = 0; k < tr.steps.size(); ++k) {
            if (*tr.steps[k].truth != Hypothesis::H0) continue;
            rfP.push_back(tr.predictions[k].rfPredicted);
            rfO.push_back(tr.predictions[k].rfObserved);
            gpsP.push_back(tr.predictions[k].gpsPredicted);
            gpsO.push_back(tr.predictions[k].gpsObserved);
        }
    }
    auto frac = [&](int truth, int decided) -> std::optional<double> {
        const long n = wc.total(truth);
        if (n == 0) return std::nullopt;
        return static_cast<double>(wc.counts[truth][decided]) / static_cast<double>(n);
    };
    DetectionReport r;
    r.pdJammer = frac(1, 1);
    r.pdSpoofer = frac(2, 2);
    r.pfJammer = frac(0, 1);
    r.pfSpoofer = frac(0, 2);
    r.normalContainment = frac(0, 0);
    r.windowsH0 = wc.total(0);
    r.windowsH1 = wc.total(1);
    r.windowsH2 = wc.total(2);
    if (!rfP.empty()) {
        r.rmseRf = rmse(rfP, rfO);
        r.rmseGps = rmse(gpsP, gpsO);
    }
    return r;
}

/// CSV: t,upsilon_rf,upsilon_gps,decided,truth (truth empty when unknown).
inline void write_trace_csv(std::ostream& out, const AbnormalityTrace& trace)
{
    out << "t,upsilon_rf,upsilon_gps,decided,truth\n";
    out.precision(10);
    for (const auto& s : trace.steps)
        out << s.t << ',' << s.upsilonRf << ',' << s.upsilonGps << ',' << to_string(s.decided) << ','
            << (s.truth ? to_string(*s.truth) : "") << '\n';
}

}  // namespace v2xguard
