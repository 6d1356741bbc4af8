// Interactive modified Markov jump particle filter on a coupled GDBN: particles over RF clusters,
// trajectory clusters drawn through phi, and a Kalman belief per particle for each signal.
#pragma once

#include "v2xguard/core.hpp"
#include "v2xguard/coupling.hpp"
#include "v2xguard/gdbn.hpp"

#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace v2xguard {

template <int D>
struct Particle {
    int rfCluster = 0;
    int gpsCluster = 0;
    Gaussian<2 * D> rfBelief;
    Gaussian<2 * D> gpsBelief;
    double weight = 1.0;
};

template <int D>
struct FilterState {
    std::vector<Particle<D>> particles;
    int t = 0;
    /// Steps spent so far in each particle's current RF cluster.
    std::vector<int> dwellCounters;
    /// Gate covariance held while a signal's observations are being rejected (see FilterOptions).
    std::optional<Mat<2 * D>> rfCoastGate, gpsCoastGate;

    std::size_t size() const { return particles.size(); }
};

template <int D>
struct StepPrediction {
    GaussianMixture<2 * D> rfPredictive;
    GaussianMixture<2 * D> gpsPredictive;
    Vec<D> rfPoint = Vec<D>::Zero();
    Vec<D> gpsPoint = Vec<D>::Zero();
};

struct FilterOptions {
    int particles = 100;
    /// Resample when ESS / L falls below this.
    double essFraction = 0.5;
    /// Observation validation gates in Mahalanobis units of the innovation covariance (moment-matched
    /// predictive covariance plus R). A rejected observation is neither absorbed nor used for
    /// weighting, and the gate covariance is held at its value from the first rejected step until an
    /// observation passes again, so a persistent offset cannot be absorbed through the growing
    /// predicted covariance. Non-positive disables a gate. The RF feature has no persistent state
    /// worth protecting, so its gate is off by default.
    double rfGateSigma = 0.0;
    double gpsGateSigma = 10.0;
};

namespace detail {

template <int N>
struct KalmanUpdate {
    Gaussian<N> posterior;
    double logLikelihood = 0.0;
};

template <int N>
KalmanUpdate<N> kalman_update(const Gaussian<N>& prior, const Vec<N>& z, const Mat<N>& H, const Mat<N>& R)
{
    const Mat<N> S = H * prior.covariance * H.transpose() + R;
    Eigen::LLT<Mat<N>> llt(S);
    const Vec<N> innovation = z - H * prior.mean;
    const Mat<N> K = llt.solve(H * prior.covariance).transpose();
    const Mat<N> IKH = Mat<N>::Identity() - K * H;

    KalmanUpdate<N> out;
    out.posterior.mean = prior.mean + K * innovation;
    Mat<N> P = IKH * prior.covariance * IKH.transpose() + K * R * K.transpose();
    out.posterior.covariance = 0.5 * (P + P.transpose());
    const auto& L = llt.matrixL();
    double logDet = 0.0;
    for (int i = 0; i < N; ++i) logDet += 2.0 * std::log(L(i, i));
    const double maha = innovation.dot(llt.solve(innovation));
    out.logLikelihood = -0.5 * (maha + logDet + N * std::log(2.0 * std::numbers::pi));
    return out;
}

template <int N>
Gaussian<N> kalman_predict(const Gaussian<N>& belief, const Mat<N>& A, const Mat<N>& B, const Vec<N>& control,
                           const Mat<N>& Q)
{
    Gaussian<N> out;
    out.mean = A * belief.mean + B * control;
    const Mat<N> P = A * belief.covariance * A.transpose() + Q;
    out.covariance = 0.5 * (P + P.transpose());
    return out;
}

template <int D>
Gaussian<2 * D> observation_message(const GeneralizedState<D>& z, const GdbnModel<D>& model)
{
    const Mat<2 * D> Hinv = model.H.inverse();
    return {Hinv * z.stacked(), Hinv * model.measurementNoise * Hinv.transpose()};
}

/// Applies the validation gate for one signal and maintains its held covariance.
template <int D>
bool outside_gate(const GeneralizedState<D>& z, const GaussianMixture<2 * D>& predictive, const GdbnModel<D>& model,
                  double gateSigma, std::optional<Mat<2 * D>>& coastGate)
{
    if (gateSigma <= 0.0) return false;
    const Gaussian<2 * D> pred = predictive.moment_matched();
    const Vec<2 * D> d = z.stacked() - model.H * pred.mean;
    const Mat<2 * D> S = coastGate ? *coastGate
                                   : regularized<2 * D>(Mat<2 * D>(model.H * pred.covariance * model.H.transpose() +
                                                                   model.measurementNoise));
    const bool outside = d.dot(S.ldlt().solve(d)) > gateSigma * gateSigma;
    if (outside && !coastGate) coastGate = S;
    if (!outside) coastGate.reset();
    return outside;
}

}  // namespace detail

/// L equally weighted particles: RF clusters from the stationary distribution of the fallback
/// transition matrix, trajectory clusters through phi. Beliefs start at the given lifted observations
/// (with the measurement covariance) or, without them, at the sampled clusters' Gaussians.
template <int D>
FilterState<D> init_filter(const CoupledModel<D>& model, int L, std::mt19937_64& rng,
                           const std::optional<GeneralizedState<D>>& rfObs = std::nullopt,
                           const std::optional<GeneralizedState<D>>& gpsObs = std::nullopt)
{
    require(L >= 1, "init_filter: L must be >= 1");
    model.validate();
    const Eigen::VectorXd pi = model.rfModel.transition.fallback.stationary();
    const StochasticMatrix start(pi.transpose());
    std::uniform_real_distribution<double> u(0.0, 1.0);

    FilterState<D> state;
    state.particles.resize(static_cast<std::size_t>(L));
    state.dwellCounters.assign(static_cast<std::size_t>(L), 1);
    for (auto& p : state.particles) {
        p.rfCluster = start.sample_row(0, u(rng));
        p.gpsCluster = predict_gps_cluster(p.rfCluster, model.phi, rng);
        p.rfBelief = rfObs ? detail::observation_message<D>(*rfObs, model.rfModel)
                           : model.rfModel.clusters[p.rfCluster].gaussian;
        p.gpsBelief = gpsObs ? detail::observation_message<D>(*gpsObs, model.gpsModel)
                             : model.gpsModel.clusters[p.gpsCluster].gaussian;
        p.weight = 1.0 / L;
    }
    return state;
}

template <int D>
FilterState<D> init_filter(const CoupledModel<D>& model, int L, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return init_filter<D>(model, L, rng);
}

/// Time update. Each particle jumps RF cluster (dwell-aware), draws a trajectory cluster from phi,
/// and propagates both beliefs with A, B * control and the process noise. The state now holds the
/// predicted beliefs.
template <int D>
StepPrediction<D> predict_step(FilterState<D>& state, const CoupledModel<D>& model, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto& rf = model.rfModel;
    const auto& gps = model.gpsModel;
    StepPrediction<D> out;
    Vec<2 * D> rfMean = Vec<2 * D>::Zero(), gpsMean = Vec<2 * D>::Zero();
    for (std::size_t l = 0; l < state.size(); ++l) {
        auto& p = state.particles[l];
        const int next = rf.transition.sample_next(p.rfCluster, state.dwellCounters[l], u(rng));
        state.dwellCounters[l] = next == p.rfCluster ? state.dwellCounters[l] + 1 : 1;
        p.rfCluster = next;
        p.gpsCluster = model.phi.sample_row(next, u(rng));

        p.rfBelief = detail::kalman_predict<2 * D>(p.rfBelief, rf.A, rf.B, rf.controls[static_cast<std::size_t>(next)],
                                                   rf.processNoise);
        p.gpsBelief = detail::kalman_predict<2 * D>(p.gpsBelief, gps.A, gps.B,
                                                    gps.controls[static_cast<std::size_t>(p.gpsCluster)], gps.processNoise);
        out.rfPredictive.add(p.weight, p.rfBelief);
        out.gpsPredictive.add(p.weight, p.gpsBelief);
        rfMean += p.weight * p.rfBelief.mean;
        gpsMean += p.weight * p.gpsBelief.mean;
    }
    out.rfPoint = rfMean.template head<D>();
    out.gpsPoint = gpsMean.template head<D>();
    ++state.t;
    return out;
}

struct UpdateFlags {
    bool maximalSurprise = false;  // all weights vanished and were reset to uniform
    bool gatedRf = false;
    bool gatedGps = false;
    bool resampled = false;
};

/// Systematic resampling to the same particle count; weights become 1/L.
template <int D>
void systematic_resample(FilterState<D>& state, std::mt19937_64& rng)
{
    const std::size_t L = state.size();
    std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(L));
    const double start = u(rng);
    std::vector<Particle<D>> particles;
    std::vector<int> dwell;
    particles.reserve(L);
    dwell.reserve(L);
    double cumulative = state.particles[0].weight;
    std::size_t i = 0;
    for (std::size_t m = 0; m < L; ++m) {
        const double target = start + static_cast<double>(m) / static_cast<double>(L);
        while (target > cumulative && i + 1 < L) cumulative += state.particles[++i].weight;
        particles.push_back(state.particles[i]);
        dwell.push_back(state.dwellCounters[i]);
    }
    for (auto& p : particles) p.weight = 1.0 / static_cast<double>(L);
    state.particles = std::move(particles);
    state.dwellCounters = std::move(dwell);
}

template <int D>
double effective_sample_size(const FilterState<D>& state)
{
    double s2 = 0.0;
    for (const auto& p : state.particles) s2 += p.weight * p.weight;
    return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

/// Measurement update. Both beliefs are corrected with H and the measurement noise, and weights are
/// multiplied by the two observation likelihoods under each particle's cluster-conditioned predictive
/// density. A signal whose observation falls outside the validation gate is neither absorbed nor used
/// for weighting.
template <int D>
UpdateFlags update_step(FilterState<D>& state, const StepPrediction<D>& prediction, const GeneralizedState<D>& rfObs,
                        const GeneralizedState<D>& gpsObs, const CoupledModel<D>& model, std::mt19937_64& rng,
                        const FilterOptions& options = {})
{
    UpdateFlags flags;
    flags.gatedRf =
        detail::outside_gate<D>(rfObs, prediction.rfPredictive, model.rfModel, options.rfGateSigma, state.rfCoastGate);
    flags.gatedGps = detail::outside_gate<D>(gpsObs, prediction.gpsPredictive, model.gpsModel, options.gpsGateSigma,
                                             state.gpsCoastGate);

    std::vector<double> logW(state.size());
    for (std::size_t l = 0; l < state.size(); ++l) {
        auto& p = state.particles[l];
        double ll = 0.0;
        if (!flags.gatedRf) {
            const auto upd = detail::kalman_update<2 * D>(p.rfBelief, rfObs.stacked(), model.rfModel.H,
                                                          model.rfModel.measurementNoise);
            p.rfBelief = upd.posterior;
            ll += upd.logLikelihood;
        }
        if (!flags.gatedGps) {
            const auto upd = detail::kalman_update<2 * D>(p.gpsBelief, gpsObs.stacked(), model.gpsModel.H,
                                                          model.gpsModel.measurementNoise);
            p.gpsBelief = upd.posterior;
            ll += upd.logLikelihood;
        }
        logW[l] = std::log(p.weight) + ll;
    }
    double maxLog = -std::numeric_limits<double>::infinity();
    for (double lw : logW)
        if (lw > maxLog) maxLog = lw;
    double total = 0.0;
    if (std::isfinite(maxLog))
        for (std::size_t l = 0; l < state.size(); ++l) {
            state.particles[l].weight = std::exp(logW[l] - maxLog);
            total += state.particles[l].weight;
        }
    if (!(total > 0.0) || !std::isfinite(total)) {
        flags.maximalSurprise = true;
        for (auto& p : state.particles) p.weight = 1.0 / static_cast<double>(state.size());
    } else {
        for (auto& p : state.particles) p.weight /= total;
    }
    if (effective_sample_size<D>(state) < options.essFraction * static_cast<double>(state.size())) {
        systematic_resample<D>(state, rng);
        flags.resampled = true;
    }
    return flags;
}

/// Per-step filter output for both signals.
template <int D>
struct StepRecord {
    int t = 0;
    /// Moment-matched predictive densities and the observation (diagnostic) messages.
    Gaussian<2 * D> rfPredictive, gpsPredictive;
    Gaussian<2 * D> rfDiagnostic, gpsDiagnostic;
    Vec<D> rfPoint = Vec<D>::Zero(), gpsPoint = Vec<D>::Zero();
    Vec<D> rfObserved = Vec<D>::Zero(), gpsObserved = Vec<D>::Zero();
    UpdateFlags flags;
};

/// Runs the filter over time-aligned RF and trajectory series. The filter starts at t = 1 (the first
/// lifted sample with a real derivative); records cover t = 2 .. T-1.
template <int D>
std::vector<StepRecord<D>> run_filter(const CoupledModel<D>& model, const std::vector<Vec<D>>& rfSeries,
                                      const std::vector<Vec<D>>& gpsSeries, const FilterOptions& options,
                                      std::uint64_t seed)
{
    require(rfSeries.size() == gpsSeries.size(), "run_filter: series must be time-aligned");
    require(rfSeries.size() >= 3, "run_filter: need at least three samples");
    const auto rf = lift<D>(rfSeries);
    const auto gps = lift<D>(gpsSeries);
    std::mt19937_64 rng(seed);
    auto state = init_filter<D>(model, options.particles, rng, rf[1], gps[1]);
    state.t = 1;

    std::vector<StepRecord<D>> records;
    records.reserve(rf.size() - 2);
    for (std::size_t t = 2; t < rf.size(); ++t) {
        const auto prediction = predict_step<D>(state, model, rng);
        StepRecord<D> rec;
        rec.t = static_cast<int>(t);
        rec.rfPredictive = prediction.rfPredictive.moment_matched();
        rec.gpsPredictive = prediction.gpsPredictive.moment_matched();
        rec.rfDiagnostic = detail::observation_message<D>(rf[t], model.rfModel);
        rec.gpsDiagnostic = detail::observation_message<D>(gps[t], model.gpsModel);
        rec.rfPoint = prediction.rfPoint;
        rec.gpsPoint = prediction.gpsPoint;
        rec.rfObserved = rfSeries[t];
        rec.gpsObserved = gpsSeries[t];
        rec.flags = update_step<D>(state, prediction, rf[t], gps[t], model, rng, options);
        records.push_back(rec);
    }
    return records;
}

}  // namespace v2xguard
