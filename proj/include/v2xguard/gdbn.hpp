// Learning one generalized dynamic Bayesian network (GDBN) per signal: null-force prediction,
// generalized errors, Growing Neural Gas clustering and dwell-time-conditioned transitions.
#pragma once

#include "v2xguard/core.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace v2xguard {

template <int D>
struct GeneralizedError {
    Vec<2 * D> value = Vec<2 * D>::Zero();
    int t = 0;
};

/// Pairs each sample with its backward first difference; the first sample gets zero derivative.
template <int D>
std::vector<GeneralizedState<D>> lift(const std::vector<Vec<D>>& observations)
{
    std::vector<GeneralizedState<D>> out;
    out.reserve(observations.size());
    for (std::size_t t = 0; t < observations.size(); ++t) {
        const Vec<D> diff = t == 0 ? Vec<D>::Zero() : Vec<D>(observations[t] - observations[t - 1]);
        out.emplace_back(observations[t], diff);
    }
    return out;
}

/// Transition matrices Pi_tau for dwell times tau = 1..tauMax plus a dwell-agnostic fallback.
struct TransitionModel {
    std::vector<StochasticMatrix> matrices;  // index tau - 1
    StochasticMatrix fallback;
    /// Observed transitions out of (cluster j, dwell tau): bucketCounts[tau - 1][j].
    std::vector<std::vector<int>> bucketCounts;
    int minBucketCount = 5;

    int tau_max() const { return static_cast<int>(matrices.size()); }
    int clusters() const { return fallback.rows(); }

    /// Row used when leaving cluster j after tau steps in it.
    const StochasticMatrix& matrix_for(int j, int tau) const
    {
        const int capped = std::clamp(tau, 1, tau_max());
        const auto& counts = bucketCounts[static_cast<std::size_t>(capped - 1)];
        if (counts[static_cast<std::size_t>(j)] >= minBucketCount) return matrices[static_cast<std::size_t>(capped - 1)];
        return fallback;
    }

    int sample_next(int j, int tau, double u) const { return matrix_for(j, tau).sample_row(j, u); }
};

/// Counts (from j -> to i) transitions, self-transitions included, bucketed by the dwell time spent in
/// j (capped at tauMax). Each sequence is counted separately; nothing is counted across sequences.
inline TransitionModel estimate_transitions(const std::vector<std::vector<int>>& sequences, int M, int tauMax,
                                            int minBucketCount = 5)
{
    require(M >= 1, "estimate_transitions: M must be >= 1");
    require(tauMax >= 1, "estimate_transitions: tauMax must be >= 1");
    std::size_t total = 0;
    for (const auto& s : sequences) total += s.size();
    require(total >= 2, "estimate_transitions: need at least two labels");

    std::vector<Eigen::MatrixXd> counts(static_cast<std::size_t>(tauMax), Eigen::MatrixXd::Zero(M, M));
    Eigen::MatrixXd fallback = Eigen::MatrixXd::Zero(M, M);
    for (const auto& seq : sequences) {
        int tau = 1;
        for (std::size_t t = 1; t < seq.size(); ++t) {
            const int j = seq[t - 1], i = seq[t];
            require(j >= 0 && j < M && i >= 0 && i < M, "estimate_transitions: label out of range");
            counts[static_cast<std::size_t>(std::min(tau, tauMax) - 1)](j, i) += 1.0;
            fallback(j, i) += 1.0;
            tau = (i == j) ? tau + 1 : 1;
        }
    }
    TransitionModel model;
    model.minBucketCount = minBucketCount;
    model.fallback = row_normalize(fallback);
    for (const auto& c : counts) {
        model.matrices.push_back(row_normalize(c));
        std::vector<int> rowTotals(static_cast<std::size_t>(M));
        for (int j = 0; j < M; ++j) rowTotals[static_cast<std::size_t>(j)] = static_cast<int>(c.row(j).sum());
        model.bucketCounts.push_back(std::move(rowTotals));
    }
    return model;
}

inline TransitionModel estimate_transitions(const std::vector<int>& labels, int M, int tauMax, int minBucketCount = 5)
{
    return estimate_transitions(std::vector<std::vector<int>>{labels}, M, tauMax, minBucketCount);
}

// ---------------------------------------------------------------------------------------------
// Growing Neural Gas (Fritzke, 1995).

struct GngParams {
    int lambda = 100;           // steps between insertions
    double epsWinner = 0.2;     // winner drift rate
    double epsNeighbor = 0.006; // neighbor drift rate
    int maxEdgeAge = 50;
    double insertErrorDecay = 0.5;
    double errorDecay = 0.995;
    int epochs = 10;
    /// Extra epochs allowed when the node budget is not reached within `epochs`.
    int maxExtraEpochs = 50;
};

template <int N>
class GrowingNeuralGas {
public:
    GrowingNeuralGas(int maxNodes, GngParams params, std::uint64_t seed)
        : maxNodes_(maxNodes), params_(params), rng_(seed)
    {
        require(maxNodes >= 2, "GrowingNeuralGas: maxNodes must be >= 2");
    }

    void fit(const std::vector<Vec<N>>& samples)
    {
        require(samples.size() >= 2, "GrowingNeuralGas: need at least two samples");
        std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
        const std::size_t a = pick(rng_);
        std::size_t b = pick(rng_);
        while (b == a) b = pick(rng_);
        nodes_ = {samples[a], samples[b]};
        errors_ = {0.0, 0.0};
        edges_.assign(2, std::vector<int>(2, -1));
        connect(0, 1);

        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        long step = 0;
        const int epochBudget = params_.epochs + params_.maxExtraEpochs;
        for (int epoch = 0; epoch < epochBudget; ++epoch) {
            if (epoch >= params_.epochs && size() >= maxNodes_) break;
            std::shuffle(order.begin(), order.end(), rng_);
            for (std::size_t idx : order) {
                adapt(samples[idx]);
                if (++step % params_.lambda == 0 && size() < maxNodes_) insert();
                for (auto& e : errors_) e *= params_.errorDecay;
            }
        }
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    const std::vector<Vec<N>>& nodes() const { return nodes_; }

    int nearest(const Vec<N>& x) const
    {
        int best = 0;
        double bestD = std::numeric_limits<double>::infinity();
        for (int i = 0; i < size(); ++i) {
            const double d = (nodes_[static_cast<std::size_t>(i)] - x).squaredNorm();
            if (d < bestD) {
                bestD = d;
                best = i;
            }
        }
        return best;
    }

private:
    void connect(int i, int j) { edges_[i][j] = edges_[j][i] = 0; }
    void disconnect(int i, int j) { edges_[i][j] = edges_[j][i] = -1; }
    bool connected(int i, int j) const { return edges_[i][j] >= 0; }

    void adapt(const Vec<N>& x)
    {
        int s1 = -1, s2 = -1;
        double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
        for (int i = 0; i < size(); ++i) {
            const double d = (nodes_[static_cast<std::size_t>(i)] - x).squaredNorm();
            if (d < d1) {
                d2 = d1;
                s2 = s1;
                d1 = d;
                s1 = i;
            } else if (d < d2) {
                d2 = d;
                s2 = i;
            }
        }
        for (int n = 0; n < size(); ++n)
            if (n != s1 && connected(s1, n)) {
                ++edges_[s1][n];
                edges_[n][s1] = edges_[s1][n];
            }
        errors_[static_cast<std::size_t>(s1)] += d1;
        nodes_[static_cast<std::size_t>(s1)] += params_.epsWinner * (x - nodes_[static_cast<std::size_t>(s1)]);
        for (int n = 0; n < size(); ++n)
            if (n != s1 && connected(s1, n))
                nodes_[static_cast<std::size_t>(n)] += params_.epsNeighbor * (x - nodes_[static_cast<std::size_t>(n)]);
        connect(s1, s2);
        prune();
    }

    void prune()
    {
        for (int i = 0; i < size(); ++i)
            for (int j = i + 1; j < size(); ++j)
                if (edges_[i][j] > params_.maxEdgeAge) disconnect(i, j);
        // Remove isolated nodes, keeping at least two.
        for (int i = size() - 1; i >= 0 && size() > 2; --i) {
            bool any = false;
            for (int j = 0; j < size(); ++j) any = any || (j != i && connected(i, j));
            if (!any) remove(i);
        }
    }

    void remove(int i)
    {
        nodes_.erase(nodes_.begin() + i);
        errors_.erase(errors_.begin() + i);
        edges_.erase(edges_.begin() + i);
        for (auto& row : edges_) row.erase(row.begin() + i);
    }

    void insert()
    {
        const int q = static_cast<int>(std::max_element(errors_.begin(), errors_.end()) - errors_.begin());
        int f = -1;
        for (int n = 0; n < size(); ++n)
            if (n != q && connected(q, n) && (f < 0 || errors_[static_cast<std::size_t>(n)] > errors_[static_cast<std::size_t>(f)]))
                f = n;
        if (f < 0) return;
        const int r = size();
        nodes_.push_back(0.5 * (nodes_[static_cast<std::size_t>(q)] + nodes_[static_cast<std::size_t>(f)]));
        for (auto& row : edges_) row.push_back(-1);
        edges_.emplace_back(static_cast<std::size_t>(r + 1), -1);
        disconnect(q, f);
        connect(q, r);
        connect(r, f);
        errors_[static_cast<std::size_t>(q)] *= params_.insertErrorDecay;
        errors_[static_cast<std::size_t>(f)] *= params_.insertErrorDecay;
        errors_.push_back(errors_[static_cast<std::size_t>(q)]);
    }

    int maxNodes_;
    GngParams params_;
    std::mt19937_64 rng_;
    std::vector<Vec<N>> nodes_;
    std::vector<double> errors_;
    std::vector<std::vector<int>> edges_;  // age, or -1 when absent
};

/// Gaussian fitted to a set of samples. A unit-weight pseudo-observation of `prior` keeps small
/// clusters' covariances positive definite.
template <int N>
Gaussian<N> fit_gaussian(const std::vector<Vec<N>>& members, const Mat<N>& prior)
{
    require(!members.empty(), "fit_gaussian: no members");
    Vec<N> mean = Vec<N>::Zero();
    for (const auto& m : members) mean += m;
    mean /= static_cast<double>(members.size());
    Mat<N> scatter = Mat<N>::Zero();
    for (const auto& m : members) scatter += (m - mean) * (m - mean).transpose();
    Mat<N> cov = (scatter + prior) / (static_cast<double>(members.size()) + 1.0);
    cov = 0.5 * (cov + cov.transpose());
    return {mean, cov};
}

template <int N>
Mat<N> sample_covariance(const std::vector<Vec<N>>& samples)
{
    Vec<N> mean = Vec<N>::Zero();
    for (const auto& s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    Mat<N> cov = Mat<N>::Zero();
    for (const auto& s : samples) cov += (s - mean) * (s - mean).transpose();
    cov /= static_cast<double>(std::max<std::size_t>(samples.size() - 1, 1));
    return 0.5 * (cov + cov.transpose());
}

/// Clusters generalized errors with GNG; one Gaussian per node over its Voronoi members. Nodes that
/// end up with no members are dropped, so the result can hold fewer than maxNodes clusters.
template <int D>
ClusterSet<D> gng_cluster(const std::vector<GeneralizedError<D>>& samples, int maxNodes, const GngParams& params,
                          std::uint64_t seed, SignalKind kind = SignalKind::GPS)
{
    require(maxNodes >= 2, "gng_cluster: M must be >= 2");
    require(samples.size() >= static_cast<std::size_t>(10 * maxNodes), "gng_cluster: need at least 10*M samples");
    constexpr int N = 2 * D;
    std::vector<Vec<N>> xs;
    xs.reserve(samples.size());
    for (const auto& s : samples) xs.push_back(s.value);

    GrowingNeuralGas<N> gng(maxNodes, params, seed);
    gng.fit(xs);

    std::vector<std::vector<Vec<N>>> members(static_cast<std::size_t>(gng.size()));
    for (const auto& x : xs) members[static_cast<std::size_t>(gng.nearest(x))].push_back(x);

    const Mat<N> global = sample_covariance<N>(xs);
    const double floor = std::max(1e-12, 1e-6 * global.trace() / N);
    const Mat<N> prior = global / std::max(1, gng.size()) + floor * Mat<N>::Identity();

    ClusterSet<D> set;
    set.signalKind = kind;
    for (auto& m : members) {
        if (m.empty()) continue;
        Cluster<D> c;
        c.id = set.size();
        c.gaussian = fit_gaussian<N>(m, prior);
        c.memberCount = static_cast<int>(m.size());
        set.clusters.push_back(c);
    }
    set.validate();
    return set;
}

/// Nearest cluster by Mahalanobis distance under the regularized covariance; ties go to the lowest id.
template <int D>
int assign_cluster(const Vec<2 * D>& x, const ClusterSet<D>& clusters)
{
    require(clusters.size() >= 1, "assign_cluster: empty cluster set");
    int best = 0;
    double bestD = std::numeric_limits<double>::infinity();
    for (int m = 0; m < clusters.size(); ++m) {
        const auto& g = clusters[m].gaussian;
        const Vec<2 * D> d = x - g.mean;
        const double dist = d.dot(regularized<2 * D>(g.covariance).ldlt().solve(d));
        if (dist < bestD) {
            bestD = dist;
            best = m;
        }
    }
    return best;
}

struct GdbnParams {
    GngParams gng;
    int tauMax = 20;
    int minBucketCount = 5;
    /// Share of the post-fit residual covariance attributed to measurement noise; the rest is
    /// process noise.
    double measurementShare = 0.5;
    /// Isotropic floor added to the residual covariance, as a fraction of its mean eigenvalue. The
    /// value and derivative parts of a lifted residual are equal, so the raw covariance is singular.
    double noiseFloorFraction = 0.1;
};

template <int D>
struct GdbnModel {
    static constexpr int kStateDim = 2 * D;
    using StateVec = Vec<2 * D>;
    using StateMat = Mat<2 * D>;

    SignalKind signalKind = SignalKind::GPS;
    int requestedClusters = 0;
    ClusterSet<D> clusters;
    TransitionModel transition;
    StateMat A = constant_velocity();
    StateMat B = StateMat::Identity();
    StateMat H = StateMat::Identity();
    /// Control vector per cluster (the cluster's mean generalized error).
    std::vector<StateVec> controls;
    StateMat processNoise = StateMat::Identity();
    StateMat measurementNoise = StateMat::Identity();
    double processNoiseStd = 1.0;
    double measurementNoiseStd = 1.0;
    std::uint64_t seed = 0;

    static StateMat constant_velocity()
    {
        StateMat a = StateMat::Identity();
        a.template topRightCorner<D, D>() = Mat<D>::Identity();
        return a;
    }

    int cluster_count() const { return clusters.size(); }
};

/// A X (value += derivative, derivative unchanged); no control term.
template <int D>
GeneralizedState<D> null_force_predict(const GeneralizedState<D>& prev, const GdbnModel<D>& model)
{
    return GeneralizedState<D>::from_stacked(model.A * prev.stacked());
}

/// H^-1 Z - X in generalized coordinates.
template <int D>
GeneralizedError<D> generalized_error(const GeneralizedState<D>& observation, const GeneralizedState<D>& predicted,
                                      const Mat<2 * D>& H, int t = 0)
{
    Eigen::FullPivLU<Mat<2 * D>> lu(H);
    require(lu.isInvertible(), "generalized_error: H is singular");
    GeneralizedError<D> e;
    e.value = lu.solve(observation.stacked()) - predicted.stacked();
    e.t = t;
    return e;
}

/// Generalized errors of the null-force model for one series. The first two samples are skipped:
/// their lifted derivatives are not yet backed by two real differences.
template <int D>
std::vector<GeneralizedError<D>> null_force_errors(const std::vector<Vec<D>>& observations, const GdbnModel<D>& model)
{
    const auto lifted = lift<D>(observations);
    std::vector<GeneralizedError<D>> out;
    for (std::size_t t = 2; t < lifted.size(); ++t)
        out.push_back(generalized_error<D>(lifted[t], null_force_predict<D>(lifted[t - 1], model), model.H,
                                           static_cast<int>(t)));
    return out;
}

/// Cluster label for each step t >= 2 of a series.
template <int D>
std::vector<int> label_series(const std::vector<Vec<D>>& observations, const GdbnModel<D>& model)
{
    std::vector<int> labels;
    for (const auto& e : null_force_errors<D>(observations, model)) labels.push_back(assign_cluster<D>(e.value, model.clusters));
    return labels;
}

/// Learns a GDBN from one or more normal-situation series of d-vectors.
template <int D>
GdbnModel<D> learn_gdbn(const std::vector<std::vector<Vec<D>>>& series, int M, const GdbnParams& params,
                        std::uint64_t seed, SignalKind kind = SignalKind::GPS)
{
    constexpr int N = 2 * D;
    GdbnModel<D> model;
    model.signalKind = kind;
    model.requestedClusters = M;
    model.seed = seed;

    std::vector<GeneralizedError<D>> errors;
    std::size_t totalLength = 0;
    for (const auto& s : series) {
        totalLength += s.size();
        const auto e = null_force_errors<D>(s, model);
        errors.insert(errors.end(), e.begin(), e.end());
    }
    require(totalLength >= static_cast<std::size_t>(10 * M), "learn_gdbn: series shorter than 10*M");

    model.clusters = gng_cluster<D>(errors, M, params.gng, seed, kind);

    std::vector<std::vector<int>> labels;
    std::vector<Vec<N>> residuals;
    for (const auto& s : series) {
        std::vector<int> seq;
        for (const auto& e : null_force_errors<D>(s, model)) {
            const int m = assign_cluster<D>(e.value, model.clusters);
            seq.push_back(m);
            residuals.push_back(e.value - model.clusters[m].gaussian.mean);
        }
        labels.push_back(std::move(seq));
    }
    model.transition = estimate_transitions(labels, model.clusters.size(), params.tauMax, params.minBucketCount);

    model.controls.clear();
    for (const auto& c : model.clusters.clusters) model.controls.push_back(c.gaussian.mean);

    Mat<N> res = sample_covariance<N>(residuals);
    const double floor = std::max(1e-12, params.noiseFloorFraction * res.trace() / N);
    res += floor * Mat<N>::Identity();
    model.measurementNoise = params.measurementShare * res;
    model.processNoise = (1.0 - params.measurementShare) * res;
    model.processNoiseStd = std::sqrt(model.processNoise.trace() / N);
    model.measurementNoiseStd = std::sqrt(model.measurementNoise.trace() / N);
    return model;
}

template <int D>
GdbnModel<D> learn_gdbn(const std::vector<Vec<D>>& observations, int M, const GdbnParams& params, std::uint64_t seed,
                        SignalKind kind = SignalKind::GPS)
{
    return learn_gdbn<D>(std::vector<std::vector<Vec<D>>>{observations}, M, params, seed, kind);
}

}  // namespace v2xguard
