// Shared mathematical vocabulary: generalized states, Gaussians, clusters and
// stochastic matrices, plus the few pure functions every other module uses.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2xguard {

/// Thrown when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& what)
{
    if (!condition) throw ContractViolation(what);
}

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
template <int N>
using Mat = Eigen::Matrix<double, N, N>;

using Vec2 = Vec<2>;

enum class SignalKind { RF, GPS };

inline const char* to_string(SignalKind kind) { return kind == SignalKind::RF ? "RF" : "GPS"; }

/// H0: no attack, H1: jammer on the V2I link, H2: GPS spoofer. Indeterminate is a decision-only
/// value (RF abnormal while the trajectory is normal).
enum class Hypothesis { H0, H1, H2, Indeterminate };

inline const char* to_string(Hypothesis h)
{
    switch (h) {
        case Hypothesis::H0: return "H0";
        case Hypothesis::H1: return "H1";
        case Hypothesis::H2: return "H2";
        case Hypothesis::Indeterminate: return "indeterminate";
    }
    return "?";
}

/// Value of a d-dimensional signal stacked with its first-order derivative.
template <int D>
struct GeneralizedState {
    static constexpr int kDim = D;
    static constexpr int kStateDim = 2 * D;

    Vec<D> value = Vec<D>::Zero();
    Vec<D> derivative = Vec<D>::Zero();

    GeneralizedState() = default;
    GeneralizedState(const Vec<D>& v, const Vec<D>& dv) : value(v), derivative(dv)
    {
        require(v.allFinite() && dv.allFinite(), "GeneralizedState: non-finite entry");
    }

    static GeneralizedState from_stacked(const Vec<2 * D>& x)
    {
        return {x.template head<D>(), x.template tail<D>()};
    }

    Vec<2 * D> stacked() const
    {
        Vec<2 * D> x;
        x << value, derivative;
        return x;
    }
};

template <int N>
struct Gaussian {
    Vec<N> mean = Vec<N>::Zero();
    Mat<N> covariance = Mat<N>::Identity();

    Gaussian() = default;
    Gaussian(const Vec<N>& m, const Mat<N>& c) : mean(m), covariance(c) {}
};

/// Symmetric and PSD up to round-off.
template <int N>
bool is_valid_covariance(const Mat<N>& c)
{
    if (!c.allFinite()) return false;
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
    Eigen::SelfAdjointEigenSolver<Mat<N>> eig(c, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff() >= -1e-9 * scale;
}

/// Adds eps*I with eps = 1e-9 * trace / dim, so near-degenerate clusters stay invertible.
template <int N>
Mat<N> regularized(const Mat<N>& c)
{
    const double eps = std::max(1e-9 * c.trace() / N, 1e-300);
    return c + eps * Mat<N>::Identity();
}

template <int N>
double log_det_spd(const Mat<N>& c)
{
    Eigen::LLT<Mat<N>> llt(c);
    if (llt.info() != Eigen::Success) {
        // Fall back to eigenvalues for matrices that are PSD only up to round-off.
        Eigen::SelfAdjointEigenSolver<Mat<N>> eig(c, Eigen::EigenvaluesOnly);
        return eig.eigenvalues().cwiseMax(1e-300).array().log().sum();
    }
    const auto& l = llt.matrixL();
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

/// Bhattacharyya coefficient of two Gaussians, clamped to [0, 1].
template <int N>
double gaussian_bhattacharyya(const Gaussian<N>& a, const Gaussian<N>& b)
{
    require(is_valid_covariance<N>(a.covariance), "gaussian_bhattacharyya: first covariance is not PSD");
    require(is_valid_covariance<N>(b.covariance), "gaussian_bhattacharyya: second covariance is not PSD");

    const Mat<N> ca = regularized<N>(a.covariance);
    const Mat<N> cb = regularized<N>(b.covariance);
    const Mat<N> avg = (ca + cb) / 2.0;
    const Vec<N> delta = a.mean - b.mean;

    Eigen::LDLT<Mat<N>> ldlt(avg);
    const double mahal = delta.dot(ldlt.solve(delta));
    const double dist = mahal / 8.0 + 0.5 * (log_det_spd<N>(avg) - 0.5 * (log_det_spd<N>(ca) + log_det_spd<N>(cb)));
    const double bc = std::exp(-dist);
    if (!(bc == bc)) return 0.0;
    return std::clamp(bc, 0.0, 1.0);
}

/// Weighted Gaussian mixture; weights sum to one.
template <int N>
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Gaussian<N>> components;

    void add(double w, const Gaussian<N>& g)
    {
        weights.push_back(w);
        components.push_back(g);
    }

    std::size_t size() const { return components.size(); }

    /// Single Gaussian with the mixture's first two moments.
    Gaussian<N> moment_matched() const
    {
        require(!components.empty(), "GaussianMixture: empty mixture");
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        require(total > 0.0, "GaussianMixture: zero total weight");
        Vec<N> mean = Vec<N>::Zero();
        for (std::size_t i = 0; i < size(); ++i) mean += (weights[i] / total) * components[i].mean;
        Mat<N> cov = Mat<N>::Zero();
        for (std::size_t i = 0; i < size(); ++i) {
            const Vec<N> d = components[i].mean - mean;
            cov += (weights[i] / total) * (components[i].covariance + d * d.transpose());
        }
        cov = 0.5 * (cov + cov.transpose());
        return {mean, cov};
    }
};

/// Gaussian region of generalized-error space found by clustering.
template <int D>
struct Cluster {
    int id = 0;
    Gaussian<2 * D> gaussian;
    int memberCount = 1;

    Vec<D> value_mean() const { return gaussian.mean.template head<D>(); }
    Vec<D> derivative_mean() const { return gaussian.mean.template tail<D>(); }
};

template <int D>
struct ClusterSet {
    SignalKind signalKind = SignalKind::GPS;
    std::vector<Cluster<D>> clusters;

    int size() const { return static_cast<int>(clusters.size()); }
    const Cluster<D>& operator[](int i) const { return clusters.at(static_cast<std::size_t>(i)); }

    void validate() const
    {
        require(!clusters.empty(), "ClusterSet: no clusters");
        for (std::size_t i = 0; i < clusters.size(); ++i)
            require(clusters[i].id == static_cast<int>(i), "ClusterSet: ids must be 0..M-1 in order");
    }
};

/// Row-stochastic matrix. Row index = "from", column index = "to".
class StochasticMatrix {
public:
    StochasticMatrix() = default;
    explicit StochasticMatrix(Eigen::MatrixXd p) : p_(std::move(p))
    {
        require(p_.rows() >= 1 && p_.cols() >= 1, "StochasticMatrix: empty");
        require((p_.array() >= 0.0).all() && p_.allFinite(), "StochasticMatrix: negative or non-finite entry");
        for (Eigen::Index r = 0; r < p_.rows(); ++r)
            require(std::abs(p_.row(r).sum() - 1.0) <= 1e-9, "StochasticMatrix: row does not sum to 1");
    }

    static StochasticMatrix uniform(int rows, int cols)
    {
        return StochasticMatrix(Eigen::MatrixXd::Constant(rows, cols, 1.0 / cols));
    }

    int rows() const { return static_cast<int>(p_.rows()); }
    int cols() const { return static_cast<int>(p_.cols()); }
    double operator()(int r, int c) const { return p_(r, c); }
    const Eigen::MatrixXd& matrix() const { return p_; }

    /// Samples a column index from row r with a uniform draw u in [0, 1).
    int sample_row(int r, double u) const
    {
        require(r >= 0 && r < rows(), "StochasticMatrix: row index out of range");
        double acc = 0.0;
        for (int c = 0; c < cols(); ++c) {
            acc += p_(r, c);
            if (u < acc) return c;
        }
        // u landed in the round-off gap at the top; return the last nonzero column.
        for (int c = cols() - 1; c >= 0; --c)
            if (p_(r, c) > 0.0) return c;
        return cols() - 1;
    }

    /// Left eigenvector for eigenvalue 1 by power iteration from the uniform vector.
    Eigen::VectorXd stationary(int iterations = 2000) const
    {
        require(rows() == cols(), "StochasticMatrix: stationary distribution needs a square matrix");
        Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(cols(), 1.0 / cols());
        for (int i = 0; i < iterations; ++i) {
            Eigen::RowVectorXd next = 0.5 * (pi + pi * p_);  // lazy chain, converges for periodic chains too
            if ((next - pi).cwiseAbs().maxCoeff() < 1e-15) {
                pi = next;
                break;
            }
            pi = next;
        }
        pi /= pi.sum();
        return pi.transpose();
    }

private:
    Eigen::MatrixXd p_;
};

/// Divides each row by its sum; all-zero rows become uniform.
inline StochasticMatrix row_normalize(const Eigen::MatrixXd& counts)
{
    require(counts.rows() >= 1 && counts.cols() >= 1, "row_normalize: empty matrix");
    require(counts.allFinite(), "row_normalize: non-finite count");
    require((counts.array() >= 0.0).all(), "row_normalize: negative count");
    Eigen::MatrixXd p = counts;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double s = p.row(r).sum();
        if (s > 0.0)
            p.row(r) /= s;
        else
            p.row(r).setConstant(1.0 / static_cast<double>(p.cols()));
    }
    return StochasticMatrix(std::move(p));
}

/// Root mean square error averaged over time steps and vector components.
template <typename VecT>
double rmse(std::span<const VecT> predictions, std::span<const VecT> observations)
{
    require(!predictions.empty(), "rmse: empty sequence");
    require(predictions.size() == observations.size(), "rmse: length mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < predictions.size(); ++t) {
        require(predictions[t].size() == observations[t].size(), "rmse: dimension mismatch");
        sum += (predictions[t] - observations[t]).squaredNorm();
        count += static_cast<std::size_t>(predictions[t].size());
    }
    return std::sqrt(sum / static_cast<double>(count));
}

template <typename VecT>
double rmse(const std::vector<VecT>& predictions, const std::vector<VecT>& observations)
{
    return rmse<VecT>(std::span<const VecT>(predictions), std::span<const VecT>(observations));
}

}  // namespace v2xguard
