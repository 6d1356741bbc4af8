// Independent reference computations used by the tests. Nothing here calls into the library's
// numerical code.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline double normal_pdf(double x, double mean, double var)
{
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// Composite Simpson integral of sqrt(p q) for two 1-D Gaussians.
inline double bc_grid_1d(double m1, double v1, double m2, double v2, int intervals = 200000)
{
    const double spread = 14.0 * std::sqrt(std::max(v1, v2));
    const double lo = std::min(m1, m2) - spread, hi = std::max(m1, m2) + spread;
    const double h = (hi - lo) / intervals;
    double s = 0.0;
    for (int i = 0; i <= intervals; ++i) {
        const double x = lo + i * h;
        const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * std::sqrt(normal_pdf(x, m1, v1) * normal_pdf(x, m2, v2));
    }
    return s * h / 3.0;
}

inline double normal_pdf_2d(const Eigen::Vector2d& x, const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov)
{
    const Eigen::Vector2d d = x - mean;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    Eigen::Matrix2d inv;
    inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
    inv /= det;
    return std::exp(-0.5 * d.dot(inv * d)) / (2.0 * std::numbers::pi * std::sqrt(det));
}

/// Tensor-product Simpson integral of sqrt(p q) for two 2-D Gaussians.
template <typename G>
double bc_grid_2d(const G& a, const G& b, int intervals = 1600)
{
    const double sd = std::sqrt(std::max(a.covariance.diagonal().maxCoeff(), b.covariance.diagonal().maxCoeff()));
    const Eigen::Vector2d lo = a.mean.cwiseMin(b.mean).array() - 12.0 * sd;
    const Eigen::Vector2d hi = a.mean.cwiseMax(b.mean).array() + 12.0 * sd;
    const Eigen::Vector2d h = (hi - lo) / intervals;
    auto weight = [&](int i) { return (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
    double s = 0.0;
    for (int i = 0; i <= intervals; ++i)
        for (int j = 0; j <= intervals; ++j) {
            const Eigen::Vector2d x(lo.x() + i * h.x(), lo.y() + j * h.y());
            s += weight(i) * weight(j) *
                 std::sqrt(normal_pdf_2d(x, a.mean, a.covariance) * normal_pdf_2d(x, b.mean, b.covariance));
        }
    return s * h.x() * h.y() / 9.0;
}

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
template <int N>
Eigen::Matrix<double, N, N> random_spd(std::mt19937_64& rng, double lo, double hi)
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::Matrix<double, N, N> g = Eigen::Matrix<double, N, N>::NullaryExpr([&] { return n(rng); });
    Eigen::HouseholderQR<Eigen::Matrix<double, N, N>> qr(g);
    const Eigen::Matrix<double, N, N> q = qr.householderQ();
    Eigen::Matrix<double, N, 1> ev;
    for (int i = 0; i < N; ++i) ev(i) = u(rng);
    Eigen::Matrix<double, N, N> out = q * ev.asDiagonal() * q.transpose();
    return 0.5 * (out + out.transpose());
}

/// Textbook Kalman filter on dynamic-size matrices: x' = A x + u, P' = A P A^T + Q, then the
/// standard-form update with an explicit inverse.
struct ReferenceKalman {
    Eigen::VectorXd x;
    Eigen::MatrixXd P;

    void predict(const Eigen::MatrixXd& A, const Eigen::VectorXd& u, const Eigen::MatrixXd& Q)
    {
        x = A * x + u;
        P = A * P * A.transpose() + Q;
    }

    void update(const Eigen::VectorXd& z, const Eigen::MatrixXd& H, const Eigen::MatrixXd& R)
    {
        const Eigen::MatrixXd S = H * P * H.transpose() + R;
        const Eigen::MatrixXd K = P * H.transpose() * S.inverse();
        x = x + K * (z - H * x);
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P.rows(), P.cols());
        P = (I - K * H) * P;
        P = 0.5 * (P + P.transpose());
    }
};

/// Lloyd's k-means from the given starting centers.
inline std::vector<Eigen::VectorXd> kmeans(const std::vector<Eigen::VectorXd>& xs, std::vector<Eigen::VectorXd> centers,
                                           int iterations = 100)
{
    for (int it = 0; it < iterations; ++it) {
        std::vector<Eigen::VectorXd> sums(centers.size(), Eigen::VectorXd::Zero(xs[0].size()));
        std::vector<int> counts(centers.size(), 0);
        for (const auto& x : xs) {
            std::size_t best = 0;
            double bestD = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double d = (x - centers[c]).squaredNorm();
                if (d < bestD) {
                    bestD = d;
                    best = c;
                }
            }
            sums[best] += x;
            ++counts[best];
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (counts[c] > 0) centers[c] = sums[c] / counts[c];
    }
    return centers;
}

}  // namespace oracle
