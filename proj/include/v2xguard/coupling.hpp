// Interactive matrix coupling RF clusters to trajectory clusters (the coupled GDBN).
#pragma once

#include "v2xguard/core.hpp"
#include "v2xguard/gdbn.hpp"

#include <random>

namespace v2xguard {

template <int D>
struct CoupledModel {
    GdbnModel<D> rfModel;
    GdbnModel<D> gpsModel;
    /// phi(j, i) = P(gps cluster i | rf cluster j).
    StochasticMatrix phi;

    void validate() const
    {
        require(phi.rows() == rfModel.cluster_count(), "CoupledModel: phi rows must equal the RF cluster count");
        require(phi.cols() == gpsModel.cluster_count(), "CoupledModel: phi cols must equal the GPS cluster count");
    }
};

/// Lag-0 co-occurrence counts C[j, i] = #{t : rf[t] = j and gps[t] = i}, row-normalized with a
/// uniform row for RF clusters that never fired.
inline StochasticMatrix learn_phi(const std::vector<std::vector<int>>& rfLabels,
                                  const std::vector<std::vector<int>>& gpsLabels, int M1, int M2)
{
    require(rfLabels.size() == gpsLabels.size(), "learn_phi: label sequence count mismatch");
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(M1, M2);
    for (std::size_t s = 0; s < rfLabels.size(); ++s) {
        require(rfLabels[s].size() == gpsLabels[s].size(), "learn_phi: label sequences must have equal length");
        for (std::size_t t = 0; t < rfLabels[s].size(); ++t) {
            const int j = rfLabels[s][t], i = gpsLabels[s][t];
            require(j >= 0 && j < M1 && i >= 0 && i < M2, "learn_phi: label out of range");
            counts(j, i) += 1.0;
        }
    }
    return row_normalize(counts);
}

inline StochasticMatrix learn_phi(const std::vector<int>& rfLabels, const std::vector<int>& gpsLabels, int M1, int M2)
{
    return learn_phi(std::vector<std::vector<int>>{rfLabels}, std::vector<std::vector<int>>{gpsLabels}, M1, M2);
}

/// Draws a trajectory cluster from the phi row of the given RF cluster.
inline int predict_gps_cluster(int rfClusterId, const StochasticMatrix& phi, std::mt19937_64& rng)
{
    require(rfClusterId >= 0 && rfClusterId < phi.rows(), "predict_gps_cluster: RF cluster id out of range");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return phi.sample_row(rfClusterId, u(rng));
}

/// Learns both GDBNs and the interactive matrix from time-aligned normal-situation series.
template <int D>
CoupledModel<D> learn_coupled(const std::vector<std::vector<Vec<D>>>& rfSeries,
                              const std::vector<std::vector<Vec<D>>>& gpsSeries, int M, const GdbnParams& params,
                              std::uint64_t seed)
{
    require(rfSeries.size() == gpsSeries.size(), "learn_coupled: series count mismatch");
    CoupledModel<D> model;
    model.rfModel = learn_gdbn<D>(rfSeries, M, params, seed, SignalKind::RF);
    model.gpsModel = learn_gdbn<D>(gpsSeries, M, params, seed + 1, SignalKind::GPS);
    std::vector<std::vector<int>> rf, gps;
    for (std::size_t s = 0; s < rfSeries.size(); ++s) {
        rf.push_back(label_series<D>(rfSeries[s], model.rfModel));
        gps.push_back(label_series<D>(gpsSeries[s], model.gpsModel));
    }
    model.phi = learn_phi(rf, gps, model.rfModel.cluster_count(), model.gpsModel.cluster_count());
    return model;
}

}  // namespace v2xguard
