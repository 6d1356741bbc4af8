// Versioned JSON documents for learned models, thresholds and detection reports.
//
// Field names (all matrices are arrays of rows, vectors are flat arrays):
//   GdbnModel     : signal_kind, requested_clusters, seed, clusters[{id, mean, covariance, member_count}],
//                   transition{tau_max, min_bucket_count, fallback, matrices[], bucket_counts[]},
//                   A, B, H, controls[], process_noise, measurement_noise, process_noise_std,
//                   measurement_noise_std
//   CoupledModel  : rf_model, gps_model, phi
//   Thresholds    : xi1, xi2, train_mean1, train_std1, train_mean2, train_std2
//   DetectionReport: pd_jammer, pd_spoofer, pf_jammer, pf_spoofer, rmse_rf, rmse_gps (null when absent),
//                   windows_h0, windows_h1, windows_h2, normal_containment
#pragma once

#include "v2xguard/core.hpp"
#include "v2xguard/coupling.hpp"
#include "v2xguard/detection.hpp"
#include "v2xguard/gdbn.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace v2xguard {

using Json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

/// Thrown when a JSON document does not have the expected shape.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace json_io {

inline const Json& field(const Json& j, const char* name)
{
    if (!j.is_object() || !j.contains(name)) throw FormatError(std::string("missing field '") + name + "'");
    return j.at(name);
}

template <typename Derived>
Json matrix_to_json(const Eigen::MatrixBase<Derived>& m)
{
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j)
{
    if (!j.is_array() || j.empty() || !j[0].is_array()) throw FormatError("matrix must be a nonempty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw FormatError("ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

template <int N>
Mat<N> fixed_matrix(const Json& j)
{
    const Eigen::MatrixXd m = matrix_from_json(j);
    if (m.rows() != N || m.cols() != N) throw FormatError("matrix has the wrong dimension");
    return m;
}

template <typename Derived>
Json vector_to_json(const Eigen::MatrixBase<Derived>& v)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

template <int N>
Vec<N> fixed_vector(const Json& j)
{
    if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) throw FormatError("vector has the wrong dimension");
    Vec<N> v;
    for (int i = 0; i < N; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> optional_from_json(const Json& j)
{
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace json_io

inline Json to_json(const StochasticMatrix& m) { return json_io::matrix_to_json(m.matrix()); }

inline StochasticMatrix stochastic_from_json(const Json& j)
{
    try {
        return StochasticMatrix(json_io::matrix_from_json(j));
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("invalid stochastic matrix: ") + e.what());
    }
}

inline Json to_json(const TransitionModel& t)
{
    Json j;
    j["tau_max"] = t.tau_max();
    j["min_bucket_count"] = t.minBucketCount;
    j["fallback"] = to_json(t.fallback);
    Json ms = Json::array();
    for (const auto& m : t.matrices) ms.push_back(to_json(m));
    j["matrices"] = std::move(ms);
    j["bucket_counts"] = t.bucketCounts;
    return j;
}

inline TransitionModel transition_from_json(const Json& j)
{
    using json_io::field;
    TransitionModel t;
    t.minBucketCount = field(j, "min_bucket_count").get<int>();
    t.fallback = stochastic_from_json(field(j, "fallback"));
    for (const auto& m : field(j, "matrices")) t.matrices.push_back(stochastic_from_json(m));
    t.bucketCounts = field(j, "bucket_counts").get<std::vector<std::vector<int>>>();
    if (static_cast<int>(t.matrices.size()) != field(j, "tau_max").get<int>() || t.bucketCounts.size() != t.matrices.size())
        throw FormatError("transition model: tau_max does not match the stored matrices");
    for (const auto& c : t.bucketCounts)
        if (static_cast<int>(c.size()) != t.fallback.rows()) throw FormatError("transition model: bad bucket counts");
    return t;
}

template <int D>
Json to_json(const GdbnModel<D>& m)
{
    using namespace json_io;
    Json j;
    j["signal_kind"] = to_string(m.signalKind);
    j["requested_clusters"] = m.requestedClusters;
    j["seed"] = m.seed;
    Json clusters = Json::array();
    for (const auto& c : m.clusters.clusters)
        clusters.push_back({{"id", c.id},
                            {"mean", vector_to_json(c.gaussian.mean)},
                            {"covariance", matrix_to_json(c.gaussian.covariance)},
                            {"member_count", c.memberCount}});
    j["clusters"] = std::move(clusters);
    j["transition"] = to_json(m.transition);
    j["A"] = matrix_to_json(m.A);
    j["B"] = matrix_to_json(m.B);
    j["H"] = matrix_to_json(m.H);
    Json controls = Json::array();
    for (const auto& u : m.controls) controls.push_back(vector_to_json(u));
    j["controls"] = std::move(controls);
    j["process_noise"] = matrix_to_json(m.processNoise);
    j["measurement_noise"] = matrix_to_json(m.measurementNoise);
    j["process_noise_std"] = m.processNoiseStd;
    j["measurement_noise_std"] = m.measurementNoiseStd;
    return j;
}

template <int D>
GdbnModel<D> gdbn_from_json(const Json& j)
{
    using namespace json_io;
    constexpr int N = 2 * D;
    GdbnModel<D> m;
    const auto kind = field(j, "signal_kind").get<std::string>();
    if (kind == "RF")
        m.signalKind = SignalKind::RF;
    else if (kind == "GPS")
        m.signalKind = SignalKind::GPS;
    else
        throw FormatError("unknown signal_kind '" + kind + "'");
    m.requestedClusters = field(j, "requested_clusters").get<int>();
    m.seed = field(j, "seed").get<std::uint64_t>();
    m.clusters.signalKind = m.signalKind;
    for (const auto& c : field(j, "clusters")) {
        Cluster<D> cl;
        cl.id = field(c, "id").get<int>();
        cl.gaussian.mean = fixed_vector<N>(field(c, "mean"));
        cl.gaussian.covariance = fixed_matrix<N>(field(c, "covariance"));
        cl.memberCount = field(c, "member_count").get<int>();
        m.clusters.clusters.push_back(cl);
    }
    m.transition = transition_from_json(field(j, "transition"));
    m.A = fixed_matrix<N>(field(j, "A"));
    m.B = fixed_matrix<N>(field(j, "B"));
    m.H = fixed_matrix<N>(field(j, "H"));
    for (const auto& u : field(j, "controls")) m.controls.push_back(fixed_vector<N>(u));
    m.processNoise = fixed_matrix<N>(field(j, "process_noise"));
    m.measurementNoise = fixed_matrix<N>(field(j, "measurement_noise"));
    m.processNoiseStd = field(j, "process_noise_std").get<double>();
    m.measurementNoiseStd = field(j, "measurement_noise_std").get<double>();
    try {
        m.clusters.validate();
    } catch (const ContractViolation& e) {
        throw FormatError(e.what());
    }
    if (m.transition.clusters() != m.cluster_count() || static_cast<int>(m.controls.size()) != m.cluster_count())
        throw FormatError("GDBN model: cluster count disagrees with transition matrices or controls");
    return m;
}

template <int D>
Json to_json(const CoupledModel<D>& m)
{
    return {{"rf_model", to_json(m.rfModel)}, {"gps_model", to_json(m.gpsModel)}, {"phi", to_json(m.phi)}};
}

template <int D>
CoupledModel<D> coupled_from_json(const Json& j)
{
    CoupledModel<D> m;
    m.rfModel = gdbn_from_json<D>(json_io::field(j, "rf_model"));
    m.gpsModel = gdbn_from_json<D>(json_io::field(j, "gps_model"));
    m.phi = stochastic_from_json(json_io::field(j, "phi"));
    try {
        m.validate();
    } catch (const ContractViolation& e) {
        throw FormatError(e.what());
    }
    return m;
}

inline Json to_json(const Thresholds& t)
{
    return {{"xi1", t.xi1},
            {"xi2", t.xi2},
            {"train_mean1", t.trainMean1},
            {"train_std1", t.trainStd1},
            {"train_mean2", t.trainMean2},
            {"train_std2", t.trainStd2}};
}

inline Thresholds thresholds_from_json(const Json& j)
{
    using json_io::field;
    Thresholds t;
    t.xi1 = field(j, "xi1").get<double>();
    t.xi2 = field(j, "xi2").get<double>();
    t.trainMean1 = field(j, "train_mean1").get<double>();
    t.trainStd1 = field(j, "train_std1").get<double>();
    t.trainMean2 = field(j, "train_mean2").get<double>();
    t.trainStd2 = field(j, "train_std2").get<double>();
    return t;
}

inline Json to_json(const DetectionReport& r)
{
    using json_io::optional_to_json;
    return {{"pd_jammer", optional_to_json(r.pdJammer)},
            {"pd_spoofer", optional_to_json(r.pdSpoofer)},
            {"pf_jammer", optional_to_json(r.pfJammer)},
            {"pf_spoofer", optional_to_json(r.pfSpoofer)},
            {"rmse_rf", optional_to_json(r.rmseRf)},
            {"rmse_gps", optional_to_json(r.rmseGps)},
            {"windows_h0", r.windowsH0},
            {"windows_h1", r.windowsH1},
            {"windows_h2", r.windowsH2},
            {"normal_containment", optional_to_json(r.normalContainment)}};
}

inline DetectionReport report_from_json(const Json& j)
{
    using json_io::field;
    using json_io::optional_from_json;
    DetectionReport r;
    r.pdJammer = optional_from_json(field(j, "pd_jammer"));
    r.pdSpoofer = optional_from_json(field(j, "pd_spoofer"));
    r.pfJammer = optional_from_json(field(j, "pf_jammer"));
    r.pfSpoofer = optional_from_json(field(j, "pf_spoofer"));
    r.rmseRf = optional_from_json(field(j, "rmse_rf"));
    r.rmseGps = optional_from_json(field(j, "rmse_gps"));
    r.windowsH0 = field(j, "windows_h0").get<long>();
    r.windowsH1 = field(j, "windows_h1").get<long>();
    r.windowsH2 = field(j, "windows_h2").get<long>();
    r.normalContainment = optional_from_json(field(j, "normal_containment"));
    return r;
}

}  // namespace v2xguard
