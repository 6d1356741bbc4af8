// End-to-end experiments: configuration, seeded scenario simulation, training and calibration,
// detection runs and the Monte-Carlo sweep used by the command-line tool.
#pragma once

#include "v2xguard/channel.hpp"
#include "v2xguard/core.hpp"
#include "v2xguard/coupling.hpp"
#include "v2xguard/detection.hpp"
#include "v2xguard/gdbn.hpp"
#include "v2xguard/inference.hpp"
#include "v2xguard/serialization.hpp"
#include "v2xguard/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace v2xguard {

/// Unreadable or malformed input (config, CSV, model file).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ModelMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Scenario { Normal, Jam, Spoof };

inline const char* to_string(Scenario s)
{
    switch (s) {
        case Scenario::Normal: return "normal";
        case Scenario::Jam: return "jam";
        case Scenario::Spoof: return "spoof";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s)
{
    if (s == "normal") return Scenario::Normal;
    if (s == "jam") return Scenario::Jam;
    if (s == "spoof") return Scenario::Spoof;
    throw InputError("unknown scenario '" + s + "' (expected normal, jam or spoof)");
}

inline Hypothesis attack_hypothesis(Scenario s)
{
    switch (s) {
        case Scenario::Jam: return Hypothesis::H1;
        case Scenario::Spoof: return Hypothesis::H2;
        default: return Hypothesis::H0;
    }
}

struct VehicleLayout {
    ManeuverKind maneuver = ManeuverKind::Straight;
    Vec2 start = Vec2::Zero();
    double headingDeg = 0.0;
};

struct TrajectorySource {
    /// "synthetic" or "csv".
    std::string kind = "synthetic";
    std::string csvPath;
    int steps = 200;
    double speed = kmh_to_m_per_step(40.0);
    /// Per-run relative speed variation (uniform in +-speedJitter).
    double speedJitter = 0.05;
    double noiseStdM = 0.05;
    double turnRadiusM = 15.0;
    std::vector<VehicleLayout> layout{{ManeuverKind::LeftTurn, Vec2(100.0, 150.0), 0.0},
                                      {ManeuverKind::RightTurn, Vec2(200.0, 40.0), 90.0}};
};

struct ExperimentConfig {
    int vehicles = 2;
    std::vector<int> clusterCounts{5, 25};
    int particles = 100;
    std::vector<double> jammerPowersDbm{20.0, 25.0, 30.0, 35.0, 40.0};
    /// Jammer power used by the detect command.
    double detectJammerPowerDbm = 40.0;
    Vec2 spoofOffsetM = Vec2(10.0, 0.0);
    int spoofRampSteps = 5;
    int runsPerScenario = 20;
    int trainingRuns = 5;
    int calibrationRuns = 5;
    /// Negative means the middle of the run.
    int attackOnsetStep = -1;
    std::uint64_t baseSeed = 1;
    ChannelParams channel;
    Vec2 rsuPosition = Vec2::Zero();
    Vec2 jammerPosition = Vec2(30.0, 40.0);
    TrajectorySource trajectory;
    int window = 20;
    int quorum = 12;
    GdbnParams gdbn;
    FilterOptions filter;

    int onset_step(int steps) const { return attackOnsetStep < 0 ? steps / 2 : attackOnsetStep; }

    void validate() const
    {
        auto check = [](bool ok, const std::string& msg) {
            if (!ok) throw InputError("config: " + msg);
        };
        check(vehicles >= 1, "vehicles must be >= 1");
        check(!clusterCounts.empty(), "cluster_counts must be nonempty");
        for (int m : clusterCounts) check(m >= 2, "every cluster count must be >= 2");
        check(particles >= 1, "particles must be >= 1");
        check(!jammerPowersDbm.empty(), "jammer_powers_dbm must be nonempty");
        check(runsPerScenario >= 1, "runs_per_scenario must be >= 1");
        check(trainingRuns >= 1 && calibrationRuns >= 1, "training_runs and calibration_runs must be >= 1");
        check(spoofRampSteps >= 0, "spoof_ramp_steps must be >= 0");
        check(window >= 1 && quorum >= 1 && quorum <= window, "need 1 <= quorum <= window");
        check(trajectory.kind == "synthetic" || trajectory.kind == "csv", "trajectory.kind must be synthetic or csv");
        check(trajectory.kind != "csv" || !trajectory.csvPath.empty(), "trajectory.csv_path is required for csv");
        check(trajectory.steps >= 10, "trajectory.steps must be >= 10");
        check(trajectory.speed > 0.0 && trajectory.noiseStdM >= 0.0, "trajectory speed/noise out of range");
        check(trajectory.speedJitter >= 0.0 && trajectory.speedJitter < 1.0, "trajectory.speed_jitter must be in [0,1)");
        check(!trajectory.layout.empty(), "trajectory.layout must be nonempty");
        check(gdbn.measurementShare > 0.0 && gdbn.measurementShare < 1.0, "gdbn.measurement_share must be in (0,1)");
    }
};

// ---------------------------------------------------------------------------------------------
// Config JSON

namespace config_json {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where)
{
    if (!j.is_object()) throw InputError("config: " + where + " must be an object");
    std::set<std::string> names(known.begin(), known.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!names.count(it.key())) throw InputError("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vec2(const Json& j, const char* key, Vec2& out)
{
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw InputError(std::string("config: '") + key + "' must have two entries");
    out = Vec2(v[0], v[1]);
}

inline Json vec2(const Vec2& v) { return Json::array({v.x(), v.y()}); }

}  // namespace config_json

inline Json to_json(const ExperimentConfig& c)
{
    using config_json::vec2;
    Json layout = Json::array();
    for (const auto& l : c.trajectory.layout)
        layout.push_back({{"maneuver", to_string(l.maneuver)}, {"start", vec2(l.start)}, {"heading_deg", l.headingDeg}});
    const auto& ch = c.channel;
    const auto& g = c.gdbn.gng;
    return {
        {"vehicles", c.vehicles},
        {"cluster_counts", c.clusterCounts},
        {"particles", c.particles},
        {"jammer_powers_dbm", c.jammerPowersDbm},
        {"detect_jammer_power_dbm", c.detectJammerPowerDbm},
        {"spoof_offset_m", vec2(c.spoofOffsetM)},
        {"spoof_ramp_steps", c.spoofRampSteps},
        {"runs_per_scenario", c.runsPerScenario},
        {"training_runs", c.trainingRuns},
        {"calibration_runs", c.calibrationRuns},
        {"attack_onset_step", c.attackOnsetStep},
        {"seed", c.baseSeed},
        {"rsu_position", vec2(c.rsuPosition)},
        {"jammer_position", vec2(c.jammerPosition)},
        {"window", c.window},
        {"quorum", c.quorum},
        {"channel",
         {{"carrier_freq_ghz", ch.carrierFreqGHz},
          {"bandwidth_mhz", ch.bandwidthMHz},
          {"cell_radius_m", ch.cellRadiusM},
          {"rsu_antenna_height_m", ch.rsuAntennaHeightM},
          {"rsu_gain_dbi", ch.rsuGainDbi},
          {"vehicle_antenna_height_m", ch.vehicleAntennaHeightM},
          {"vehicle_gain_dbi", ch.vehicleGainDbi},
          {"jammer_gain_dbi", ch.jammerGainDbi},
          {"noise_figure_db", ch.noiseFigureDb},
          {"tx_power_dbm", ch.txPowerDbm},
          {"shadow_std_db", ch.shadowStdDb},
          {"snr_db", ch.snrDb},
          {"rayleigh", ch.rayleigh}}},
        {"trajectory",
         {{"kind", c.trajectory.kind},
          {"csv_path", c.trajectory.csvPath},
          {"steps", c.trajectory.steps},
          {"speed_m_per_step", c.trajectory.speed},
          {"speed_jitter", c.trajectory.speedJitter},
          {"noise_std_m", c.trajectory.noiseStdM},
          {"turn_radius_m", c.trajectory.turnRadiusM},
          {"layout", layout}}},
        {"gdbn",
         {{"tau_max", c.gdbn.tauMax},
          {"min_bucket_count", c.gdbn.minBucketCount},
          {"measurement_share", c.gdbn.measurementShare},
          {"noise_floor_fraction", c.gdbn.noiseFloorFraction},
          {"gng",
           {{"lambda", g.lambda},
            {"eps_winner", g.epsWinner},
            {"eps_neighbor", g.epsNeighbor},
            {"max_edge_age", g.maxEdgeAge},
            {"insert_error_decay", g.insertErrorDecay},
            {"error_decay", g.errorDecay},
            {"epochs", g.epochs},
            {"max_extra_epochs", g.maxExtraEpochs}}}}},
        {"filter",
         {{"ess_fraction", c.filter.essFraction},
          {"rf_gate_sigma", c.filter.rfGateSigma},
          {"gps_gate_sigma", c.filter.gpsGateSigma}}},
    };
}

/// Missing keys keep their defaults; unknown keys are rejected so typos do not pass silently.
inline ExperimentConfig config_from_json(const Json& j)
{
    using namespace config_json;
    ExperimentConfig c;
    try {
        reject_unknown(j,
                       {"vehicles", "cluster_counts", "particles", "jammer_powers_dbm", "detect_jammer_power_dbm",
                        "spoof_offset_m", "spoof_ramp_steps", "runs_per_scenario", "training_runs", "calibration_runs",
                        "attack_onset_step", "seed", "rsu_position", "jammer_position", "window", "quorum", "channel",
                        "trajectory", "gdbn", "filter"},
                       "");
        read(j, "vehicles", c.vehicles);
        read(j, "cluster_counts", c.clusterCounts);
        read(j, "particles", c.particles);
        read(j, "jammer_powers_dbm", c.jammerPowersDbm);
        read(j, "detect_jammer_power_dbm", c.detectJammerPowerDbm);
        read_vec2(j, "spoof_offset_m", c.spoofOffsetM);
        read(j, "spoof_ramp_steps", c.spoofRampSteps);
        read(j, "runs_per_scenario", c.runsPerScenario);
        read(j, "training_runs", c.trainingRuns);
        read(j, "calibration_runs", c.calibrationRuns);
        read(j, "attack_onset_step", c.attackOnsetStep);
        read(j, "seed", c.baseSeed);
        read_vec2(j, "rsu_position", c.rsuPosition);
        read_vec2(j, "jammer_position", c.jammerPosition);
        read(j, "window", c.window);
        read(j, "quorum", c.quorum);
        if (j.contains("channel")) {
            const auto& ch = j.at("channel");
            reject_unknown(ch,
                           {"carrier_freq_ghz", "bandwidth_mhz", "cell_radius_m", "rsu_antenna_height_m", "rsu_gain_dbi",
                            "vehicle_antenna_height_m", "vehicle_gain_dbi", "jammer_gain_dbi", "noise_figure_db",
                            "tx_power_dbm", "shadow_std_db", "snr_db", "rayleigh"},
                           "channel.");
            auto& p = c.channel;
            read(ch, "carrier_freq_ghz", p.carrierFreqGHz);
            read(ch, "bandwidth_mhz", p.bandwidthMHz);
            read(ch, "cell_radius_m", p.cellRadiusM);
            read(ch, "rsu_antenna_height_m", p.rsuAntennaHeightM);
            read(ch, "rsu_gain_dbi", p.rsuGainDbi);
            read(ch, "vehicle_antenna_height_m", p.vehicleAntennaHeightM);
            read(ch, "vehicle_gain_dbi", p.vehicleGainDbi);
            read(ch, "jammer_gain_dbi", p.jammerGainDbi);
            read(ch, "noise_figure_db", p.noiseFigureDb);
            read(ch, "tx_power_dbm", p.txPowerDbm);
            read(ch, "shadow_std_db", p.shadowStdDb);
            read(ch, "snr_db", p.snrDb);
            read(ch, "rayleigh", p.rayleigh);
        }
        if (j.contains("trajectory")) {
            const auto& t = j.at("trajectory");
            reject_unknown(t,
                           {"kind", "csv_path", "steps", "speed_m_per_step", "speed_jitter", "noise_std_m",
                            "turn_radius_m", "layout"},
                           "trajectory.");
            auto& s = c.trajectory;
            read(t, "kind", s.kind);
            read(t, "csv_path", s.csvPath);
            read(t, "steps", s.steps);
            read(t, "speed_m_per_step", s.speed);
            read(t, "speed_jitter", s.speedJitter);
            read(t, "noise_std_m", s.noiseStdM);
            read(t, "turn_radius_m", s.turnRadiusM);
            if (t.contains("layout")) {
                s.layout.clear();
                for (const auto& l : t.at("layout")) {
                    reject_unknown(l, {"maneuver", "start", "heading_deg"}, "trajectory.layout[].");
                    VehicleLayout v;
                    if (l.contains("maneuver")) v.maneuver = parse_maneuver_kind(l.at("maneuver").get<std::string>());
                    read_vec2(l, "start", v.start);
                    read(l, "heading_deg", v.headingDeg);
                    s.layout.push_back(v);
                }
            }
        }
        if (j.contains("gdbn")) {
            const auto& g = j.at("gdbn");
            reject_unknown(g, {"tau_max", "min_bucket_count", "measurement_share", "noise_floor_fraction", "gng"},
                           "gdbn.");
            read(g, "tau_max", c.gdbn.tauMax);
            read(g, "min_bucket_count", c.gdbn.minBucketCount);
            read(g, "measurement_share", c.gdbn.measurementShare);
            read(g, "noise_floor_fraction", c.gdbn.noiseFloorFraction);
            if (g.contains("gng")) {
                const auto& n = g.at("gng");
                reject_unknown(n,
                               {"lambda", "eps_winner", "eps_neighbor", "max_edge_age", "insert_error_decay",
                                "error_decay", "epochs", "max_extra_epochs"},
                               "gdbn.gng.");
                auto& p = c.gdbn.gng;
                read(n, "lambda", p.lambda);
                read(n, "eps_winner", p.epsWinner);
                read(n, "eps_neighbor", p.epsNeighbor);
                read(n, "max_edge_age", p.maxEdgeAge);
                read(n, "insert_error_decay", p.insertErrorDecay);
                read(n, "error_decay", p.errorDecay);
                read(n, "epochs", p.epochs);
                read(n, "max_extra_epochs", p.maxExtraEpochs);
            }
        }
        if (j.contains("filter")) {
            const auto& f = j.at("filter");
            reject_unknown(f, {"ess_fraction", "rf_gate_sigma", "gps_gate_sigma"}, "filter.");
            read(f, "ess_fraction", c.filter.essFraction);
            read(f, "rf_gate_sigma", c.filter.rfGateSigma);
            read(f, "gps_gate_sigma", c.filter.gpsGateSigma);
        }
    } catch (const Json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    c.filter.particles = c.particles;
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw InputError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline std::uint64_t fnv1a64(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// FNV-1a of the canonical (sorted-key) JSON of the effective config, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
    return buf;
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of one experiment cell; every component changes the stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, double power, int clusters, int run)
{
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ fnv1a64(tag));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(power));
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(clusters)));
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(run)));
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, int index)
{
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 0x5851f42d4c957f2dULL));
}

// ---------------------------------------------------------------------------------------------
// Scenario simulation

/// Observations of one vehicle over one run, with the ground truth of every step.
struct VehicleRun {
    std::vector<Vec2> rf;
    std::vector<Vec2> gps;
    std::vector<Hypothesis> truth;
    std::vector<Vec2> truePositions;
};

/// Ground-truth paths for one run. Synthetic runs vary speed and position noise; CSV runs reuse the
/// file's trajectories (vehicle n takes trajectory n modulo the file's count).
class TrajectoryProvider {
public:
    explicit TrajectoryProvider(const ExperimentConfig& config) : config_(config)
    {
        if (config.trajectory.kind == "csv") {
            try {
                csv_ = load_trajectories(config.trajectory.csvPath);
            } catch (const SchemaError& e) {
                throw InputError(e.what());
            } catch (const DataError& e) {
                throw InputError(e.what());
            } catch (const std::ios_base::failure& e) {
                throw InputError(e.what());
            } catch (const std::runtime_error& e) {
                throw InputError(e.what());
            }
            if (csv_.empty()) throw InsufficientDataError("trajectory file has no vehicles");
        }
    }

    Trajectory path(int vehicle, std::uint64_t runSeed) const
    {
        if (!csv_.empty()) return csv_[static_cast<std::size_t>(vehicle) % csv_.size()];
        const auto& s = config_.trajectory;
        const auto& layout = s.layout[static_cast<std::size_t>(vehicle) % s.layout.size()];
        std::mt19937_64 rng(derive_seed(runSeed, 1000 + vehicle));
        std::uniform_real_distribution<double> jitter(-s.speedJitter, s.speedJitter);
        const double speed = s.speed * (1.0 + jitter(rng));
        ManeuverGeometry g;
        g.start = layout.start;
        g.headingRad = layout.headingDeg * std::numbers::pi / 180.0;
        g.turnRadiusM = s.turnRadiusM;
        return synthesize_maneuver(layout.maneuver, s.steps, speed, s.noiseStdM, rng(), g, vehicle);
    }

private:
    const ExperimentConfig& config_;
    std::vector<Trajectory> csv_;
};

/// Simulates every vehicle for one run: the vehicle encodes its (possibly spoofed) reported state,
/// the frame crosses the channel under the step's hypothesis and the RSU decodes it.
inline std::vector<VehicleRun> simulate_run(const ExperimentConfig& config, const TrajectoryProvider& provider,
                                            Scenario scenario, double jammerPowerDbm, std::uint64_t runSeed)
{
    const MessageBounds bounds;
    std::vector<VehicleRun> runs;
    for (int n = 0; n < config.vehicles; ++n) {
        const Trajectory truth = provider.path(n, runSeed);
        const int T = static_cast<int>(truth.size());
        if (T < 3) throw InsufficientDataError("trajectory of vehicle " + std::to_string(n) + " is too short");
        const int onset = std::clamp(config.onset_step(T), 0, T - 1);
        const Trajectory reported =
            scenario == Scenario::Spoof ? apply_spoofing(truth, config.spoofOffsetM, onset, config.spoofRampSteps) : truth;

        std::mt19937_64 rng(derive_seed(runSeed, n));
        VehicleRun run;
        for (int t = 0; t < T; ++t) {
            const auto& truePoint = truth.points[static_cast<std::size_t>(t)];
            const auto& rep = reported.points[static_cast<std::size_t>(t)];
            if (!bounds.position.contains(rep.position))
                throw InputError("vehicle " + std::to_string(n) + " leaves the cell bounding box at step " +
                                 std::to_string(t));
            const Vec2 velocity = rep.velocity.cwiseMax(bounds.velocity.min).cwiseMin(bounds.velocity.max);
            const Hypothesis h = t >= onset ? attack_hypothesis(scenario) : Hypothesis::H0;
            const Frame frame = make_frame(n, t, rep.position, velocity, bounds);
            const LinkGeometry geometry{truePoint.position, config.rsuPosition, config.jammerPosition};
            const ReceivedFrame rx = transmit(frame, h, jammerPowerDbm, geometry, config.channel, rng);
            const DecodedFrame decoded = decode_frame(rx, rx.channelGain, bounds);
            run.rf.push_back(decoded.iqFeature);
            run.gps.push_back(decoded.position);
            run.truth.push_back(h);
            run.truePositions.push_back(truePoint.position);
        }
        runs.push_back(std::move(run));
    }
    return runs;
}

// ---------------------------------------------------------------------------------------------
// Training

struct VehicleModel {
    CoupledModel<2> model;
    Thresholds thresholds;
    /// Prediction RMSE on the held-out calibration runs.
    double rmseRf = 0.0;
    double rmseGps = 0.0;
    double rmsePooled = 0.0;
};

struct TrainedModels {
    int clusters = 0;
    std::vector<VehicleModel> vehicles;
};

/// Normal-situation runs shared by every cluster count.
struct TrainingData {
    std::vector<std::vector<VehicleRun>> training;     // [run][vehicle]
    std::vector<std::vector<VehicleRun>> calibration;  // [run][vehicle]
};

inline TrainingData simulate_training_data(const ExperimentConfig& config, const TrajectoryProvider& provider)
{
    TrainingData data;
    for (int r = 0; r < config.trainingRuns; ++r)
        data.training.push_back(
            simulate_run(config, provider, Scenario::Normal, 0.0, derive_seed(config.baseSeed, "train", 0.0, 0, r)));
    for (int r = 0; r < config.calibrationRuns; ++r)
        data.calibration.push_back(
            simulate_run(config, provider, Scenario::Normal, 0.0, derive_seed(config.baseSeed, "calibrate", 0.0, 0, r)));
    return data;
}

inline std::uint64_t filter_seed(std::uint64_t runSeed, int vehicle) { return derive_seed(runSeed, 500 + vehicle); }

/// Filter run turned into a labeled abnormality trace.
inline AbnormalityTrace trace_run(const ExperimentConfig& config, const VehicleModel& vm, const VehicleRun& run,
                                  int vehicle, std::uint64_t seed)
{
    const auto records = run_filter<2>(vm.model, run.rf, run.gps, config.filter, seed);
    return make_trace<2>(vehicle, records, vm.thresholds,
                         [&](int t) { return std::optional<Hypothesis>(run.truth[static_cast<std::size_t>(t)]); });
}

/// Learns one coupled model per vehicle, calibrates its thresholds on the held-out normal runs and
/// measures its prediction RMSE there.
inline TrainedModels train_models(const ExperimentConfig& config, const TrainingData& data, int M)
{
    TrainedModels out;
    out.clusters = M;
    for (int n = 0; n < config.vehicles; ++n) {
        std::vector<std::vector<Vec2>> rf, gps;
        std::size_t samples = 0;
        for (const auto& run : data.training) {
            rf.push_back(run[static_cast<std::size_t>(n)].rf);
            gps.push_back(run[static_cast<std::size_t>(n)].gps);
            samples += run[static_cast<std::size_t>(n)].rf.size();
        }
        // Each series loses its first two samples to the generalized-error lift.
        const std::size_t usable = samples - 2 * data.training.size();
        if (usable < static_cast<std::size_t>(10 * M))
            throw InsufficientDataError("vehicle " + std::to_string(n) + ": " + std::to_string(usable) +
                                        " training samples, need at least " + std::to_string(10 * M));

        VehicleModel vm;
        vm.model = learn_coupled<2>(rf, gps, M, config.gdbn, derive_seed(config.baseSeed, "model", 0.0, M, n));

        std::vector<UpsilonPair> pooled;
        std::vector<Vec2> rfP, rfO, gpsP, gpsO;
        for (std::size_t r = 0; r < data.calibration.size(); ++r) {
            const auto& run = data.calibration[r][static_cast<std::size_t>(n)];
            const auto seed = filter_seed(derive_seed(config.baseSeed, "calibrate-filter", 0.0, M, static_cast<int>(r)), n);
            const auto records = run_filter<2>(vm.model, run.rf, run.gps, config.filter, seed);
            for (const auto& rec : records) {
                pooled.push_back({abnormality<4>(rec.rfPredictive, rec.rfDiagnostic),
                                  abnormality<4>(rec.gpsPredictive, rec.gpsDiagnostic)});
                rfP.push_back(rec.rfPoint);
                rfO.push_back(rec.rfObserved);
                gpsP.push_back(rec.gpsPoint);
                gpsO.push_back(rec.gpsObserved);
            }
        }
        if (pooled.size() < 100)
            throw InsufficientDataError("vehicle " + std::to_string(n) + ": " + std::to_string(pooled.size()) +
                                        " calibration steps, need at least 100");
        vm.thresholds = calibrate_thresholds(pooled);
        vm.rmseRf = rmse(rfP, rfO);
        vm.rmseGps = rmse(gpsP, gpsO);
        vm.rmsePooled = std::sqrt(0.5 * (vm.rmseRf * vm.rmseRf + vm.rmseGps * vm.rmseGps));
        out.vehicles.push_back(std::move(vm));
    }
    return out;
}

/// RMSE over all vehicles, weighting each vehicle equally (all runs have the same length).
inline double pooled_rmse(const TrainedModels& m, double VehicleModel::*field)
{
    double s = 0.0;
    for (const auto& v : m.vehicles) s += (v.*field) * (v.*field);
    return std::sqrt(s / static_cast<double>(m.vehicles.size()));
}

// ---------------------------------------------------------------------------------------------
// Model files

struct OutputHeader {
    std::string configHash;
    std::uint64_t baseSeed = 0;
};

inline OutputHeader header_for(const ExperimentConfig& c) { return {config_hash(c), c.baseSeed}; }

inline std::string csv_metadata_line(const OutputHeader& h)
{
    return "# config_hash=" + h.configHash + " base_seed=" + std::to_string(h.baseSeed) + "\n";
}

inline Json to_json(const TrainedModels& m, const OutputHeader& h)
{
    Json vehicles = Json::array();
    for (std::size_t n = 0; n < m.vehicles.size(); ++n) {
        const auto& v = m.vehicles[n];
        vehicles.push_back({{"vehicle_id", static_cast<int>(n)},
                            {"coupled_model", to_json(v.model)},
                            {"thresholds", to_json(v.thresholds)},
                            {"rmse_rf", v.rmseRf},
                            {"rmse_gps", v.rmseGps},
                            {"rmse_pooled", v.rmsePooled}});
    }
    return {{"format", "v2xguard-model"},
            {"version", kModelFormatVersion},
            {"config_hash", h.configHash},
            {"base_seed", h.baseSeed},
            {"clusters", m.clusters},
            {"vehicles", vehicles}};
}

inline TrainedModels trained_from_json(const Json& j)
{
    using json_io::field;
    if (field(j, "format").get<std::string>() != "v2xguard-model") throw FormatError("not a model file");
    if (field(j, "version").get<int>() != kModelFormatVersion) throw FormatError("unsupported model file version");
    TrainedModels m;
    m.clusters = field(j, "clusters").get<int>();
    for (const auto& v : field(j, "vehicles")) {
        VehicleModel vm;
        vm.model = coupled_from_json<2>(field(v, "coupled_model"));
        vm.thresholds = thresholds_from_json(field(v, "thresholds"));
        vm.rmseRf = field(v, "rmse_rf").get<double>();
        vm.rmseGps = field(v, "rmse_gps").get<double>();
        vm.rmsePooled = field(v, "rmse_pooled").get<double>();
        m.vehicles.push_back(std::move(vm));
    }
    return m;
}

inline std::filesystem::path model_path(const std::filesystem::path& dir, int M)
{
    return dir / ("model_M" + std::to_string(M) + ".json");
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

/// Loads the model for M and checks it against the config.
inline TrainedModels load_models(const std::filesystem::path& dir, int M, const ExperimentConfig& config)
{
    const auto path = model_path(dir, M);
    std::ifstream in(path);
    if (!in) {
        // Models trained for other cluster counts mean the config and the model set disagree.
        std::vector<std::string> others;
        std::error_code ec;
        for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
            const auto name = e.path().filename().string();
            if (name.starts_with("model_M") && name.ends_with(".json")) others.push_back(name);
        }
        if (others.empty()) throw InputError("cannot open model file " + path.string());
        std::sort(others.begin(), others.end());
        std::string list;
        for (const auto& o : others) list += (list.empty() ? "" : ", ") + o;
        throw ModelMismatchError("no model for M=" + std::to_string(M) + " in " + dir.string() + " (found " + list + ")");
    }
    TrainedModels m;
    try {
        m = trained_from_json(Json::parse(in));
    } catch (const Json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    if (m.clusters != M) throw ModelMismatchError(path.string() + ": trained for M=" + std::to_string(m.clusters));
    if (static_cast<int>(m.vehicles.size()) != config.vehicles)
        throw ModelMismatchError(path.string() + ": has " + std::to_string(m.vehicles.size()) + " vehicles, config has " +
                                 std::to_string(config.vehicles));
    for (const auto& v : m.vehicles)
        if (v.model.rfModel.requestedClusters != M || v.model.gpsModel.requestedClusters != M)
            throw ModelMismatchError(path.string() + ": per-vehicle cluster count disagrees with M=" + std::to_string(M));
    return m;
}

// ---------------------------------------------------------------------------------------------
// Work pool

/// Runs task(i) for i in [0, count) on up to `threads` workers. Tasks must be independent; the first
/// exception is rethrown after all workers stop.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& task)
{
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex errorMutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(errorMutex);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------------------------
// Commands

struct TrainSummary {
    int clusters = 0;
    std::vector<int> rfClusters, gpsClusters;
    double rmseRf = 0.0, rmseGps = 0.0, rmsePooled = 0.0;
};

/// Trains every cluster count on the same simulated normal data and writes model_M<M>.json.
inline std::vector<TrainSummary> cmd_train(const ExperimentConfig& config, const std::filesystem::path& outDir,
                                           std::ostream& log, int threads = 1)
{
    const TrajectoryProvider provider(config);
    const TrainingData data = simulate_training_data(config, provider);
    std::vector<TrainedModels> models(config.clusterCounts.size());
    parallel_for(models.size(), threads,
                 [&](std::size_t i) { models[i] = train_models(config, data, config.clusterCounts[i]); });

    const OutputHeader header = header_for(config);
    std::vector<TrainSummary> summaries;
    for (const auto& m : models) {
        write_text(model_path(outDir, m.clusters), to_json(m, header).dump(1) + "\n");
        TrainSummary s;
        s.clusters = m.clusters;
        for (const auto& v : m.vehicles) {
            s.rfClusters.push_back(v.model.rfModel.cluster_count());
            s.gpsClusters.push_back(v.model.gpsModel.cluster_count());
        }
        s.rmseRf = pooled_rmse(m, &VehicleModel::rmseRf);
        s.rmseGps = pooled_rmse(m, &VehicleModel::rmseGps);
        s.rmsePooled = pooled_rmse(m, &VehicleModel::rmsePooled);
        log << "M=" << m.clusters << ":";
        for (std::size_t n = 0; n < s.rfClusters.size(); ++n)
            log << " vehicle " << n << " clusters rf=" << s.rfClusters[n] << " gps=" << s.gpsClusters[n] << ";";
        log << " rmse rf=" << s.rmseRf << " gps=" << s.rmseGps << " pooled=" << s.rmsePooled << "\n";
        summaries.push_back(s);
    }
    return summaries;
}

/// Traces for every vehicle of one run.
inline std::vector<AbnormalityTrace> detect_run(const ExperimentConfig& config, const TrajectoryProvider& provider,
                                                const TrainedModels& models, Scenario scenario, double powerDbm,
                                                std::uint64_t runSeed)
{
    const auto runs = simulate_run(config, provider, scenario, powerDbm, runSeed);
    std::vector<AbnormalityTrace> traces;
    for (int n = 0; n < config.vehicles; ++n)
        traces.push_back(trace_run(config, models.vehicles[static_cast<std::size_t>(n)], runs[static_cast<std::size_t>(n)],
                                   n, filter_seed(runSeed, n)));
    return traces;
}

struct DetectResult {
    int clusters = 0;
    DetectionReport report;
    std::vector<std::vector<AbnormalityTrace>> traces;  // [run][vehicle]
};

/// Runs a scenario for every cluster count, using model files from modelDir.
inline std::vector<DetectResult> run_detect(const ExperimentConfig& config, const std::filesystem::path& modelDir,
                                            Scenario scenario, int threads = 1)
{
    const TrajectoryProvider provider(config);
    const double power = scenario == Scenario::Jam ? config.detectJammerPowerDbm : 0.0;
    std::vector<DetectResult> results;
    for (int M : config.clusterCounts) {
        const TrainedModels models = load_models(modelDir, M, config);
        DetectResult res;
        res.clusters = M;
        res.traces.resize(static_cast<std::size_t>(config.runsPerScenario));
        parallel_for(res.traces.size(), threads, [&](std::size_t r) {
            res.traces[r] = detect_run(config, provider, models, scenario, power,
                                       derive_seed(config.baseSeed, to_string(scenario), power, M, static_cast<int>(r)));
        });
        std::vector<AbnormalityTrace> all;
        for (const auto& run : res.traces) all.insert(all.end(), run.begin(), run.end());
        res.report = compute_report(all, config.window, config.quorum);
        results.push_back(std::move(res));
    }
    return results;
}

inline std::vector<DetectResult> cmd_detect(const ExperimentConfig& config, const std::filesystem::path& modelDir,
                                            const std::filesystem::path& outDir, Scenario scenario, std::ostream& log,
                                            int threads = 1)
{
    auto results = run_detect(config, modelDir, scenario, threads);
    const OutputHeader header = header_for(config);
    for (const auto& res : results) {
        const std::string stem = std::string("detect_") + to_string(scenario) + "_M" + std::to_string(res.clusters);
        Json doc = {{"format", "v2xguard-detection-report"},
                    {"version", kModelFormatVersion},
                    {"config_hash", header.configHash},
                    {"base_seed", header.baseSeed},
                    {"scenario", to_string(scenario)},
                    {"clusters", res.clusters},
                    {"jammer_power_dbm", scenario == Scenario::Jam ? Json(config.detectJammerPowerDbm) : Json(nullptr)},
                    {"runs", config.runsPerScenario},
                    {"window", config.window},
                    {"quorum", config.quorum},
                    {"report", to_json(res.report)},
                    {"config", to_json(config)}};
        write_text(outDir / (stem + ".json"), doc.dump(1) + "\n");
        for (std::size_t r = 0; r < res.traces.size(); ++r)
            for (const auto& tr : res.traces[r]) {
                std::ostringstream csv;
                csv << csv_metadata_line(header);
                write_trace_csv(csv, tr);
                write_text(outDir / (stem + "_traces") /
                               ("v" + std::to_string(tr.vehicleId) + "_r" + std::to_string(r) + ".csv"),
                           csv.str());
            }
        auto fmt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
        log << to_string(scenario) << " M=" << res.clusters << ": pd_jam=" << fmt(res.report.pdJammer)
            << " pd_spoof=" << fmt(res.report.pdSpoofer) << " pf_jam=" << fmt(res.report.pfJammer)
            << " pf_spoof=" << fmt(res.report.pfSpoofer) << " normal_windows_h0=" << fmt(res.report.normalContainment)
            << "\n";
    }
    return results;
}

struct SweepRow {
    Scenario scenario = Scenario::Normal;
    double powerDbm = 0.0;
    int clusters = 0;
    int run = 0;
    DetectionReport report;
};

inline const char* kSweepHeader = "scenario,power_dbm,clusters,run,pd_jam,pd_spoof,pf_jam,pf_spoof,rmse_rf,rmse_gps";

/// Cross product scenarios x powers x cluster counts x runs, one report per cell. Models are trained
/// in memory exactly as `train` would write them.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& config, int threads = 1)
{
    const TrajectoryProvider provider(config);
    const TrainingData data = simulate_training_data(config, provider);
    std::vector<TrainedModels> models(config.clusterCounts.size());
    parallel_for(models.size(), threads,
                 [&](std::size_t i) { models[i] = train_models(config, data, config.clusterCounts[i]); });

    std::vector<SweepRow> rows;
    for (Scenario s : {Scenario::Normal, Scenario::Jam, Scenario::Spoof})
        for (double p : config.jammerPowersDbm)
            for (std::size_t mi = 0; mi < config.clusterCounts.size(); ++mi)
                for (int r = 0; r < config.runsPerScenario; ++r) rows.push_back({s, p, config.clusterCounts[mi], r, {}});

    parallel_for(rows.size(), threads, [&](std::size_t i) {
        auto& row = rows[i];
        const auto& m = *std::find_if(models.begin(), models.end(),
                                      [&](const TrainedModels& t) { return t.clusters == row.clusters; });
        // Only the jam scenario has a jammer; the power still keys the cell's seed.
        const double power = row.scenario == Scenario::Jam ? row.powerDbm : 0.0;
        const auto seed = derive_seed(config.baseSeed, to_string(row.scenario), row.powerDbm, m.clusters, row.run);
        const auto traces = detect_run(config, provider, m, row.scenario, power, seed);
        row.report = compute_report(traces, config.window, config.quorum);
    });
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, const OutputHeader& header)
{
    std::ostringstream out;
    out << csv_metadata_line(header) << kSweepHeader << "\n";
    out.precision(10);
    auto opt = [&](const std::optional<double>& v) {
        if (v) out << *v;
    };
    for (const auto& r : rows) {
        out << to_string(r.scenario) << ',' << r.powerDbm << ',' << r.clusters << ',' << r.run << ',';
        opt(r.report.pdJammer);
        out << ',';
        opt(r.report.pdSpoofer);
        out << ',';
        opt(r.report.pfJammer);
        out << ',';
        opt(r.report.pfSpoofer);
        out << ',';
        opt(r.report.rmseRf);
        out << ',';
        opt(r.report.rmseGps);
        out << '\n';
    }
    return out.str();
}

inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& outDir,
                                       std::ostream& log, int threads = 1)
{
    auto rows = run_sweep(config, threads);
    write_text(outDir / "sweep.csv", sweep_csv(rows, header_for(config)));
    log << "sweep: " << rows.size() << " cells written to " << (outDir / "sweep.csv").string() << "\n";
    return rows;
}

}  // namespace v2xguard
