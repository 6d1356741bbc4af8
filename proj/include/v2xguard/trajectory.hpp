// Vehicle trajectories: CSV ingestion (vehicle_id,frame,x_m,y_m subset format),
// synthetic intersection maneuvers, and the spoofer's falsified-position model.
#pragma once

#include "v2xguard/core.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace v2xguard {

/// Raised when an input file lacks a required column.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an input file is well-formed but its content is unusable.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Seconds per time step (NGSIM frame rate).
inline constexpr double kStepSeconds = 0.1;

/// Converts km/h to meters per time step.
inline constexpr double kmh_to_m_per_step(double kmh) { return kmh / 3.6 * kStepSeconds; }

struct BoundingBox {
    Vec2 min = Vec2(-500.0, -500.0);
    Vec2 max = Vec2(500.0, 500.0);

    Vec2 extent() const { return max - min; }
    bool contains(const Vec2& p) const
    {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
};

struct TrajectoryPoint {
    int t = 0;
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
};

struct Trajectory {
    int vehicleId = 0;
    std::vector<TrajectoryPoint> points;
    std::string maneuverLabel;

    std::size_t size() const { return points.size(); }

    std::vector<Vec2> positions() const
    {
        std::vector<Vec2> out;
        out.reserve(points.size());
        for (const auto& p : points) out.push_back(p.position);
        return out;
    }

    bool within(const BoundingBox& box) const
    {
        return std::all_of(points.begin(), points.end(), [&](const auto& p) { return box.contains(p.position); });
    }
};

/// Column names of the CSV subset format. Positions are multiplied by unitScale to get meters.
struct CsvSchema {
    std::string vehicleId = "vehicle_id";
    std::string frame = "frame";
    std::string x = "x_m";
    std::string y = "y_m";
    std::string maneuver = "maneuver";  // optional column
    double unitScale = 1.0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void recompute_velocities(Trajectory& traj)
{
    auto& pts = traj.points;
    for (std::size_t k = 1; k < pts.size(); ++k) pts[k].velocity = pts[k].position - pts[k - 1].position;
    if (pts.size() >= 2)
        pts[0].velocity = pts[1].velocity;
    else if (!pts.empty())
        pts[0].velocity.setZero();
}

}  // namespace detail

/// Reads one trajectory per vehicle id, ordered by id. Frames are resampled to unit stride by linear
/// interpolation over gaps; t counts steps from the vehicle's first frame.
inline std::vector<Trajectory> load_trajectories(std::istream& in, const CsvSchema& schema = {})
{
    std::string header;
    if (!std::getline(in, header)) throw SchemaError("trajectory CSV: missing header row");
    const auto names = detail::split_csv_line(header);
    auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        if (required) throw SchemaError("trajectory CSV: missing column '" + name + "'");
        return std::nullopt;
    };
    const std::size_t cId = *column(schema.vehicleId, true);
    const std::size_t cFrame = *column(schema.frame, true);
    const std::size_t cX = *column(schema.x, true);
    const std::size_t cY = *column(schema.y, true);
    const auto cManeuver = column(schema.maneuver, false);

    struct Raw {
        std::vector<long long> frames;
        std::vector<Vec2> positions;
        std::string label;
    };
    std::map<int, Raw> raw;
    std::string line;
    std::size_t lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        const std::size_t needed = std::max({cId, cFrame, cX, cY}) + 1;
        if (cells.size() < needed) throw DataError("trajectory CSV: short row at line " + std::to_string(lineNo));
        int id = 0;
        long long frame = 0;
        double x = 0.0, y = 0.0;
        try {
            id = std::stoi(cells[cId]);
            frame = std::stoll(cells[cFrame]);
            x = std::stod(cells[cX]) * schema.unitScale;
            y = std::stod(cells[cY]) * schema.unitScale;
        } catch (const std::exception&) {
            throw DataError("trajectory CSV: unparsable value at line " + std::to_string(lineNo));
        }
        auto& r = raw[id];
        if (!r.frames.empty() && frame <= r.frames.back())
            throw DataError("trajectory CSV: non-monotone frames for vehicle " + std::to_string(id));
        r.frames.push_back(frame);
        r.positions.emplace_back(x, y);
        if (cManeuver && *cManeuver < cells.size() && r.label.empty()) r.label = cells[*cManeuver];
    }

    std::vector<Trajectory> out;
    for (const auto& [id, r] : raw) {
        Trajectory traj;
        traj.vehicleId = id;
        traj.maneuverLabel = r.label;
        const long long first = r.frames.front();
        for (std::size_t k = 0; k < r.frames.size(); ++k) {
            if (k > 0) {
                const long long gap = r.frames[k] - r.frames[k - 1];
                for (long long g = 1; g < gap; ++g) {
                    const double a = static_cast<double>(g) / static_cast<double>(gap);
                    TrajectoryPoint p;
                    p.t = static_cast<int>(r.frames[k - 1] + g - first);
                    p.position = (1.0 - a) * r.positions[k - 1] + a * r.positions[k];
                    traj.points.push_back(p);
                }
            }
            TrajectoryPoint p;
            p.t = static_cast<int>(r.frames[k] - first);
            p.position = r.positions[k];
            traj.points.push_back(p);
        }
        detail::recompute_velocities(traj);
        out.push_back(std::move(traj));
    }
    return out;
}

inline std::vector<Trajectory> load_trajectories(const std::string& path, const CsvSchema& schema = {})
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectory file '" + path + "'");
    return load_trajectories(in, schema);
}

/// Writes trajectories in the subset format (with the optional maneuver column).
inline void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories, long long firstFrame = 0)
{
    out << "vehicle_id,frame,x_m,y_m,maneuver\n";
    out.precision(17);
    for (const auto& traj : trajectories)
        for (const auto& p : traj.points)
            out << traj.vehicleId << ',' << firstFrame + p.t << ',' << p.position.x() << ',' << p.position.y() << ','
                << traj.maneuverLabel << '\n';
}

enum class ManeuverKind { Straight, LeftTurn, RightTurn };

inline const char* to_string(ManeuverKind k)
{
    switch (k) {
        case ManeuverKind::Straight: return "straight";
        case ManeuverKind::LeftTurn: return "left_turn";
        case ManeuverKind::RightTurn: return "right_turn";
    }
    return "?";
}

inline ManeuverKind parse_maneuver_kind(const std::string& s)
{
    if (s == "straight") return ManeuverKind::Straight;
    if (s == "left_turn") return ManeuverKind::LeftTurn;
    if (s == "right_turn") return ManeuverKind::RightTurn;
    throw ContractViolation("unknown maneuver kind '" + s + "'");
}

/// Placement of a synthetic maneuver in the local frame.
struct ManeuverGeometry {
    Vec2 start = Vec2::Zero();
    double headingRad = 0.0;
    double turnRadiusM = 15.0;
    /// Where the turn begins, as a fraction of the straight distance available.
    double turnStartFraction = 0.4;
};

namespace detail {

/// Noiseless path position at arc length s (s may be negative: straight extension backwards).
inline Vec2 maneuver_point(ManeuverKind kind, const ManeuverGeometry& g, double s, double totalLength)
{
    const Vec2 dir(std::cos(g.headingRad), std::sin(g.headingRad));
    if (kind == ManeuverKind::Straight) return g.start + s * dir;

    const double arc = 0.5 * std::numbers::pi * g.turnRadiusM;
    const double s0 = g.turnStartFraction * std::max(0.0, totalLength - arc);
    if (s <= s0) return g.start + s * dir;

    const double sign = kind == ManeuverKind::LeftTurn ? 1.0 : -1.0;
    const Vec2 normal(-sign * dir.y(), sign * dir.x());
    const Vec2 turnStart = g.start + s0 * dir;
    const Vec2 center = turnStart + g.turnRadiusM * normal;
    const double theta = std::min(s - s0, arc) / g.turnRadiusM;
    // Rotate (turnStart - center) by sign * theta.
    const Vec2 r0 = turnStart - center;
    const double c = std::cos(sign * theta), sn = std::sin(sign * theta);
    const Vec2 onArc = center + Vec2(c * r0.x() - sn * r0.y(), sn * r0.x() + c * r0.y());
    if (s - s0 <= arc) return onArc;

    const Vec2 exitDir(c * dir.x() - sn * dir.y(), sn * dir.x() + c * dir.y());
    return onArc + (s - s0 - arc) * exitDir;
}

}  // namespace detail

/// Straight line or a single quarter-circle turn at constant speed, with additive Gaussian position
/// noise. Velocities are first differences of the noiseless path (the point before t=0 is the
/// backwards extension of the entry leg).
inline Trajectory synthesize_maneuver(ManeuverKind kind, int length, double speed, double noiseStd, std::uint64_t seed,
                                      const ManeuverGeometry& geometry = {}, int vehicleId = 0)
{
    require(length >= 10, "synthesize_maneuver: length must be >= 10");
    require(speed > 0.0, "synthesize_maneuver: speed must be > 0");
    require(noiseStd >= 0.0, "synthesize_maneuver: noiseStd must be >= 0");

    const double total = speed * (length - 1);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    Trajectory traj;
    traj.vehicleId = vehicleId;
    traj.maneuverLabel = to_string(kind);
    traj.points.reserve(static_cast<std::size_t>(length));
    Vec2 prev = detail::maneuver_point(kind, geometry, -speed, total);
    for (int t = 0; t < length; ++t) {
        const Vec2 clean = detail::maneuver_point(kind, geometry, speed * t, total);
        TrajectoryPoint p;
        p.t = t;
        p.velocity = clean - prev;
        p.position = clean;
        if (noiseStd > 0.0) {
            const double nx = noise(rng), ny = noise(rng);
            p.position += noiseStd * Vec2(nx, ny);
        }
        traj.points.push_back(p);
        prev = clean;
    }
    return traj;
}

/// Falsified positions: unchanged before startStep, offset ramped linearly over rampSteps, then held.
inline Trajectory apply_spoofing(const Trajectory& traj, const Vec2& offset, int startStep, int rampSteps)
{
    require(startStep >= 0 && startStep < static_cast<int>(traj.size()), "apply_spoofing: startStep out of range");
    require(rampSteps >= 0, "apply_spoofing: rampSteps must be >= 0");
    auto shiftAt = [&](int k) -> Vec2 {
        if (k < startStep) return Vec2::Zero();
        if (rampSteps == 0) return offset;
        const double a = std::min(1.0, static_cast<double>(k - startStep) / rampSteps);
        return a * offset;
    };
    Trajectory out = traj;
    for (int k = startStep; k < static_cast<int>(out.size()); ++k) {
        auto& p = out.points[static_cast<std::size_t>(k)];
        p.position += shiftAt(k);
        p.velocity += shiftAt(k) - shiftAt(k - 1);
    }
    return out;
}

}  // namespace v2xguard
