// V2I uplink simulation: state-message encoding, Gray-mapped QPSK, large/small-scale fading,
// reactive jamming, and the RSU-side decoder with known CSI.
#pragma once

#include "v2xguard/core.hpp"
#include "v2xguard/trajectory.hpp"

#include <array>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace v2xguard {

using Complex = std::complex<double>;
using Bits = std::vector<std::uint8_t>;

struct ChannelParams {
    double carrierFreqGHz = 2.0;
    double bandwidthMHz = 1.4;
    double cellRadiusM = 500.0;
    double rsuAntennaHeightM = 25.0;
    double rsuGainDbi = 8.0;
    double vehicleAntennaHeightM = 1.5;
    double vehicleGainDbi = 3.0;
    double jammerGainDbi = 3.0;
    double noiseFigureDb = 5.0;
    double txPowerDbm = 23.0;
    double shadowStdDb = 8.0;
    double snrDb = 20.0;
    /// When false the small-scale fading coefficient is fixed to 1.
    bool rayleigh = true;
};

/// 128.1 + 37.6 log10(d_km), in dB.
inline double path_loss_db(double distanceM)
{
    require(distanceM > 0.0, "path_loss_db: distance must be > 0");
    return 128.1 + 37.6 * std::log10(distanceM / 1000.0);
}

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Complex gain sqrt(alpha) * h of one link. alpha combines path loss, log-normal shadowing and the
/// two antenna gains; h ~ CN(0,1). Draw order: shadowing, then Re h, Im h.
inline Complex channel_gain(const Vec2& txPos, const Vec2& rxPos, const ChannelParams& params, std::mt19937_64& rng,
                            double txGainDbi, double rxGainDbi)
{
    const double d = (txPos - rxPos).norm();
    require(d > 0.0, "channel_gain: transmitter and receiver coincide");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double shadowDb = params.shadowStdDb * gauss(rng);
    const double alphaDb = txGainDbi + rxGainDbi - path_loss_db(d) - shadowDb;
    Complex h(1.0, 0.0);
    if (params.rayleigh) {
        const double re = gauss(rng), im = gauss(rng);
        h = Complex(re, im) / std::sqrt(2.0);
    }
    return std::sqrt(db_to_linear(alphaDb)) * h;
}

inline Complex channel_gain(const Vec2& txPos, const Vec2& rxPos, const ChannelParams& params, std::mt19937_64& rng)
{
    return channel_gain(txPos, rxPos, params, rng, params.vehicleGainDbi, params.rsuGainDbi);
}

// ---------------------------------------------------------------------------------------------
// State message: [x(16) y(16) vx(16) vy(16)], MSB first, each field a 16-bit mid-rise quantizer
// over its box: q = floor((v - min) / extent * 2^16) clamped to 2^16 - 1, decoded at cell centers.

inline constexpr int kFieldBits = 16;
inline constexpr int kMessageBits = 4 * kFieldBits;
inline constexpr std::uint32_t kLevels = 1u << kFieldBits;

struct MessageBounds {
    BoundingBox position;
    BoundingBox velocity{Vec2(-4.0, -4.0), Vec2(4.0, 4.0)};
};

inline std::uint16_t quantize(double v, double lo, double hi)
{
    const double q = std::floor((v - lo) / (hi - lo) * kLevels);
    return static_cast<std::uint16_t>(std::clamp(q, 0.0, static_cast<double>(kLevels - 1)));
}

inline double dequantize(std::uint16_t q, double lo, double hi)
{
    return lo + (static_cast<double>(q) + 0.5) * (hi - lo) / kLevels;
}

inline Bits encode_state_message(const Vec2& position, const Vec2& velocity, const MessageBounds& bounds)
{
    require(bounds.position.contains(position), "encode_state_message: position outside bounds");
    require(bounds.velocity.contains(velocity), "encode_state_message: velocity outside bounds");
    const std::array<std::uint16_t, 4> fields = {
        quantize(position.x(), bounds.position.min.x(), bounds.position.max.x()),
        quantize(position.y(), bounds.position.min.y(), bounds.position.max.y()),
        quantize(velocity.x(), bounds.velocity.min.x(), bounds.velocity.max.x()),
        quantize(velocity.y(), bounds.velocity.min.y(), bounds.velocity.max.y()),
    };
    Bits bits;
    bits.reserve(kMessageBits);
    for (auto f : fields)
        for (int b = kFieldBits - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((f >> b) & 1u));
    return bits;
}

struct StateMessage {
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
};

inline StateMessage decode_state_message(const Bits& bits, const MessageBounds& bounds)
{
    require(bits.size() == static_cast<std::size_t>(kMessageBits), "decode_state_message: need 64 bits");
    std::array<std::uint16_t, 4> fields{};
    for (int f = 0; f < 4; ++f) {
        std::uint32_t v = 0;
        for (int b = 0; b < kFieldBits; ++b) v = (v << 1) | (bits[static_cast<std::size_t>(f * kFieldBits + b)] & 1u);
        fields[static_cast<std::size_t>(f)] = static_cast<std::uint16_t>(v);
    }
    StateMessage m;
    m.position = Vec2(dequantize(fields[0], bounds.position.min.x(), bounds.position.max.x()),
                      dequantize(fields[1], bounds.position.min.y(), bounds.position.max.y()));
    m.velocity = Vec2(dequantize(fields[2], bounds.velocity.min.x(), bounds.velocity.max.x()),
                      dequantize(fields[3], bounds.velocity.min.y(), bounds.velocity.max.y()));
    return m;
}

// ---------------------------------------------------------------------------------------------
// Gray QPSK: (b0 b1) 00 -> (+1+j), 01 -> (-1+j), 11 -> (-1-j), 10 -> (+1-j), all scaled by 1/sqrt(2).

inline std::vector<Complex> qpsk_modulate(const Bits& bits)
{
    require(bits.size() % 2 == 0, "qpsk_modulate: odd number of bits");
    const double a = 1.0 / std::sqrt(2.0);
    std::vector<Complex> out;
    out.reserve(bits.size() / 2);
    for (std::size_t i = 0; i < bits.size(); i += 2) {
        const double re = bits[i + 1] ? -a : a;
        const double im = bits[i] ? -a : a;
        out.emplace_back(re, im);
    }
    return out;
}

/// Hard-decision inverse of qpsk_modulate.
inline Bits qpsk_demodulate(const std::vector<Complex>& symbols)
{
    Bits bits;
    bits.reserve(2 * symbols.size());
    for (const auto& s : symbols) {
        bits.push_back(s.imag() < 0.0 ? 1 : 0);
        bits.push_back(s.real() < 0.0 ? 1 : 0);
    }
    return bits;
}

inline std::vector<Complex> random_qpsk(std::size_t count, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> bit(0, 1);
    Bits bits(2 * count);
    for (auto& b : bits) b = static_cast<std::uint8_t>(bit(rng));
    return qpsk_modulate(bits);
}

struct Frame {
    int vehicleId = 0;
    int t = 0;
    std::vector<Complex> symbols;
    Bits payloadBits;
};

inline Frame make_frame(int vehicleId, int t, const Vec2& position, const Vec2& velocity, const MessageBounds& bounds)
{
    Frame f;
    f.vehicleId = vehicleId;
    f.t = t;
    f.payloadBits = encode_state_message(position, velocity, bounds);
    f.symbols = qpsk_modulate(f.payloadBits);
    return f;
}

struct ReceivedFrame {
    int vehicleId = 0;
    int t = 0;
    std::vector<Complex> samples;
    Hypothesis trueHypothesis = Hypothesis::H0;
    Complex channelGain{1.0, 0.0};
    std::optional<Complex> jammerGain;
    double noiseVariance = 0.0;
};

/// Positions of the transmitters and the RSU for one frame.
struct LinkGeometry {
    Vec2 vehicle = Vec2::Zero();
    Vec2 rsu = Vec2::Zero();
    Vec2 jammer = Vec2::Zero();
};

/// z = g x + gJ xJ + v with explicit gains. Noise is drawn before the jammer stream so that H0 and
/// H1 frames built from the same seed share the signal and noise realizations.
inline ReceivedFrame transmit_with_gains(const Frame& frame, Hypothesis hypothesis, Complex gain,
                                         std::optional<Complex> jammerGain, double noiseVariance, std::mt19937_64& rng)
{
    require(hypothesis == Hypothesis::H0 || hypothesis == Hypothesis::H1 || hypothesis == Hypothesis::H2,
            "transmit: hypothesis must be H0, H1 or H2");
    require(noiseVariance >= 0.0, "transmit: negative noise variance");
    ReceivedFrame rx;
    rx.vehicleId = frame.vehicleId;
    rx.t = frame.t;
    rx.trueHypothesis = hypothesis;
    rx.channelGain = gain;
    rx.noiseVariance = noiseVariance;
    rx.samples.resize(frame.symbols.size());

    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sigma = std::sqrt(noiseVariance / 2.0);
    for (std::size_t k = 0; k < frame.symbols.size(); ++k) {
        const double re = gauss(rng), im = gauss(rng);
        rx.samples[k] = gain * frame.symbols[k] + sigma * Complex(re, im);
    }
    if (hypothesis == Hypothesis::H1) {
        require(jammerGain.has_value(), "transmit: H1 needs a jammer gain");
        rx.jammerGain = jammerGain;
        const auto jam = random_qpsk(frame.symbols.size(), rng);
        for (std::size_t k = 0; k < jam.size(); ++k) rx.samples[k] += *jammerGain * jam[k];
    }
    return rx;
}

/// Full uplink for one frame. Under H2 the frame must already carry the spoofed payload; the RF side
/// is then nominal. Noise variance is set per frame from snrDb relative to the noiseless received
/// signal power |g|^2 (unit-energy symbols).
inline ReceivedFrame transmit(const Frame& frame, Hypothesis hypothesis, double jammerPowerDbm,
                              const LinkGeometry& geometry, const ChannelParams& params, std::mt19937_64& rng)
{
    require(hypothesis == Hypothesis::H0 || hypothesis == Hypothesis::H1 || hypothesis == Hypothesis::H2,
            "transmit: hypothesis must be H0, H1 or H2");
    const Complex g = std::sqrt(dbm_to_mw(params.txPowerDbm)) * channel_gain(geometry.vehicle, geometry.rsu, params, rng);
    const double noiseVar = std::norm(g) / db_to_linear(params.snrDb);
    // The jammer link is drawn from a forked stream so H0/H1 share everything else.
    std::optional<Complex> gj;
    std::mt19937_64 jamRng(rng());
    if (hypothesis == Hypothesis::H1)
        gj = std::sqrt(dbm_to_mw(jammerPowerDbm)) *
             channel_gain(geometry.jammer, geometry.rsu, params, jamRng, params.jammerGainDbi, params.rsuGainDbi);
    ReceivedFrame rx = transmit_with_gains(frame, Hypothesis::H0, g, std::nullopt, noiseVar, rng);
    rx.trueHypothesis = hypothesis;
    if (gj) {
        rx.jammerGain = gj;
        const auto jam = random_qpsk(frame.symbols.size(), jamRng);
        for (std::size_t k = 0; k < jam.size(); ++k) rx.samples[k] += *gj * jam[k];
    }
    return rx;
}

struct DecodedFrame {
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
    /// Mean equalized sample (I, Q): the RF observation.
    Vec2 iqFeature = Vec2::Zero();
    Bits bits;
};

/// Equalizes with the known gain, hard-demaps and dequantizes. Corrupted bits give garbled states.
inline DecodedFrame decode_frame(const ReceivedFrame& rx, Complex knownGain, const MessageBounds& bounds)
{
    require(std::abs(knownGain) > 0.0, "decode_frame: known gain must be nonzero");
    std::vector<Complex> eq(rx.samples.size());
    Complex mean(0.0, 0.0);
    for (std::size_t k = 0; k < eq.size(); ++k) {
        eq[k] = rx.samples[k] / knownGain;
        mean += eq[k];
    }
    if (!eq.empty()) mean /= static_cast<double>(eq.size());
    DecodedFrame out;
    out.iqFeature = Vec2(mean.real(), mean.imag());
    out.bits = qpsk_demodulate(eq);
    if (out.bits.size() == static_cast<std::size_t>(kMessageBits)) {
        const auto msg = decode_state_message(out.bits, bounds);
        out.position = msg.position;
        out.velocity = msg.velocity;
    }
    return out;
}

}  // namespace v2xguard
