#include "v2xguard/channel.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace v2xguard;
using Catch::Approx;

namespace {

Bits random_bits(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> b(0, 1);
    Bits out(n);
    for (auto& x : out) x = static_cast<std::uint8_t>(b(rng));
    return out;
}

std::uint16_t field_value(const Bits& bits, int field)
{
    std::uint16_t v = 0;
    for (int b = 0; b < 16; ++b) v = static_cast<std::uint16_t>((v << 1) | bits[static_cast<std::size_t>(16 * field + b)]);
    return v;
}

const LinkGeometry kGeometry{Vec2(100, 150), Vec2(0, 0), Vec2(30, 40)};

}  // namespace

TEST_CASE("path loss at 500 m")
{
    CHECK(path_loss_db(500.0) == Approx(128.1 + 37.6 * std::log10(0.5)).margin(1e-12));
    CHECK(path_loss_db(500.0) == Approx(116.78).margin(0.005));
    CHECK_THROWS_AS(path_loss_db(0.0), ContractViolation);
}

TEST_CASE("deterministic gain equals alpha when shadowing and fading are off")
{
    ChannelParams p;
    p.shadowStdDb = 0.0;
    p.rayleigh = false;
    std::mt19937_64 rng(1);
    const Complex g = channel_gain(Vec2(300, 400), Vec2(0, 0), p, rng);
    const double alpha = std::pow(10.0, (3.0 + 8.0 - (128.1 + 37.6 * std::log10(0.5))) / 10.0);
    CHECK(std::abs(std::norm(g) - alpha) <= 1e-12 * alpha);
    CHECK_THROWS_AS(channel_gain(Vec2(1, 1), Vec2(1, 1), p, rng), ContractViolation);
}

TEST_CASE("Rayleigh coefficient has unit mean power")
{
    ChannelParams p;
    p.shadowStdDb = 0.0;
    ChannelParams flat = p;
    flat.rayleigh = false;
    std::mt19937_64 rng(2), unused(0);
    const double alpha = std::norm(channel_gain(Vec2(300, 400), Vec2(0, 0), flat, unused));
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += std::norm(channel_gain(Vec2(300, 400), Vec2(0, 0), p, rng)) / alpha;
    CHECK(sum / n == Approx(1.0).margin(0.02));
}

TEST_CASE("shadowing has the configured dB spread")
{
    ChannelParams p;
    p.rayleigh = false;
    ChannelParams flat = p;
    flat.shadowStdDb = 0.0;
    std::mt19937_64 rng(3), unused(0);
    const double alphaDb = 10.0 * std::log10(std::norm(channel_gain(Vec2(300, 400), Vec2(0, 0), flat, unused)));
    double s = 0.0, s2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double d = 10.0 * std::log10(std::norm(channel_gain(Vec2(300, 400), Vec2(0, 0), p, rng))) - alphaDb;
        s += d;
        s2 += d * d;
    }
    CHECK(s / n == Approx(0.0).margin(0.15));
    CHECK(std::sqrt(s2 / n - (s / n) * (s / n)) == Approx(8.0).margin(0.15));
}

TEST_CASE("state message quantizer")
{
    const MessageBounds bounds;
    SECTION("box minimum encodes to 64 zero bits")
    {
        const auto bits = encode_state_message(bounds.position.min, bounds.velocity.min, bounds);
        REQUIRE(bits.size() == 64);
        for (auto b : bits) CHECK(b == 0);
    }
    SECTION("box centre encodes to 0x8000 in every field")
    {
        const auto bits = encode_state_message(Vec2::Zero(), Vec2::Zero(), bounds);
        for (int f = 0; f < 4; ++f) CHECK(field_value(bits, f) == 0x8000);
    }
    SECTION("box maximum saturates at 0xFFFF")
    {
        const auto bits = encode_state_message(bounds.position.max, bounds.velocity.max, bounds);
        for (int f = 0; f < 4; ++f) CHECK(field_value(bits, f) == 0xFFFF);
    }
    SECTION("out-of-bounds values are rejected")
    {
        CHECK_THROWS_AS(encode_state_message(Vec2(501, 0), Vec2::Zero(), bounds), ContractViolation);
        CHECK_THROWS_AS(encode_state_message(Vec2::Zero(), Vec2(0, -4.5), bounds), ContractViolation);
    }
    SECTION("round trip error is within one quantization step")
    {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> pos(-500.0, 500.0), vel(-4.0, 4.0);
        const double posStep = 1000.0 / 65536.0, velStep = 8.0 / 65536.0;
        for (int i = 0; i < 2000; ++i) {
            const Vec2 p(pos(rng), pos(rng)), v(vel(rng), vel(rng));
            const auto m = decode_state_message(encode_state_message(p, v, bounds), bounds);
            CHECK((m.position - p).cwiseAbs().maxCoeff() <= posStep);
            CHECK((m.velocity - v).cwiseAbs().maxCoeff() <= velStep);
        }
    }
}

TEST_CASE("Gray QPSK constellation")
{
    const double a = 1.0 / std::sqrt(2.0);
    const auto s = qpsk_modulate({0, 0, 0, 1, 1, 1, 1, 0});
    REQUIRE(s.size() == 4);
    CHECK(std::abs(s[0] - Complex(a, a)) < 1e-15);
    CHECK(std::abs(s[1] - Complex(-a, a)) < 1e-15);
    CHECK(std::abs(s[2] - Complex(-a, -a)) < 1e-15);
    CHECK(std::abs(s[3] - Complex(a, -a)) < 1e-15);
    CHECK(s[0].real() == Approx(0.7071).margin(1e-4));
    CHECK_THROWS_AS(qpsk_modulate({0, 1, 1}), ContractViolation);
}

TEST_CASE("QPSK round trip and unit energy on random bits")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto bits = random_bits(2 * (1 + trial * 7), rng);
        const auto syms = qpsk_modulate(bits);
        CHECK(qpsk_demodulate(syms) == bits);
        double e = 0.0;
        for (const auto& x : syms) e += std::norm(x);
        CHECK(std::abs(e / static_cast<double>(syms.size()) - 1.0) <= 1e-12);
    }
}

TEST_CASE("identity channel passes symbols through")
{
    const auto frame = make_frame(0, 0, Vec2(12, -7), Vec2(1, 0.5), {});
    std::mt19937_64 rng(6);
    const auto rx = transmit_with_gains(frame, Hypothesis::H0, Complex(1, 0), std::nullopt, 0.0, rng);
    REQUIRE(rx.samples.size() == frame.symbols.size());
    for (std::size_t k = 0; k < rx.samples.size(); ++k) CHECK(rx.samples[k] == frame.symbols[k]);
}

TEST_CASE("noiseless decode recovers the state and the symbol-mean feature")
{
    const MessageBounds bounds;
    const Vec2 p(123.4, -56.7), v(1.1, -0.2);
    const auto frame = make_frame(1, 3, p, v, bounds);
    std::mt19937_64 rng(7);
    const Complex g(0.3, -0.4);
    const auto rx = transmit_with_gains(frame, Hypothesis::H0, g, std::nullopt, 0.0, rng);
    const auto d = decode_frame(rx, g, bounds);
    CHECK((d.position - p).cwiseAbs().maxCoeff() <= 1000.0 / 65536.0);
    CHECK((d.velocity - v).cwiseAbs().maxCoeff() <= 8.0 / 65536.0);

    // Mean of the constellation points named by the payload bits, computed from the bits directly.
    const double a = 1.0 / std::sqrt(2.0);
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < frame.payloadBits.size(); i += 2) {
        im += frame.payloadBits[i] ? -a : a;
        re += frame.payloadBits[i + 1] ? -a : a;
    }
    const double n = static_cast<double>(frame.payloadBits.size() / 2);
    CHECK(d.iqFeature.x() == Approx(re / n).margin(1e-12));
    CHECK(d.iqFeature.y() == Approx(im / n).margin(1e-12));
    CHECK_THROWS_AS(decode_frame(rx, Complex(0, 0), bounds), ContractViolation);
}

TEST_CASE("a dominant jammer drives the bit error rate to one half")
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> pos(-400.0, 400.0);
    long errors = 0, total = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto frame = make_frame(0, i, Vec2(pos(rng), pos(rng)), Vec2(0.5, 0.5), {});
        const auto rx = transmit_with_gains(frame, Hypothesis::H1, Complex(1, 0), Complex(1e4, 0), 1e-4, rng);
        const auto bits = qpsk_demodulate(rx.samples);
        for (std::size_t k = 0; k < bits.size(); ++k) errors += bits[k] != frame.payloadBits[k];
        total += static_cast<long>(bits.size());
    }
    CHECK(static_cast<double>(errors) / total == Approx(0.5).margin(0.01));
}

TEST_CASE("a 40 dBm jammer displaces the RF feature well beyond its normal spread")
{
    const ChannelParams params;
    const MessageBounds bounds;
    std::vector<Vec2> normal;
    double displacement = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const auto frame = make_frame(0, i, Vec2(100, 150), Vec2(1, 0), bounds);
        std::mt19937_64 r0(1000 + i), r1(1000 + i);
        const auto rx0 = transmit(frame, Hypothesis::H0, 40.0, kGeometry, params, r0);
        const auto rx1 = transmit(frame, Hypothesis::H1, 40.0, kGeometry, params, r1);
        REQUIRE(rx0.channelGain == rx1.channelGain);
        const Vec2 f0 = decode_frame(rx0, rx0.channelGain, bounds).iqFeature;
        const Vec2 f1 = decode_frame(rx1, rx1.channelGain, bounds).iqFeature;
        normal.push_back(f0);
        displacement += (f1 - f0).norm();
    }
    Vec2 mean = Vec2::Zero();
    for (const auto& f : normal) mean += f;
    mean /= n;
    double var = 0.0;
    for (const auto& f : normal) var += (f - mean).squaredNorm();
    const double normalStd = std::sqrt(var / n);
    CHECK(displacement / n > 3.0 * normalStd);
}

TEST_CASE("spoofed frames are RF-identical to normal frames under the same seeds")
{
    const ChannelParams params;
    const MessageBounds bounds;
    for (int i = 0; i < 200; ++i) {
        const auto honest = make_frame(0, i, Vec2(100, 150), Vec2(1, 0), bounds);
        const auto spoofed = make_frame(0, i, Vec2(110, 150), Vec2(1, 0), bounds);
        std::mt19937_64 r0(77 + i), r2(77 + i);
        const auto rx0 = transmit(honest, Hypothesis::H0, 40.0, kGeometry, params, r0);
        const auto rx2 = transmit(spoofed, Hypothesis::H2, 40.0, kGeometry, params, r2);
        CHECK(rx0.channelGain == rx2.channelGain);
        CHECK(rx0.noiseVariance == rx2.noiseVariance);
        CHECK_FALSE(rx2.jammerGain.has_value());
        for (std::size_t k = 0; k < rx0.samples.size(); ++k) {
            const Complex v0 = rx0.samples[k] - rx0.channelGain * honest.symbols[k];
            const Complex v2 = rx2.samples[k] - rx2.channelGain * spoofed.symbols[k];
            CHECK(std::abs(v0 - v2) <= 1e-12 * std::abs(rx0.channelGain));
        }
        const auto d = decode_frame(rx2, rx2.channelGain, bounds);
        CHECK((d.position - Vec2(110, 150)).norm() < 0.05);
    }
}

TEST_CASE("frame error rate at 20 dB SNR")
{
    const ChannelParams params;
    const MessageBounds bounds;
    std::mt19937_64 rng(9);
    int frameErrors = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        const auto frame = make_frame(0, i, Vec2(100, 150), Vec2(1, 0), bounds);
        const auto rx = transmit(frame, Hypothesis::H0, 0.0, kGeometry, params, rng);
        frameErrors += decode_frame(rx, rx.channelGain, bounds).bits != frame.payloadBits;
    }
    CHECK(static_cast<double>(frameErrors) / n <= 1e-2);
}

TEST_CASE("received signal-to-noise ratio matches the configuration")
{
    const ChannelParams params;
    std::mt19937_64 rng(10);
    double signal = 0.0, noise = 0.0;
    int symbols = 0;
    while (symbols < 100000) {
        const auto frame = make_frame(0, 0, Vec2(100, 150), Vec2(1, 0), {});
        const auto rx = transmit(frame, Hypothesis::H0, 0.0, kGeometry, params, rng);
        for (std::size_t k = 0; k < rx.samples.size(); ++k) {
            const Complex clean = rx.channelGain * frame.symbols[k];
            // Normalize per frame: the configured ratio is relative to each frame's own gain.
            signal += std::norm(clean) / std::norm(rx.channelGain);
            noise += std::norm(rx.samples[k] - clean) / std::norm(rx.channelGain);
            ++symbols;
        }
    }
    CHECK(10.0 * std::log10(signal / noise) == Approx(params.snrDb).margin(0.2));
}

TEST_CASE("transmission is deterministic under a seed")
{
    const ChannelParams params;
    const auto frame = make_frame(0, 0, Vec2(100, 150), Vec2(1, 0), {});
    std::mt19937_64 a(11), b(11);
    const auto ra = transmit(frame, Hypothesis::H1, 30.0, kGeometry, params, a);
    const auto rb = transmit(frame, Hypothesis::H1, 30.0, kGeometry, params, b);
    CHECK(ra.samples == rb.samples);
    CHECK(ra.channelGain == rb.channelGain);
    CHECK(ra.jammerGain == rb.jammerGain);
}

TEST_CASE("transmit rejects an indeterminate hypothesis")
{
    const auto frame = make_frame(0, 0, Vec2(100, 150), Vec2(1, 0), {});
    std::mt19937_64 rng(12);
    CHECK_THROWS_AS(transmit(frame, Hypothesis::Indeterminate, 30.0, kGeometry, {}, rng), ContractViolation);
    CHECK_THROWS_AS(transmit_with_gains(frame, Hypothesis::H1, Complex(1, 0), std::nullopt, 0.0, rng), ContractViolation);
}
