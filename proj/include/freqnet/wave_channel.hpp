#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "freqnet/errors.hpp"

namespace freqnet {

using Vec = Eigen::VectorXd;

/// Scattering channel parameters. Delays are rounded to whole steps of `step`;
/// the effective delay is delay_steps * step.
struct WaveChannelConfig {
    double eta = 1.0;          // impedance, > 0
    double delay_down_s = 0.0;  // control-command downlink
    double delay_up_s = 0.0;    // measurement uplink
    bool filter_enabled = false;
    double zeta_u = 0.0;        // downlink filter time constant [s]
    double zeta_omega = 0.0;    // uplink filter time constant [s]
    double step = 1e-3;         // loop step h [s]

    void validate() const {
        if (!(eta > 0.0)) throw ValidationError("channel: eta must be positive");
        if (delay_down_s < 0.0 || delay_up_s < 0.0)
            throw ValidationError("channel: delays must be nonnegative");
        if (!(step > 0.0)) throw ValidationError("channel: step must be positive");
        if (filter_enabled && (zeta_u <= 0.0 || zeta_omega <= 0.0))
            throw ValidationError("channel: filter time constants must be positive when enabled");
    }

    [[nodiscard]] int down_steps() const { return static_cast<int>(std::lround(delay_down_s / step)); }
    [[nodiscard]] int up_steps() const { return static_cast<int>(std::lround(delay_up_s / step)); }
};

/// Plant-side raw waves sigma_p+- = (p -+ eta g) / sqrt(2 eta), g = G' omega.
inline std::pair<Vec, Vec> encode_plant_wave(const Vec& p, const Vec& gw, double eta) {
    if (!(eta > 0.0)) throw ValidationError("encode_plant_wave: eta must be positive");
    if (p.size() != gw.size()) throw DimensionError("encode_plant_wave: size mismatch");
    double s = std::sqrt(2.0 * eta);
    return {(p - eta * gw) / s, (p + eta * gw) / s};
}

/// Optimizer-side raw waves sigma_o+- = (u +- eta y) / sqrt(2 eta).
inline std::pair<Vec, Vec> encode_optimizer_wave(const Vec& u, const Vec& y, double eta) {
    if (!(eta > 0.0)) throw ValidationError("encode_optimizer_wave: eta must be positive");
    if (u.size() != y.size()) throw DimensionError("encode_optimizer_wave: size mismatch");
    double s = std::sqrt(2.0 * eta);
    return {(u + eta * y) / s, (u - eta * y) / s};
}

/// Plant input decoded from the received downlink wave and the local
/// frequency signal: p = sqrt(2 eta) sigma_p- - eta g.
inline Vec decode_plant_input(const Vec& sigma_p_minus, const Vec& gw, double eta) {
    if (!(eta > 0.0)) throw ValidationError("decode_plant_input: eta must be positive");
    if (sigma_p_minus.size() != gw.size()) throw DimensionError("decode_plant_input: size mismatch");
    return std::sqrt(2.0 * eta) * sigma_p_minus - eta * gw;
}

/// Measurement reconstructed at the optimizer: y = (u - sqrt(2 eta) sigma_o-) / eta.
inline Vec decode_optimizer_measurement(const Vec& u, const Vec& sigma_o_minus, double eta) {
    if (!(eta > 0.0)) throw ValidationError("decode_optimizer_measurement: eta must be positive");
    if (u.size() != sigma_o_minus.size())
        throw DimensionError("decode_optimizer_measurement: size mismatch");
    return (u - std::sqrt(2.0 * eta) * sigma_o_minus) / eta;
}

/// Bidirectional delayed wave channel with optional first-order wave filters.
/// Ring buffers hold one vector per step of delay; filters use the exact
/// zero-order-hold discretization so constant waves pass with unit DC gain.
class WaveChannel {
public:
    WaveChannel(const WaveChannelConfig& cfg, int width, const Vec& initial_wave)
        : cfg_(cfg), width_(width) {
        cfg_.validate();
        if (initial_wave.size() != width) throw DimensionError("WaveChannel: bad initial wave");
        buf_down_.assign(std::max(cfg_.down_steps(), 0), initial_wave);
        buf_up_.assign(std::max(cfg_.up_steps(), 0), initial_wave);
        filt_down_ = initial_wave;
        filt_up_ = initial_wave;
        last_a_down_ = initial_wave;
        last_a_up_ = initial_wave;
    }

    [[nodiscard]] int down_steps() const { return static_cast<int>(buf_down_.size()); }
    [[nodiscard]] int up_steps() const { return static_cast<int>(buf_up_.size()); }

    /// Delayed values popped this step (pre-filter), for energy bookkeeping.
    [[nodiscard]] const Vec& last_a_down() const { return last_a_down_; }
    [[nodiscard]] const Vec& last_a_up() const { return last_a_up_; }
    /// Filter outputs delivered this step.
    [[nodiscard]] const Vec& output_down() const { return out_down_; }
    [[nodiscard]] const Vec& output_up() const { return out_up_; }

    /// Read this step's delayed (and filtered) outputs without pushing yet.
    /// Mutates filter state; call exactly once per step, before transmit().
    std::pair<Vec, Vec> receive() {
        last_a_down_ = buf_down_.empty() ? Vec() : buf_down_[pos_down_];
        last_a_up_ = buf_up_.empty() ? Vec() : buf_up_[pos_up_];
        if (buf_down_.empty() || buf_up_.empty())
            throw ValidationError("WaveChannel::receive: zero-delay channel has no buffered output");
        if (cfg_.filter_enabled) {
            double au = std::exp(-cfg_.step / cfg_.zeta_u);
            double aw = std::exp(-cfg_.step / cfg_.zeta_omega);
            filt_down_ = au * filt_down_ + (1.0 - au) * last_a_down_;
            filt_up_ = aw * filt_up_ + (1.0 - aw) * last_a_up_;
            out_down_ = filt_down_;
            out_up_ = filt_up_;
        } else {
            out_down_ = last_a_down_;
            out_up_ = last_a_up_;
        }
        return {out_down_, out_up_};
    }

    /// Push this step's transmitted waves and advance the delay lines.
    void transmit(const Vec& sigma_o_plus, const Vec& sigma_p_plus) {
        if (sigma_o_plus.size() != width_ || sigma_p_plus.size() != width_)
            throw DimensionError("WaveChannel::transmit: size mismatch");
        if (!buf_down_.empty()) {
            buf_down_[pos_down_] = sigma_o_plus;
            pos_down_ = (pos_down_ + 1) % buf_down_.size();
        }
        if (!buf_up_.empty()) {
            buf_up_[pos_up_] = sigma_p_plus;
            pos_up_ = (pos_up_ + 1) % buf_up_.size();
        }
    }

    /// Spec-level one-call form: push inputs, pop (and filter) delayed values.
    /// Zero-delay lines pass their input through unchanged.
    std::pair<Vec, Vec> step(const Vec& sigma_o_plus_in, const Vec& sigma_p_plus_in) {
        Vec a_down, a_up;
        if (buf_down_.empty()) {
            a_down = sigma_o_plus_in;
        } else {
            a_down = buf_down_[pos_down_];
            buf_down_[pos_down_] = sigma_o_plus_in;
            pos_down_ = (pos_down_ + 1) % buf_down_.size();
        }
        if (buf_up_.empty()) {
            a_up = sigma_p_plus_in;
        } else {
            a_up = buf_up_[pos_up_];
            buf_up_[pos_up_] = sigma_p_plus_in;
            pos_up_ = (pos_up_ + 1) % buf_up_.size();
        }
        last_a_down_ = a_down;
        last_a_up_ = a_up;
        if (cfg_.filter_enabled) {
            double au = std::exp(-cfg_.step / cfg_.zeta_u);
            double aw = std::exp(-cfg_.step / cfg_.zeta_omega);
            filt_down_ = au * filt_down_ + (1.0 - au) * a_down;
            filt_up_ = aw * filt_up_ + (1.0 - aw) * a_up;
            out_down_ = filt_down_;
            out_up_ = filt_up_;
        } else {
            out_down_ = a_down;
            out_up_ = a_up;
        }
        return {out_down_, out_up_};
    }

    /// Channel storage relative to a constant equilibrium wave: left-endpoint
    /// Riemann sum of buffered incremental waves, plus the filter terms
    /// zeta/2 |sigma~-|^2 when filtering is enabled.
    [[nodiscard]] double storage(const Vec& equilibrium_wave) const {
        if (equilibrium_wave.size() != width_) throw DimensionError("WaveChannel::storage: bad wave");
        double s = 0.0;
        for (const auto& w : buf_down_) s += 0.5 * cfg_.step * (w - equilibrium_wave).squaredNorm();
        for (const auto& w : buf_up_) s += 0.5 * cfg_.step * (w - equilibrium_wave).squaredNorm();
        if (cfg_.filter_enabled) {
            s += 0.5 * cfg_.zeta_u * (filt_down_ - equilibrium_wave).squaredNorm();
            s += 0.5 * cfg_.zeta_omega * (filt_up_ - equilibrium_wave).squaredNorm();
        }
        return s;
    }

    [[nodiscard]] const WaveChannelConfig& config() const { return cfg_; }

private:
    WaveChannelConfig cfg_;
    int width_;
    std::vector<Vec> buf_down_, buf_up_;
    size_t pos_down_ = 0, pos_up_ = 0;
    Vec filt_down_, filt_up_;
    Vec last_a_down_, last_a_up_;
    Vec out_down_, out_up_;
};

}  // namespace freqnet
