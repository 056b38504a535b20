#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "freqnet/controller.hpp"
#include "freqnet/dispatch.hpp"
#include "freqnet/plant.hpp"
#include "freqnet/rbc.hpp"
#include "freqnet/scenario.hpp"
#include "freqnet/wave_channel.hpp"

namespace freqnet {

/// Piecewise-constant demand under a disturbance schedule.
inline Vec apply_disturbance(const Vec& d_base, const std::vector<DisturbanceEvent>& schedule,
                             double t) {
    Vec d = d_base;
    for (const auto& ev : schedule)
        if (t >= ev.t) d(ev.bus_index) += ev.delta;
    return d;
}

/// Distance to the target set: plant frequency, mean-free angle error and the
/// primal optimizer error. Dual coordinates are excluded.
inline double distance_to_solution(const PlantState& ps, const OptimizerState& z,
                                   const KKTPoint& ref) {
    Vec dth = ps.theta - ref.phi;
    dth.array() -= dth.mean();
    double s = ps.omega.squaredNorm() + dth.squaredNorm() + (z.u - ref.u).squaredNorm() +
               (z.phi - ref.phi).squaredNorm();
    return std::sqrt(s);
}

struct EnergyLedgerEntry {
    double t = 0.0;
    double s_plant = 0.0;
    double s_optimizer = 0.0;
    double s_channel = 0.0;
    double q_rhs = 0.0;      // |w~|^2 + |u~|^2 + |r|^2 at this step
    double gamma_sq = 0.0;
};

/// Online energy/dissipation aggregates, computed at full step rate.
struct EnergyAggregates {
    double c0 = 0.0;
    long checked_steps = 0;
    double max_dissipation_violation = -std::numeric_limits<double>::infinity();
    double max_channel_residual = 0.0;      // |dS_tau/h - wave supply| (unfiltered exact)
    double max_filtered_residual = 0.0;     // filtered-channel balance residual
    double min_filter_dissipation = std::numeric_limits<double>::infinity();
    double max_port_residual = 0.0;         // |dS_tau/h - port supply| (O(h))
};

struct WorkloadLedger {
    long steps = 0;
    long blocks = 0;
    long coords = 0;
    int n_z = 0;
    int n_b = 0;
};

struct TraceRecord {
    double t = 0.0;
    Vec omega, theta_gen, u, phi, lambda, pi, rho_plus, rho_minus, p, y;
    Vec tie_mw;
    Vec flow_mw;
    double s_plant = 0.0, s_optimizer = 0.0, s_channel = 0.0, gamma_sq = 0.0;
    long coords_cum = 0;
};

struct SimTrace {
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<TraceRecord> records;
    std::vector<EnergyLedgerEntry> energy;   // every ledger_decimation steps
    std::vector<float> gamma_sq;             // every step
    EnergyAggregates energy_agg;
    WorkloadLedger workload;
    double h = 0.0;
    double monitor_start = 0.0;

    void put_meta(const std::string& key, const std::string& value) {
        metadata.emplace_back(key, value);
    }

    [[nodiscard]] const TraceRecord& terminal() const {
        if (records.empty()) throw NumericalError("trace has no records");
        return records.back();
    }
};

struct DissipationReport {
    double c0 = 0.0;
    double tolerance = 0.0;
    long checked = 0;
    long violations = 0;
    double max_violation = -std::numeric_limits<double>::infinity();
    double online_max_violation = -std::numeric_limits<double>::infinity();
    [[nodiscard]] double violation_rate() const {
        return checked ? static_cast<double>(violations) / static_cast<double>(checked) : 0.0;
    }
};

/// Re-check the stored energy ledger against dS/dt <= -c0 q + tol and fold in
/// the online per-step aggregate. Checks only entries after the last
/// disturbance (the ledger starts there).
inline DissipationReport monitor_dissipation(const SimTrace& trace, double tolerance) {
    DissipationReport rep;
    rep.c0 = trace.energy_agg.c0;
    rep.tolerance = tolerance;
    rep.online_max_violation = trace.energy_agg.max_dissipation_violation;
    for (size_t i = 1; i < trace.energy.size(); ++i) {
        const auto& a = trace.energy[i - 1];
        const auto& bb = trace.energy[i];
        double dt = bb.t - a.t;
        if (dt <= 0.0) continue;
        double s1 = bb.s_plant + bb.s_optimizer + bb.s_channel;
        double s0 = a.s_plant + a.s_optimizer + a.s_channel;
        double v = (s1 - s0) / dt + rep.c0 * a.q_rhs;
        rep.max_violation = std::max(rep.max_violation, v);
        ++rep.checked;
        if (v > tolerance) ++rep.violations;
    }
    return rep;
}

namespace detail {

struct LoopRefs {
    const ScenarioConfig& sc;
    const KKTPoint& post;   // monitor reference
    double h;
    bool rbc_mode;
};

}  // namespace detail

struct SimResult {
    SimTrace trace;
    KKTPoint pre;
    KKTPoint post;
    PlantState plant_end;
    OptimizerState z_end;
};

/// Shared fixed-step closed loop. `rbc_mode` selects the sampled block update;
/// otherwise the full projected Euler update runs every step.
inline SimResult run_loop(const ScenarioConfig& sc_in, bool rbc_mode,
                          std::optional<std::uint64_t> seed_override = {},
                          std::optional<double> horizon_override = {}) {
    ScenarioConfig sc = sc_in;
    if (horizon_override) sc.horizon = *horizon_override;
    if (rbc_mode && !sc.rbc) throw ValidationError("run_rbc: scenario has no [rbc] section");

    const auto& net = sc.net;
    const int n = net.n, m = net.m, ng = net.n_g, nt = net.n_t;
    const double h = rbc_mode ? sc.rbc_step_size() : sc.continuous_step();
    const double eta = sc.channel.eta;

    DispatchProblem pre_pb = sc.problem;
    KKTPoint pre = solve_dispatch_oracle(pre_pb);
    DispatchProblem post_pb = sc.problem;
    post_pb.d = sc.demand_final();
    KKTPoint post = solve_dispatch_oracle(post_pb);

    // working problem; d switches at disturbance times
    DispatchProblem pb = sc.problem;

    PlantState ps;
    OptimizerState z;
    if (sc.cold_start) {
        z.u = Vec::Zero(ng).cwiseMax(pb.u_lo).cwiseMin(pb.u_hi);
        z.phi = Vec::Zero(n);
        z.lambda = Vec::Zero(n);
        z.pi = Vec::Zero(nt);
        z.rho_plus = Vec::Zero(m);
        z.rho_minus = Vec::Zero(m);
        ps.theta = Vec::Zero(n);
        ps.omega = Vec::Zero(n);
    } else {
        z = OptimizerState::from_kkt(pre);
        ps.theta = pre.phi;
        ps.omega = Vec::Zero(n);
    }

    WaveChannelConfig chcfg = sc.channel;
    chcfg.step = h;
    chcfg.validate();
    const double sq2e = std::sqrt(2.0 * eta);
    Vec init_wave = z.u / sq2e;
    WaveChannel channel(chcfg, ng, init_wave);
    const bool zero_delay = channel.down_steps() == 0 || channel.up_steps() == 0;
    if (zero_delay && (channel.down_steps() != 0 || channel.up_steps() != 0))
        throw ValidationError("run: mixed zero/nonzero delays are not supported");

    RngState rng(seed_override ? *seed_override : (sc.rbc ? sc.rbc->seed : 1));
    RbcConfig rbc_cfg;
    if (rbc_mode) {
        rbc_cfg.epsilon = sc.rbc->epsilon;
        rbc_cfg.seed = seed_override ? *seed_override : sc.rbc->seed;
        rbc_cfg.partition = sc.rbc->make_partition(ng, n, nt, m);
        rbc_cfg.validate(ng + 2 * n + nt + 2 * m);
    }
    const int n_z = ng + 2 * n + nt + 2 * m;
    const int n_b = rbc_mode ? rbc_cfg.partition.n_blocks()
                             : default_partition(ng, n, nt, m).n_blocks();

    const long steps = std::lround(sc.horizon / h);
    const double t_monitor = sc.last_disturbance_time();
    const double c0 = std::min({sc.plant.damping.minCoeff(), pb.q.minCoeff(), sc.gains.kappa});

    SimTrace trace;
    trace.h = h;
    trace.monitor_start = t_monitor;
    trace.energy_agg.c0 = c0;
    trace.workload.n_z = n_z;
    trace.workload.n_b = n_b;
    trace.gamma_sq.reserve(static_cast<size_t>(steps));

    Vec w_eq = post.u / sq2e;  // equilibrium wave of the monitor reference

    double prev_S = 0.0, prev_q = 0.0;
    bool have_prev = false;
    long coords_cum = 0;

    const Vec d_base = sc.problem.d;
    Vec d = d_base;
    double next_event = std::numeric_limits<double>::infinity();
    for (const auto& ev : sc.disturbances) next_event = std::min(next_event, ev.t);

    for (long k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * h;
        if (t >= next_event) {
            d = apply_disturbance(d_base, sc.disturbances, t);
            next_event = std::numeric_limits<double>::infinity();
            for (const auto& ev : sc.disturbances)
                if (ev.t > t) next_event = std::min(next_event, ev.t);
            pb.d = d;
        }

        // channel outputs, then decoded port variables
        Vec sig_p_minus, sig_o_minus, p, y;
        if (zero_delay) {
            // transparent scattering loop: p = u, y = G' omega
            y = net.G.transpose() * ps.omega;
            p = z.u;
            sig_p_minus = (p + eta * y) / sq2e;
            sig_o_minus = (z.u - eta * y) / sq2e;
        } else {
            auto [down, up] = channel.receive();
            sig_p_minus = down;
            sig_o_minus = up;
            Vec gw = net.G.transpose() * ps.omega;
            p = decode_plant_input(sig_p_minus, gw, eta);
            y = decode_optimizer_measurement(z.u, sig_o_minus, eta);
        }

        // energy snapshot at time t (monitored after the last disturbance)
        double S_total = 0.0, q_rhs = 0.0, gamma = 0.0;
        {
            gamma = distance_to_solution(ps, z, post);
            trace.gamma_sq.push_back(static_cast<float>(gamma * gamma));
        }
        const bool monitoring = t >= t_monitor;
        double s_p = 0.0, s_o = 0.0, s_ch = 0.0;
        if (monitoring) {
            s_p = plant_storage(sc.plant, net, ps, post.phi);
            s_o = optimizer_storage(sc.gains, z, OptimizerState::from_kkt(post));
            s_ch = zero_delay ? 0.0 : channel.storage(w_eq);
            S_total = s_p + s_o + s_ch;
            Vec r = residual_r(pb, z.u, z.phi);
            q_rhs = ps.omega.squaredNorm() + (z.u - post.u).squaredNorm() + r.squaredNorm();
            if (have_prev) {
                double v = (S_total - prev_S) / h + c0 * prev_q;
                trace.energy_agg.max_dissipation_violation =
                    std::max(trace.energy_agg.max_dissipation_violation, v);
                ++trace.energy_agg.checked_steps;
            }
            if (k % sc.ledger_decimation == 0)
                trace.energy.push_back({t, s_p, s_o, s_ch, q_rhs, gamma * gamma});
            prev_S = S_total;
            prev_q = q_rhs;
            have_prev = true;
        }

        // record (decimated)
        if (k % sc.record_decimation == 0) {
            TraceRecord rec;
            rec.t = t;
            rec.omega = ps.omega;
            rec.theta_gen = net.G.transpose() * ps.theta;
            rec.u = z.u;
            rec.phi = z.phi;
            rec.lambda = z.lambda;
            rec.pi = z.pi;
            rec.rho_plus = z.rho_plus;
            rec.rho_minus = z.rho_minus;
            rec.p = p;
            rec.y = y;
            Vec fl = net.flows(z.phi);
            rec.flow_mw = net.base_mva * net.flows(ps.theta);
            rec.tie_mw = net.base_mva * (net.T * net.flows(ps.theta));
            (void)fl;
            rec.s_plant = monitoring ? s_p : plant_storage(sc.plant, net, ps, post.phi);
            rec.s_optimizer =
                monitoring ? s_o : optimizer_storage(sc.gains, z, OptimizerState::from_kkt(post));
            rec.s_channel = monitoring ? s_ch : (zero_delay ? 0.0 : channel.storage(w_eq));
            rec.gamma_sq = gamma * gamma;
            rec.coords_cum = coords_cum;
            trace.records.push_back(std::move(rec));
        }

        // advance plant and optimizer
        PlantState ps_next = step_plant(sc.plant, net, ps, p, d, h);
        double s_tau_before = (monitoring && !zero_delay) ? (s_ch) : 0.0;
        if (rbc_mode) {
            int beta = rbc_step(pb, sc.gains, z, y, rbc_cfg, rng);
            trace.workload.blocks += 1;
            long sz = static_cast<long>(rbc_cfg.partition.blocks[beta].size());
            trace.workload.coords += sz;
            coords_cum += sz;
        } else {
            z = step_optimizer_projected_euler(pb, sc.gains, z, y, h);
            trace.workload.blocks += n_b;
            trace.workload.coords += n_z;
            coords_cum += n_z;
        }
        trace.workload.steps += 1;

        // encode with post-update local states, push into the delay lines
        if (!zero_delay) {
            Vec gw_next = net.G.transpose() * ps_next.omega;
            Vec sig_p_plus = (p - eta * gw_next) / sq2e;
            Vec sig_o_plus = (z.u + eta * y) / sq2e;
            channel.transmit(sig_o_plus, sig_p_plus);

            if (monitoring) {
                // wave-based channel balance at this step (exact for the raw
                // delay lines; the filter part carries O(h) discretization)
                double supply_wave =
                    0.5 * ((sig_o_plus - w_eq).squaredNorm() - (sig_p_minus - w_eq).squaredNorm() +
                           (sig_p_plus - w_eq).squaredNorm() - (sig_o_minus - w_eq).squaredNorm());
                double s_ch_after = channel.storage(w_eq);
                double dS_ch = (s_ch_after - s_tau_before) / h;
                if (!chcfg.filter_enabled) {
                    double resid = std::abs(dS_ch - supply_wave);
                    trace.energy_agg.max_channel_residual =
                        std::max(trace.energy_agg.max_channel_residual, resid);
                } else {
                    double diss_u = 0.5 * (channel.last_a_down() - channel.output_down()).squaredNorm();
                    double diss_w = 0.5 * (channel.last_a_up() - channel.output_up()).squaredNorm();
                    trace.energy_agg.min_filter_dissipation =
                        std::min(trace.energy_agg.min_filter_dissipation, std::min(diss_u, diss_w));
                    double resid = std::abs(dS_ch - (supply_wave - diss_u - diss_w));
                    trace.energy_agg.max_filtered_residual =
                        std::max(trace.energy_agg.max_filtered_residual, resid);
                }
                // port-variable form of the supply, O(h) from the wave form
                Vec gw_now = net.G.transpose() * ps.omega;
                double supply_port = -(gw_now.dot(p - post.u)) + (z.u - post.u).dot(y);
                trace.energy_agg.max_port_residual = std::max(
                    trace.energy_agg.max_port_residual, std::abs(dS_ch - supply_port));
            }
        }

        ps = ps_next;

        if (ps.omega.cwiseAbs().maxCoeff() > sc.divergence_guard ||
            z.flatten().cwiseAbs().maxCoeff() > sc.divergence_guard)
            throw NumericalError("simulation diverged at t = " + std::to_string(t) +
                                 " (state norm exceeded guard)");
    }

    trace.put_meta("scenario", sc.name);
    trace.put_meta("scheme", rbc_mode ? "rbc" : "continuous");
    trace.put_meta("h", std::to_string(h));
    trace.put_meta("horizon", std::to_string(sc.horizon));
    trace.put_meta("steps", std::to_string(trace.workload.steps));
    trace.put_meta("base_mva", std::to_string(net.base_mva));
    trace.put_meta("eta", std::to_string(eta));
    trace.put_meta("delay_down_steps", std::to_string(channel.down_steps()));
    trace.put_meta("delay_up_steps", std::to_string(channel.up_steps()));
    trace.put_meta("delay_down_ms_effective", std::to_string(channel.down_steps() * h * 1e3));
    trace.put_meta("delay_up_ms_effective", std::to_string(channel.up_steps() * h * 1e3));
    trace.put_meta("filter", chcfg.filter_enabled ? "on" : "off");
    trace.put_meta("rng", kRngAlgorithm);
    if (rbc_mode) {
        trace.put_meta("seed", std::to_string(rbc_cfg.seed));
        trace.put_meta("epsilon", std::to_string(rbc_cfg.epsilon));
        trace.put_meta("partition", sc.rbc->partition_kind);
    }
    trace.put_meta("n_z", std::to_string(n_z));
    trace.put_meta("n_b", std::to_string(n_b));
    trace.put_meta("blocks_total", std::to_string(trace.workload.blocks));
    trace.put_meta("coords_total", std::to_string(trace.workload.coords));
    trace.put_meta("c0", std::to_string(c0));
    trace.put_meta("monitor_start", std::to_string(t_monitor));

    SimResult out{std::move(trace), std::move(pre), std::move(post), ps, z};
    return out;
}

inline SimResult run_continuous(const ScenarioConfig& sc) { return run_loop(sc, false); }

inline SimResult run_rbc(const ScenarioConfig& sc, std::optional<std::uint64_t> seed = {}) {
    return run_loop(sc, true, seed);
}

struct MsDecayFit {
    double slope_per_step = 0.0;
    double slope_per_second = 0.0;
    double r_squared = 0.0;
    int seeds = 0;
    long fit_points = 0;
    bool degenerate = false;  // gamma stayed at the floor (no disturbance)
};

/// Fit log E[gamma_k^2] over the post-transient window of multi-seed RBC runs.
inline MsDecayFit estimate_ms_decay(const ScenarioConfig& sc,
                                    const std::vector<std::uint64_t>& seeds,
                                    double fit_start_s = -1.0, double fit_end_s = -1.0) {
    if (seeds.size() < 5) throw ValidationError("estimate_ms_decay: need at least 5 seeds");
    std::vector<double> mean_g2;
    double h = sc.rbc_step_size();
    for (auto seed : seeds) {
        SimResult res = run_rbc(sc, seed);
        const auto& g = res.trace.gamma_sq;
        if (mean_g2.empty()) mean_g2.assign(g.size(), 0.0);
        if (g.size() != mean_g2.size()) throw NumericalError("estimate_ms_decay: length mismatch");
        for (size_t i = 0; i < g.size(); ++i) mean_g2[i] += static_cast<double>(g[i]) / seeds.size();
    }
    double t0 = fit_start_s >= 0 ? fit_start_s : sc.last_disturbance_time() + 5.0;
    double t1 = fit_end_s >= 0 ? fit_end_s : sc.horizon;
    long k0 = std::lround(t0 / h), k1 = std::min<long>(std::lround(t1 / h),
                                                       static_cast<long>(mean_g2.size()));
    MsDecayFit fit;
    fit.seeds = static_cast<int>(seeds.size());
    double floor = 1e-22;
    std::vector<std::pair<double, double>> pts;
    for (long k = k0; k < k1; ++k)
        if (mean_g2[k] > floor) pts.emplace_back(static_cast<double>(k), std::log(mean_g2[k]));
    fit.fit_points = static_cast<long>(pts.size());
    if (pts.size() < 100) {
        fit.degenerate = true;
        return fit;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, yv] : pts) {
        sx += x; sy += yv; sxx += x * x; sxy += x * yv;
    }
    double nn = static_cast<double>(pts.size());
    double denom = nn * sxx - sx * sx;
    fit.slope_per_step = (nn * sxy - sx * sy) / denom;
    fit.slope_per_second = fit.slope_per_step / h;
    double ybar = sy / nn, ss_tot = 0, ss_res = 0;
    double intercept = ybar - fit.slope_per_step * sx / nn;
    for (auto [x, yv] : pts) {
        double pred = intercept + fit.slope_per_step * x;
        ss_res += (yv - pred) * (yv - pred);
        ss_tot += (yv - ybar) * (yv - ybar);
    }
    fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
    return fit;
}

}  // namespace freqnet
