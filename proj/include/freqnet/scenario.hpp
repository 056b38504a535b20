#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "freqnet/controller.hpp"
#include "freqnet/dispatch.hpp"
#include "freqnet/network.hpp"
#include "freqnet/plant.hpp"
#include "freqnet/rbc.hpp"
#include "freqnet/wave_channel.hpp"

namespace freqnet {

struct RbcSettings {
    double epsilon = 6e-4;
    std::uint64_t seed = 1;
    std::string partition_kind = "default";  // default | singleton
    std::optional<Vec> probs;                // empty -> uniform

    [[nodiscard]] BlockPartition make_partition(int n_g, int n, int n_t, int m) const {
        BlockPartition part = partition_kind == "singleton"
                                  ? single_block_partition(n_g + 2 * n + n_t + 2 * m)
                                  : default_partition(n_g, n, n_t, m);
        if (probs) {
            if (probs->size() != part.n_blocks())
                throw ValidationError("rbc: probs length does not match block count");
            part.probs = *probs;
        }
        return part;
    }
};

struct DisturbanceEvent {
    double t = 0.0;
    int bus_index = 0;  // 0-based
    double delta = 0.0;  // pu
};

struct ScenarioConfig {
    std::string name = "scenario";
    NetworkSpec spec;
    NetworkMatrices net;
    DispatchProblem problem;  // base (pre-disturbance) demand
    PlantParams plant;
    ControllerGains gains;
    WaveChannelConfig channel;  // step filled by the runner
    std::optional<RbcSettings> rbc;
    std::vector<DisturbanceEvent> disturbances;
    double horizon = 10.0;
    std::optional<double> step;    // continuous-run step; default epsilon/5
    int record_decimation = 250;
    int ledger_decimation = 1;
    bool cold_start = false;
    double divergence_guard = 1e6;

    [[nodiscard]] double continuous_step() const {
        if (step) return *step;
        if (rbc) return rbc->epsilon / 5.0;
        throw ValidationError("scenario: [sim] step required when no [rbc] section is present");
    }

    [[nodiscard]] double rbc_step_size() const {
        if (!rbc) throw ValidationError("scenario: no [rbc] section");
        return rbc->epsilon;
    }

    /// Demand vector at time t (piecewise constant).
    [[nodiscard]] Vec demand_at(double t) const {
        Vec d = problem.d;
        for (const auto& ev : disturbances)
            if (t >= ev.t) d(ev.bus_index) += ev.delta;
        return d;
    }

    /// Demand after every scheduled event has fired.
    [[nodiscard]] Vec demand_final() const {
        Vec d = problem.d;
        for (const auto& ev : disturbances) d(ev.bus_index) += ev.delta;
        return d;
    }

    [[nodiscard]] double last_disturbance_time() const {
        double t = 0.0;
        for (const auto& ev : disturbances) t = std::max(t, ev.t);
        return t;
    }
};

/// Step-size-aware gain selection for the sampled loop. The inverse-probability
/// block scaling multiplies the drawn block's step by n_b, so coordinate pairs
/// coupled through large matrix entries need proportionally slower gains:
///  - tau_phi/tau_lambda grow with the row norm sqrt((L^2)_ii) at each bus,
///  - tau_rho grows with the squared line susceptance,
/// floors keep the well-conditioned coordinates fast.
inline ControllerGains stabilized_gains(const NetworkMatrices& net, double epsilon, int n_blocks,
                                        double kappa = 0.04) {
    const double c = n_blocks * epsilon;
    ControllerGains g;
    g.kappa = kappa;
    g.tau_u = Vec::Constant(net.n_g, 1.0);
    Vec l2 = (net.L * net.L).diagonal().cwiseSqrt();
    g.tau_phi = (4.0 * c * l2).cwiseMax(1.0);
    g.tau_lambda = (4.0 * c * l2).cwiseMax(0.5);
    g.tau_pi = Vec::Constant(net.n_t, 0.3);
    g.tau_plus = (12.0 * (c * net.b.array()).square()).cwiseMax(0.1).matrix();
    g.tau_minus = g.tau_plus;
    return g;
}

namespace detail {

using SectionMap = std::map<std::string, std::vector<std::string>>;

/// Split `key = value` lines into per-section multimaps.
inline std::map<std::string, SectionMap> parse_sections(std::istream& in,
                                                        const std::string& what) {
    std::map<std::string, SectionMap> out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError(what + " line " + std::to_string(lineno) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            out[section];
            continue;
        }
        if (section.empty())
            throw ParseError(what + " line " + std::to_string(lineno) + ": data before a section");
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(what + " line " + std::to_string(lineno) + ": expected `key = value`");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ParseError(what + " line " + std::to_string(lineno) + ": empty key or value");
        out[section][key].push_back(val);
    }
    return out;
}

inline std::vector<double> parse_numbers(const std::string& s, const std::string& where) {
    std::istringstream ls(s);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw ParseError(where + ": expected numbers, got `" + s + "`");
    if (v.empty()) throw ParseError(where + ": empty value");
    return v;
}

/// Scalar broadcast or full list.
inline Vec parse_diag(const std::string& s, int len, const std::string& where) {
    auto v = parse_numbers(s, where);
    if (v.size() == 1) return Vec::Constant(len, v[0]);
    if (static_cast<int>(v.size()) != len)
        throw ParseError(where + ": expected 1 or " + std::to_string(len) + " values");
    return Eigen::Map<const Vec>(v.data(), len);
}

struct SectionReader {
    const SectionMap& sec;
    std::string name;
    mutable std::set<std::string> used;

    [[nodiscard]] bool has(const std::string& key) const { return sec.count(key) > 0; }

    [[nodiscard]] std::string one(const std::string& key) const {
        auto it = sec.find(key);
        if (it == sec.end()) throw ParseError("[" + name + "]: missing key `" + key + "`");
        if (it->second.size() != 1)
            throw ParseError("[" + name + "]: key `" + key + "` given more than once");
        used.insert(key);
        return it->second.front();
    }

    [[nodiscard]] std::string one_or(const std::string& key, const std::string& dflt) const {
        if (!has(key)) return dflt;
        return one(key);
    }

    [[nodiscard]] std::vector<std::string> all(const std::string& key) const {
        used.insert(key);
        auto it = sec.find(key);
        return it == sec.end() ? std::vector<std::string>{} : it->second;
    }

    void reject_unknown() const {
        for (const auto& [key, vals] : sec)
            if (!used.count(key))
                throw ParseError("[" + name + "]: unknown key `" + key + "`");
    }
};

}  // namespace detail

/// The embedded 14-bus case: standard branch reactances converted to
/// susceptance b = 1/x on the 100 MVA base; four units at buses 2, 3, 6, 8;
/// area 1 = buses 1..5.
inline const char* builtin_ieee14_case() {
    return R"(# ieee 14-bus case, susceptances b = 1/x from the standard branch data
[base]
mva = 100
[bus]
1
2
3
4
5
6
7
8
9
10
11
12
13
14
[branch]
1 2 16.900456312320433
1 5 4.483500717360115
2 3 5.051270394504217
2 4 5.671506352087114
2 5 5.751092707614447
3 4 5.846927439630474
4 5 23.747328425552123
4 7 4.781943381790359
4 9 1.7979790715236075
5 6 3.967939052456154
6 11 5.027652086475616
6 12 3.9091513232477233
6 13 7.676364473785216
7 8 5.676979846721544
7 9 9.09008271975275
9 10 11.834319526627219
9 14 3.698498409645684
10 11 5.206435153850159
12 13 5.003001801080648
13 14 2.873398080570082
[gen]
2
3
6
8
[area]
1 1
2 1
3 1
4 1
5 1
6 2
7 2
8 2
9 2
10 2
11 2
12 2
13 2
14 2
[tie]
1 2
)";
}

/// Built-in verification scenario: 6 MW load step at t = 5 s split 60/40 over
/// buses 4 and 5, tie schedule held at its pre-event value, line 2-4 tightened
/// to 55.65 MW, all other limits at |base flow| + 80 MW.
inline const char* builtin_ieee14_scenario() {
    return R"(# ieee14 secondary-frequency scenario
[network]
case = ieee14
[dispatch]
Q = 3 5 6 7
u_ref = 40 0 0 0
u_lo = 0 0 0 0
u_hi = 100 100 100 100
demand = -219 21.7 94.2 47.8 7.6 11.2 0 0 29.5 9 3.5 6.1 13.5 14.9
P_sch = auto
f_hi_margin = 80
f_hi_line = 2 4 55.65
[plant]
inertia = 2.0
damping = 2.0
[controller]
kappa = 0.04
tau_u = 1
tau_phi = auto
tau_lambda = auto
tau_pi = 0.3
tau_rho = auto
init = oracle
[channel]
eta = 1.0
delay_down_ms = 11
delay_up_ms = 11
filter = off
zeta_u_ms = 10
zeta_omega_ms = 20
[rbc]
epsilon = 0.0006
seed = 1
partition = default
probs = uniform
[disturbance]
event = 5.0 4 3.6
event = 5.0 5 2.4
[sim]
horizon = 300
step = 0.0006
record_decimation = 250
ledger_decimation = 1
)";
}

/// Filtered variant of the built-in scenario channel (40 ms each way, wave
/// filters with 10/20 ms time constants).
inline void apply_builtin_filtered_channel(ScenarioConfig& sc) {
    sc.channel.delay_down_s = 0.040;
    sc.channel.delay_up_s = 0.040;
    sc.channel.filter_enabled = true;
    sc.channel.zeta_u = 0.010;
    sc.channel.zeta_omega = 0.020;
}

inline NetworkSpec resolve_case(const std::string& ref, const std::string& base_dir) {
    if (ref == "ieee14") {
        std::istringstream in(builtin_ieee14_case());
        return parse_case(in);
    }
    std::filesystem::path p(ref);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    return load_case(p.string());
}

/// Parse a scenario file. MW quantities are converted to per-unit on the case
/// base; cost curvature Q is interpreted per (pu)^2.
inline ScenarioConfig parse_scenario(std::istream& in, const std::string& base_dir = "",
                                     const std::string& name = "scenario") {
    using detail::SectionReader;
    auto sections = detail::parse_sections(in, name);
    for (const auto& [secname, _] : sections) {
        if (secname != "network" && secname != "dispatch" && secname != "plant" &&
            secname != "controller" && secname != "channel" && secname != "rbc" &&
            secname != "disturbance" && secname != "sim")
            throw ParseError(name + ": unknown section [" + secname + "]");
    }
    auto need = [&](const std::string& s) -> const detail::SectionMap& {
        auto it = sections.find(s);
        if (it == sections.end()) throw ParseError(name + ": missing section [" + s + "]");
        return it->second;
    };

    ScenarioConfig sc;
    sc.name = name;

    SectionReader rnet{need("network"), "network"};
    sc.spec = resolve_case(rnet.one("case"), base_dir);
    rnet.reject_unknown();
    sc.net = build_matrices(sc.spec);
    const int n = sc.net.n, m = sc.net.m, ng = sc.net.n_g, nt = sc.net.n_t;
    const double base = sc.net.base_mva;

    SectionReader rd{need("dispatch"), "dispatch"};
    DispatchProblem& pb = sc.problem;
    pb.net = sc.net;
    pb.q = detail::parse_diag(rd.one("Q"), ng, "[dispatch] Q");
    pb.u_ref = detail::parse_diag(rd.one("u_ref"), ng, "[dispatch] u_ref") / base;
    pb.u_lo = detail::parse_diag(rd.one("u_lo"), ng, "[dispatch] u_lo") / base;
    pb.u_hi = detail::parse_diag(rd.one("u_hi"), ng, "[dispatch] u_hi") / base;
    pb.d = detail::parse_diag(rd.one("demand"), n, "[dispatch] demand") / base;

    // pre-event equilibrium angles, used by `auto` keys below
    Vec phi_pre;
    {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(sc.net.L);
        phi_pre = cod.solve(sc.net.G * pb.u_ref - pb.d);
        phi_pre.array() -= phi_pre.mean();
    }
    Vec base_flows = sc.net.flows(phi_pre);

    std::string psch = rd.one("P_sch");
    if (psch == "auto")
        pb.p_sch = sc.net.T * base_flows;
    else
        pb.p_sch = detail::parse_diag(psch, nt, "[dispatch] P_sch") / base;

    if (rd.has("f_hi") || rd.has("f_lo")) {
        pb.f_hi = detail::parse_diag(rd.one("f_hi"), m, "[dispatch] f_hi") / base;
        pb.f_lo = detail::parse_diag(rd.one("f_lo"), m, "[dispatch] f_lo") / base;
        if (rd.has("f_hi_margin") || rd.has("f_hi_line"))
            throw ParseError("[dispatch]: give either explicit f_hi/f_lo or margin form, not both");
    } else {
        double margin = detail::parse_numbers(rd.one("f_hi_margin"), "[dispatch] f_hi_margin")[0] / base;
        pb.f_hi = base_flows.cwiseAbs() + Vec::Constant(m, margin);
        for (const auto& ovr : rd.all("f_hi_line")) {
            auto v = detail::parse_numbers(ovr, "[dispatch] f_hi_line");
            if (v.size() != 3) throw ParseError("[dispatch] f_hi_line: expected `from to limit_mw`");
            int l = sc.spec.branch_index(static_cast<int>(v[0]), static_cast<int>(v[1]));
            if (l < 0) throw ParseError("[dispatch] f_hi_line: no such branch");
            pb.f_hi(l) = v[2] / base;
        }
        pb.f_lo = -pb.f_hi;
    }
    rd.reject_unknown();
    pb.validate();

    SectionReader rp{need("plant"), "plant"};
    sc.plant.inertia = detail::parse_diag(rp.one("inertia"), n, "[plant] inertia");
    sc.plant.damping = detail::parse_diag(rp.one("damping"), n, "[plant] damping");
    rp.reject_unknown();
    sc.plant.validate(n);

    SectionReader rr{sections.count("rbc") ? sections.at("rbc") : detail::SectionMap{}, "rbc"};
    if (sections.count("rbc")) {
        RbcSettings rs;
        rs.epsilon = detail::parse_numbers(rr.one("epsilon"), "[rbc] epsilon")[0];
        rs.seed = static_cast<std::uint64_t>(
            detail::parse_numbers(rr.one_or("seed", "1"), "[rbc] seed")[0]);
        rs.partition_kind = rr.one_or("partition", "default");
        if (rs.partition_kind != "default" && rs.partition_kind != "singleton")
            throw ParseError("[rbc] partition: expected default or singleton");
        std::string probs = rr.one_or("probs", "uniform");
        if (probs != "uniform") {
            auto v = detail::parse_numbers(probs, "[rbc] probs");
            rs.probs = Eigen::Map<const Vec>(v.data(), static_cast<int>(v.size()));
        }
        rr.reject_unknown();
        sc.rbc = rs;
    }

    SectionReader rc{need("controller"), "controller"};
    {
        int nb_default = default_partition(ng, n, nt, m).n_blocks();
        double eps_for_auto = sc.rbc ? sc.rbc->epsilon : 0.0;
        ControllerGains auto_gains;
        bool have_auto = false;
        auto ensure_auto = [&]() {
            if (have_auto) return;
            if (!sc.rbc)
                throw ParseError("[controller]: tau = auto requires an [rbc] section (epsilon)");
            auto_gains = stabilized_gains(sc.net, eps_for_auto, nb_default);
            have_auto = true;
        };
        ControllerGains g;
        g.kappa = detail::parse_numbers(rc.one("kappa"), "[controller] kappa")[0];
        auto tau = [&](const std::string& key, int len, Vec ControllerGains::*member) {
            std::string v = rc.one(key);
            if (v == "auto") {
                ensure_auto();
                g.*member = auto_gains.*member;
            } else {
                g.*member = detail::parse_diag(v, len, "[controller] " + key);
            }
        };
        tau("tau_u", ng, &ControllerGains::tau_u);
        tau("tau_phi", n, &ControllerGains::tau_phi);
        tau("tau_lambda", n, &ControllerGains::tau_lambda);
        tau("tau_pi", nt, &ControllerGains::tau_pi);
        std::string trho = rc.one("tau_rho");
        if (trho == "auto") {
            ensure_auto();
            g.tau_plus = auto_gains.tau_plus;
            g.tau_minus = auto_gains.tau_minus;
        } else {
            g.tau_plus = detail::parse_diag(trho, m, "[controller] tau_rho");
            g.tau_minus = g.tau_plus;
        }
        std::string init = rc.one_or("init", "oracle");
        if (init == "cold")
            sc.cold_start = true;
        else if (init != "oracle")
            throw ParseError("[controller] init: expected oracle or cold");
        rc.reject_unknown();
        g.validate(ng, n, nt, m);
        sc.gains = g;
    }

    SectionReader rch{need("channel"), "channel"};
    sc.channel.eta = detail::parse_numbers(rch.one("eta"), "[channel] eta")[0];
    sc.channel.delay_down_s = detail::parse_numbers(rch.one("delay_down_ms"), "[channel]")[0] / 1e3;
    sc.channel.delay_up_s = detail::parse_numbers(rch.one("delay_up_ms"), "[channel]")[0] / 1e3;
    std::string filt = rch.one_or("filter", "off");
    if (filt != "on" && filt != "off") throw ParseError("[channel] filter: expected on or off");
    sc.channel.filter_enabled = (filt == "on");
    sc.channel.zeta_u = detail::parse_numbers(rch.one_or("zeta_u_ms", "0"), "[channel]")[0] / 1e3;
    sc.channel.zeta_omega =
        detail::parse_numbers(rch.one_or("zeta_omega_ms", "0"), "[channel]")[0] / 1e3;
    rch.reject_unknown();

    SectionReader rdist{sections.count("disturbance") ? sections.at("disturbance")
                                                      : detail::SectionMap{},
                        "disturbance"};
    if (sections.count("disturbance")) {
        for (const auto& ev : rdist.all("event")) {
            auto v = detail::parse_numbers(ev, "[disturbance] event");
            if (v.size() != 3) throw ParseError("[disturbance] event: expected `t bus delta_mw`");
            DisturbanceEvent e;
            e.t = v[0];
            e.bus_index = sc.spec.bus_index(static_cast<int>(v[1]));
            e.delta = v[2] / base;
            sc.disturbances.push_back(e);
        }
        rdist.reject_unknown();
    }

    SectionReader rs{need("sim"), "sim"};
    sc.horizon = detail::parse_numbers(rs.one("horizon"), "[sim] horizon")[0];
    if (rs.has("step")) sc.step = detail::parse_numbers(rs.one("step"), "[sim] step")[0];
    sc.record_decimation =
        static_cast<int>(detail::parse_numbers(rs.one_or("record_decimation", "250"), "[sim]")[0]);
    sc.ledger_decimation =
        static_cast<int>(detail::parse_numbers(rs.one_or("ledger_decimation", "1"), "[sim]")[0]);
    rs.reject_unknown();
    if (!(sc.horizon > 0.0)) throw ValidationError("[sim] horizon must be positive");
    if (sc.record_decimation < 1 || sc.ledger_decimation < 1)
        throw ValidationError("[sim] decimation values must be >= 1");

    return sc;
}

inline ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file: " + path);
    std::filesystem::path p(path);
    return parse_scenario(in, p.parent_path().string(), p.filename().string());
}

/// The embedded verification scenario, optionally with the filtered channel.
inline ScenarioConfig builtin_ieee14(bool filtered = false) {
    std::istringstream in(builtin_ieee14_scenario());
    ScenarioConfig sc = parse_scenario(in, "", "ieee14");
    if (filtered) apply_builtin_filtered_channel(sc);
    return sc;
}

}  // namespace freqnet
