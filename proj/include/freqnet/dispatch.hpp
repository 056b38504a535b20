#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "freqnet/network.hpp"

namespace freqnet {

/// Quadratic redispatch problem over (u, phi): minimize
/// 1/2 (u - u_ref)' Q (u - u_ref) subject to nodal balance, tie schedule,
/// line-flow limits and generator box bounds. All quantities per-unit.
struct DispatchProblem {
    NetworkMatrices net;
    Vec q;        // diagonal of Q, all > 0
    Vec u_ref;
    Vec u_lo, u_hi;
    Vec d;        // net demand
    Vec p_sch;    // scheduled tie exchange, one per tie pair
    Vec f_lo, f_hi;

    void validate() const {
        if (q.size() != net.n_g || u_ref.size() != net.n_g || u_lo.size() != net.n_g ||
            u_hi.size() != net.n_g)
            throw DimensionError("dispatch: generator vectors must have length n_g");
        if (d.size() != net.n) throw DimensionError("dispatch: demand must have length n");
        if (p_sch.size() != net.n_t) throw DimensionError("dispatch: P_sch must have length n_t");
        if (f_lo.size() != net.m || f_hi.size() != net.m)
            throw DimensionError("dispatch: flow bounds must have length m");
        for (int i = 0; i < net.n_g; ++i) {
            if (!(q(i) > 0.0)) throw ValidationError("dispatch: Q must be positive diagonal");
            if (u_lo(i) > u_hi(i)) throw ValidationError("dispatch: u_lo > u_hi");
        }
        for (int l = 0; l < net.m; ++l)
            if (f_lo(l) > f_hi(l)) throw ValidationError("dispatch: f_lo > f_hi");
    }

    [[nodiscard]] double m_strong_convexity() const { return q.minCoeff(); }
};

/// Candidate primal-dual point for the dispatch problem.
struct KKTPoint {
    Vec u;
    Vec phi;        // mean-free
    Vec lambda;
    Vec pi;
    Vec rho_plus;   // >= 0
    Vec rho_minus;  // >= 0
};

struct ResidualReport {
    double r_norm = 0.0;
    double g_norm = 0.0;
    double h_violation = 0.0;
    double stationarity_u = 0.0;
    double stationarity_phi = 0.0;
    double complementarity = 0.0;

    [[nodiscard]] double max() const {
        return std::max({r_norm, g_norm, h_violation, stationarity_u, stationarity_phi,
                         complementarity});
    }
};

/// Nodal balance residual G u - d - L phi.
inline Vec residual_r(const DispatchProblem& pb, const Vec& u, const Vec& phi) {
    if (u.size() != pb.net.n_g || phi.size() != pb.net.n)
        throw DimensionError("residual_r: size mismatch");
    return pb.net.G * u - pb.d - pb.net.L * phi;
}

/// Tie-schedule residual T B C^T phi - P_sch.
inline Vec residual_g(const DispatchProblem& pb, const Vec& phi) {
    if (phi.size() != pb.net.n) throw DimensionError("residual_g: size mismatch");
    return pb.net.T * pb.net.flows(phi) - pb.p_sch;
}

/// Line-limit residuals (h+, h-) = (B C^T phi - f_hi, f_lo - B C^T phi).
inline std::pair<Vec, Vec> residual_h(const DispatchProblem& pb, const Vec& phi) {
    Vec fl = pb.net.flows(phi);
    return {fl - pb.f_hi, pb.f_lo - fl};
}

/// Gradient of the quadratic cost, Q (u - u_ref).
inline Vec grad_J(const DispatchProblem& pb, const Vec& u) {
    if (u.size() != pb.net.n_g) throw DimensionError("grad_J: size mismatch");
    return pb.q.asDiagonal() * (u - pb.u_ref);
}

/// Componentwise distance from -(grad J + G' lambda) to the normal cone of the
/// box at u. active_tol decides when a component counts as sitting on a bound.
inline double stationarity_u_residual(const DispatchProblem& pb, const Vec& u, const Vec& lambda,
                                      double active_tol = 1e-7) {
    Vec v = -(grad_J(pb, u) + pb.net.G.transpose() * lambda);
    double sq = 0.0;
    for (int i = 0; i < pb.net.n_g; ++i) {
        bool at_lo = u(i) <= pb.u_lo(i) + active_tol;
        bool at_hi = u(i) >= pb.u_hi(i) - active_tol;
        double dist;
        if (at_lo && at_hi) dist = 0.0;                      // degenerate pinned box
        else if (at_lo) dist = std::max(v(i), 0.0);          // cone is (-inf, 0]
        else if (at_hi) dist = std::max(-v(i), 0.0);         // cone is [0, +inf)
        else dist = std::abs(v(i));                          // cone is {0}
        sq += dist * dist;
    }
    return std::sqrt(sq);
}

/// Full KKT residual report for a candidate point.
inline ResidualReport kkt_residual(const DispatchProblem& pb, const KKTPoint& pt,
                                   double active_tol = 1e-7) {
    ResidualReport rep;
    rep.r_norm = residual_r(pb, pt.u, pt.phi).norm();
    rep.g_norm = residual_g(pb, pt.phi).norm();
    auto [hp, hm] = residual_h(pb, pt.phi);
    rep.h_violation = hp.cwiseMax(0.0).norm() + hm.cwiseMax(0.0).norm();
    rep.stationarity_u = stationarity_u_residual(pb, pt.u, pt.lambda, active_tol);
    rep.stationarity_phi = (-pb.net.L * pt.lambda +
                            pb.net.C * pb.net.b.asDiagonal() *
                                (pb.net.T.transpose() * pt.pi + pt.rho_plus - pt.rho_minus))
                               .norm();
    rep.complementarity = std::abs(pt.rho_plus.dot(hp)) + std::abs(pt.rho_minus.dot(hm));
    return rep;
}

struct OracleOptions {
    bool reverse_order = false;   // flips scan order and tie-breaking
    int max_iterations = 400;
    double feas_tol = 1e-9;
    double dual_tol = 1e-9;
};

namespace detail {

enum class CKind { BoxLo, BoxHi, FlowHi, FlowLo };

struct CRef {
    CKind kind;
    int index;
    bool operator<(const CRef& o) const {
        if (kind != o.kind) return kind < o.kind;
        return index < o.index;
    }
    bool operator==(const CRef& o) const { return kind == o.kind && index == o.index; }
};

struct EqpResult {
    Vec u, phi;
    Vec lambda;          // balance multipliers
    double nu = 0.0;     // multiplier of the 1'phi = 0 row
    Vec pi;
    std::vector<double> act_mult;  // one per active constraint, row order
    bool solvable = false;
    double residual = 0.0;
};

/// Solve the equality-constrained QP with the given active set via the dense
/// saddle system. Inconsistent systems are reported via `solvable = false`.
inline EqpResult solve_eqp(const DispatchProblem& pb, const std::vector<CRef>& active) {
    const auto& net = pb.net;
    const int ng = net.n_g, n = net.n, nt = net.n_t;
    const int nx = ng + n;
    const int neq = n + 1 + nt + static_cast<int>(active.size());
    Mat K = Mat::Zero(nx + neq, nx + neq);
    Vec rhs = Vec::Zero(nx + neq);

    for (int i = 0; i < ng; ++i) K(i, i) = pb.q(i);
    rhs.head(ng) = pb.q.asDiagonal() * pb.u_ref;

    Mat A = Mat::Zero(neq, nx);
    Vec beq = Vec::Zero(neq);
    A.block(0, 0, n, ng) = net.G;
    A.block(0, ng, n, n) = -net.L;
    beq.head(n) = pb.d;
    A.block(n, ng, 1, n).setOnes();
    beq(n) = 0.0;
    if (nt > 0) {
        A.block(n + 1, ng, nt, n) = net.T * net.b.asDiagonal() * net.C.transpose();
        beq.segment(n + 1, nt) = pb.p_sch;
    }
    Mat BCt = net.b.asDiagonal() * net.C.transpose();  // m x n
    for (size_t a = 0; a < active.size(); ++a) {
        int row = n + 1 + nt + static_cast<int>(a);
        const CRef& c = active[a];
        switch (c.kind) {
            case CKind::BoxLo:
                A(row, c.index) = 1.0;
                beq(row) = pb.u_lo(c.index);
                break;
            case CKind::BoxHi:
                A(row, c.index) = 1.0;
                beq(row) = pb.u_hi(c.index);
                break;
            case CKind::FlowHi:
                A.block(row, ng, 1, n) = BCt.row(c.index);
                beq(row) = pb.f_hi(c.index);
                break;
            case CKind::FlowLo:
                A.block(row, ng, 1, n) = BCt.row(c.index);
                beq(row) = pb.f_lo(c.index);
                break;
        }
    }
    K.block(0, nx, nx, neq) = A.transpose();
    K.block(nx, 0, neq, nx) = A;
    rhs.segment(nx, neq) = beq;

    Eigen::FullPivLU<Mat> lu(K);
    EqpResult out;
    Vec sol = lu.solve(rhs);
    out.residual = (K * sol - rhs).norm() / std::max(1.0, rhs.norm());
    if (!sol.allFinite() || out.residual > 1e-8) {
        out.solvable = false;
        return out;
    }
    out.solvable = true;
    out.u = sol.head(ng);
    out.phi = sol.segment(ng, n);
    out.lambda = sol.segment(nx, n);
    out.nu = sol(nx + n);
    out.pi = nt > 0 ? Vec(sol.segment(nx + n + 1, nt)) : Vec(Vec::Zero(0));
    out.act_mult.resize(active.size());
    for (size_t a = 0; a < active.size(); ++a) out.act_mult[a] = sol(nx + n + 1 + nt + a);
    return out;
}

}  // namespace detail

/// Active-set oracle for the dispatch problem. Seeds from the unconstrained
/// solution and alternates add-most-violated / drop-wrong-signed until the
/// KKT conditions hold. Throws InfeasibleError when no candidate passes.
inline KKTPoint solve_dispatch_oracle(const DispatchProblem& pb, const OracleOptions& opt = {}) {
    pb.validate();
    using detail::CKind;
    using detail::CRef;
    const auto& net = pb.net;
    const int ng = net.n_g, m = net.m;

    std::vector<CRef> active;
    std::set<std::vector<int>> visited;
    auto set_key = [&](const std::vector<CRef>& s) {
        std::vector<int> key;
        key.reserve(s.size());
        for (const auto& c : s) key.push_back(static_cast<int>(c.kind) * 10000 + c.index);
        std::sort(key.begin(), key.end());
        return key;
    };
    double best_infeas = std::numeric_limits<double>::infinity();
    bool blands_rule = false;

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        auto eqp = detail::solve_eqp(pb, active);
        if (!eqp.solvable) {
            throw InfeasibleError(
                "dispatch oracle: equality system inconsistent (infeasible problem?); "
                "best constraint violation seen " +
                std::to_string(best_infeas));
        }
        // scan inactive inequalities for violations
        Vec fl = net.flows(eqp.phi);
        struct Viol {
            CRef c;
            double amount;
        };
        std::vector<Viol> viols;
        auto is_active = [&](CRef c) {
            return std::find(active.begin(), active.end(), c) != active.end();
        };
        for (int i = 0; i < ng; ++i) {
            if (!is_active({CKind::BoxLo, i}) && eqp.u(i) < pb.u_lo(i) - opt.feas_tol)
                viols.push_back({{CKind::BoxLo, i}, pb.u_lo(i) - eqp.u(i)});
            if (!is_active({CKind::BoxHi, i}) && eqp.u(i) > pb.u_hi(i) + opt.feas_tol)
                viols.push_back({{CKind::BoxHi, i}, eqp.u(i) - pb.u_hi(i)});
        }
        for (int l = 0; l < m; ++l) {
            if (!is_active({CKind::FlowHi, l}) && fl(l) > pb.f_hi(l) + opt.feas_tol)
                viols.push_back({{CKind::FlowHi, l}, fl(l) - pb.f_hi(l)});
            if (!is_active({CKind::FlowLo, l}) && fl(l) < pb.f_lo(l) - opt.feas_tol)
                viols.push_back({{CKind::FlowLo, l}, pb.f_lo(l) - fl(l)});
        }
        if (!viols.empty()) {
            double worst = 0.0;
            for (const auto& v : viols) worst = std::max(worst, v.amount);
            best_infeas = std::min(best_infeas, worst);
            size_t pick = 0;
            if (blands_rule) {
                for (size_t i = 1; i < viols.size(); ++i)
                    if (viols[i].c < viols[pick].c) pick = i;
            } else {
                for (size_t i = 1; i < viols.size(); ++i) {
                    bool better = viols[i].amount > viols[pick].amount + 1e-15;
                    bool tie = std::abs(viols[i].amount - viols[pick].amount) <= 1e-15;
                    if (better || (tie && opt.reverse_order)) pick = i;
                }
            }
            active.push_back(viols[pick].c);
            auto key = set_key(active);
            if (!visited.insert(key).second) blands_rule = true;
            continue;
        }
        best_infeas = 0.0;
        // dual signs: BoxLo/FlowLo need multiplier <= 0, BoxHi/FlowHi >= 0
        int drop = -1;
        double worst_bad = opt.dual_tol;
        for (size_t a = 0; a < active.size(); ++a) {
            double mu = eqp.act_mult[a];
            bool hi_side = active[a].kind == CKind::BoxHi || active[a].kind == CKind::FlowHi;
            double bad = hi_side ? -mu : mu;
            if (bad > worst_bad) {
                if (drop < 0 || (!blands_rule && bad > worst_bad) ||
                    (blands_rule && active[a] < active[drop]))
                    drop = static_cast<int>(a);
                if (!blands_rule) worst_bad = bad;
            }
        }
        if (drop >= 0) {
            active.erase(active.begin() + drop);
            auto key = set_key(active);
            if (!visited.insert(key).second) blands_rule = true;
            continue;
        }
        // accept: assemble the KKT point
        KKTPoint pt;
        pt.u = eqp.u;
        pt.phi = eqp.phi.array() - eqp.phi.mean();
        pt.lambda = eqp.lambda;
        pt.pi = eqp.pi;
        pt.rho_plus = Vec::Zero(m);
        pt.rho_minus = Vec::Zero(m);
        for (size_t a = 0; a < active.size(); ++a) {
            double mu = eqp.act_mult[a];
            if (active[a].kind == CKind::FlowHi) pt.rho_plus(active[a].index) = std::max(mu, 0.0);
            if (active[a].kind == CKind::FlowLo) pt.rho_minus(active[a].index) = std::max(-mu, 0.0);
        }
        return pt;
    }
    throw InfeasibleError("dispatch oracle: iteration cap reached; best constraint violation " +
                          std::to_string(best_infeas));
}

/// Constraints active at the point but with multiplier below `tol`:
/// strict-complementarity audit (flagged, not asserted).
inline std::vector<std::string> strict_complementarity_audit(const DispatchProblem& pb,
                                                             const KKTPoint& pt,
                                                             double active_tol = 1e-7,
                                                             double tol = 1e-7) {
    std::vector<std::string> flags;
    Vec gj = grad_J(pb, pt.u) + pb.net.G.transpose() * pt.lambda;
    for (int i = 0; i < pb.net.n_g; ++i) {
        if (pt.u(i) <= pb.u_lo(i) + active_tol && gj(i) < tol)
            flags.push_back("u_lo[" + std::to_string(i) + "] weakly active");
        if (pt.u(i) >= pb.u_hi(i) - active_tol && -gj(i) < tol)
            flags.push_back("u_hi[" + std::to_string(i) + "] weakly active");
    }
    Vec fl = pb.net.flows(pt.phi);
    for (int l = 0; l < pb.net.m; ++l) {
        if (fl(l) >= pb.f_hi(l) - active_tol && pt.rho_plus(l) < tol)
            flags.push_back("f_hi[" + std::to_string(l) + "] weakly active");
        if (fl(l) <= pb.f_lo(l) + active_tol && pt.rho_minus(l) < tol)
            flags.push_back("f_lo[" + std::to_string(l) + "] weakly active");
    }
    return flags;
}

}  // namespace freqnet
