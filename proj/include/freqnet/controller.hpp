#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "freqnet/dispatch.hpp"

namespace freqnet {

/// Cyber state z = (u, phi, lambda, pi, rho+, rho-).
struct OptimizerState {
    Vec u;
    Vec phi;
    Vec lambda;
    Vec pi;
    Vec rho_plus;
    Vec rho_minus;

    [[nodiscard]] int dimension() const {
        return static_cast<int>(u.size() + phi.size() + lambda.size() + pi.size() +
                                rho_plus.size() + rho_minus.size());
    }

    [[nodiscard]] Vec flatten() const {
        Vec z(dimension());
        int at = 0;
        for (const Vec* part : {&u, &phi, &lambda, &pi, &rho_plus, &rho_minus}) {
            z.segment(at, part->size()) = *part;
            at += static_cast<int>(part->size());
        }
        return z;
    }

    static OptimizerState unflatten(const Vec& z, int n_g, int n, int n_t, int m) {
        if (z.size() != n_g + 2 * n + n_t + 2 * m)
            throw DimensionError("OptimizerState::unflatten: wrong length");
        OptimizerState st;
        int at = 0;
        st.u = z.segment(at, n_g); at += n_g;
        st.phi = z.segment(at, n); at += n;
        st.lambda = z.segment(at, n); at += n;
        st.pi = z.segment(at, n_t); at += n_t;
        st.rho_plus = z.segment(at, m); at += m;
        st.rho_minus = z.segment(at, m);
        return st;
    }

    static OptimizerState from_kkt(const KKTPoint& pt) {
        return {pt.u, pt.phi, pt.lambda, pt.pi, pt.rho_plus, pt.rho_minus};
    }
};

/// Diagonal controller gains; vectors hold the diagonals.
struct ControllerGains {
    Vec tau_u;       // n_g
    Vec tau_phi;     // n
    Vec tau_lambda;  // n
    Vec tau_pi;      // n_t
    Vec tau_plus;    // m
    Vec tau_minus;   // m
    double kappa = 1.0;

    void validate(int n_g, int n, int n_t, int m) const {
        if (tau_u.size() != n_g || tau_phi.size() != n || tau_lambda.size() != n ||
            tau_pi.size() != n_t || tau_plus.size() != m || tau_minus.size() != m)
            throw DimensionError("gains: diagonal lengths do not match network dims");
        for (const Vec* v : {&tau_u, &tau_phi, &tau_lambda, &tau_pi, &tau_plus, &tau_minus})
            if (v->size() > 0 && v->minCoeff() <= 0.0)
                throw ValidationError("gains: all tau entries must be positive");
        if (!(kappa > 0.0)) throw ValidationError("gains: kappa must be positive");
    }

    static ControllerGains uniform(int n_g, int n, int n_t, int m, double tau = 1.0,
                                   double kappa = 10.0) {
        ControllerGains g;
        g.tau_u = Vec::Constant(n_g, tau);
        g.tau_phi = Vec::Constant(n, tau);
        g.tau_lambda = Vec::Constant(n, tau);
        g.tau_pi = Vec::Constant(n_t, tau);
        g.tau_plus = Vec::Constant(m, tau);
        g.tau_minus = Vec::Constant(m, tau);
        g.kappa = kappa;
        return g;
    }
};

/// Projected velocity onto the tangent cone of a box: zero out components that
/// push outward at an active bound, keep everything else.
inline Vec project_box_velocity(const Vec& x, const Vec& v, const Vec& lo, const Vec& hi,
                                double tol = 1e-9) {
    if (x.size() != v.size() || x.size() != lo.size() || x.size() != hi.size())
        throw DimensionError("project_box_velocity: size mismatch");
    Vec out = v;
    for (int i = 0; i < x.size(); ++i) {
        if (x(i) < lo(i) - tol || x(i) > hi(i) + tol)
            throw ValidationError("project_box_velocity: x outside box beyond tol");
        if (x(i) <= lo(i) + tol && v(i) < 0.0) out(i) = 0.0;
        if (x(i) >= hi(i) - tol && v(i) > 0.0) out(i) = 0.0;
    }
    return out;
}

/// Projected velocity onto the tangent cone of the nonnegative orthant.
inline Vec project_orthant_velocity(const Vec& x, const Vec& v, double tol = 1e-9) {
    Vec out = v;
    for (int i = 0; i < x.size(); ++i) {
        if (x(i) < -tol) throw ValidationError("project_orthant_velocity: x negative beyond tol");
        if (x(i) <= tol && v(i) < 0.0) out(i) = 0.0;
    }
    return out;
}

/// Augmented projected primal-dual vector field, flattened in z order.
/// y is the generator-frequency measurement supplied by the interface.
inline Vec optimizer_derivative(const DispatchProblem& pb, const ControllerGains& gains,
                                const OptimizerState& z, const Vec& y,
                                double bound_tol = 1e-9) {
    const auto& net = pb.net;
    if (y.size() != net.n_g) throw DimensionError("optimizer_derivative: y must have length n_g");
    Vec r = residual_r(pb, z.u, z.phi);
    Vec g = residual_g(pb, z.phi);
    auto [hp, hm] = residual_h(pb, z.phi);

    Vec xi_u = -grad_J(pb, z.u) - net.G.transpose() * z.lambda -
               gains.kappa * (net.G.transpose() * r) - y;
    Vec du = project_box_velocity(z.u, xi_u, pb.u_lo, pb.u_hi, bound_tol)
                 .cwiseQuotient(gains.tau_u);
    Vec dphi = (net.L * z.lambda -
                net.C * net.b.asDiagonal() *
                    (net.T.transpose() * z.pi + z.rho_plus - z.rho_minus) +
                gains.kappa * (net.L * r))
                   .cwiseQuotient(gains.tau_phi);
    Vec dlam = r.cwiseQuotient(gains.tau_lambda);
    Vec dpi = g.cwiseQuotient(gains.tau_pi);
    Vec drp = project_orthant_velocity(z.rho_plus, hp, bound_tol).cwiseQuotient(gains.tau_plus);
    Vec drm = project_orthant_velocity(z.rho_minus, hm, bound_tol).cwiseQuotient(gains.tau_minus);

    Vec dz(z.dimension());
    int at = 0;
    for (const Vec* part : {&du, &dphi, &dlam, &dpi, &drp, &drm}) {
        dz.segment(at, part->size()) = *part;
        at += static_cast<int>(part->size());
    }
    return dz;
}

/// Tau-weighted incremental storage of the optimizer state.
inline double optimizer_storage(const ControllerGains& gains, const OptimizerState& z,
                                const OptimizerState& z_star) {
    auto quad = [](const Vec& tau, const Vec& a, const Vec& b) {
        Vec d = a - b;
        return 0.5 * d.dot(tau.asDiagonal() * d);
    };
    return quad(gains.tau_u, z.u, z_star.u) + quad(gains.tau_phi, z.phi, z_star.phi) +
           quad(gains.tau_lambda, z.lambda, z_star.lambda) + quad(gains.tau_pi, z.pi, z_star.pi) +
           quad(gains.tau_plus, z.rho_plus, z_star.rho_plus) +
           quad(gains.tau_minus, z.rho_minus, z_star.rho_minus);
}

/// Projection onto the feasibility set K: clamp u to its box, clamp rho at
/// zero, remove the mean of phi.
inline void project_feasible(const DispatchProblem& pb, OptimizerState& z) {
    z.u = z.u.cwiseMax(pb.u_lo).cwiseMin(pb.u_hi);
    z.phi.array() -= z.phi.mean();
    z.rho_plus = z.rho_plus.cwiseMax(0.0);
    z.rho_minus = z.rho_minus.cwiseMax(0.0);
}

/// Projected Euler step z+ = P_K(z + h f(z, y)).
inline OptimizerState step_optimizer_projected_euler(const DispatchProblem& pb,
                                                     const ControllerGains& gains,
                                                     const OptimizerState& z, const Vec& y,
                                                     double h, double bound_tol = 1e-9) {
    Vec dz = optimizer_derivative(pb, gains, z, y, bound_tol);
    OptimizerState out = OptimizerState::unflatten(z.flatten() + h * dz, pb.net.n_g, pb.net.n,
                                                   pb.net.n_t, pb.net.m);
    project_feasible(pb, out);
    return out;
}

}  // namespace freqnet
