#pragma once

#include <Eigen/Dense>

#include "freqnet/network.hpp"

namespace freqnet {

/// Diagonal inertia and damping of the swing dynamics.
struct PlantParams {
    Vec inertia;  // M diagonal, > 0  [pu s^2]
    Vec damping;  // D diagonal, > 0  [pu s]

    void validate(int n) const {
        if (inertia.size() != n || damping.size() != n)
            throw DimensionError("plant: M/D must have length n");
        if (inertia.minCoeff() <= 0.0 || damping.minCoeff() <= 0.0)
            throw ValidationError("plant: M and D must be positive");
    }
};

struct PlantState {
    Vec theta;  // [rad]
    Vec omega;  // [pu]
};

/// Swing-equation right-hand side: theta_dot = omega,
/// omega_dot = M^-1 (-D omega - L theta + G p - d). Inputs in pu.
inline std::pair<Vec, Vec> plant_derivative(const PlantParams& pp, const NetworkMatrices& net,
                                            const PlantState& st, const Vec& p, const Vec& d) {
    if (p.size() != net.n_g || d.size() != net.n || st.theta.size() != net.n ||
        st.omega.size() != net.n)
        throw DimensionError("plant_derivative: size mismatch");
    Vec wdot = (-pp.damping.asDiagonal() * st.omega - net.L * st.theta + net.G * p - d)
                   .cwiseQuotient(pp.inertia);
    return {st.omega, wdot};
}

/// One explicit Euler step of the swing dynamics.
inline PlantState step_plant(const PlantParams& pp, const NetworkMatrices& net,
                             const PlantState& st, const Vec& p, const Vec& d, double h) {
    if (!(h > 0.0)) throw ValidationError("step_plant: h must be positive");
    auto [tdot, wdot] = plant_derivative(pp, net, st, p, d);
    return {st.theta + h * tdot, st.omega + h * wdot};
}

/// Incremental plant storage 1/2 w~' M w~ + 1/2 th~' L th~ relative to
/// (theta*, omega*). Insensitive to uniform shifts of theta.
inline double plant_storage(const PlantParams& pp, const NetworkMatrices& net,
                            const PlantState& st, const Vec& theta_star,
                            const Vec& omega_star = Vec()) {
    Vec dth = st.theta - theta_star;
    Vec dw = omega_star.size() ? Vec(st.omega - omega_star) : st.omega;
    return 0.5 * dw.dot(pp.inertia.asDiagonal() * dw) + 0.5 * dth.dot(net.L * dth);
}

}  // namespace freqnet
