#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "freqnet/controller.hpp"

namespace freqnet {

/// Disjoint cover of the flattened cyber coordinates with draw probabilities.
struct BlockPartition {
    std::vector<std::vector<int>> blocks;
    Vec probs;

    [[nodiscard]] int n_blocks() const { return static_cast<int>(blocks.size()); }

    [[nodiscard]] int n_coordinates() const {
        int c = 0;
        for (const auto& blk : blocks) c += static_cast<int>(blk.size());
        return c;
    }

    void validate(int n_z) const {
        if (probs.size() != n_blocks()) throw DimensionError("partition: probs length != blocks");
        std::vector<char> seen(n_z, 0);
        for (const auto& blk : blocks)
            for (int i : blk) {
                if (i < 0 || i >= n_z) throw ValidationError("partition: index out of range");
                if (seen[i]) throw ValidationError("partition: overlapping blocks");
                seen[i] = 1;
            }
        for (char s : seen)
            if (!s) throw ValidationError("partition: blocks do not cover all coordinates");
        if (probs.size() > 0 && probs.minCoeff() <= 0.0)
            throw ValidationError("partition: probabilities must be positive");
        if (std::abs(probs.sum() - 1.0) > 1e-12)
            throw ValidationError("partition: probabilities must sum to one");
    }
};

/// Natural cyber partition: one singleton per generator coordinate, one
/// (phi_i, lambda_i) pair per bus, one singleton per tie coordinate, one
/// (rho+_l, rho-_l) pair per line. Uniform probabilities.
inline BlockPartition default_partition(int n_g, int n, int n_t, int m) {
    BlockPartition part;
    for (int i = 0; i < n_g; ++i) part.blocks.push_back({i});
    for (int i = 0; i < n; ++i) part.blocks.push_back({n_g + i, n_g + n + i});
    for (int i = 0; i < n_t; ++i) part.blocks.push_back({n_g + 2 * n + i});
    for (int l = 0; l < m; ++l)
        part.blocks.push_back({n_g + 2 * n + n_t + l, n_g + 2 * n + n_t + m + l});
    int nb = part.n_blocks();
    part.probs = Vec::Constant(nb, 1.0 / nb);
    return part;
}

/// One block holding every coordinate: the RBC update degenerates to the full
/// projected Euler step.
inline BlockPartition single_block_partition(int n_z) {
    BlockPartition part;
    part.blocks.emplace_back(n_z);
    std::iota(part.blocks[0].begin(), part.blocks[0].end(), 0);
    part.probs = Vec::Constant(1, 1.0);
    return part;
}

/// Deterministic 64-bit-seeded generator. The algorithm identifier recorded in
/// trace headers is "mt19937_64".
using RngState = std::mt19937_64;

inline constexpr const char* kRngAlgorithm = "mt19937_64";

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(RngState& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Draw a block index according to `probs` by cumulative inversion.
inline int sample_block(RngState& rng, const Vec& probs) {
    double x = uniform01(rng);
    double acc = 0.0;
    int last = static_cast<int>(probs.size()) - 1;
    for (int i = 0; i <= last; ++i) {
        acc += probs(i);
        if (x < acc) return i;
    }
    return last;
}

struct RbcConfig {
    double epsilon = 1e-3;
    std::uint64_t seed = 1;
    BlockPartition partition;

    void validate(int n_z) const {
        if (!(epsilon > 0.0)) throw ValidationError("rbc: epsilon must be positive");
        partition.validate(n_z);
    }
};

/// One sampled block update: evaluate the full vector field, mask to the drawn
/// block, scale by 1/p_beta, step by epsilon and project onto K. Returns the
/// drawn block index. Coordinates outside the block change only through the
/// feasibility projection (phi mean removal when the block touches phi).
inline int rbc_step(const DispatchProblem& pb, const ControllerGains& gains, OptimizerState& z,
                    const Vec& y, const RbcConfig& cfg, RngState& rng, double bound_tol = 1e-9) {
    const int n_g = pb.net.n_g, n = pb.net.n, n_t = pb.net.n_t, m = pb.net.m;
    Vec f = optimizer_derivative(pb, gains, z, y, bound_tol);
    int beta = sample_block(rng, cfg.partition.probs);
    const auto& blk = cfg.partition.blocks[beta];
    double scale = cfg.epsilon / cfg.partition.probs(beta);

    Vec zf = z.flatten();
    bool touches_phi = false;
    for (int i : blk) {
        zf(i) += scale * f(i);
        if (i >= n_g && i < n_g + n) touches_phi = true;
    }
    z = OptimizerState::unflatten(zf, n_g, n, n_t, m);
    z.u = z.u.cwiseMax(pb.u_lo).cwiseMin(pb.u_hi);
    if (touches_phi) z.phi.array() -= z.phi.mean();
    z.rho_plus = z.rho_plus.cwiseMax(0.0);
    z.rho_minus = z.rho_minus.cwiseMax(0.0);
    return beta;
}

/// Monte-Carlo average of the scaled block directions (test support for the
/// unbiasedness property). n_samples = 0 returns the exact weighted sum.
inline Vec expected_direction(const DispatchProblem& pb, const ControllerGains& gains,
                              const OptimizerState& z, const Vec& y, const BlockPartition& part,
                              int n_samples, RngState& rng) {
    Vec f = optimizer_derivative(pb, gains, z, y);
    Vec acc = Vec::Zero(f.size());
    if (n_samples <= 0) {
        for (int b = 0; b < part.n_blocks(); ++b)
            for (int i : part.blocks[b]) acc(i) += f(i);  // p_b * p_b^-1 = 1
        return acc;
    }
    for (int s = 0; s < n_samples; ++s) {
        int b = sample_block(rng, part.probs);
        for (int i : part.blocks[b]) acc(i) += f(i) / part.probs(b);
    }
    return acc / n_samples;
}

}  // namespace freqnet
