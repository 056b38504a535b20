#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "freqnet/errors.hpp"

namespace freqnet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Case description as read from a case file: buses, oriented branches,
/// generator buses, control areas and the ordered tie pairs.
struct NetworkSpec {
    struct Branch {
        int from = 0;
        int to = 0;
        double susceptance = 0.0;  // pu
    };

    std::vector<int> buses;
    std::vector<Branch> branches;
    std::vector<int> generators;            // bus ids, one per unit
    std::map<int, int> areas;               // bus id -> area id
    std::vector<std::pair<int, int>> tie_pairs;  // ordered (a, b)
    double base_mva = 100.0;

    [[nodiscard]] int n_buses() const { return static_cast<int>(buses.size()); }
    [[nodiscard]] int n_branches() const { return static_cast<int>(branches.size()); }
    [[nodiscard]] int n_generators() const { return static_cast<int>(generators.size()); }
    [[nodiscard]] int n_tie_pairs() const { return static_cast<int>(tie_pairs.size()); }

    /// 0-based index of a bus id.
    [[nodiscard]] int bus_index(int bus_id) const {
        auto it = std::find(buses.begin(), buses.end(), bus_id);
        if (it == buses.end())
            throw ValidationError("unknown bus id " + std::to_string(bus_id));
        return static_cast<int>(it - buses.begin());
    }

    /// 0-based index of the branch from->to (stored orientation), -1 if absent.
    [[nodiscard]] int branch_index(int from, int to) const {
        for (int l = 0; l < n_branches(); ++l)
            if ((branches[l].from == from && branches[l].to == to) ||
                (branches[l].from == to && branches[l].to == from))
                return l;
        return -1;
    }
};

/// Constant matrices derived from a NetworkSpec. Immutable after construction.
struct NetworkMatrices {
    Mat C;       // n x m signed incidence (+1 at from, -1 at to)
    Vec b;       // m branch susceptances (diagonal of B)
    Mat L;       // n x n weighted Laplacian, C B C^T
    Mat G;       // n x n_g generator selector
    Mat T;       // n_t x m signed tie aggregation
    int n = 0, m = 0, n_g = 0, n_t = 0;
    double base_mva = 100.0;

    [[nodiscard]] Mat B() const { return Mat(b.asDiagonal()); }

    /// Branch flows B C^T phi for an angle vector.
    [[nodiscard]] Vec flows(const Vec& phi) const {
        if (phi.size() != n) throw DimensionError("flows: phi has wrong size");
        return b.asDiagonal() * (C.transpose() * phi);
    }
};

namespace detail {

inline bool is_blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t z = s.find_last_not_of(" \t\r\n");
    return s.substr(a, z - a + 1);
}

}  // namespace detail

/// Check graph connectivity over the declared buses and branches.
inline bool network_connected(const NetworkSpec& spec) {
    int n = spec.n_buses();
    if (n == 0) return false;
    std::vector<std::vector<int>> adj(n);
    for (const auto& br : spec.branches) {
        int a = spec.bus_index(br.from), z = spec.bus_index(br.to);
        adj[a].push_back(z);
        adj[z].push_back(a);
    }
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    return count == n;
}

/// Validate invariants shared by parsed and programmatic specs.
inline void validate_spec(const NetworkSpec& spec) {
    if (spec.buses.empty()) throw ValidationError("case has no buses");
    {
        auto sorted = spec.buses;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ValidationError("duplicate bus id");
    }
    auto declared = [&](int id) {
        return std::find(spec.buses.begin(), spec.buses.end(), id) != spec.buses.end();
    };
    for (const auto& br : spec.branches) {
        if (!declared(br.from) || !declared(br.to))
            throw ValidationError("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + " references an undeclared bus");
        if (br.from == br.to)
            throw ValidationError("self-loop branch at bus " + std::to_string(br.from));
        if (!(br.susceptance > 0.0))
            throw ValidationError("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + " has nonpositive susceptance");
    }
    for (int g : spec.generators)
        if (!declared(g)) throw ValidationError("generator at undeclared bus " + std::to_string(g));
    for (const auto& [bus, area] : spec.areas) {
        if (!declared(bus)) throw ValidationError("area entry for undeclared bus " + std::to_string(bus));
        (void)area;
    }
    if (!network_connected(spec)) throw ValidationError("network graph is not connected");
    for (auto [a, bzone] : spec.tie_pairs) {
        bool found = false;
        for (const auto& br : spec.branches) {
            auto ita = spec.areas.find(br.from);
            auto itb = spec.areas.find(br.to);
            if (ita == spec.areas.end() || itb == spec.areas.end()) continue;
            int af = ita->second, at = itb->second;
            if ((af == a && at == bzone) || (af == bzone && at == a)) {
                found = true;
                break;
            }
        }
        if (!found)
            throw ValidationError("tie pair (" + std::to_string(a) + "," + std::to_string(bzone) +
                                  ") has no crossing branch");
    }
    if (!(spec.base_mva > 0.0)) throw ValidationError("base_mva must be positive");
}

/// Parse the case format: sections [bus], [branch], [gen], [area], [tie],
/// optional [base] with `mva = <x>`. `#` starts a comment.
inline NetworkSpec parse_case(std::istream& in) {
    NetworkSpec spec;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("line " + std::to_string(lineno) + ": unterminated section header");
            section = line.substr(1, line.size() - 2);
            if (section != "bus" && section != "branch" && section != "gen" &&
                section != "area" && section != "tie" && section != "base")
                throw ParseError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        std::istringstream ls(line);
        if (section == "bus") {
            int id;
            if (!(ls >> id)) throw ParseError("line " + std::to_string(lineno) + ": bad bus line");
            spec.buses.push_back(id);
        } else if (section == "branch") {
            NetworkSpec::Branch br;
            if (!(ls >> br.from >> br.to >> br.susceptance))
                throw ParseError("line " + std::to_string(lineno) + ": branch line needs `from to susceptance_pu`");
            spec.branches.push_back(br);
        } else if (section == "gen") {
            int id;
            if (!(ls >> id)) throw ParseError("line " + std::to_string(lineno) + ": bad gen line");
            spec.generators.push_back(id);
        } else if (section == "area") {
            int bus, area;
            if (!(ls >> bus >> area))
                throw ParseError("line " + std::to_string(lineno) + ": area line needs `bus area`");
            spec.areas[bus] = area;
        } else if (section == "tie") {
            int a, bzone;
            if (!(ls >> a >> bzone))
                throw ParseError("line " + std::to_string(lineno) + ": tie line needs `from_area to_area`");
            spec.tie_pairs.emplace_back(a, bzone);
        } else if (section == "base") {
            std::string key, eq;
            double v;
            if (!(ls >> key >> eq >> v) || key != "mva" || eq != "=")
                throw ParseError("line " + std::to_string(lineno) + ": [base] expects `mva = <value>`");
            spec.base_mva = v;
        } else {
            throw ParseError("line " + std::to_string(lineno) + ": data before any section header");
        }
        std::string rest;
        if (ls >> rest) throw ParseError("line " + std::to_string(lineno) + ": trailing tokens");
    }
    validate_spec(spec);
    return spec;
}

/// Load and validate a case file.
inline NetworkSpec load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open case file: " + path);
    return parse_case(in);
}

/// Build C, B, L, G, T from a validated spec.
///
/// T row (a,b) carries +1 on member branches oriented a->b and -1 on member
/// branches stored b->a, so T B C^T phi is the signed aggregate a->b flow.
inline NetworkMatrices build_matrices(const NetworkSpec& spec) {
    validate_spec(spec);
    NetworkMatrices net;
    net.n = spec.n_buses();
    net.m = spec.n_branches();
    net.n_g = spec.n_generators();
    net.n_t = spec.n_tie_pairs();
    net.base_mva = spec.base_mva;

    net.C = Mat::Zero(net.n, net.m);
    net.b = Vec::Zero(net.m);
    for (int l = 0; l < net.m; ++l) {
        const auto& br = spec.branches[l];
        net.C(spec.bus_index(br.from), l) = 1.0;
        net.C(spec.bus_index(br.to), l) = -1.0;
        net.b(l) = br.susceptance;
    }
    net.L = net.C * net.b.asDiagonal() * net.C.transpose();

    net.G = Mat::Zero(net.n, net.n_g);
    for (int j = 0; j < net.n_g; ++j) net.G(spec.bus_index(spec.generators[j]), j) = 1.0;

    net.T = Mat::Zero(net.n_t, net.m);
    for (int t = 0; t < net.n_t; ++t) {
        auto [a, bzone] = spec.tie_pairs[t];
        for (int l = 0; l < net.m; ++l) {
            const auto& br = spec.branches[l];
            auto ita = spec.areas.find(br.from);
            auto itb = spec.areas.find(br.to);
            if (ita == spec.areas.end() || itb == spec.areas.end()) continue;
            if (ita->second == a && itb->second == bzone)
                net.T(t, l) = 1.0;
            else if (ita->second == bzone && itb->second == a)
                net.T(t, l) = -1.0;
        }
    }
    return net;
}

/// Second-smallest Laplacian eigenvalue (positive iff connected).
inline double algebraic_connectivity(const NetworkMatrices& net) {
    Eigen::SelfAdjointEigenSolver<Mat> es(net.L);
    return es.eigenvalues()(1);
}

}  // namespace freqnet
