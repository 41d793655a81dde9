#pragma once

// Early-exit policy machinery: the truncated-geometric exit distribution, the
// budget -> q solver, validation-set threshold calibration, and the policy
// file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "exitgrid/tensor.hpp"

namespace exitgrid {

// Per-checkpoint exit probabilities q_k = z * (1-q)^(k-1) * q, k = 1..K,
// with z normalizing the truncated series to 1.
struct ExitModel {
    double q = 1.0;
    int n_checkpoints = 1;
    double z = 1.0;
    std::vector<double> probs;
};

inline ExitModel exit_distribution(double q, int k_count) {
    if (!(q > 0.0) || q > 1.0)
        throw ConfigError("exit_distribution: q must be in (0,1], got " + std::to_string(q));
    if (k_count < 1) throw ConfigError("exit_distribution: K must be >= 1");
    ExitModel m;
    m.q = q;
    m.n_checkpoints = k_count;
    m.probs.resize(static_cast<size_t>(k_count));
    double sum = 0.0;
    double geo = 1.0; // (1-q)^(k-1)
    for (int k = 0; k < k_count; ++k) {
        m.probs[static_cast<size_t>(k)] = geo * q;
        sum += geo * q;
        geo *= (1.0 - q);
    }
    m.z = 1.0 / sum;
    for (double& p : m.probs) p *= m.z;
    return m;
}

inline double expected_cost(const ExitModel& m, const std::vector<uint64_t>& costs) {
    if (costs.size() != m.probs.size())
        throw ConfigError("expected_cost: " + std::to_string(costs.size()) + " costs for " +
                          std::to_string(m.probs.size()) + " checkpoints");
    double acc = 0.0;
    for (size_t k = 0; k < costs.size(); ++k) acc += m.probs[k] * static_cast<double>(costs[k]);
    return acc;
}

struct SolveResult {
    double q = 1.0;
    // Set when the budget exceeds the range reachable by any q in (0,1]; the
    // solver then returns the smallest usable q (full-inference regime).
    bool budget_above_range = false;
};

// Solve sum_k q_k(q) * G_k == Q for q by bisection. The expected cost is
// strictly decreasing in q when G is strictly increasing, from the q->0
// limit (the mean of G, since the normalized distribution flattens) down to
// G_0 at q = 1.
inline SolveResult solve_q(double budget, const std::vector<uint64_t>& costs) {
    if (costs.empty()) throw ConfigError("solve_q: empty cost table");
    for (size_t k = 0; k + 1 < costs.size(); ++k)
        if (costs[k] > costs[k + 1]) throw ConfigError("solve_q: cost table must be non-decreasing");
    const double g_first = static_cast<double>(costs.front());
    const double g_last = static_cast<double>(costs.back());
    if (budget < g_first) {
        std::ostringstream os;
        os << "solve_q: budget " << budget << " below cheapest exit; feasible range is [" << g_first
           << ", " << g_last << "]";
        throw ConfigError(os.str());
    }
    const double tol = 1e-9 * g_last;
    const double q_min = 1e-12;
    auto cost_at = [&costs](double q) { return expected_cost(exit_distribution(q, static_cast<int>(costs.size())), costs); };

    if (budget <= cost_at(1.0) + tol) return {1.0, false};
    if (budget >= cost_at(q_min)) return {q_min, true};

    // Bisect the interval itself rather than stopping on the cost gap: the
    // cost curve can be shallow, and a tight q also keeps the gap under tol.
    double lo = q_min, hi = 1.0; // cost(lo) > budget > cost(hi)
    for (int iter = 0; iter < 200 && hi - lo > 1e-15; ++iter) {
        double mid = 0.5 * (lo + hi);
        if (cost_at(mid) > budget)
            lo = mid;
        else
            hi = mid;
    }
    return {0.5 * (lo + hi), false};
}

// Thresholds plus the cost table they were calibrated against.
struct ExitPolicy {
    std::vector<double> thresholds; // T_k; last entry is the -inf sentinel
    std::vector<uint64_t> costs;    // G_k
    double budget = 0.0;            // Q
    double q = 1.0;
    uint64_t grid_hash = 0;
    std::string calib_split;

    int n_checkpoints() const { return static_cast<int>(thresholds.size()); }

    static ExitPolicy never_exit(std::vector<uint64_t> costs_in) {
        ExitPolicy p;
        p.thresholds.assign(costs_in.size(), std::numeric_limits<double>::infinity());
        p.thresholds.back() = -std::numeric_limits<double>::infinity();
        p.costs = std::move(costs_in);
        return p;
    }
    static ExitPolicy always_exit_first(std::vector<uint64_t> costs_in) {
        ExitPolicy p;
        p.thresholds.assign(costs_in.size(), -std::numeric_limits<double>::infinity());
        p.costs = std::move(costs_in);
        return p;
    }
};

// Exit criterion: leave at checkpoint k iff max score strictly exceeds T_k.
// The final checkpoint always exits.
inline bool decide_exit(const Tensor& scores, int k, const ExitPolicy& policy) {
    if (k < 0 || k >= policy.n_checkpoints())
        throw ConfigError("decide_exit: checkpoint " + std::to_string(k) + " out of range");
    if (k == policy.n_checkpoints() - 1) return true;
    double mx = scores[0];
    for (size_t i = 1; i < scores.size(); ++i) mx = std::max(mx, scores[i]);
    return mx > policy.thresholds[static_cast<size_t>(k)];
}

// Round-half-to-even sample targets n_k = round(D * q_k); any residual mass
// lands on the final checkpoint.
inline std::vector<size_t> exit_targets(const ExitModel& m, size_t n_samples) {
    std::vector<size_t> targets(m.probs.size(), 0);
    size_t assigned = 0;
    for (size_t k = 0; k + 1 < m.probs.size(); ++k) {
        double want = std::nearbyint(static_cast<double>(n_samples) * m.probs[k]);
        size_t n = want <= 0.0 ? 0 : static_cast<size_t>(want);
        n = std::min(n, n_samples - assigned);
        targets[k] = n;
        assigned += n;
    }
    targets.back() = n_samples - assigned;
    return targets;
}

// Sequential quantile thresholds: at each checkpoint, among samples that have
// not yet exited, T_k sits midway between the n_k-th and (n_k+1)-th largest
// confidence, so replaying the thresholds reproduces the targets exactly when
// confidences are distinct. Ties can move counts by the tie multiplicity.
inline std::vector<double> calibrate_thresholds(const std::vector<std::vector<double>>& confidences,
                                                const ExitModel& m) {
    const size_t n_samples = confidences.size();
    const size_t k_count = m.probs.size();
    if (n_samples < k_count)
        throw ConfigError("calibrate_thresholds: need at least K samples, got " +
                          std::to_string(n_samples));
    for (const auto& row : confidences)
        if (row.size() != k_count)
            throw ConfigError("calibrate_thresholds: confidence row width != checkpoint count");

    std::vector<size_t> targets = exit_targets(m, n_samples);
    std::vector<double> thresholds(k_count, 0.0);
    std::vector<size_t> active(n_samples);
    for (size_t d = 0; d < n_samples; ++d) active[d] = d;

    for (size_t k = 0; k + 1 < k_count; ++k) {
        const size_t take = std::min(targets[k], active.size());
        double t;
        if (active.empty()) {
            t = std::numeric_limits<double>::infinity();
        } else if (take == 0) {
            double mx = confidences[active[0]][k];
            for (size_t d : active) mx = std::max(mx, confidences[d][k]);
            t = mx + 1.0;
        } else if (take == active.size()) {
            double mn = confidences[active[0]][k];
            for (size_t d : active) mn = std::min(mn, confidences[d][k]);
            t = mn - 1.0;
        } else {
            std::vector<double> col;
            col.reserve(active.size());
            for (size_t d : active) col.push_back(confidences[d][k]);
            std::sort(col.begin(), col.end(), std::greater<>());
            t = 0.5 * (col[take - 1] + col[take]);
        }
        thresholds[k] = t;
        std::vector<size_t> still;
        still.reserve(active.size());
        for (size_t d : active)
            if (!(confidences[d][k] > t)) still.push_back(d);
        active = std::move(still);
    }
    thresholds[k_count - 1] = -std::numeric_limits<double>::infinity();
    return thresholds;
}

// First checkpoint each sample exits at under the given thresholds.
inline std::vector<size_t> replay_exit_counts(const std::vector<std::vector<double>>& confidences,
                                              const std::vector<double>& thresholds) {
    std::vector<size_t> counts(thresholds.size(), 0);
    for (const auto& row : confidences) {
        size_t exit_k = thresholds.size() - 1;
        for (size_t k = 0; k + 1 < thresholds.size(); ++k) {
            if (row[k] > thresholds[k]) {
                exit_k = k;
                break;
            }
        }
        counts[exit_k]++;
    }
    return counts;
}

struct SweepCalibration {
    std::vector<ExitPolicy> policies;
    std::vector<std::string> skipped; // one message per infeasible budget
};

// One calibrated policy per feasible budget.
inline SweepCalibration sweep_budgets(const std::vector<double>& budgets,
                                      const std::vector<std::vector<double>>& confidences,
                                      const std::vector<uint64_t>& costs) {
    SweepCalibration out;
    for (double budget : budgets) {
        try {
            SolveResult s = solve_q(budget, costs);
            ExitModel m = exit_distribution(s.q, static_cast<int>(costs.size()));
            ExitPolicy p;
            p.thresholds = calibrate_thresholds(confidences, m);
            p.costs = costs;
            p.budget = budget;
            p.q = s.q;
            out.policies.push_back(std::move(p));
        } catch (const ConfigError& e) {
            std::ostringstream os;
            os << "budget " << budget << " skipped: " << e.what();
            out.skipped.push_back(os.str());
        }
    }
    return out;
}

namespace detail {
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
inline double parse_double(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
}
} // namespace detail

// Plain-text policy file: header lines record the grid hash, calibration
// split, Q and q; then one "k G_k T_k" line per checkpoint.
inline void save_policy(const std::string& path, const ExitPolicy& policy) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open policy file for writing: " + path);
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(policy.grid_hash));
    f << "# exitgrid policy v1\n";
    f << "grid_hash " << hash << "\n";
    f << "split " << (policy.calib_split.empty() ? "unknown" : policy.calib_split) << "\n";
    f << "Q " << detail::format_double(policy.budget) << "\n";
    f << "q " << detail::format_double(policy.q) << "\n";
    for (size_t k = 0; k < policy.thresholds.size(); ++k)
        f << k << " " << policy.costs[k] << " " << detail::format_double(policy.thresholds[k])
          << "\n";
    if (!f) throw IoError("failed writing policy file: " + path);
}

inline ExitPolicy load_policy(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open policy file: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "# exitgrid policy v1")
        throw IoError("unrecognized policy file header in " + path);
    ExitPolicy p;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string first;
        is >> first;
        if (first == "grid_hash") {
            std::string hex;
            is >> hex;
            p.grid_hash = std::stoull(hex, nullptr, 16);
        } else if (first == "split") {
            is >> p.calib_split;
        } else if (first == "Q") {
            std::string v;
            is >> v;
            p.budget = detail::parse_double(v);
        } else if (first == "q") {
            std::string v;
            is >> v;
            p.q = detail::parse_double(v);
        } else {
            size_t k = std::stoul(first);
            uint64_t g;
            std::string t;
            if (!(is >> g >> t)) throw IoError("malformed checkpoint line in " + path);
            if (k != p.thresholds.size())
                throw IoError("checkpoint lines out of order in " + path);
            p.costs.push_back(g);
            p.thresholds.push_back(detail::parse_double(t));
        }
    }
    if (p.thresholds.empty()) throw IoError("policy file has no checkpoint lines: " + path);
    return p;
}

} // namespace exitgrid
