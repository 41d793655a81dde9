#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <numeric>

#include "exitgrid/policy.hpp"
#include "exitgrid/rng.hpp"
#include "test_util.hpp"

using namespace exitgrid;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<std::vector<double>> random_confidences(SplitMix64& rng, size_t n, size_t k) {
    std::vector<std::vector<double>> out(n, std::vector<double>(k));
    for (auto& row : out)
        for (double& v : row) v = rng.uniform(0.0, 1.0);
    return out;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("exit distribution is a normalized truncated geometric") {
    ExitModel m = exit_distribution(0.5, 2);
    // raw masses 0.5 and 0.25 re-normalized
    REQUIRE_THAT(m.z, WithinAbs(4.0 / 3.0, 1e-15));
    REQUIRE_THAT(m.probs[0], WithinAbs(2.0 / 3.0, 1e-15));
    REQUIRE_THAT(m.probs[1], WithinAbs(1.0 / 3.0, 1e-15));

    SplitMix64 rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        double q = rng.uniform(1e-6, 1.0);
        int k_count = 1 + static_cast<int>(rng.below(12));
        ExitModel d = exit_distribution(q, k_count);
        double sum = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
        REQUIRE_THAT(sum, WithinAbs(1.0, 1e-12));
        for (size_t k = 0; k + 1 < d.probs.size(); ++k)
            REQUIRE_THAT(d.probs[k + 1], WithinRel((1.0 - q) * d.probs[k], 1e-10));
    }
}

TEST_CASE("exit distribution edge cases and domain errors") {
    ExitModel sure = exit_distribution(1.0, 4);
    REQUIRE(sure.probs[0] == 1.0);
    for (size_t k = 1; k < 4; ++k) REQUIRE(sure.probs[k] == 0.0);

    REQUIRE_THROWS_AS(exit_distribution(0.0, 3), ConfigError);
    REQUIRE_THROWS_AS(exit_distribution(-0.1, 3), ConfigError);
    REQUIRE_THROWS_AS(exit_distribution(1.5, 3), ConfigError);
    REQUIRE_THROWS_AS(exit_distribution(0.5, 0), ConfigError);
}

TEST_CASE("expected cost blends the table by exit mass") {
    ExitModel m = exit_distribution(0.5, 2);
    REQUIRE_THAT(expected_cost(m, {1, 3}), WithinAbs(5.0 / 3.0, 1e-14));
    REQUIRE_THROWS_AS(expected_cost(m, {1, 2, 3}), ConfigError);
}

TEST_CASE("expected cost decreases as exits get more eager") {
    std::vector<uint64_t> costs{100, 250, 900, 2000};
    double prev = std::numeric_limits<double>::infinity();
    for (double q = 0.05; q <= 1.0; q += 0.05) {
        double c = expected_cost(exit_distribution(q, 4), costs);
        REQUIRE(c < prev);
        prev = c;
    }
}

TEST_CASE("budget solver reproduces the closed form") {
    // costs {1,3}: expected cost (4-3q)/(2-q); budget 1.5 gives q = 2/3
    SolveResult s = solve_q(1.5, {1, 3});
    REQUIRE_FALSE(s.budget_above_range);
    REQUIRE_THAT(s.q, WithinAbs(2.0 / 3.0, 1e-9));
}

TEST_CASE("budget solver round-trips random targets") {
    SplitMix64 rng(43);
    for (int trial = 0; trial < 60; ++trial) {
        int k_count = 2 + static_cast<int>(rng.below(6));
        std::vector<uint64_t> costs;
        uint64_t acc = 50 + rng.below(1000);
        for (int k = 0; k < k_count; ++k) {
            costs.push_back(acc);
            acc += 50 + rng.below(5000);
        }
        double q_true = rng.uniform(0.05, 0.999);
        double budget = expected_cost(exit_distribution(q_true, k_count), costs);
        SolveResult s = solve_q(budget, costs);
        CAPTURE(trial, k_count, q_true, budget);
        REQUIRE_FALSE(s.budget_above_range);
        REQUIRE_THAT(s.q, WithinAbs(q_true, 1e-6));
        double achieved = expected_cost(exit_distribution(s.q, k_count), costs);
        REQUIRE(std::abs(achieved - budget) <= 1e-9 * static_cast<double>(costs.back()) + 1e-12);
    }
}

TEST_CASE("budget solver boundary behaviour") {
    std::vector<uint64_t> costs{1, 3};

    REQUIRE_THROWS_AS(solve_q(0.99, costs), ConfigError); // below the cheapest exit

    SolveResult cheap = solve_q(1.0, costs); // exactly the cheapest: always exit first
    REQUIRE(cheap.q == 1.0);
    REQUIRE_FALSE(cheap.budget_above_range);

    // as q -> 0 the distribution flattens, so the reachable ceiling is mean(G)
    double ceiling = expected_cost(exit_distribution(1e-12, 2), costs);
    REQUIRE_THAT(ceiling, WithinAbs(2.0, 1e-6));
    SolveResult rich = solve_q(2.5, costs);
    REQUIRE(rich.budget_above_range);
    REQUIRE(rich.q == 1e-12);

    REQUIRE_THROWS_AS(solve_q(1.0, {}), ConfigError);
    REQUIRE_THROWS_AS(solve_q(1.0, {5, 3}), ConfigError); // non-monotone table
}

TEST_CASE("exit targets round half to even and absorb the remainder") {
    ExitModel m;
    m.n_checkpoints = 3;
    m.probs = {0.25, 0.25, 0.5};
    REQUIRE(exit_targets(m, 10) == std::vector<size_t>{2, 2, 6}); // 2.5 rounds to 2

    SplitMix64 rng(47);
    for (int trial = 0; trial < 50; ++trial) {
        int k_count = 1 + static_cast<int>(rng.below(7));
        ExitModel d = exit_distribution(rng.uniform(0.05, 1.0), k_count);
        size_t n = 1 + rng.below(2000);
        auto t = exit_targets(d, n);
        REQUIRE(std::accumulate(t.begin(), t.end(), size_t{0}) == n);
    }
}

TEST_CASE("calibration reproduces its targets exactly on distinct confidences") {
    SplitMix64 rng(53);
    const size_t n = 500, k_count = 6;
    auto conf = random_confidences(rng, n, k_count);
    ExitModel m = exit_distribution(0.45, static_cast<int>(k_count));
    auto thresholds = calibrate_thresholds(conf, m);
    REQUIRE(thresholds.back() == -std::numeric_limits<double>::infinity());
    auto counts = replay_exit_counts(conf, thresholds);
    auto targets = exit_targets(m, n);
    REQUIRE(counts == targets);
}

TEST_CASE("calibration edge thresholds") {
    SplitMix64 rng(59);
    auto conf = random_confidences(rng, 40, 2);

    SECTION("target zero pushes the threshold above every confidence") {
        ExitModel m;
        m.n_checkpoints = 2;
        m.probs = {0.0, 1.0};
        auto t = calibrate_thresholds(conf, m);
        REQUIRE(replay_exit_counts(conf, t) == std::vector<size_t>{0, 40});
        for (const auto& row : conf) REQUIRE(row[0] < t[0]);
    }
    SECTION("target everyone pulls the threshold below every confidence") {
        ExitModel m;
        m.n_checkpoints = 2;
        m.probs = {1.0, 0.0};
        auto t = calibrate_thresholds(conf, m);
        REQUIRE(replay_exit_counts(conf, t) == std::vector<size_t>{40, 0});
    }
    SECTION("a drained pool leaves infinity thresholds behind") {
        auto conf3 = random_confidences(rng, 40, 3);
        ExitModel m;
        m.n_checkpoints = 3;
        m.probs = {1.0, 0.0, 0.0};
        auto t = calibrate_thresholds(conf3, m);
        REQUIRE(t[1] == std::numeric_limits<double>::infinity());
        REQUIRE(replay_exit_counts(conf3, t) == std::vector<size_t>{40, 0, 0});
    }
    SECTION("input validation") {
        ExitModel m = exit_distribution(0.5, 8);
        auto small = random_confidences(rng, 5, 8);
        REQUIRE_THROWS_AS(calibrate_thresholds(small, m), ConfigError);
        auto ragged = random_confidences(rng, 20, 2);
        REQUIRE_THROWS_AS(calibrate_thresholds(ragged, exit_distribution(0.5, 3)), ConfigError);
    }
}

TEST_CASE("exit decisions require strictly beating the threshold") {
    ExitPolicy p;
    p.thresholds = {0.8, -std::numeric_limits<double>::infinity()};
    p.costs = {1, 2};
    Tensor at = Tensor::from_data({2}, {0.8, 0.2});
    REQUIRE_FALSE(decide_exit(at, 0, p)); // equality does not exit
    Tensor above = Tensor::from_data({2}, {0.81, 0.19});
    REQUIRE(decide_exit(above, 0, p));
    Tensor low = Tensor::from_data({2}, {0.5, 0.5});
    REQUIRE(decide_exit(low, 1, p)); // the last checkpoint always exits
    REQUIRE_THROWS_AS(decide_exit(above, 2, p), ConfigError);
}

TEST_CASE("replay counts a hand-checked table") {
    std::vector<std::vector<double>> conf{{0.9, 0.5}, {0.4, 0.8}, {0.95, 0.1}};
    std::vector<double> thresholds{0.8, -std::numeric_limits<double>::infinity()};
    REQUIRE(replay_exit_counts(conf, thresholds) == std::vector<size_t>{2, 1});
}

TEST_CASE("budget sweep keeps feasible points and reports the rest") {
    SplitMix64 rng(61);
    auto conf = random_confidences(rng, 100, 2);
    std::vector<uint64_t> costs{1, 3};
    SweepCalibration sc = sweep_budgets({0.5, 1.5, 2.5}, conf, costs);
    REQUIRE(sc.policies.size() == 2);
    REQUIRE(sc.skipped.size() == 1);
    REQUIRE(sc.skipped[0].find("below cheapest") != std::string::npos);
    REQUIRE(sc.policies[0].budget == 1.5);
    REQUIRE_THAT(sc.policies[0].q, WithinAbs(2.0 / 3.0, 1e-9));
    REQUIRE(sc.policies[1].budget == 2.5);
    REQUIRE(sc.policies[1].q == 1e-12); // clamped to the full-inference regime
}

TEST_CASE("policy files round-trip bit-exactly") {
    ExitPolicy p;
    p.thresholds = {0.123456789012345678, 1.0 / 3.0, -std::numeric_limits<double>::infinity()};
    p.costs = {1111, 2222, 987654321098765ULL};
    p.budget = 123456.789;
    p.q = 0.05718293847565123;
    p.grid_hash = 0xdeadbeefcafe1234ULL;
    p.calib_split = "val";

    TempFile tmp("test_policy_roundtrip.txt");
    save_policy(tmp.path, p);
    ExitPolicy back = load_policy(tmp.path);
    REQUIRE(back.thresholds == p.thresholds);
    REQUIRE(back.costs == p.costs);
    REQUIRE(back.budget == p.budget);
    REQUIRE(back.q == p.q);
    REQUIRE(back.grid_hash == p.grid_hash);
    REQUIRE(back.calib_split == p.calib_split);
}

TEST_CASE("policy file error handling") {
    REQUIRE_THROWS_AS(load_policy("does_not_exist.policy"), IoError);

    TempFile tmp("test_policy_badheader.txt");
    {
        std::ofstream f(tmp.path);
        f << "not a policy\n0 10 0.5\n";
    }
    REQUIRE_THROWS_AS(load_policy(tmp.path), IoError);

    TempFile tmp2("test_policy_empty.txt");
    {
        std::ofstream f(tmp2.path);
        f << "# exitgrid policy v1\nQ 1.5\n";
    }
    REQUIRE_THROWS_AS(load_policy(tmp2.path), IoError);
}
