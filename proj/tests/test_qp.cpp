#include <catch2/catch_amalgamated.hpp>

#include "cbfmpc/qp.hpp"
#include "test_support.hpp"

using namespace cbfmpc;
using testsupport::solve_qp_bruteforce;

TEST_CASE("one-dimensional bound becomes active with unit multiplier") {
    // min (u-1)^2 s.t. u <= 0.5, written as -u >= -0.5.
    MatrixXd G(1, 1), A(1, 1);
    G << 2;
    A << -1;
    VectorXd g(1), b(1);
    g << -2;
    b << -0.5;
    auto res = solve_qp(G, g, A, b);
    REQUIRE(res.status == QpStatus::Optimal);
    CHECK(res.x(0) == Catch::Approx(0.5));
    CHECK(res.lambda(0) == Catch::Approx(1.0));
}

TEST_CASE("paired inequalities emulate an equality") {
    // min u1^2 + u2^2 s.t. u1 + u2 = 1.
    MatrixXd G = 2.0 * MatrixXd::Identity(2, 2);
    VectorXd g = VectorXd::Zero(2);
    MatrixXd A(2, 2);
    A << 1, 1, -1, -1;
    VectorXd b(2);
    b << 1, -1;
    auto res = solve_qp(G, g, A, b);
    REQUIRE(res.status == QpStatus::Optimal);
    CHECK(res.x(0) == Catch::Approx(0.5));
    CHECK(res.x(1) == Catch::Approx(0.5));
}

TEST_CASE("contradictory bounds are reported infeasible") {
    // u >= 1 and u <= 0.
    MatrixXd G(1, 1), A(2, 1);
    G << 1;
    A << 1, -1;
    VectorXd g = VectorXd::Zero(1), b(2);
    b << 1, 0;
    CHECK(solve_qp(G, g, A, b).status == QpStatus::Infeasible);
}

TEST_CASE("constant violated row (zero normal) is infeasible") {
    MatrixXd G = MatrixXd::Identity(2, 2);
    VectorXd g = VectorXd::Zero(2);
    MatrixXd A = MatrixXd::Zero(1, 2);
    VectorXd b(1);
    b << 0.3;
    CHECK(solve_qp(G, g, A, b).status == QpStatus::Infeasible);
}

TEST_CASE("random QPs match brute-force active-set enumeration") {
    testsupport::Rng rng(101);
    int solved = 0;
    for (int trial = 0; trial < 400; ++trial) {
        int n = 2 + rng.uniform_int(5);  // 2..6
        int m = 1 + rng.uniform_int(8);  // 1..8
        MatrixXd B(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) B(i, j) = rng.uniform(-1, 1);
        MatrixXd G = B * B.transpose() + 0.3 * MatrixXd::Identity(n, n);
        VectorXd g(n);
        for (int i = 0; i < n; ++i) g(i) = rng.uniform(-2, 2);
        MatrixXd A(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1, 1);
        // Anchor feasibility at a random interior point.
        VectorXd x_feas(n);
        for (int i = 0; i < n; ++i) x_feas(i) = rng.uniform(-1, 1);
        VectorXd b = A * x_feas;
        for (int i = 0; i < m; ++i) b(i) -= rng.uniform(0.0, 1.5);

        auto res = solve_qp(G, g, A, b);
        auto ref = solve_qp_bruteforce(G, g, A, b);
        REQUIRE(res.status == QpStatus::Optimal);
        REQUIRE(ref.found);
        REQUIRE((res.x - ref.x).lpNorm<Eigen::Infinity>() < 1e-8);
        REQUIRE((res.lambda - ref.lambda).lpNorm<Eigen::Infinity>() < 1e-8);
        // Exact active-set agreement on strictly complementary rows.
        for (int i = 0; i < m; ++i) {
            bool ours = res.lambda(i) > 1e-10;
            bool theirs = ref.lambda(i) > 1e-10;
            if (res.lambda(i) > 1e-8 || ref.lambda(i) > 1e-8) REQUIRE(ours == theirs);
        }
        ++solved;
    }
    CHECK(solved == 400);
}

TEST_CASE("known-infeasible random systems are detected") {
    testsupport::Rng rng(103);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 2 + rng.uniform_int(4);
        MatrixXd G = MatrixXd::Identity(n, n);
        VectorXd g = VectorXd::Zero(n);
        VectorXd a(n);
        for (int i = 0; i < n; ++i) a(i) = rng.uniform(-1, 1);
        if (a.norm() < 0.1) a(0) = 1.0;
        MatrixXd A(2, n);
        A.row(0) = a.transpose();
        A.row(1) = -a.transpose();
        VectorXd b(2);
        b << 1.0, 0.0;  // a'x >= 1 and a'x <= 0
        CHECK(solve_qp(G, g, A, b).status == QpStatus::Infeasible);
    }
}

TEST_CASE("solver is deterministic") {
    testsupport::Rng rng(107);
    MatrixXd B(4, 4);
    for (int i = 0; i < 16; ++i) B(i / 4, i % 4) = rng.uniform(-1, 1);
    MatrixXd G = B * B.transpose() + MatrixXd::Identity(4, 4);
    VectorXd g = VectorXd::Ones(4);
    MatrixXd A(6, 4);
    for (int i = 0; i < 24; ++i) A(i / 4, i % 4) = rng.uniform(-1, 1);
    VectorXd b = VectorXd::Constant(6, -0.5);
    auto r1 = solve_qp(G, g, A, b);
    auto r2 = solve_qp(G, g, A, b);
    REQUIRE(r1.status == r2.status);
    CHECK(r1.x == r2.x);
    CHECK(r1.lambda == r2.lambda);
    CHECK(r1.iterations == r2.iterations);
}
