#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// min c'x subject to A x = b, x >= 0, with b >= 0. Two-phase dense tableau
// simplex with Bland's rule. Slow but simple; meant for small instances only.
inline double dense_lp_min(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c)
{
    const Eigen::Index m = A.rows(), n = A.cols();
    const Eigen::Index rhs = n + m;
    const double tol = 1e-11;
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, n + m + 1);
    t.leftCols(n) = A;
    t.block(0, n, m, m).setIdentity();
    t.col(rhs) = b;
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

    auto pivot = [&](Eigen::Index r, Eigen::Index j) {
        t.row(r) /= t(r, j);
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i != r && t(i, j) != 0.0) t.row(i) -= t(i, j) * t.row(r);
        }
        basis[static_cast<std::size_t>(r)] = j;
    };

    auto run = [&](const Eigen::VectorXd& cost, Eigen::Index allowed) {
        for (int iter = 0; iter < 100000; ++iter) {
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < allowed && enter < 0; ++j) {
                double d = cost(j);
                for (Eigen::Index i = 0; i < m; ++i) d -= cost(basis[static_cast<std::size_t>(i)]) * t(i, j);
                if (d < -tol) enter = j;
            }
            if (enter < 0) return;
            Eigen::Index leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < m; ++i) {
                if (t(i, enter) <= tol) continue;
                const double ratio = t(i, rhs) / t(i, enter);
                if (ratio < best - tol ||
                    (ratio <= best + tol && leave >= 0 &&
                     basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                    best = std::min(best, ratio);
                    leave = i;
                }
            }
            if (leave < 0) throw std::runtime_error("dense_lp_min: unbounded");
            pivot(leave, enter);
        }
        throw std::runtime_error("dense_lp_min: iteration limit");
    };

    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
    phase1.tail(m).setOnes();
    run(phase1, n + m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (basis[static_cast<std::size_t>(i)] < n) continue;
        if (t(i, rhs) > 1e-9) throw std::runtime_error("dense_lp_min: infeasible");
        for (Eigen::Index j = 0; j < n; ++j) {
            if (std::abs(t(i, j)) > 1e-9) {
                pivot(i, j);
                break;
            }
        }
    }
    Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n + m);
    phase2.head(n) = c;
    run(phase2, n);
    double value = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) value += phase2(basis[static_cast<std::size_t>(i)]) * t(i, rhs);
    return value;
}

// Transportation problem as an explicit LP over all m*n routes. The last
// column-sum constraint is implied by the others and dropped.
inline double transport_lp(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand, const Eigen::MatrixXd& cost)
{
    const Eigen::Index m = supply.size(), n = demand.size();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + n - 1, m * n);
    Eigen::VectorXd b(m + n - 1);
    Eigen::VectorXd c(m * n);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index v = i * n + j;
            c(v) = cost(i, j);
            A(i, v) = 1.0;
            if (j < n - 1) A(m + j, v) = 1.0;
        }
    }
    b.head(m) = supply;
    b.tail(n - 1) = demand.head(n - 1);
    return dense_lp_min(A, b, c);
}

}  // namespace oracle
