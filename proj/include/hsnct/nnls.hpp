#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hsnct/errors.hpp"

namespace hsnct {

/// Lawson-Hanson active set NNLS in normal-equation form:
///   min_{z >= 0} z^T G z / 2 - c^T z,
/// i.e. min ||b - A z||^2 with G = A^T A, c = A^T b. G must be positive definite.
inline Eigen::VectorXd nnls_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, int max_iters = 0)
{
    const auto n = G.rows();
    if (G.cols() != n || c.size() != n) throw ShapeError("nnls: Gram matrix and right-hand side disagree");
    if (max_iters <= 0) max_iters = static_cast<int>(30 * n + 30);
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, G.cwiseAbs().maxCoeff()) *
                       static_cast<double>(n) * std::max(1.0, c.cwiseAbs().maxCoeff());

    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);

    auto solve_passive = [&]() {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < n; ++i)
            if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
        const auto m = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd gp(m, m);
        Eigen::VectorXd cp(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            cp(a) = c(idx[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < m; ++b) gp(a, b) = G(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        }
        const Eigen::VectorXd sp = gp.ldlt().solve(cp);
        Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
        for (Eigen::Index a = 0; a < m; ++a) s(idx[static_cast<std::size_t>(a)]) = sp(a);
        return s;
    };

    for (int outer = 0; outer < max_iters; ++outer) {
        const Eigen::VectorXd w = c - G * z;
        Eigen::Index best = -1;
        double best_w = tol;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!passive[static_cast<std::size_t>(i)] && w(i) > best_w) {
                best_w = w(i);
                best = i;
            }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;

        for (int inner = 0; inner < max_iters; ++inner) {
            const Eigen::VectorXd s = solve_passive();
            double alpha = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < n; ++i)
                if (passive[static_cast<std::size_t>(i)] && s(i) <= 0.0) alpha = std::min(alpha, z(i) / (z(i) - s(i)));
            if (!std::isfinite(alpha)) {
                z = s;
                break;
            }
            z += alpha * (s - z);
            for (Eigen::Index i = 0; i < n; ++i)
                if (passive[static_cast<std::size_t>(i)] && z(i) <= tol * 1e-3) {
                    passive[static_cast<std::size_t>(i)] = false;
                    z(i) = 0.0;
                }
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) z(i) = std::max(0.0, z(i));
    return z;
}

/// min_{z >= 0} ||b - A z||^2.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
{
    if (A.rows() != b.size()) throw ShapeError("nnls: A and b disagree");
    return nnls_gram(A.transpose() * A, A.transpose() * b);
}

} // namespace hsnct
