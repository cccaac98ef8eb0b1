#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <exception>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsnct/errors.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

struct GmmOptions {
    int max_iters = 200;
    double tolerance = 1e-7;  // relative change of the penalised log-likelihood
    double ridge = 3e-3;      // times trace(data covariance) / dim
    std::uint64_t seed = 0;
    int restarts = 5;         // seeds seed .. seed + restarts - 1; the best penalised fit wins

    bool operator==(const GmmOptions&) const = default;
};

struct GmmFit {
    RowMatrix means;                       // (K, d)
    std::vector<Eigen::MatrixXd> covariances;
    Eigen::VectorXd weights;
    std::vector<int> labels;               // hard maximum-posterior assignment
    std::vector<std::size_t> counts;       // points per label
    std::vector<double> loglik_trace;      // penalised log-likelihood after each E-step
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline GmmFit fit_gmm_once(const RowMatrix& X, std::size_t n_clusters, const GmmOptions& opt)
{
    const auto n = X.rows(), d = X.cols();
    const auto K = static_cast<Eigen::Index>(n_clusters);
    if (K < 1) throw ConfigError("gmm: need at least one cluster");
    if (n < K) throw ClusteringError("gmm: fewer points than clusters");
    if (!X.allFinite()) throw DataError("gmm: non-finite input");

    const Eigen::RowVectorXd mean_all = X.colwise().mean();
    const double total_var = (X.rowwise() - mean_all).squaredNorm() / static_cast<double>(n);
    const double ridge = opt.ridge * std::max(total_var, std::numeric_limits<double>::min()) / static_cast<double>(d) *
                         static_cast<double>(n) / static_cast<double>(K);
    const Eigen::MatrixXd psi = ridge * Eigen::MatrixXd::Identity(d, d);

    // k-means++ seeding.
    std::mt19937_64 rng(opt.seed);
    RowMatrix centers(K, d);
    std::vector<double> dist2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    centers.row(0) = X.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
    for (Eigen::Index k = 1; k < K; ++k) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            dist2[static_cast<std::size_t>(i)] = std::min(dist2[static_cast<std::size_t>(i)], (X.row(i) - centers.row(k - 1)).squaredNorm());
            total += dist2[static_cast<std::size_t>(i)];
        }
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double target = std::uniform_real_distribution<double>(0.0, total)(rng), acc = 0.0;
            for (pick = 0; pick < n - 1; ++pick) {
                acc += dist2[static_cast<std::size_t>(pick)];
                if (acc >= target) break;
            }
        }
        centers.row(k) = X.row(pick);
    }

    RowMatrix resp = RowMatrix::Zero(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        (centers.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
        resp(i, best) = 1.0;
    }

    GmmFit fit;
    fit.means.resize(K, d);
    fit.covariances.assign(static_cast<std::size_t>(K), Eigen::MatrixXd::Identity(d, d));
    fit.weights.resize(K);

    auto m_step = [&]() {
        for (Eigen::Index k = 0; k < K; ++k) {
            const double nk = resp.col(k).sum();
            if (!(nk > 1e-8 * static_cast<double>(n)))
                throw ClusteringError("gmm: component " + std::to_string(k) + " lost all support");
            fit.weights(k) = nk / static_cast<double>(n);
            const Eigen::RowVectorXd mu = (resp.col(k).transpose() * X) / nk;
            fit.means.row(k) = mu;
            const RowMatrix centered = X.rowwise() - mu;
            Eigen::MatrixXd S = centered.transpose() * resp.col(k).asDiagonal() * centered;
            fit.covariances[static_cast<std::size_t>(k)] = (S + psi) / nk;
        }
    };

    const double log2pi = std::log(2.0 * std::numbers::pi);
    auto e_step = [&]() {
        RowMatrix logp(n, K);
        double penalty = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            const Eigen::LLT<Eigen::MatrixXd> llt(fit.covariances[static_cast<std::size_t>(k)]);
            if (llt.info() != Eigen::Success) throw NumericalError("gmm: covariance lost positive definiteness");
            const Eigen::MatrixXd L = llt.matrixL();
            const double logdet = 2.0 * L.diagonal().array().log().sum();
            const double base = std::log(fit.weights(k)) - 0.5 * (static_cast<double>(d) * log2pi + logdet);
            const RowMatrix centered = X.rowwise() - fit.means.row(k);
            const Eigen::MatrixXd solved = L.triangularView<Eigen::Lower>().solve(centered.transpose());
            logp.col(k) = base - 0.5 * solved.colwise().squaredNorm().transpose().array();
            penalty += 0.5 * ridge * llt.solve(Eigen::MatrixXd::Identity(d, d)).trace();
        }
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = logp.row(i).maxCoeff();
            const double s = (logp.row(i).array() - mx).exp().sum();
            ll += mx + std::log(s);
            resp.row(i) = (logp.row(i).array() - mx).exp() / s;
        }
        return ll - penalty;
    };

    m_step();
    for (int it = 0; it < opt.max_iters; ++it) {
        const double ll = e_step();
        fit.loglik_trace.push_back(ll);
        fit.iterations = it + 1;
        if (fit.loglik_trace.size() > 1) {
            const double prev = fit.loglik_trace[fit.loglik_trace.size() - 2];
            if (std::abs(ll - prev) <= opt.tolerance * std::abs(prev)) {
                fit.converged = true;
                break;
            }
        }
        m_step();
    }

    fit.labels.resize(static_cast<std::size_t>(n));
    fit.counts.assign(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        resp.row(i).maxCoeff(&best);
        fit.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        ++fit.counts[static_cast<std::size_t>(best)];
    }
    return fit;
}

} // namespace detail

/// Full-covariance Gaussian mixture fitted by EM with k-means++ seeding.
/// Covariances carry an inverse-Wishart style ridge Psi = r I: the M-step is
/// Sigma_k = (S_k + Psi) / N_k, which keeps every update an exact ascent step
/// of log-likelihood - sum_k tr(Psi Sigma_k^-1) / 2. Restarts that lose a
/// component are skipped; if all do, the last error is rethrown.
inline GmmFit fit_gmm(const RowMatrix& X, std::size_t n_clusters, const GmmOptions& opt = {})
{
    if (opt.restarts < 1) throw ConfigError("gmm: restarts must be at least 1");
    std::optional<GmmFit> best;
    std::exception_ptr last_error;
    for (int r = 0; r < opt.restarts; ++r) {
        GmmOptions one = opt;
        one.seed = opt.seed + static_cast<std::uint64_t>(r);
        try {
            GmmFit fit = detail::fit_gmm_once(X, n_clusters, one);
            if (!best || fit.loglik_trace.back() > best->loglik_trace.back()) best = std::move(fit);
        } catch (const ClusteringError&) {
            last_error = std::current_exception();
        }
    }
    if (!best) std::rethrow_exception(last_error);
    return std::move(*best);
}

} // namespace hsnct
