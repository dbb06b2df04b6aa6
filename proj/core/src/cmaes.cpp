#include "bprom/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "bprom/common.hpp"

namespace bprom {

CmaEs::CmaEs(const CmaConfig& cfg) : rng_(cfg.seed) {
    dim_ = cfg.dimension;
    if (dim_ <= 0) throw Error(ErrorCategory::Config, "cmaes: dimension must be positive");
    if (!(cfg.sigma0 > 0.0)) throw Error(ErrorCategory::Config, "cmaes: sigma0 must be positive");
    if (cfg.upper <= cfg.lower) throw Error(ErrorCategory::Config, "cmaes: empty box");

    lambda_ = cfg.lambda > 0 ? cfg.lambda
                             : 4 + static_cast<int>(std::floor(3.0 * std::log(dim_)));
    if (lambda_ < 2) throw Error(ErrorCategory::Config, "cmaes: lambda must be >= 2");
    mu_ = lambda_ / 2;
    diagonal_ = dim_ >= cfg.diagonal_threshold;
    lower_ = cfg.lower;
    upper_ = cfg.upper;

    weights_.resize(mu_);
    for (int i = 0; i < mu_; ++i) {
        weights_(i) = std::log((lambda_ + 1) / 2.0) - std::log(i + 1.0);
    }
    weights_ /= weights_.sum();
    mu_eff_ = 1.0 / weights_.squaredNorm();

    const double d = dim_;
    c_sigma_ = (mu_eff_ + 2.0) / (d + mu_eff_ + 5.0);
    d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (d + 1.0)) - 1.0) + c_sigma_;
    c_c_ = (4.0 + mu_eff_ / d) / (d + 4.0 + 2.0 * mu_eff_ / d);
    c1_ = 2.0 / ((d + 1.3) * (d + 1.3) + mu_eff_);
    c_mu_ = std::min(1.0 - c1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                    ((d + 2.0) * (d + 2.0) + mu_eff_));
    if (diagonal_) {
        // Separable variant: faster learning on the diagonal.
        const double boost = (d + 2.0) / 3.0;
        c1_ = std::min(1.0, c1_ * boost);
        c_mu_ = std::min(1.0 - c1_, c_mu_ * boost);
    }
    chi_n_ = std::sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d));

    if (cfg.initial_mean.empty()) {
        mean_ = Eigen::VectorXd::Constant(dim_, 0.5 * (lower_ + upper_));
    } else {
        if (static_cast<int>(cfg.initial_mean.size()) != dim_) {
            throw Error(ErrorCategory::Config, "cmaes: initial mean has wrong dimension");
        }
        mean_ = Eigen::Map<const Eigen::VectorXd>(cfg.initial_mean.data(), dim_);
    }
    sigma_ = cfg.sigma0;
    path_sigma_ = Eigen::VectorXd::Zero(dim_);
    path_c_ = Eigen::VectorXd::Zero(dim_);
    if (diagonal_) {
        diag_cov_ = Eigen::VectorXd::Ones(dim_);
    } else {
        cov_ = Eigen::MatrixXd::Identity(dim_, dim_);
        eig_basis_ = Eigen::MatrixXd::Identity(dim_, dim_);
        eig_scale_ = Eigen::VectorXd::Ones(dim_);
        last_eigen_update_ = 0;
    }
    best_point_ = mean_;
}

void CmaEs::refresh_eigen_decomposition() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov_);
    eig_basis_ = solver.eigenvectors();
    eig_scale_ = solver.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    last_eigen_update_ = generation_;
}

void CmaEs::sample_candidate(Eigen::VectorXd& z, Eigen::VectorXd& x) {
    for (int i = 0; i < dim_; ++i) z(i) = rng_.normal();
    if (diagonal_) {
        x = mean_ + sigma_ * diag_cov_.cwiseSqrt().cwiseProduct(z);
    } else {
        x = mean_ + sigma_ * (eig_basis_ * eig_scale_.cwiseProduct(z));
    }
    x = x.cwiseMax(lower_).cwiseMin(upper_);
}

const std::vector<Eigen::VectorXd>& CmaEs::ask() {
    if (!diagonal_) {
        const double gap = 1.0 / (10.0 * dim_ * (c1_ + c_mu_));
        if (generation_ - last_eigen_update_ >= std::max<long long>(1, static_cast<long long>(gap))) {
            refresh_eigen_decomposition();
        }
    }
    candidates_.assign(lambda_, Eigen::VectorXd(dim_));
    z_samples_.assign(lambda_, Eigen::VectorXd(dim_));
    for (int i = 0; i < lambda_; ++i) {
        sample_candidate(z_samples_[i], candidates_[i]);
    }
    return candidates_;
}

void CmaEs::tell(const std::vector<double>& fitnesses) {
    if (fitnesses.size() != candidates_.size() || candidates_.empty()) {
        throw Error(ErrorCategory::Internal, "cmaes: tell() without matching ask()");
    }
    std::vector<int> order(lambda_);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fitnesses[a] < fitnesses[b]; });

    if (fitnesses[order[0]] < best_fitness_) {
        best_fitness_ = fitnesses[order[0]];
        best_point_ = candidates_[order[0]];
    }

    // Recombine in y-space from the repaired candidates.
    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(dim_);
    std::vector<Eigen::VectorXd> ys(mu_);
    for (int i = 0; i < mu_; ++i) {
        ys[i] = (candidates_[order[i]] - mean_) / sigma_;
        y_w += weights_(i) * ys[i];
    }
    mean_ += sigma_ * y_w;

    Eigen::VectorXd c_inv_sqrt_yw;
    if (diagonal_) {
        c_inv_sqrt_yw = y_w.cwiseQuotient(diag_cov_.cwiseSqrt().cwiseMax(1e-20));
    } else {
        c_inv_sqrt_yw =
            eig_basis_ *
            (eig_basis_.transpose() * y_w).cwiseQuotient(eig_scale_.cwiseMax(1e-20));
    }
    path_sigma_ = (1.0 - c_sigma_) * path_sigma_ +
                  std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_sqrt_yw;

    const double ps_norm = path_sigma_.norm();
    const double denom =
        std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * static_cast<double>(generation_ + 1)));
    const bool h_sigma = ps_norm / denom < (1.4 + 2.0 / (dim_ + 1.0)) * chi_n_;

    path_c_ = (1.0 - c_c_) * path_c_;
    if (h_sigma) {
        path_c_ += std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) * y_w;
    }
    const double delta_h = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);

    if (diagonal_) {
        Eigen::VectorXd rank_mu = Eigen::VectorXd::Zero(dim_);
        for (int i = 0; i < mu_; ++i) {
            rank_mu += weights_(i) * ys[i].cwiseProduct(ys[i]);
        }
        diag_cov_ = (1.0 - c1_ - c_mu_) * diag_cov_ +
                    c1_ * (path_c_.cwiseProduct(path_c_) + delta_h * diag_cov_) +
                    c_mu_ * rank_mu;
        diag_cov_ = diag_cov_.cwiseMax(1e-20);
    } else {
        Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(dim_, dim_);
        for (int i = 0; i < mu_; ++i) {
            rank_mu += weights_(i) * (ys[i] * ys[i].transpose());
        }
        cov_ = (1.0 - c1_ - c_mu_) * cov_ +
               c1_ * (path_c_ * path_c_.transpose() + delta_h * cov_) + c_mu_ * rank_mu;
    }

    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
    sigma_ = std::min(sigma_, 1e6);

    ++generation_;
    candidates_.clear();
    z_samples_.clear();
}

}  // namespace bprom
