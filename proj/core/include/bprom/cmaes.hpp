#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "bprom/rng.hpp"

namespace bprom {

// (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation and box
// repair by clipping. For large dimensions the covariance is kept diagonal
// (separable variant with the (d+2)/3 learning-rate correction), which is
// what prompt-sized searches use; small dimensions adapt the full matrix.
struct CmaConfig {
    int dimension = 0;
    int lambda = 0;  // 0 selects 4 + floor(3 ln d)
    double sigma0 = 0.1;
    uint64_t seed = 0;
    double lower = 0.0;
    double upper = 1.0;
    int diagonal_threshold = 100;  // full covariance strictly below this
    std::vector<double> initial_mean;  // empty = box center
};

class CmaEs {
public:
    explicit CmaEs(const CmaConfig& cfg);

    int lambda() const { return lambda_; }
    int dimension() const { return dim_; }
    long long generation() const { return generation_; }

    // Samples lambda candidates, already projected into the box.
    const std::vector<Eigen::VectorXd>& ask();

    // Ranks the candidates from the latest ask() by fitness (ascending =
    // better) and updates the search state.
    void tell(const std::vector<double>& fitnesses);

    bool has_best() const { return best_fitness_ < std::numeric_limits<double>::infinity(); }
    double best_fitness() const { return best_fitness_; }
    const Eigen::VectorXd& best_point() const { return best_point_; }
    double sigma() const { return sigma_; }

private:
    void sample_candidate(Eigen::VectorXd& z, Eigen::VectorXd& x);
    void refresh_eigen_decomposition();

    int dim_ = 0;
    int lambda_ = 0;
    int mu_ = 0;
    bool diagonal_ = true;
    double lower_ = 0.0, upper_ = 1.0;

    Eigen::VectorXd weights_;
    double mu_eff_ = 0.0;
    double c_sigma_ = 0.0, d_sigma_ = 0.0, c_c_ = 0.0, c1_ = 0.0, c_mu_ = 0.0;
    double chi_n_ = 0.0;

    Eigen::VectorXd mean_;
    double sigma_ = 0.0;
    Eigen::VectorXd path_sigma_;
    Eigen::VectorXd path_c_;
    Eigen::VectorXd diag_cov_;    // diagonal mode
    Eigen::MatrixXd cov_;         // full mode
    Eigen::MatrixXd eig_basis_;   // B
    Eigen::VectorXd eig_scale_;   // D (sqrt of eigenvalues)
    long long last_eigen_update_ = -1;

    long long generation_ = 0;
    std::vector<Eigen::VectorXd> candidates_;
    std::vector<Eigen::VectorXd> z_samples_;

    double best_fitness_ = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_point_;

    Rng rng_;
};

}  // namespace bprom
