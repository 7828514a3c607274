#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace scentree {

using Rng = std::mt19937_64;

/// Independent stream `stream` of the generator family keyed by `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

double normal_pdf(double z);
double normal_cdf(double z);
/// Inverse of the standard normal CDF; throws BetaOutOfRange outside (0, 1).
double normal_quantile(double p);

struct ConditionalGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Gaussian process over T stages of D-vectors. Mean and covariance are in
/// stage-major layout: component (t-1)*D + d is coordinate d of stage t.
class GaussianProcessModel {
public:
    GaussianProcessModel(int dim, int stages, Eigen::VectorXd mean, Eigen::MatrixXd cov);

    /// D coordinates sharing one T x T time covariance: cov = kron(C, I_D).
    static GaussianProcessModel shared_time(int dim, Eigen::VectorXd mean, const Eigen::MatrixXd& time_cov);

    int dim() const { return dim_; }
    int stages() const { return stages_; }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }

    /// Distribution of stage t given stages 1..t-1 (`history` has (t-1)*D entries).
    ConditionalGaussian conditional(int t, const Eigen::VectorXd& history) const;

    /// Joint distribution of stages t..T given stages 1..t-1.
    ConditionalGaussian joint_tail_conditional(int t, const Eigen::VectorXd& history) const;

    /// Covariance of stage t given the past; independent of the history values.
    const Eigen::MatrixXd& conditional_cov(int t) const { return cond_cov_[t - 1]; }
    /// Cholesky factor of conditional_cov(t).
    const Eigen::MatrixXd& conditional_factor(int t) const { return cond_factor_[t - 1]; }

    Eigen::VectorXd sample_path(Rng& rng) const;

    /// K_t = ||C_{t-1}^{-1} c^t|| for t = 2..T (entry 0 is K_2).
    std::vector<double> lipschitz_constants() const;

    /// ||C_head^{-1} C_head,tail|| for head = stages 1..t-1, tail = t..T.
    double joint_lipschitz_constant(int t) const;

private:
    int dim_;
    int stages_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd chol_;
    std::vector<Eigen::MatrixXd> cond_cov_;
    std::vector<Eigen::MatrixXd> cond_factor_;
    std::vector<Eigen::MatrixXd> regression_;  // stage t: D x (t-1)D matrix C_{t,head} C_head^{-1}
};

enum class ModelKind { gaussian, lognormal };

/// Gaussian or lognormal process. A lognormal process is exp of its Gaussian
/// core, elementwise; conditioning happens on the log scale.
struct ProcessModel {
    ModelKind kind = ModelKind::gaussian;
    GaussianProcessModel core;

    int dim() const { return core.dim(); }
    int stages() const { return core.stages(); }
    bool lognormal() const { return kind == ModelKind::lognormal; }

    /// Maps values from the model's scale to the Gaussian core's scale.
    Eigen::VectorXd to_core(const Eigen::VectorXd& x) const;
    Eigen::VectorXd from_core(const Eigen::VectorXd& z) const;

    /// Conditional of the core given a history on the model's scale.
    ConditionalGaussian conditional(int t, const Eigen::VectorXd& history) const {
        return core.conditional(t, to_core(history));
    }
    ConditionalGaussian joint_tail_conditional(int t, const Eigen::VectorXd& history) const {
        return core.joint_tail_conditional(t, to_core(history));
    }

    Eigen::VectorXd sample_path(Rng& rng) const { return from_core(core.sample_path(rng)); }

    std::vector<double> lipschitz_constants() const { return core.lipschitz_constants(); }
};

/// Nearest PSD matrix by eigenvalue clipping at `floor`; `clipped` reports
/// whether any eigenvalue was raised.
Eigen::MatrixXd clip_to_psd(const Eigen::MatrixXd& m, double floor, bool* clipped = nullptr);

struct RandomModelInfo {
    bool clipped = false;
};

/// Random Gaussian model with mean lambda U[0,1]^D per stage, time covariance
/// entries lambda U[0,1] (symmetric) shared across the D coordinates.
GaussianProcessModel random_uniform_model(int dim, int stages, double lambda, Rng& rng,
                                         RandomModelInfo* info = nullptr);

/// Scalar Gaussian (log-space parameters when lognormal).
struct ScalarDistribution {
    ModelKind kind = ModelKind::gaussian;
    double mu = 0.0;
    double sigma = 1.0;
};

/// Lower beta-quantile.
double var_quantile(const ScalarDistribution& d, double beta);
/// Mean of the distribution below its beta-quantile.
double avar(const ScalarDistribution& d, double beta);

}  // namespace scentree
