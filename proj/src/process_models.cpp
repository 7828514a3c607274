#include "scentree/process_models.hpp"

#include "scentree/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

namespace scentree {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 of (seed, stream) gives well-separated generator states.
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::seed_seq seq{mix(seed), mix(seed ^ mix(stream + 1)), mix(stream)};
    return Rng(seq);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw BetaOutOfRange("probability must lie in (0, 1)");
    }
    // Acklam's rational approximation followed by one Halley step.
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

GaussianProcessModel::GaussianProcessModel(int dim, int stages, Eigen::VectorXd mean, Eigen::MatrixXd cov)
    : dim_(dim), stages_(stages), mean_(std::move(mean)), cov_(std::move(cov)) {
    const int n = dim_ * stages_;
    if (dim_ < 1 || stages_ < 1) {
        throw ShapeMismatch("model needs at least one stage and one dimension");
    }
    if (mean_.size() != n || cov_.rows() != n || cov_.cols() != n) {
        throw ShapeMismatch("mean/covariance size must be D*T");
    }
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ShapeMismatch("covariance must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success) {
        throw SingularSubCovariance("covariance is not positive definite");
    }
    chol_ = llt.matrixL();

    for (int t = 1; t <= stages_; ++t) {
        const int h = (t - 1) * dim_;
        const Eigen::MatrixXd ctt = cov_.block(h, h, dim_, dim_);
        if (t == 1) {
            regression_.emplace_back(dim_, 0);
            cond_cov_.push_back(ctt);
        } else {
            const Eigen::MatrixXd chh = cov_.topLeftCorner(h, h);
            const Eigen::MatrixXd cht = cov_.block(0, h, h, dim_);
            Eigen::LLT<Eigen::MatrixXd> sub(chh);
            if (sub.info() != Eigen::Success) {
                throw SingularSubCovariance("history covariance is singular");
            }
            Eigen::MatrixXd r = sub.solve(cht).transpose();
            cond_cov_.push_back(ctt - r * cht);
            regression_.push_back(std::move(r));
        }
        Eigen::MatrixXd& s = cond_cov_.back();
        s = 0.5 * (s + s.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> f(s);
        if (f.info() != Eigen::Success) {
            throw SingularSubCovariance("conditional covariance is singular");
        }
        cond_factor_.emplace_back(f.matrixL());
    }
}

GaussianProcessModel GaussianProcessModel::shared_time(int dim, Eigen::VectorXd mean, const Eigen::MatrixXd& time_cov) {
    const int stages = static_cast<int>(time_cov.rows());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim * stages, dim * stages);
    for (int s = 0; s < stages; ++s) {
        for (int t = 0; t < stages; ++t) {
            for (int d = 0; d < dim; ++d) {
                cov(s * dim + d, t * dim + d) = time_cov(s, t);
            }
        }
    }
    return GaussianProcessModel(dim, stages, std::move(mean), std::move(cov));
}

ConditionalGaussian GaussianProcessModel::conditional(int t, const Eigen::VectorXd& history) const {
    if (t < 1 || t > stages_) {
        throw ShapeMismatch("stage out of range");
    }
    const int h = (t - 1) * dim_;
    if (history.size() != h) {
        throw ShapeMismatch("history must hold stages 1..t-1");
    }
    ConditionalGaussian out;
    out.mean = mean_.segment(h, dim_);
    if (h > 0) {
        out.mean += regression_[t - 1] * (history - mean_.head(h));
    }
    out.cov = cond_cov_[t - 1];
    return out;
}

ConditionalGaussian GaussianProcessModel::joint_tail_conditional(int t, const Eigen::VectorXd& history) const {
    if (t < 1 || t > stages_) {
        throw ShapeMismatch("stage out of range");
    }
    const int h = (t - 1) * dim_;
    const int n = dim_ * stages_;
    const int m = n - h;
    if (history.size() != h) {
        throw ShapeMismatch("history must hold stages 1..t-1");
    }
    ConditionalGaussian out;
    out.mean = mean_.tail(m);
    out.cov = cov_.bottomRightCorner(m, m);
    if (h > 0) {
        Eigen::LLT<Eigen::MatrixXd> sub(cov_.topLeftCorner(h, h));
        if (sub.info() != Eigen::Success) {
            throw SingularSubCovariance("history covariance is singular");
        }
        const Eigen::MatrixXd cht = cov_.topRightCorner(h, m);
        const Eigen::MatrixXd r = sub.solve(cht).transpose();
        out.mean += r * (history - mean_.head(h));
        out.cov -= r * cht;
        out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    }
    return out;
}

Eigen::VectorXd GaussianProcessModel::sample_path(Rng& rng) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = normal(rng);
    }
    return mean_ + chol_ * z;
}

std::vector<double> GaussianProcessModel::lipschitz_constants() const {
    std::vector<double> k;
    for (int t = 2; t <= stages_; ++t) {
        const Eigen::MatrixXd& r = regression_[t - 1];
        if (dim_ == 1) {
            k.push_back(r.norm());
        } else {
            k.push_back(Eigen::JacobiSVD<Eigen::MatrixXd>(r).singularValues()(0));
        }
    }
    return k;
}

double GaussianProcessModel::joint_lipschitz_constant(int t) const {
    if (t <= 1) {
        return 0.0;
    }
    const int h = (t - 1) * dim_;
    const int m = dim_ * stages_ - h;
    Eigen::LLT<Eigen::MatrixXd> sub(cov_.topLeftCorner(h, h));
    if (sub.info() != Eigen::Success) {
        throw SingularSubCovariance("history covariance is singular");
    }
    const Eigen::MatrixXd r = sub.solve(cov_.topRightCorner(h, m));
    return Eigen::JacobiSVD<Eigen::MatrixXd>(r).singularValues()(0);
}

Eigen::VectorXd ProcessModel::to_core(const Eigen::VectorXd& x) const {
    if (kind == ModelKind::gaussian) {
        return x;
    }
    if ((x.array() <= 0.0).any()) {
        throw DegenerateInput("lognormal values must be positive");
    }
    return x.array().log().matrix();
}

Eigen::VectorXd ProcessModel::from_core(const Eigen::VectorXd& z) const {
    return kind == ModelKind::gaussian ? z : Eigen::VectorXd(z.array().exp().matrix());
}

Eigen::MatrixXd clip_to_psd(const Eigen::MatrixXd& m, double floor, bool* clipped) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    bool any = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < floor) {
            ev[i] = floor;
            any = true;
        }
    }
    if (clipped) {
        *clipped = any;
    }
    if (!any) {
        return 0.5 * (m + m.transpose());
    }
    Eigen::MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

GaussianProcessModel random_uniform_model(int dim, int stages, double lambda, Rng& rng, RandomModelInfo* info) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd mean(dim * stages);
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        mean[i] = lambda * unif(rng);
    }
    Eigen::MatrixXd c(stages, stages);
    for (int s = 0; s < stages; ++s) {
        for (int t = s; t < stages; ++t) {
            c(s, t) = c(t, s) = lambda * unif(rng);
        }
    }
    bool clipped = false;
    c = clip_to_psd(c, 1e-6, &clipped);
    if (info) {
        info->clipped = clipped;
    }
    return GaussianProcessModel::shared_time(dim, std::move(mean), c);
}

double var_quantile(const ScalarDistribution& d, double beta) {
    const double z = normal_quantile(beta);
    const double q = d.mu + d.sigma * z;
    return d.kind == ModelKind::gaussian ? q : std::exp(q);
}

double avar(const ScalarDistribution& d, double beta) {
    const double z = normal_quantile(beta);
    if (d.kind == ModelKind::gaussian) {
        return d.mu - d.sigma / beta * normal_pdf(z);
    }
    return std::exp(d.mu + 0.5 * d.sigma * d.sigma) * normal_cdf(z - d.sigma) / beta;
}

}  // namespace scentree
