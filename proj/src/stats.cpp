#include "scentree/stats.hpp"

#include "scentree/errors.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>

namespace scentree {

BinomialTest binomial_test(long successes, long trials, double p0, double alpha) {
    if (trials < 1 || successes < 0 || successes > trials) throw InvalidParameter("binomial_test: bad counts");
    if (!(p0 > 0.0 && p0 < 1.0)) throw InvalidParameter("binomial_test: p0 must lie in (0, 1)");
    using boost::math::binomial_distribution;
    BinomialTest r;
    r.successes = successes;
    r.trials = trials;
    const auto n = static_cast<double>(trials);
    const auto k = static_cast<double>(successes);
    r.frequency = k / n;
    r.lower = binomial_distribution<>::find_lower_bound_on_p(n, k, alpha / 2);
    r.upper = binomial_distribution<>::find_upper_bound_on_p(n, k, alpha / 2);
    const binomial_distribution<> d(n, p0);
    r.p_value = successes == 0 ? 1.0 : boost::math::cdf(boost::math::complement(d, k - 1));
    return r;
}

SignTest sign_test(const std::vector<double>& differences) {
    SignTest s;
    for (double d : differences) {
        if (d > 0) {
            ++s.positive;
        } else if (d < 0) {
            ++s.negative;
        } else {
            ++s.ties;
        }
    }
    const long n = s.positive + s.negative;
    s.p_value = n == 0 ? 1.0 : binomial_test(s.positive, n, 0.5).p_value;
    return s;
}

SampleSummary summarize(const std::vector<double>& x) {
    SampleSummary s;
    if (x.empty()) return s;
    const auto n = static_cast<double>(x.size());
    for (double v : x) s.mean += v;
    s.mean /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - s.mean) * (v - s.mean);
    s.std_dev = x.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    s.std_error = s.std_dev / std::sqrt(n);
    auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    s.min = *lo;
    s.max = *hi;
    return s;
}

std::vector<double> linear_fit(const std::vector<std::vector<double>>& columns, const std::vector<double>& y) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd a(n, static_cast<Eigen::Index>(columns.size()) + 1);
    a.col(0).setOnes();
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (static_cast<Eigen::Index>(columns[c].size()) != n) throw ShapeMismatch("linear_fit: column length");
        for (Eigen::Index i = 0; i < n; ++i) a(i, static_cast<Eigen::Index>(c) + 1) = columns[c][i];
    }
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    const Eigen::VectorXd coef = a.completeOrthogonalDecomposition().solve(b);
    return {coef.data(), coef.data() + coef.size()};
}

}  // namespace scentree
