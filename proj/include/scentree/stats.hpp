#pragma once

#include <vector>

namespace scentree {

/// One-sided exact binomial test of H0: p <= p0 against p > p0, with a
/// two-sided Clopper-Pearson interval at level 1 - alpha.
struct BinomialTest {
    long successes = 0;
    long trials = 0;
    double frequency = 0.0;
    double lower = 0.0;
    double upper = 1.0;
    /// P(X >= successes | p0).
    double p_value = 1.0;
};

BinomialTest binomial_test(long successes, long trials, double p0, double alpha = 0.05);

/// One-sided sign test of H0: median difference <= 0. Zero differences are dropped.
struct SignTest {
    long positive = 0;
    long negative = 0;
    long ties = 0;
    double p_value = 1.0;
};

SignTest sign_test(const std::vector<double>& differences);

struct SampleSummary {
    double mean = 0.0;
    double std_dev = 0.0;
    double std_error = 0.0;
    double min = 0.0;
    double max = 0.0;
};

SampleSummary summarize(const std::vector<double>& x);

/// Least-squares coefficients of y on [1, columns...]; entry 0 is the intercept.
std::vector<double> linear_fit(const std::vector<std::vector<double>>& columns, const std::vector<double>& y);

}  // namespace scentree
