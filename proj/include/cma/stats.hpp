#pragma once

#include "cma/core.hpp"
#include "cma/covariates.hpp"
#include "cma/embed.hpp"

#include <string>
#include <vector>

namespace cma::stats {

struct TestResult {
    double statistic = 0.0;  // T^2, t, or R (%)
    double p_value = 1.0;
    bool ridge_applied = false;  // singular-covariance fallback was taken
};

/// Two-sample Hotelling T^2 with unpooled covariances (multivariate
/// Behrens-Fisher); p-value via Yao's F approximation. groups holds 0/1
/// labels aligned to D's columns. Each group must have at least d+2 members;
/// a singular combined covariance falls back to a scaled ridge with the
/// ridge_applied flag set.
TestResult hotelling_t2(const Eigen::MatrixXd& D, const std::vector<int>& groups);

/// OLS of y on D's rows plus intercept. statistic = R = 100*sqrt(1 -
/// SS_res/SS_tot); p from the overall F test with (d, N-d-1) dof.
TestResult multivariate_r(const Eigen::MatrixXd& D, const Eigen::VectorXd& y);

/// Welch's unequal-variance two-sample t test, two-sided.
TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

/// EF baseline for categorical covariates (Welch t).
TestResult ef_baseline_categorical(const std::vector<double>& ef, const std::vector<int>& groups);

/// EF baseline for continuous covariates: simple linear regression,
/// R = |Pearson r| * 100, p from the slope t test.
TestResult ef_baseline_continuous(const std::vector<double>& ef, const std::vector<double>& y);

/// min(1, m*p) elementwise; requires m >= ps.size() and each p in [0,1].
std::vector<double> bonferroni(const std::vector<double>& ps, int m);

struct AssociationResult {
    std::string covariate;
    bool categorical = false;
    std::string source;        // "atlas" or "ef"
    std::string method;        // embedding method for atlas rows, "ef" otherwise
    double statistic = 0.0;    // T^2 (categorical atlas), t (categorical ef), R% (continuous)
    double r_statistic = -1.0; // R% where defined (continuous only), else -1
    double raw_p = 1.0;
    double adjusted_p = 1.0;
    bool significant = false;
    bool ridge_applied = false;
    std::string error;  // non-empty if this covariate's test failed
};

/// Runs the categorical test for smoking/alcohol/hypertension and the
/// continuous test for age/BMI/BFP/BMR against both the embedding and the
/// EF baseline, applies Bonferroni within each descriptor source, and flags
/// significance at adjusted p < alpha. Per-covariate failures are recorded
/// in the result rather than aborting the batch.
std::vector<AssociationResult> associate_all(const embed::Embedding& embedding,
                                             const std::vector<double>& ef,
                                             const CovariateTable& covariates,
                                             double alpha = 0.05, int bonferroni_m = 7);

}  // namespace cma::stats
