#include "cma/stats.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace cma::stats {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("stats: " + what); }

double f_sf(double f, double df1, double df2) {
    if (!(f >= 0.0)) return 1.0;
    if (std::isinf(f)) return 0.0;
    boost::math::fisher_f dist(df1, df2);
    return boost::math::cdf(boost::math::complement(dist, f));
}

double t_sf_two_sided(double t, double df) {
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& cols) {
    const long n = cols.cols();
    const Eigen::VectorXd mean = cols.rowwise().mean();
    Eigen::MatrixXd centered = cols.colwise() - mean;
    return centered * centered.transpose() / static_cast<double>(n - 1);
}

}  // namespace

TestResult hotelling_t2(const Eigen::MatrixXd& D, const std::vector<int>& groups) {
    const long d = D.rows();
    const long N = D.cols();
    if (static_cast<long>(groups.size()) != N) fail("hotelling_t2: label length mismatch");
    std::vector<long> idx0, idx1;
    for (long i = 0; i < N; ++i) {
        if (groups[i] == 0) {
            idx0.push_back(i);
        } else if (groups[i] == 1) {
            idx1.push_back(i);
        } else {
            fail("hotelling_t2: labels must be 0/1");
        }
    }
    const long n0 = static_cast<long>(idx0.size());
    const long n1 = static_cast<long>(idx1.size());
    if (n0 < d + 2 || n1 < d + 2) {
        fail("hotelling_t2: group smaller than d+2 (d=" + std::to_string(d) + ", sizes " +
             std::to_string(n0) + "/" + std::to_string(n1) + ")");
    }

    Eigen::MatrixXd g0(d, n0), g1(d, n1);
    for (long k = 0; k < n0; ++k) g0.col(k) = D.col(idx0[k]);
    for (long k = 0; k < n1; ++k) g1.col(k) = D.col(idx1[k]);
    const Eigen::VectorXd diff = g1.rowwise().mean() - g0.rowwise().mean();
    const Eigen::MatrixXd s0 = sample_covariance(g0) / static_cast<double>(n0);
    const Eigen::MatrixXd s1 = sample_covariance(g1) / static_cast<double>(n1);
    Eigen::MatrixXd s = s0 + s1;

    TestResult result;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const double max_ev = es.eigenvalues().maxCoeff();
    if (!(max_ev > 0.0)) {
        // No variance at all: identical constant groups.
        result.statistic = 0.0;
        result.p_value = 1.0;
        return result;
    }
    if (es.eigenvalues().minCoeff() <= 1e-12 * max_ev) {
        const double ridge = 1e-8 * s.trace() / static_cast<double>(d);
        s.diagonal().array() += ridge;
        result.ridge_applied = true;
    }

    const Eigen::LLT<Eigen::MatrixXd> llt(s);
    const Eigen::VectorXd x = llt.solve(diff);
    const double t2 = diff.dot(x);
    result.statistic = t2;
    if (t2 <= 0.0) {
        result.p_value = 1.0;
        return result;
    }

    // Yao's effective degrees of freedom.
    const double q0 = x.dot(s0 * x) / t2;
    const double q1 = x.dot(s1 * x) / t2;
    double inv_nu = q0 * q0 / static_cast<double>(n0 - 1) + q1 * q1 / static_cast<double>(n1 - 1);
    double nu = inv_nu > 0.0 ? 1.0 / inv_nu : static_cast<double>(n0 + n1 - 2);
    nu = std::clamp(nu, static_cast<double>(d) + 1.0, static_cast<double>(n0 + n1 - 2));
    const double dd = static_cast<double>(d);
    const double f_stat = t2 * (nu - dd + 1.0) / (nu * dd);
    result.p_value = f_sf(f_stat, dd, nu - dd + 1.0);
    return result;
}

TestResult multivariate_r(const Eigen::MatrixXd& D, const Eigen::VectorXd& y) {
    const long d = D.rows();
    const long N = D.cols();
    if (y.size() != N) fail("multivariate_r: covariate length mismatch");
    if (!(N > d + 2)) fail("multivariate_r: need N > d + 2");
    if (!y.allFinite()) fail("multivariate_r: non-finite covariate");
    const double y_mean = y.mean();
    const double ss_tot = (y.array() - y_mean).square().sum();
    if (!(ss_tot > 0.0)) fail("multivariate_r: covariate has zero variance");

    Eigen::MatrixXd design(N, d + 1);
    design.col(0).setOnes();
    design.rightCols(d) = D.transpose();

    TestResult result;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    Eigen::VectorXd beta;
    if (qr.rank() < d + 1) {
        Eigen::MatrixXd gram = design.transpose() * design;
        gram.diagonal().array() += 1e-8 * gram.trace() / static_cast<double>(d + 1);
        beta = gram.ldlt().solve(design.transpose() * y);
        result.ridge_applied = true;
    } else {
        beta = qr.solve(y);
    }

    const double ss_res = (y - design * beta).squaredNorm();
    const double r2 = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
    result.statistic = 100.0 * std::sqrt(r2);
    const double df2 = static_cast<double>(N - d - 1);
    if (ss_res <= 1e-300 * ss_tot) {
        result.p_value = 0.0;
    } else {
        const double f_stat = ((ss_tot - ss_res) / static_cast<double>(d)) / (ss_res / df2);
        result.p_value = f_sf(f_stat, static_cast<double>(d), df2);
    }
    return result;
}

TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n1 = static_cast<double>(a.size());
    const auto n2 = static_cast<double>(b.size());
    if (a.size() < 2 || b.size() < 2) fail("welch_t: each group needs at least 2 samples");
    auto mean_var = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>{mean, var};
    };
    const auto [m1, v1] = mean_var(a);
    const auto [m2, v2] = mean_var(b);
    const double se2 = v1 / n1 + v2 / n2;
    TestResult result;
    if (se2 <= 0.0) {
        // Zero variance in both groups: equal means are a perfect null.
        result.statistic = 0.0;
        result.p_value = m1 == m2 ? 1.0 : 0.0;
        return result;
    }
    result.statistic = (m1 - m2) / std::sqrt(se2);
    const double df = se2 * se2 /
                      (v1 * v1 / (n1 * n1 * (n1 - 1.0)) + v2 * v2 / (n2 * n2 * (n2 - 1.0)));
    result.p_value = t_sf_two_sided(result.statistic, df);
    return result;
}

TestResult ef_baseline_categorical(const std::vector<double>& ef, const std::vector<int>& groups) {
    if (ef.size() != groups.size()) fail("ef_baseline_categorical: length mismatch");
    std::vector<double> a, b;
    for (std::size_t i = 0; i < ef.size(); ++i) {
        (groups[i] == 0 ? a : b).push_back(ef[i]);
    }
    return welch_t(a, b);
}

TestResult ef_baseline_continuous(const std::vector<double>& ef, const std::vector<double>& y) {
    const long n = static_cast<long>(ef.size());
    if (static_cast<long>(y.size()) != n) fail("ef_baseline_continuous: length mismatch");
    if (n < 4) fail("ef_baseline_continuous: need at least 4 subjects");
    double mx = 0.0, my = 0.0;
    for (long i = 0; i < n; ++i) {
        mx += ef[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (long i = 0; i < n; ++i) {
        sxx += (ef[i] - mx) * (ef[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (ef[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) fail("ef_baseline_continuous: zero-variance EF");
    if (!(syy > 0.0)) fail("ef_baseline_continuous: zero-variance covariate");
    const double r = sxy / std::sqrt(sxx * syy);
    TestResult result;
    result.statistic = 100.0 * std::abs(r);
    const double r2 = std::min(1.0, r * r);
    if (1.0 - r2 <= 1e-15) {
        result.p_value = 0.0;
    } else {
        const double t = r * std::sqrt((static_cast<double>(n) - 2.0) / (1.0 - r2));
        result.p_value = t_sf_two_sided(t, static_cast<double>(n) - 2.0);
    }
    return result;
}

std::vector<double> bonferroni(const std::vector<double>& ps, int m) {
    if (m < static_cast<int>(ps.size())) fail("bonferroni: m smaller than the number of tests");
    std::vector<double> out;
    out.reserve(ps.size());
    for (double p : ps) {
        if (!(p >= 0.0 && p <= 1.0)) fail("bonferroni: p outside [0,1]");
        out.push_back(std::min(1.0, static_cast<double>(m) * p));
    }
    return out;
}

std::vector<AssociationResult> associate_all(const embed::Embedding& embedding,
                                             const std::vector<double>& ef,
                                             const CovariateTable& covariates,
                                             double alpha, int bonferroni_m) {
    const long N = embedding.D.cols();
    if (static_cast<long>(ef.size()) != N || static_cast<long>(covariates.size()) != N) {
        fail("associate_all: misaligned inputs");
    }

    std::vector<AssociationResult> results;
    for (const std::string source : {"atlas", "ef"}) {
        for (const auto& name : covariate_names()) {
            AssociationResult row;
            row.covariate = name;
            row.categorical = covariate_is_categorical(name);
            row.source = source;
            row.method = source == std::string("atlas") ? embedding.method : "ef";
            try {
                if (row.categorical) {
                    std::vector<int> groups(N);
                    for (long i = 0; i < N; ++i) {
                        groups[i] =
                            static_cast<int>(covariate_value(covariates.records[i], name));
                    }
                    const TestResult t = source == std::string("atlas")
                                             ? hotelling_t2(embedding.D, groups)
                                             : ef_baseline_categorical(ef, groups);
                    row.statistic = t.statistic;
                    row.raw_p = t.p_value;
                    row.ridge_applied = t.ridge_applied;
                } else {
                    Eigen::VectorXd y(N);
                    for (long i = 0; i < N; ++i) {
                        y[i] = covariate_value(covariates.records[i], name);
                    }
                    TestResult t;
                    if (source == std::string("atlas")) {
                        t = multivariate_r(embedding.D, y);
                    } else {
                        t = ef_baseline_continuous(ef, {y.data(), y.data() + N});
                    }
                    row.statistic = t.statistic;
                    row.r_statistic = t.statistic;
                    row.raw_p = t.p_value;
                    row.ridge_applied = t.ridge_applied;
                }
                row.adjusted_p = std::min(1.0, bonferroni_m * row.raw_p);
                row.significant = row.adjusted_p < alpha;
            } catch (const std::exception& e) {
                row.error = e.what();
                row.raw_p = 1.0;
                row.adjusted_p = 1.0;
                row.significant = false;
            }
            results.push_back(std::move(row));
        }
    }
    return results;
}

}  // namespace cma::stats
