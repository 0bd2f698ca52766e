#pragma once

// Reference computations used only by the tests. Nothing here calls into
// the structured code paths it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace emorf2::oracle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// R(I) straight from its element-wise definition.
inline Matrix dense_R(const Vector& ind, const Matrix& r_nom)
{
    const auto m = ind.size();
    Matrix r = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        r(i, i) = r_nom(i, i) / ind[i];
        for (Eigen::Index j = 0; j < m; ++j)
        {
            if (j != i && ind[i] == 1.0 && ind[j] == 1.0)
            {
                r(i, j) = r_nom(i, j);
            }
        }
    }
    return r;
}

/// (-1/2) tr(W R^-1) - (1/2) ln|R| via a pivoted LU.
inline double gaussian_terms(const Matrix& W, const Matrix& r)
{
    Eigen::FullPivLU<Matrix> lu(r);
    const double log_det = std::log(std::abs(lu.determinant()));
    return -0.5 * (W * lu.inverse()).trace() - 0.5 * log_det;
}

struct IndicatorProblem {
    Eigen::Index i = 0;
    Vector current;  // estimates of the other indicators (entry i ignored)
    Matrix W;
    Matrix r_nom;
    double a = 1.0;
    double b_hat = 1.0;
    double theta = 0.5;
};

/// The M-step objective for indicator i at value `value`, up to constants
/// shared by both branches. `value == 1` selects the point-mass branch.
inline double indicator_objective(const IndicatorProblem& p, double value)
{
    Vector ind = p.current;
    ind[p.i] = value;
    const double gauss = gaussian_terms(p.W, dense_R(ind, p.r_nom));
    if (value == 1.0)
    {
        return gauss + std::log(p.theta);
    }
    return gauss + std::log(1.0 - p.theta) + p.a * std::log(p.b_hat) - std::lgamma(p.a) +
           (p.a - 1.0) * std::log(value) - p.b_hat * value;
}

struct IndicatorOracleResult {
    bool nominal = true;
    double value = 1.0;
    /// ln(point mass) - ln(integrated Gamma-branch mass).
    double log_margin = 0.0;
    double outlier_argmax = 0.0;
};

inline double log_sum_exp(const std::vector<double>& xs)
{
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs)
    {
        mx = std::max(mx, x);
    }
    double s = 0.0;
    for (double x : xs)
    {
        s += std::exp(x - mx);
    }
    return mx + std::log(s);
}

/// Grid oracle. The point-mass branch is compared against the Gamma branch
/// integrated numerically over (0, inf) (substituting I = t^2, trapezoid in
/// t); the Gamma-branch maximizer is located by a two-stage grid search on
/// (0, 10 * guess].
inline IndicatorOracleResult solve_indicator_by_grid(const IndicatorProblem& p, int mass_points = 4000,
                                                     int coarse_points = 1000, int fine_points = 1000)
{
    const double alpha = p.a + 0.5;
    const double beta = p.b_hat + 0.5 * p.W(p.i, p.i) / p.r_nom(p.i, p.i);

    IndicatorOracleResult out;
    const double log_point = indicator_objective(p, 1.0);

    const double upper = 80.0 * alpha / beta;
    const double t_max = std::sqrt(upper);
    const double dt = t_max / mass_points;
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(mass_points));
    for (int k = 1; k <= mass_points; ++k)
    {
        const double t = k * dt;
        const double w = k == mass_points ? 0.5 : 1.0;
        terms.push_back(indicator_objective(p, t * t) + std::log(2.0 * t * dt * w));
    }
    const double log_gamma_mass = log_sum_exp(terms);
    out.log_margin = log_point - log_gamma_mass;

    // Two-stage argmax over the Gamma branch.
    const double guess = std::max(alpha - 1.0, 1e-3) / beta;
    const double hi = 10.0 * guess;
    const double step = hi / coarse_points;
    double best = step;
    double best_val = -std::numeric_limits<double>::infinity();
    for (int k = 1; k <= coarse_points; ++k)
    {
        const double v = indicator_objective(p, k * step);
        if (v > best_val)
        {
            best_val = v;
            best = k * step;
        }
    }
    const double lo2 = std::max(best - step, step * 1e-3);
    const double hi2 = best + step;
    const double step2 = (hi2 - lo2) / fine_points;
    for (int k = 0; k <= fine_points; ++k)
    {
        const double x = lo2 + k * step2;
        const double v = indicator_objective(p, x);
        if (v > best_val)
        {
            best_val = v;
            best = x;
        }
    }
    out.outlier_argmax = best;
    out.nominal = out.log_margin >= 0.0;
    out.value = out.nominal ? 1.0 : best;
    return out;
}

/// Expected log joint as a function of the outlier rate b, up to constants.
inline double rate_objective(double b, const Vector& ind, double a, double A, double B)
{
    double f = (A - 1.0) * std::log(b) - B * b;
    for (Eigen::Index i = 0; i < ind.size(); ++i)
    {
        if (ind[i] != 1.0)
        {
            f += a * std::log(b) - b * ind[i];
        }
    }
    return f;
}

/// Log-spaced grid followed by golden-section refinement in log b.
inline double maximize_rate(const Vector& ind, double a, double A, double B)
{
    const auto f = [&](double log_b) { return rate_objective(std::exp(log_b), ind, a, A, B); };
    const int n = 2000;
    const double lo = std::log(1e-8);
    const double hi = std::log(1e10);
    const double h = (hi - lo) / n;
    int best = 0;
    for (int k = 1; k <= n; ++k)
    {
        if (f(lo + k * h) > f(lo + best * h))
        {
            best = k;
        }
    }
    double x0 = lo + (best - 1) * h;
    double x3 = lo + (best + 1) * h;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = x3 - g * (x3 - x0);
    double x2 = x0 + g * (x3 - x0);
    double f1 = f(x1);
    double f2 = f(x2);
    for (int it = 0; it < 200 && x3 - x0 > 1e-14; ++it)
    {
        if (f1 > f2)
        {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - g * (x3 - x0);
            f1 = f(x1);
        }
        else
        {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + g * (x3 - x0);
            f2 = f(x2);
        }
    }
    return std::exp(0.5 * (x0 + x3));
}

/// Monte Carlo estimates of E[h], Cov[h], Cov[x, h] and E[(y-h)(y-h)^T].
struct SampledMoments {
    Vector mu;
    Matrix U;
    Matrix C;
    Matrix W;
};

inline SampledMoments sample_moments(const Vector& mean, const Matrix& cov,
                                     const std::function<Vector(const Vector&)>& h, const Vector& y, int samples,
                                     std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const Matrix L = cov.llt().matrixL();
    const auto n = mean.size();

    Vector z(n);
    const Vector h0 = h(mean);
    const auto m = h0.size();
    Vector sum_h = Vector::Zero(m);
    Matrix sum_hh = Matrix::Zero(m, m);
    Matrix sum_xh = Matrix::Zero(n, m);
    Vector sum_x = Vector::Zero(n);
    Matrix sum_rr = Matrix::Zero(m, m);
    for (int s = 0; s < samples; ++s)
    {
        for (Eigen::Index i = 0; i < n; ++i)
        {
            z[i] = normal(rng);
        }
        const Vector dx = L * z;
        const Vector hx = h(mean + dx) - h0;
        sum_x += dx;
        sum_h += hx;
        sum_hh.noalias() += hx * hx.transpose();
        sum_xh.noalias() += dx * hx.transpose();
        const Vector r = y - h0 - hx;
        sum_rr.noalias() += r * r.transpose();
    }
    const double ns = samples;
    SampledMoments out;
    const Vector mean_h = sum_h / ns;
    out.mu = h0 + mean_h;
    out.U = sum_hh / ns - mean_h * mean_h.transpose();
    out.C = sum_xh / ns - (sum_x / ns) * mean_h.transpose();
    out.W = sum_rr / ns;
    return out;
}

struct LinearGaussianModel {
    Matrix A;
    Matrix Q;
    Matrix H;
    Matrix R;
};

/// Textbook Kalman filter step.
inline void exact_kalman_step(const LinearGaussianModel& model, Vector& mean, Matrix& cov, const Vector& y)
{
    mean = model.A * mean;
    cov = model.A * cov * model.A.transpose() + model.Q;
    const Matrix S = model.H * cov * model.H.transpose() + model.R;
    const Matrix K = cov * model.H.transpose() * S.inverse();
    mean = mean + K * (y - model.H * mean);
    cov = cov - K * S * K.transpose();
}

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng, double lo = 0.5, double hi = 5.0)
{
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(lo, hi);
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        for (Eigen::Index j = 0; j < n; ++j)
        {
            g(i, j) = normal(rng);
        }
    }
    const Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ();
    Vector eig(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        eig[i] = unif(rng);
    }
    const Matrix out = q * eig.asDiagonal() * q.transpose();
    return 0.5 * (out + out.transpose());
}

} // namespace emorf2::oracle
