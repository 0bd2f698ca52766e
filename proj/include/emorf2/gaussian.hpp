#pragma once

#include "emorf2/errors.hpp"
#include "emorf2/ssm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace emorf2 {

/// Gaussian density N(mean, cov) over the state.
struct GaussianBelief {
    Vector mean;
    Matrix cov;

    [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

struct UkfParams {
    double alpha = 1.0;
    double beta = 2.0;
    double kappa = 0.0;
};

struct SigmaPointSet {
    std::vector<Vector> points;
    Vector mean_weights;
    Vector cov_weights;
    UkfParams params;
};

/// mu = E[h(x)], U = Cov[h(x)], C = Cov[x, h(x)] under the predictive
/// belief. No measurement noise is included in U.
struct MeasurementMoments {
    Vector mu;
    Matrix U;
    Matrix C;
};

inline Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

/// Lower Cholesky factor of a symmetric matrix. On failure, retries with
/// diagonal jitter 1e-12*trace, then 100x and 10000x that.
inline Matrix robust_cholesky(const Matrix& a)
{
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite())
    {
        return llt.matrixL();
    }
    const double trace = a.trace();
    double jitter = 1e-12 * std::abs(trace);
    for (int attempt = 0; attempt < 3 && jitter > 0.0 && std::isfinite(jitter); ++attempt, jitter *= 100.0)
    {
        llt.compute(a + jitter * Matrix::Identity(a.rows(), a.cols()));
        if (llt.info() == Eigen::Success)
        {
            return llt.matrixL();
        }
    }
    throw NumericalError("cholesky: covariance is not positive definite (trace " +
                         std::to_string(trace) + ")");
}

inline SigmaPointSet sigma_points(const GaussianBelief& belief, const UkfParams& params = {})
{
    const auto n = belief.dim();
    if (n == 0 || belief.cov.rows() != n || belief.cov.cols() != n)
    {
        throw DomainError("sigma_points: mean/covariance dimension mismatch");
    }
    if (!belief.mean.allFinite() || !belief.cov.allFinite())
    {
        throw NumericalError("sigma_points: non-finite belief");
    }

    const double nd = static_cast<double>(n);
    const double lambda = params.alpha * params.alpha * (nd + params.kappa) - nd;
    const double scale = nd + lambda;
    if (!(scale > 0.0))
    {
        throw DomainError("sigma_points: n + lambda must be positive");
    }

    const Matrix root = robust_cholesky(scale * belief.cov);

    SigmaPointSet set;
    set.params = params;
    set.points.reserve(static_cast<std::size_t>(2 * n + 1));
    set.points.push_back(belief.mean);
    for (Eigen::Index j = 0; j < n; ++j)
    {
        set.points.push_back(belief.mean + root.col(j));
    }
    for (Eigen::Index j = 0; j < n; ++j)
    {
        set.points.push_back(belief.mean - root.col(j));
    }

    set.mean_weights = Vector::Constant(2 * n + 1, 0.5 / scale);
    set.cov_weights = set.mean_weights;
    set.mean_weights[0] = lambda / scale;
    set.cov_weights[0] = lambda / scale + (1.0 - params.alpha * params.alpha + params.beta);
    return set;
}

namespace detail {

template <typename F>
std::vector<Vector> propagate(const SigmaPointSet& set, const F& fn, const char* what)
{
    std::vector<Vector> out;
    out.reserve(set.points.size());
    for (const auto& p : set.points)
    {
        out.push_back(fn(p));
        if (!out.back().allFinite())
        {
            throw NumericalError(std::string(what) + ": non-finite propagated sigma point");
        }
    }
    return out;
}

inline Vector weighted_mean(const std::vector<Vector>& pts, const Vector& weights)
{
    Vector mean = Vector::Zero(pts.front().size());
    for (std::size_t j = 0; j < pts.size(); ++j)
    {
        mean += weights[static_cast<Eigen::Index>(j)] * pts[j];
    }
    return mean;
}

} // namespace detail

/// Predictive moments of f(x) + q under the current belief.
inline GaussianBelief predict(const GaussianBelief& belief, const ProcessModel& model, const UkfParams& params = {})
{
    const auto set = sigma_points(belief, params);
    const auto fx = detail::propagate(set, model.transition, "predict");
    const Vector mean = detail::weighted_mean(fx, set.mean_weights);

    Matrix cov = model.process_noise_cov;
    for (std::size_t j = 0; j < fx.size(); ++j)
    {
        const Vector d = fx[j] - mean;
        cov.noalias() += set.cov_weights[static_cast<Eigen::Index>(j)] * d * d.transpose();
    }
    return {mean, symmetrize(cov)};
}

inline MeasurementMoments measurement_moments(const GaussianBelief& belief, const MeasurementModel& model,
                                              const UkfParams& params = {})
{
    const auto set = sigma_points(belief, params);
    const auto hx = detail::propagate(set, model.observation, "measurement_moments");

    MeasurementMoments mom;
    mom.mu = detail::weighted_mean(hx, set.mean_weights);
    const auto m = mom.mu.size();
    mom.U = Matrix::Zero(m, m);
    mom.C = Matrix::Zero(belief.dim(), m);
    for (std::size_t j = 0; j < hx.size(); ++j)
    {
        const double w = set.cov_weights[static_cast<Eigen::Index>(j)];
        const Vector dy = hx[j] - mom.mu;
        mom.U.noalias() += w * dy * dy.transpose();
        mom.C.noalias() += w * (set.points[j] - belief.mean) * dy.transpose();
    }
    mom.U = symmetrize(mom.U);
    return mom;
}

/// Gaussian update with gain K = C (U + R_eff)^-1. The innovation
/// covariance is factorized, never inverted explicitly.
inline GaussianBelief kalman_update(const GaussianBelief& belief, const Vector& y, const MeasurementMoments& mom,
                                    const Matrix& r_eff)
{
    const Matrix s = symmetrize(mom.U + r_eff);
    Eigen::LDLT<Matrix> ldlt(s);
    const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (ldlt.info() != Eigen::Success || !(rcond > 1e-15) || !ldlt.isPositive())
    {
        std::ostringstream msg;
        msg << "kalman_update: singular innovation covariance (reciprocal condition number " << rcond << ")";
        throw NumericalError(msg.str());
    }
    // K^T = S^-1 C^T
    const Matrix gain_t = ldlt.solve(mom.C.transpose());

    GaussianBelief post;
    post.mean = belief.mean + gain_t.transpose() * (y - mom.mu);
    post.cov = symmetrize(belief.cov - mom.C * gain_t);
    if (!post.mean.allFinite() || !post.cov.allFinite())
    {
        throw NumericalError("kalman_update: non-finite posterior");
    }
    return post;
}

/// W = E[(y - h(x))(y - h(x))^T] under the given belief.
inline Matrix posterior_residual_moment(const GaussianBelief& belief, const MeasurementModel& model, const Vector& y,
                                        const UkfParams& params = {})
{
    const auto set = sigma_points(belief, params);
    const auto hx = detail::propagate(set, model.observation, "posterior_residual_moment");

    // (y - mu)(y - mu)^T plus the unscented covariance of h(x).
    const Vector mu = detail::weighted_mean(hx, set.mean_weights);
    const Vector e = y - mu;
    Matrix w = e * e.transpose();
    for (std::size_t j = 0; j < hx.size(); ++j)
    {
        const Vector d = hx[j] - mu;
        w.noalias() += set.cov_weights[static_cast<Eigen::Index>(j)] * d * d.transpose();
    }
    return symmetrize(w);
}

} // namespace emorf2
