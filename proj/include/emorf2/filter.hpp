#pragma once

#include "emorf2/errors.hpp"
#include "emorf2/gaussian.hpp"
#include "emorf2/robust_noise.hpp"
#include "emorf2/ssm.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace emorf2 {

struct FilterConfig {
    /// Values every time step starts from. theta may hold one entry, which
    /// is broadcast to all measurement dimensions.
    OutlierModelParams outlier{1.0, 1e4, 1e4, 1e3, Vector::Constant(1, 0.5)};
    double convergence_threshold = 1e-4;
    int max_em_iterations = 100;
    UkfParams ukf;

    void validate() const
    {
        if (!(convergence_threshold > 0.0) || max_em_iterations < 1)
        {
            throw DomainError("filter config: need threshold > 0 and max_em_iterations >= 1");
        }
        outlier.validate();
    }

    [[nodiscard]] OutlierModelParams outlier_params(Eigen::Index m) const
    {
        OutlierModelParams p = outlier;
        if (p.theta.size() == 1)
        {
            p.theta = Vector::Constant(m, p.theta[0]);
        }
        else if (p.theta.size() != m)
        {
            throw DomainError("filter config: theta length does not match measurement dimension");
        }
        p.validate();
        return p;
    }
};

struct StepDiagnostics {
    int em_iterations = 0;
    bool converged = false;
    IndicatorVector initial_indicators;
    IndicatorVector final_indicators;
    double final_b_hat = 0.0;
    /// Normalized change of the posterior mean, one entry per EM iteration.
    std::vector<double> convergence_history;
};

struct StepResult {
    GaussianBelief belief;
    StepDiagnostics diagnostics;
};

/// ||new - prev|| / ||prev|| < threshold, falling back to the absolute
/// norm when prev is (numerically) zero.
inline bool converged(const Vector& prev_mean, const Vector& new_mean, double threshold)
{
    const double change = (new_mean - prev_mean).norm();
    const double base = prev_mean.norm();
    return (base < 1e-12 ? change : change / base) < threshold;
}

namespace detail {

inline double relative_change(const Vector& prev_mean, const Vector& new_mean)
{
    const double change = (new_mean - prev_mean).norm();
    const double base = prev_mean.norm();
    return base < 1e-12 ? change : change / base;
}

inline void check_dims(const GaussianBelief& belief, const Vector& y, const ProcessModel& process,
                       const MeasurementModel& meas)
{
    if (belief.cov.rows() != belief.dim() || process.state_dim() != belief.dim())
    {
        throw DomainError("filter step: state dimension mismatch");
    }
    if (meas.measurement_dim() != y.size())
    {
        throw DomainError("filter step: measurement dimension mismatch");
    }
}

inline StepResult em_step(const GaussianBelief& prior_belief, const Vector& y, const ProcessModel& process,
                          const MeasurementModel& meas, const FilterConfig& cfg, bool learn_rate)
{
    cfg.validate();
    check_dims(prior_belief, y, process, meas);

    const auto m = y.size();
    const Matrix& r_nom = meas.nominal_noise_cov;

    const GaussianBelief predicted = predict(prior_belief, process, cfg.ukf);
    const MeasurementMoments mom = measurement_moments(predicted, meas, cfg.ukf);

    OutlierModelParams params = cfg.outlier_params(m);
    IndicatorVector indicators = IndicatorVector::nominal(m);

    StepResult result;
    result.diagnostics.initial_indicators = indicators;

    DecisionWorkspace workspace(m);
    Vector previous_mean = predicted.mean;
    GaussianBelief posterior = predicted;
    for (int iter = 0; iter < cfg.max_em_iterations; ++iter)
    {
        posterior = kalman_update(predicted, y, mom, build_R(indicators, r_nom));

        const Matrix W = posterior_residual_moment(posterior, meas, y, cfg.ukf);
        if (learn_rate)
        {
            params.b_hat = update_b(indicators, params);
        }
        sweep_indicators(indicators, W, r_nom, params, workspace);

        const double change = relative_change(previous_mean, posterior.mean);
        result.diagnostics.convergence_history.push_back(change);
        result.diagnostics.em_iterations = iter + 1;
        if (change < cfg.convergence_threshold)
        {
            result.diagnostics.converged = true;
            break;
        }
        previous_mean = posterior.mean;
    }

    result.belief = std::move(posterior);
    result.diagnostics.final_indicators = std::move(indicators);
    result.diagnostics.final_b_hat = params.b_hat;
    return result;
}

} // namespace detail

/// One time step of the EM outlier-robust filter: predict, then alternate
/// the Gaussian update under R(I), the rate update and the indicator sweep
/// until the posterior mean settles.
inline StepResult emorf2_step(const GaussianBelief& prior_belief, const Vector& y, const ProcessModel& process,
                              const MeasurementModel& meas, const FilterConfig& cfg)
{
    return detail::em_step(prior_belief, y, process, meas, cfg, true);
}

/// Same loop with the outlier rate held at its configured initial value.
inline StepResult frozen_b_step(const GaussianBelief& prior_belief, const Vector& y, const ProcessModel& process,
                                const MeasurementModel& meas, const FilterConfig& cfg)
{
    return detail::em_step(prior_belief, y, process, meas, cfg, false);
}

inline GaussianBelief plain_ukf_step(const GaussianBelief& prior_belief, const Vector& y,
                                     const ProcessModel& process, const MeasurementModel& meas,
                                     const FilterConfig& cfg)
{
    detail::check_dims(prior_belief, y, process, meas);
    const GaussianBelief predicted = predict(prior_belief, process, cfg.ukf);
    const MeasurementMoments mom = measurement_moments(predicted, meas, cfg.ukf);
    return kalman_update(predicted, y, mom, meas.nominal_noise_cov);
}

/// UKF that drops the measurement dimensions known to be corrupted.
inline GaussianBelief ideal_ukf_step(const GaussianBelief& prior_belief, const Vector& y,
                                     const ProcessModel& process, const MeasurementModel& meas,
                                     const std::vector<bool>& true_outlier_flags, const FilterConfig& cfg)
{
    detail::check_dims(prior_belief, y, process, meas);
    if (static_cast<Eigen::Index>(true_outlier_flags.size()) != y.size())
    {
        throw std::logic_error("ideal_ukf_step: flag vector length does not match measurement");
    }

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < y.size(); ++i)
    {
        if (!true_outlier_flags[static_cast<std::size_t>(i)])
        {
            keep.push_back(i);
        }
    }

    const GaussianBelief predicted = predict(prior_belief, process, cfg.ukf);
    if (keep.empty())
    {
        return predicted;
    }
    const MeasurementMoments full = measurement_moments(predicted, meas, cfg.ukf);

    const auto k = static_cast<Eigen::Index>(keep.size());
    MeasurementMoments sub{Vector(k), Matrix(k, k), Matrix(predicted.dim(), k)};
    Vector y_sub(k);
    Matrix r_sub(k, k);
    for (Eigen::Index p = 0; p < k; ++p)
    {
        const auto ip = keep[static_cast<std::size_t>(p)];
        sub.mu[p] = full.mu[ip];
        y_sub[p] = y[ip];
        sub.C.col(p) = full.C.col(ip);
        for (Eigen::Index q = 0; q < k; ++q)
        {
            const auto iq = keep[static_cast<std::size_t>(q)];
            sub.U(p, q) = full.U(ip, iq);
            r_sub(p, q) = meas.nominal_noise_cov(ip, iq);
        }
    }
    return kalman_update(predicted, y_sub, sub, r_sub);
}

enum class FilterKind { emorf2, frozen_b, plain_ukf, ideal_ukf };

inline constexpr std::array<FilterKind, 4> kAllFilters{FilterKind::emorf2, FilterKind::frozen_b,
                                                       FilterKind::plain_ukf, FilterKind::ideal_ukf};

inline std::string_view filter_name(FilterKind kind)
{
    switch (kind)
    {
    case FilterKind::emorf2: return "emorf2";
    case FilterKind::frozen_b: return "frozen_b";
    case FilterKind::plain_ukf: return "plain_ukf";
    case FilterKind::ideal_ukf: return "ideal_ukf";
    }
    return "unknown";
}

inline std::optional<FilterKind> parse_filter_name(std::string_view name)
{
    for (auto kind : kAllFilters)
    {
        if (filter_name(kind) == name)
        {
            return kind;
        }
    }
    return std::nullopt;
}

} // namespace emorf2
