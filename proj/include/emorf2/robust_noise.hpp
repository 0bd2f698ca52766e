#pragma once

#include "emorf2/errors.hpp"
#include "emorf2/ssm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace emorf2 {

/// Per-dimension outlier indicators. Exactly 1.0 marks a nominal
/// dimension; any other positive value scales that dimension's variance by
/// 1/I and decouples it from the others.
struct IndicatorVector {
    Vector values;

    static IndicatorVector nominal(Eigen::Index m) { return {Vector::Ones(m)}; }

    [[nodiscard]] Eigen::Index size() const { return values.size(); }
    [[nodiscard]] bool is_nominal(Eigen::Index i) const { return values[i] == 1.0; }

    [[nodiscard]] Eigen::Index outlier_count() const
    {
        Eigen::Index count = 0;
        for (Eigen::Index i = 0; i < size(); ++i)
        {
            count += is_nominal(i) ? 0 : 1;
        }
        return count;
    }

    void validate() const
    {
        for (Eigen::Index i = 0; i < size(); ++i)
        {
            if (!(values[i] > 0.0) || !std::isfinite(values[i]))
            {
                throw DomainError("indicator " + std::to_string(i) + " must be positive and finite");
            }
        }
    }
};

/// Hyperparameters of the outlier model plus the current rate estimate.
/// Indicators on the outlier branch follow Gamma(a, b_hat); the rate has a
/// Gamma(A, B) prior; theta[i] is the prior probability that dimension i is
/// outlier free.
struct OutlierModelParams {
    double a = 1.0;
    double b_hat = 1e4;
    double A = 1e4;
    double B = 1e3;
    Vector theta;

    static OutlierModelParams with_uniform_theta(Eigen::Index m, double theta, double a = 1.0, double b_hat = 1e4,
                                                 double A = 1e4, double B = 1e3)
    {
        return {a, b_hat, A, B, Vector::Constant(m, theta)};
    }

    void validate() const
    {
        // a > 0.5 keeps the outlier-branch value (a - 0.5)/beta positive.
        if (!(a > 0.5))
        {
            throw DomainError("outlier params: shape a must exceed 0.5");
        }
        if (!(A > 1.0) || !(B > 0.0) || !(b_hat > 0.0))
        {
            throw DomainError("outlier params: need A > 1, B > 0, b_hat > 0");
        }
        for (Eigen::Index i = 0; i < theta.size(); ++i)
        {
            if (!(theta[i] > 0.0 && theta[i] < 1.0))
            {
                throw DomainError("outlier params: theta must lie in (0, 1)");
            }
        }
    }
};

/// ln Gamma(x) for x > 0.
inline double log_gamma(double x)
{
    if (!(x > 0.0) || !std::isfinite(x))
    {
        throw DomainError("log_gamma: argument must be positive and finite");
    }
#if defined(__GLIBC__) || defined(__APPLE__)
    int sign = 0;
    return ::lgamma_r(x, &sign);
#else
    return std::lgamma(x);
#endif
}

namespace detail {

inline void check_square(const Matrix& m, Eigen::Index size, const char* what)
{
    if (m.rows() != size || m.cols() != size)
    {
        throw DomainError(std::string(what) + ": dimension mismatch");
    }
}

} // namespace detail

/// R(I): diagonal R_nom(i,i)/I_i; off-diagonal R_nom(i,j) only when both
/// dimensions are nominal, zero otherwise.
inline Matrix build_R(const IndicatorVector& indicators, const Matrix& r_nom)
{
    const auto m = indicators.size();
    detail::check_square(r_nom, m, "build_R");
    indicators.validate();

    Matrix r(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        for (Eigen::Index j = 0; j < m; ++j)
        {
            if (i == j)
            {
                r(i, i) = r_nom(i, i) / indicators.values[i];
            }
            else
            {
                r(i, j) = indicators.is_nominal(i) && indicators.is_nominal(j) ? r_nom(i, j) : 0.0;
            }
        }
    }
    return r;
}

struct StructuredInverse {
    Matrix inverse;
    double log_det = 0.0;
};

/// Inverse and log-determinant of build_R(indicators, r_nom). Outlier
/// dimensions are decoupled scalars; only the nominal block is factorized.
inline StructuredInverse invert_R(const IndicatorVector& indicators, const Matrix& r_nom)
{
    const auto m = indicators.size();
    detail::check_square(r_nom, m, "invert_R");
    indicators.validate();

    StructuredInverse out;
    out.inverse = Matrix::Zero(m, m);

    std::vector<Eigen::Index> nominal;
    nominal.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i)
    {
        if (indicators.is_nominal(i))
        {
            nominal.push_back(i);
            continue;
        }
        const double variance = r_nom(i, i) / indicators.values[i];
        if (!(variance > 0.0))
        {
            throw NumericalError("invert_R: non-positive variance in dimension " + std::to_string(i));
        }
        out.inverse(i, i) = 1.0 / variance;
        out.log_det += std::log(variance);
    }

    if (nominal.empty())
    {
        return out;
    }

    const auto k = static_cast<Eigen::Index>(nominal.size());
    Matrix block(k, k);
    for (Eigen::Index p = 0; p < k; ++p)
    {
        for (Eigen::Index q = 0; q < k; ++q)
        {
            block(p, q) = r_nom(nominal[static_cast<std::size_t>(p)], nominal[static_cast<std::size_t>(q)]);
        }
    }
    Eigen::LLT<Matrix> llt(block);
    if (llt.info() != Eigen::Success)
    {
        throw NumericalError("invert_R: nominal block is not positive definite");
    }
    const Matrix block_inv = llt.solve(Matrix::Identity(k, k));
    const auto diag = llt.matrixLLT().diagonal();
    for (Eigen::Index p = 0; p < k; ++p)
    {
        out.log_det += 2.0 * std::log(diag[p]);
        for (Eigen::Index q = 0; q < k; ++q)
        {
            out.inverse(nominal[static_cast<std::size_t>(p)], nominal[static_cast<std::size_t>(q)]) = block_inv(p, q);
        }
    }
    return out;
}

/// Log-domain pieces of the nominal-versus-outlier comparison for one
/// dimension. decision() applies the rule.
struct IndicatorDecisionTerms {
    double log_h = 0.0;
    double log_g = 0.0;
    double alpha = 0.0;
    double beta = 0.0;

    [[nodiscard]] double outlier_value() const { return (alpha - 1.0) / beta; }
    [[nodiscard]] bool nominal() const { return log_h - log_g >= 0.0; }
    [[nodiscard]] double decision() const { return nominal() ? 1.0 : outlier_value(); }
};

/// Scratch buffers for the indicator sweep, sized once per measurement
/// dimension and reused across every decision.
class DecisionWorkspace {
public:
    explicit DecisionWorkspace(Eigen::Index m = 0) { reserve(m); }

    void reserve(Eigen::Index m)
    {
        if (factor_.rows() < m)
        {
            factor_.resize(m, m);
            rhs_.resize(m, m);
            nominal_.reserve(static_cast<std::size_t>(m));
        }
    }

    /// ln|R'| and tr(W' R'^-1), where R' = build_R(indicators, r_nom) and
    /// W' = W, both with dimension `skip` removed (skip < 0 keeps all).
    /// Dimension `force_nominal` is treated as having indicator 1.
    struct Result {
        double log_det = 0.0;
        double trace = 0.0;
    };

    Result trace_log_det(const Vector& indicators, const Matrix& r_nom, const Matrix& W, Eigen::Index skip,
                         Eigen::Index force_nominal)
    {
        const auto m = indicators.size();
        reserve(m);
        Result out;
        nominal_.clear();
        for (Eigen::Index i = 0; i < m; ++i)
        {
            if (i == skip)
            {
                continue;
            }
            const double value = i == force_nominal ? 1.0 : indicators[i];
            if (value == 1.0)
            {
                nominal_.push_back(i);
                continue;
            }
            const double variance = r_nom(i, i) / value;
            out.log_det += std::log(variance);
            out.trace += W(i, i) / variance;
        }

        const auto k = static_cast<Eigen::Index>(nominal_.size());
        if (k == 0)
        {
            return out;
        }
        auto block = factor_.topLeftCorner(k, k);
        auto rhs = rhs_.topLeftCorner(k, k);
        for (Eigen::Index q = 0; q < k; ++q)
        {
            const auto iq = nominal_[static_cast<std::size_t>(q)];
            for (Eigen::Index p = 0; p < k; ++p)
            {
                const auto ip = nominal_[static_cast<std::size_t>(p)];
                block(p, q) = r_nom(ip, iq);
                rhs(p, q) = W(ip, iq);
            }
        }
        Eigen::Ref<Matrix> block_ref(block);
        Eigen::LLT<Eigen::Ref<Matrix>> llt(block_ref);
        if (llt.info() != Eigen::Success)
        {
            throw NumericalError("indicator_decision: nominal block is not positive definite");
        }
        Eigen::Ref<Matrix> rhs_ref(rhs);
        llt.solveInPlace(rhs_ref);
        for (Eigen::Index p = 0; p < k; ++p)
        {
            out.log_det += 2.0 * std::log(block_ref(p, p));
            out.trace += rhs_ref(p, p);
        }
        return out;
    }

private:
    Matrix factor_;
    Matrix rhs_;
    std::vector<Eigen::Index> nominal_;
};

namespace detail {

inline void require_finite(double value, const char* term)
{
    if (!std::isfinite(value))
    {
        throw NumericalError(std::string("indicator_decision: non-finite ") + term);
    }
}

} // namespace detail

/// ln H and ln G for dimension i given the current estimates of the other
/// indicators. H is the nominal-branch mass, G the Gamma-branch mass with
/// the indicator integrated out.
inline IndicatorDecisionTerms indicator_decision_terms(Eigen::Index i, const IndicatorVector& indicators,
                                                       const Matrix& W, const Matrix& r_nom,
                                                       const OutlierModelParams& params, DecisionWorkspace& ws)
{
    const auto m = indicators.size();
    if (i < 0 || i >= m)
    {
        throw DomainError("indicator_decision: dimension index out of range");
    }
    detail::check_square(W, m, "indicator_decision");
    detail::check_square(r_nom, m, "indicator_decision");
    if (params.theta.size() != m)
    {
        throw DomainError("indicator_decision: theta has wrong length");
    }

    const double theta = params.theta[i];
    const double r_ii = r_nom(i, i);

    IndicatorDecisionTerms t;
    t.alpha = params.a + 0.5;
    t.beta = params.b_hat + 0.5 * W(i, i) / r_ii;

    // H: full R with indicator i set to 1.
    const auto full = ws.trace_log_det(indicators.values, r_nom, W, -1, i);
    detail::require_finite(full.log_det, "log-determinant in H");
    detail::require_finite(full.trace, "trace in H");
    t.log_h = -0.5 * full.log_det - 0.5 * full.trace + std::log(theta);

    // G: dimension i decoupled, the rest taken from R(I) without row/col i.
    const auto sub = ws.trace_log_det(indicators.values, r_nom, W, i, -1);
    detail::require_finite(sub.log_det, "log-determinant in G");
    detail::require_finite(sub.trace, "trace in G");
    detail::require_finite(std::log(t.beta), "log(beta) in G");

    t.log_g = -0.5 * std::log(r_ii) - 0.5 * sub.log_det - 0.5 * sub.trace + std::log1p(-theta) +
              log_gamma(t.alpha) + params.a * std::log(params.b_hat) - log_gamma(params.a) -
              t.alpha * std::log(t.beta);
    detail::require_finite(t.log_g, "G");
    detail::require_finite(t.log_h, "H");
    return t;
}

inline IndicatorDecisionTerms indicator_decision_terms(Eigen::Index i, const IndicatorVector& indicators,
                                                       const Matrix& W, const Matrix& r_nom,
                                                       const OutlierModelParams& params)
{
    DecisionWorkspace ws(indicators.size());
    return indicator_decision_terms(i, indicators, W, r_nom, params, ws);
}

/// New estimate of indicator i: 1 when H >= G, otherwise (alpha-1)/beta.
inline double indicator_decision(Eigen::Index i, const IndicatorVector& indicators, const Matrix& W,
                                 const Matrix& r_nom, const OutlierModelParams& params)
{
    return indicator_decision_terms(i, indicators, W, r_nom, params).decision();
}

/// One coordinate sweep i = 0..m-1, each decision seeing the freshest
/// values of the others.
inline void sweep_indicators(IndicatorVector& indicators, const Matrix& W, const Matrix& r_nom,
                             const OutlierModelParams& params, DecisionWorkspace& ws)
{
    for (Eigen::Index i = 0; i < indicators.size(); ++i)
    {
        indicators.values[i] = indicator_decision_terms(i, indicators, W, r_nom, params, ws).decision();
    }
}

inline void sweep_indicators(IndicatorVector& indicators, const Matrix& W, const Matrix& r_nom,
                             const OutlierModelParams& params)
{
    DecisionWorkspace ws(indicators.size());
    sweep_indicators(indicators, W, r_nom, params, ws);
}

/// Mode of the Gamma posterior on the outlier rate:
/// (M a + A - 1) / (B + sum of non-nominal indicators).
inline double update_b(const IndicatorVector& indicators, const OutlierModelParams& params)
{
    indicators.validate();
    double outlier_sum = 0.0;
    for (Eigen::Index i = 0; i < indicators.size(); ++i)
    {
        if (!indicators.is_nominal(i))
        {
            outlier_sum += indicators.values[i];
        }
    }
    const double shape = static_cast<double>(indicators.outlier_count()) * params.a + params.A;
    const double rate = params.B + outlier_sum;
    if (!(shape > 1.0) || !(rate > 0.0))
    {
        throw DomainError("update_b: posterior shape must exceed 1 and rate must be positive");
    }
    return (shape - 1.0) / rate;
}

} // namespace emorf2
