#pragma once

#include "emorf2/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <utility>

namespace emorf2 {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// x_k = f(x_{k-1}) + q_{k-1},  q ~ N(0, Q).
struct ProcessModel {
    std::function<Vector(const Vector&)> transition;
    Matrix process_noise_cov;

    [[nodiscard]] Eigen::Index state_dim() const { return process_noise_cov.rows(); }
};

/// y_k = h(x_k) + r_k,  r ~ N(0, R). R may be fully populated.
struct MeasurementModel {
    std::function<Vector(const Vector&)> observation;
    Matrix nominal_noise_cov;

    [[nodiscard]] Eigen::Index measurement_dim() const { return nominal_noise_cov.rows(); }
};

struct CoordinatedTurnParams {
    double sampling_period = 1.0;
    double eta1 = 0.1;
    double eta2 = 1.75e-4;

    void validate() const
    {
        if (!(sampling_period > 0.0) || !(eta1 >= 0.0) || !(eta2 >= 0.0))
        {
            throw DomainError("coordinated turn: need sampling_period > 0, eta1 >= 0, eta2 >= 0");
        }
    }
};

/// Below this turn rate the transition uses the Taylor limit of the
/// sin/cos terms.
inline constexpr double kSmallTurnRate = 1e-8;

/// Coordinated-turn transition for the state [x, vx, y, vy, omega].
inline Vector coordinated_turn_transition(const Vector& x, const CoordinatedTurnParams& params)
{
    if (x.size() != 5)
    {
        throw DomainError("coordinated turn: state must have 5 components");
    }
    if (!x.allFinite())
    {
        throw DomainError("coordinated turn: non-finite state");
    }

    const double zeta = params.sampling_period;
    const double omega = x[4];

    // s = sin(wz)/w, c = (1 - cos(wz))/w
    double s = 0.0;
    double c = 0.0;
    if (std::abs(omega) < kSmallTurnRate)
    {
        s = zeta - omega * omega * zeta * zeta * zeta / 6.0;
        c = omega * zeta * zeta / 2.0;
    }
    else
    {
        s = std::sin(omega * zeta) / omega;
        const double half = std::sin(0.5 * omega * zeta);
        c = 2.0 * half * half / omega;
    }
    const double cos_wz = std::cos(omega * zeta);
    const double sin_wz = std::sin(omega * zeta);

    Vector out(5);
    out[0] = x[0] + s * x[1] - c * x[3];
    out[1] = cos_wz * x[1] - sin_wz * x[3];
    out[2] = c * x[1] + x[2] + s * x[3];
    out[3] = sin_wz * x[1] + cos_wz * x[3];
    out[4] = omega;
    return out;
}

/// Block-diagonal process noise diag(eta1*M, eta1*M, eta2) with
/// M = [[z^3/3, z^2/2], [z^2/2, z]].
inline Matrix coordinated_turn_Q(const CoordinatedTurnParams& params)
{
    params.validate();
    const double z = params.sampling_period;
    Eigen::Matrix2d block;
    block << z * z * z / 3.0, z * z / 2.0, z * z / 2.0, z;

    Matrix q = Matrix::Zero(5, 5);
    q.block<2, 2>(0, 0) = params.eta1 * block;
    q.block<2, 2>(2, 2) = params.eta1 * block;
    q(4, 4) = params.eta2;
    return q;
}

inline ProcessModel coordinated_turn_model(const CoordinatedTurnParams& params)
{
    params.validate();
    return ProcessModel{
        [params](const Vector& x) { return coordinated_turn_transition(x, params); },
        coordinated_turn_Q(params)};
}

} // namespace emorf2
