#pragma once

#include "emorf2/errors.hpp"
#include "emorf2/ssm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace emorf2 {

struct ScenarioConfig {
    int num_sensors = 5;
    double lambda = 0.0;
    double gamma = 1000.0;
    int horizon = 100;
    double sigma_sq = 10.0;
    CoordinatedTurnParams ct_params;
    Vector x0 = (Vector(5) << 0.0, 1.0, 0.0, -1.0, -0.0524).finished();
    std::uint64_t rng_seed = 1;

    void validate() const
    {
        if (num_sensors < 2)
        {
            throw DomainError("scenario: need at least 2 sensors");
        }
        if (horizon < 1)
        {
            throw DomainError("scenario: horizon must be at least 1");
        }
        if (!(lambda >= 0.0 && lambda <= 1.0))
        {
            throw DomainError("scenario: lambda must lie in [0, 1]");
        }
        if (!(gamma > 0.0) || !(sigma_sq > 0.0))
        {
            throw DomainError("scenario: gamma and sigma_sq must be positive");
        }
        if (x0.size() != 5)
        {
            throw DomainError("scenario: x0 must have 5 components");
        }
        ct_params.validate();
    }
};

struct GroundTruthRecord {
    int num_sensors = 0;
    /// Filter initialization drawn from N(x0, Q); shared by every filter
    /// run on this record.
    Vector initial_mean;
    std::vector<Vector> states;
    std::vector<Vector> measurements;
    /// TDOA-level flags: dimension j is corrupted when the reference or
    /// sensor j+1 is.
    std::vector<std::vector<bool>> outlier_flags;
    std::vector<std::vector<bool>> toa_corrupt;

    [[nodiscard]] std::size_t steps() const { return states.size(); }
};

struct SensorPosition {
    double x = 0.0;
    double y = 0.0;
};

/// Zig-zag layout: sensor i (1-based) at (350(i-1), 350((i-1) mod 2)).
inline std::vector<SensorPosition> sensor_positions(int m)
{
    if (m < 2)
    {
        throw DomainError("sensor_positions: need at least 2 sensors");
    }
    std::vector<SensorPosition> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
    {
        out.push_back({350.0 * i, 350.0 * (i % 2)});
    }
    return out;
}

/// Range differences against sensor 1: h_j = d(x, s_1) - d(x, s_{j+1}).
/// Not differentiable at the sensor locations themselves.
inline Vector tdoa_measurement(const Vector& x, const std::vector<SensorPosition>& sensors)
{
    const auto dist = [&x](const SensorPosition& s) { return std::hypot(x[0] - s.x, x[2] - s.y); };
    const double ref = dist(sensors.front());
    Vector h(static_cast<Eigen::Index>(sensors.size()) - 1);
    for (std::size_t j = 1; j < sensors.size(); ++j)
    {
        h[static_cast<Eigen::Index>(j) - 1] = ref - dist(sensors[j]);
    }
    return h;
}

/// Covariance of the TDOA noise with equal per-sensor variance:
/// sigma^2 (I + 1 1^T), size (m-1)x(m-1).
inline Matrix nominal_R(int m, double sigma_sq)
{
    if (m < 2)
    {
        throw DomainError("nominal_R: need at least 2 sensors");
    }
    const Eigen::Index d = m - 1;
    return Matrix::Constant(d, d, sigma_sq) + sigma_sq * Matrix::Identity(d, d);
}

inline MeasurementModel tdoa_model(int m, double sigma_sq)
{
    return MeasurementModel{
        [sensors = sensor_positions(m)](const Vector& x) { return tdoa_measurement(x, sensors); },
        nominal_R(m, sigma_sq)};
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (master, cell, run).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t run)
{
    return splitmix64(splitmix64(splitmix64(master) ^ cell) ^ run);
}

namespace detail {

/// Square root S with S S^T = A for a symmetric PSD matrix.
inline Matrix psd_sqrt(const Matrix& a)
{
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success)
    {
        return llt.matrixL();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline Vector standard_normal(std::mt19937_64& rng, Eigen::Index n)
{
    std::normal_distribution<double> normal;
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        z[i] = normal(rng);
    }
    return z;
}

} // namespace detail

inline GroundTruthRecord simulate(const ScenarioConfig& config)
{
    config.validate();

    const int m = config.num_sensors;
    const Eigen::Index dim = m - 1;
    const auto sensors = sensor_positions(m);
    const Matrix q_sqrt = detail::psd_sqrt(coordinated_turn_Q(config.ct_params));
    const Matrix r_sqrt = detail::psd_sqrt(nominal_R(m, config.sigma_sq));
    // Equal sensor variances: gamma * (sigma_1^2 + sigma_j^2) = 2 gamma sigma^2.
    const double outlier_std = std::sqrt(config.gamma * 2.0 * config.sigma_sq);

    std::mt19937_64 rng(config.rng_seed);
    std::bernoulli_distribution corrupt(config.lambda);

    GroundTruthRecord rec;
    rec.num_sensors = m;
    rec.initial_mean = config.x0 + q_sqrt * detail::standard_normal(rng, 5);

    Vector x = config.x0;
    for (int k = 0; k < config.horizon; ++k)
    {
        x = coordinated_turn_transition(x, config.ct_params) + q_sqrt * detail::standard_normal(rng, 5);

        std::vector<bool> toa(static_cast<std::size_t>(m));
        for (int s = 0; s < m; ++s)
        {
            toa[static_cast<std::size_t>(s)] = corrupt(rng);
        }
        std::vector<bool> flags(static_cast<std::size_t>(dim));
        for (Eigen::Index j = 0; j < dim; ++j)
        {
            flags[static_cast<std::size_t>(j)] = toa[0] || toa[static_cast<std::size_t>(j) + 1];
        }

        Vector y = tdoa_measurement(x, sensors) + r_sqrt * detail::standard_normal(rng, dim);
        const Vector o = detail::standard_normal(rng, dim);
        for (Eigen::Index j = 0; j < dim; ++j)
        {
            if (flags[static_cast<std::size_t>(j)])
            {
                y[j] += outlier_std * o[j];
            }
        }

        rec.states.push_back(x);
        rec.measurements.push_back(std::move(y));
        rec.outlier_flags.push_back(std::move(flags));
        rec.toa_corrupt.push_back(std::move(toa));
    }
    return rec;
}

/// FNV-1a over measurements and flags; identifies the data a filter saw.
inline std::uint64_t record_hash(const GroundTruthRecord& rec)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i)
        {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(rec.initial_mean.data(), sizeof(double) * static_cast<std::size_t>(rec.initial_mean.size()));
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        const auto& y = rec.measurements[k];
        mix(y.data(), sizeof(double) * static_cast<std::size_t>(y.size()));
        for (bool f : rec.outlier_flags[k])
        {
            const unsigned char b = f ? 1 : 0;
            mix(&b, 1);
        }
    }
    return h;
}

/// Columnar text format, one row per step:
///   k x vx y vy omega y_1..y_{m-1} flag_1..flag_{m-1} toa_1..toa_m
/// preceded by '#' header lines carrying the sensor count and the filter
/// initialization. Doubles use 17 significant digits.
inline void write_record(std::ostream& os, const GroundTruthRecord& rec)
{
    const int m = rec.num_sensors;
    os << "# emorf2 ground truth v1\n";
    os << "# sensors " << m << " steps " << rec.steps() << "\n";
    os << std::setprecision(17);
    os << "# initial_mean";
    for (Eigen::Index i = 0; i < rec.initial_mean.size(); ++i)
    {
        os << ' ' << rec.initial_mean[i];
    }
    os << "\n# k x vx y vy omega";
    for (int j = 1; j < m; ++j)
    {
        os << " y" << j;
    }
    for (int j = 1; j < m; ++j)
    {
        os << " flag" << j;
    }
    for (int j = 1; j <= m; ++j)
    {
        os << " toa" << j;
    }
    os << '\n';

    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        os << k + 1;
        for (Eigen::Index i = 0; i < rec.states[k].size(); ++i)
        {
            os << ' ' << rec.states[k][i];
        }
        for (Eigen::Index i = 0; i < rec.measurements[k].size(); ++i)
        {
            os << ' ' << rec.measurements[k][i];
        }
        for (bool f : rec.outlier_flags[k])
        {
            os << ' ' << (f ? 1 : 0);
        }
        for (bool f : rec.toa_corrupt[k])
        {
            os << ' ' << (f ? 1 : 0);
        }
        os << '\n';
    }
}

inline GroundTruthRecord read_record(std::istream& is)
{
    GroundTruthRecord rec;
    std::string line;
    std::size_t expected_steps = 0;
    const auto fail = [](const std::string& what) { throw DomainError("read_record: " + what); };

    while (std::getline(is, line))
    {
        if (line.empty())
        {
            continue;
        }
        std::istringstream ls(line);
        if (line[0] == '#')
        {
            std::string hash;
            std::string key;
            ls >> hash >> key;
            if (key == "sensors")
            {
                std::string steps_key;
                ls >> rec.num_sensors >> steps_key >> expected_steps;
            }
            else if (key == "initial_mean")
            {
                rec.initial_mean.resize(5);
                for (Eigen::Index i = 0; i < 5; ++i)
                {
                    ls >> rec.initial_mean[i];
                }
                if (!ls)
                {
                    fail("bad initial_mean line");
                }
            }
            continue;
        }
        if (rec.num_sensors < 2)
        {
            fail("missing sensor header");
        }
        const Eigen::Index dim = rec.num_sensors - 1;
        std::size_t k = 0;
        Vector x(5);
        Vector y(dim);
        std::vector<bool> flags(static_cast<std::size_t>(dim));
        std::vector<bool> toa(static_cast<std::size_t>(rec.num_sensors));
        ls >> k;
        for (Eigen::Index i = 0; i < 5; ++i)
        {
            ls >> x[i];
        }
        for (Eigen::Index i = 0; i < dim; ++i)
        {
            ls >> y[i];
        }
        for (std::size_t i = 0; i < flags.size(); ++i)
        {
            int f = 0;
            ls >> f;
            flags[i] = f != 0;
        }
        for (std::size_t i = 0; i < toa.size(); ++i)
        {
            int f = 0;
            ls >> f;
            toa[i] = f != 0;
        }
        if (!ls || k != rec.steps() + 1)
        {
            fail("malformed row " + std::to_string(rec.steps() + 1));
        }
        rec.states.push_back(std::move(x));
        rec.measurements.push_back(std::move(y));
        rec.outlier_flags.push_back(std::move(flags));
        rec.toa_corrupt.push_back(std::move(toa));
    }
    if (rec.steps() != expected_steps)
    {
        fail("row count does not match header");
    }
    return rec;
}

} // namespace emorf2
