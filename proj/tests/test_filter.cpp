#include "emorf2/filter.hpp"
#include "emorf2/simulator.hpp"

#include <gtest/gtest.h>

#include <random>

namespace emorf2 {
namespace {

struct Fixture {
    ScenarioConfig scenario;
    ProcessModel process = coordinated_turn_model(scenario.ct_params);
    MeasurementModel meas = tdoa_model(scenario.num_sensors, scenario.sigma_sq);
    FilterConfig cfg;
};

double relative_diff(const Vector& a, const Vector& b)
{
    return (a - b).norm() / b.norm();
}

TEST(Converged, Examples)
{
    const Vector prev = (Vector(2) << 1.0, 0.0).finished();
    EXPECT_TRUE(converged(prev, prev, 1e-12));
    EXPECT_TRUE(converged(prev, (Vector(2) << 1.0 + 5e-5, 0.0).finished(), 1e-4));
    EXPECT_FALSE(converged(prev, (Vector(2) << 1.01, 0.0).finished(), 1e-4));
    EXPECT_TRUE(converged(Vector::Zero(2), Vector::Constant(2, 1e-6), 1e-4));
}

TEST(FilterConfig, Validation)
{
    FilterConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.max_em_iterations = 0;
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg = FilterConfig{};
    cfg.convergence_threshold = 0.0;
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg = FilterConfig{};
    EXPECT_EQ(cfg.outlier_params(4).theta.size(), 4);
    cfg.outlier.theta = Vector::Constant(3, 0.5);
    EXPECT_THROW(cfg.outlier_params(4), DomainError);
}

TEST(Emorf2Step, SingleIterationIsPlainUkf)
{
    Fixture f;
    f.cfg.max_em_iterations = 1;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const auto em = emorf2_step(prior, rec.measurements[0], f.process, f.meas, f.cfg);
    const auto ukf = plain_ukf_step(prior, rec.measurements[0], f.process, f.meas, f.cfg);
    EXPECT_EQ(em.diagnostics.em_iterations, 1);
    EXPECT_LT((em.belief.mean - ukf.mean).norm(), 1e-12);
    EXPECT_LT((em.belief.cov - ukf.cov).norm(), 1e-12);
}

TEST(Emorf2Step, NoOutlierDataMatchesPlainUkfWhenNothingIsFlagged)
{
    Fixture f;
    f.scenario.lambda = 0.0;
    const auto rec = simulate(f.scenario);
    GaussianBelief ukf{rec.initial_mean, f.process.process_noise_cov};
    int compared = 0;
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        // Same prior for both filters so each step is compared in isolation.
        const auto em = emorf2_step(ukf, rec.measurements[k], f.process, f.meas, f.cfg);
        const auto next = plain_ukf_step(ukf, rec.measurements[k], f.process, f.meas, f.cfg);
        if (em.diagnostics.final_indicators.outlier_count() == 0)
        {
            EXPECT_LT(relative_diff(em.belief.mean, next.mean), 1e-6) << "step " << k;
            ++compared;
        }
        ukf = next;
    }
    EXPECT_GT(compared, 60);
}

TEST(Emorf2Step, GrossOutlierInOneDimensionIsFlagged)
{
    Fixture f;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const auto pred = predict(prior, f.process);
    Vector y = f.meas.observation(pred.mean);
    const Eigen::Index j = 2;
    y[j] += 100.0 * std::sqrt(f.meas.nominal_noise_cov(j, j));

    for (auto step : {emorf2_step, frozen_b_step})
    {
        const auto out = step(prior, y, f.process, f.meas, f.cfg);
        const auto& ind = out.diagnostics.final_indicators;
        EXPECT_TRUE(out.diagnostics.converged);
        EXPECT_NE(ind.values[j], 1.0);
        for (Eigen::Index i = 0; i < ind.size(); ++i)
        {
            if (i != j)
            {
                EXPECT_EQ(ind.values[i], 1.0) << "dim " << i;
            }
        }
    }
}

TEST(Emorf2Step, DiagnosticsRestartFromNominalEveryStep)
{
    Fixture f;
    f.scenario.lambda = 0.5;
    const auto rec = simulate(f.scenario);
    GaussianBelief belief{rec.initial_mean, f.process.process_noise_cov};
    int flagged_steps = 0;
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        const auto out = emorf2_step(belief, rec.measurements[k], f.process, f.meas, f.cfg);
        EXPECT_EQ(out.diagnostics.initial_indicators.outlier_count(), 0);
        EXPECT_EQ(static_cast<int>(out.diagnostics.convergence_history.size()), out.diagnostics.em_iterations);
        flagged_steps += out.diagnostics.final_indicators.outlier_count() > 0 ? 1 : 0;

        const Matrix& p = out.belief.cov;
        EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-10 * p.norm());
        EXPECT_EQ(Eigen::LLT<Matrix>(p).info(), Eigen::Success);
        belief = out.belief;
    }
    EXPECT_GT(flagged_steps, 20);
}

TEST(Emorf2Step, RateIsLearnedOnlyByEmorf2)
{
    Fixture f;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const auto em = emorf2_step(prior, rec.measurements[0], f.process, f.meas, f.cfg);
    const auto frozen = frozen_b_step(prior, rec.measurements[0], f.process, f.meas, f.cfg);
    EXPECT_EQ(frozen.diagnostics.final_b_hat, f.cfg.outlier.b_hat);
    EXPECT_NE(em.diagnostics.final_b_hat, f.cfg.outlier.b_hat);
}

TEST(Emorf2Step, NearCertainNominalPriorReducesToUkf)
{
    Fixture f;
    f.scenario.lambda = 0.0;
    f.cfg.outlier.theta = Vector::Constant(1, 1.0 - 1e-9);
    const auto rec = simulate(f.scenario);
    GaussianBelief em{rec.initial_mean, f.process.process_noise_cov};
    GaussianBelief ukf = em;
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        em = emorf2_step(em, rec.measurements[k], f.process, f.meas, f.cfg).belief;
        ukf = plain_ukf_step(ukf, rec.measurements[k], f.process, f.meas, f.cfg);
        ASSERT_LT(relative_diff(em.mean, ukf.mean), 1e-6) << "step " << k;
    }
}

TEST(FrozenB, MatchesEmorf2WithoutOutliers)
{
    Fixture f;
    f.scenario.lambda = 0.0;
    f.cfg.outlier.theta = Vector::Constant(1, 0.5);
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    int compared = 0;
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        const auto a = emorf2_step(prior, rec.measurements[k], f.process, f.meas, f.cfg);
        const auto b = frozen_b_step(prior, rec.measurements[k], f.process, f.meas, f.cfg);
        if (a.diagnostics.final_indicators.outlier_count() == 0 && b.diagnostics.final_indicators.outlier_count() == 0)
        {
            EXPECT_LT(relative_diff(a.belief.mean, b.belief.mean), 1e-6);
            ++compared;
        }
        prior = b.belief;
    }
    EXPECT_GT(compared, 60);
}

TEST(IdealUkf, NoFlagsEqualsPlainUkf)
{
    Fixture f;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const auto a = ideal_ukf_step(prior, rec.measurements[0], f.process, f.meas, std::vector<bool>(4, false), f.cfg);
    const auto b = plain_ukf_step(prior, rec.measurements[0], f.process, f.meas, f.cfg);
    EXPECT_LT((a.mean - b.mean).norm(), 1e-12);
    EXPECT_LT((a.cov - b.cov).norm(), 1e-12);
}

TEST(IdealUkf, AllFlagsReturnsPrediction)
{
    Fixture f;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const auto a = ideal_ukf_step(prior, rec.measurements[0], f.process, f.meas, std::vector<bool>(4, true), f.cfg);
    const auto pred = predict(prior, f.process);
    EXPECT_EQ(a.mean, pred.mean);
    EXPECT_EQ(a.cov, pred.cov);
}

TEST(IdealUkf, OneFlagEqualsReducedModel)
{
    Fixture f;
    const auto rec = simulate(f.scenario);
    GaussianBelief prior{rec.initial_mean, f.process.process_noise_cov};
    const Vector& y = rec.measurements[0];
    std::vector<bool> flags(4, false);
    flags[1] = true;

    // Sensor 3 removed: the remaining TDOA channels and their noise.
    const std::vector<Eigen::Index> keep{0, 2, 3};
    const auto full_h = f.meas.observation;
    MeasurementModel reduced{[full_h, keep](const Vector& x) {
                                 const Vector h = full_h(x);
                                 Vector out(3);
                                 for (int p = 0; p < 3; ++p)
                                 {
                                     out[p] = h[keep[static_cast<std::size_t>(p)]];
                                 }
                                 return out;
                             },
                             Matrix(3, 3)};
    Vector y_sub(3);
    for (int p = 0; p < 3; ++p)
    {
        y_sub[p] = y[keep[static_cast<std::size_t>(p)]];
        for (int q = 0; q < 3; ++q)
        {
            reduced.nominal_noise_cov(p, q) =
                f.meas.nominal_noise_cov(keep[static_cast<std::size_t>(p)], keep[static_cast<std::size_t>(q)]);
        }
    }
    const auto a = ideal_ukf_step(prior, y, f.process, f.meas, flags, f.cfg);
    const auto b = plain_ukf_step(prior, y_sub, f.process, reduced, f.cfg);
    EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((a.cov - b.cov).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FilterSteps, DimensionMismatchThrows)
{
    Fixture f;
    GaussianBelief prior{Vector::Zero(5), Matrix::Identity(5, 5)};
    EXPECT_THROW(emorf2_step(prior, Vector::Zero(3), f.process, f.meas, f.cfg), DomainError);
    EXPECT_THROW(ideal_ukf_step(prior, Vector::Zero(4), f.process, f.meas, {true}, f.cfg), std::logic_error);
}

TEST(FilterNames, RoundTrip)
{
    for (auto kind : kAllFilters)
    {
        EXPECT_EQ(parse_filter_name(filter_name(kind)), kind);
    }
    EXPECT_FALSE(parse_filter_name("emorf").has_value());
}

} // namespace
} // namespace emorf2
