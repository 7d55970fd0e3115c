import math
import unittest
from reboot.decay.analytic import (
    QueueModel,
    analytic_rates,
    arrival_log_mgf,
    busy_period_decay,
    cox_smith_decay,
    cramer_decay,
    fifo_decay,
    h,
    h_curve,
    mean_busy_period,
    mean_residual_busy,
    mm1_closed_forms,
    sojourn_lower_bound,
    truncated_decay_curve,
    workload_transform,
)
from reboot.decay.distributions import (
    Deterministic,
    Exponential,
    Gamma,
    HyperExponential,
    Uniform,
)
from reboot.decay.errors import (
    ConfigError,
    PreconditionViolated,
    UnstableModel,
)

MM1 = QueueModel(0.5, Exponential(1.0))
MD1 = QueueModel(0.5, Deterministic(1.0))

MODELS = [
    MM1,
    MD1,
    QueueModel(1.0, Gamma(0.5, 1.0)),
    QueueModel(0.5, Uniform(0.0, 2.0)),
    QueueModel(0.5, HyperExponential(weights=(0.4, 0.6), rates=(1.0, 3.0))),
]


class TestQueueModel(unittest.TestCase):

    def test_rho(self) -> None:
        self.assertEqual(MM1.rho, 0.5)
        self.assertEqual(QueueModel(1.0, Gamma(0.5, 1.0)).rho, 0.5)

    def test_unstable(self) -> None:
        with self.assertRaises(UnstableModel):
            QueueModel(1.0, Exponential(1.0))
        with self.assertRaises(UnstableModel):
            QueueModel(2.0, Exponential(1.0))
        # Unstable models are configuration errors.
        with self.assertRaises(ConfigError):
            QueueModel(2.0, Exponential(1.0))

    def test_invalid_arrival_rate(self) -> None:
        with self.assertRaises(ConfigError):
            QueueModel(0.0, Exponential(1.0))


class TestH(unittest.TestCase):

    def test_values(self) -> None:
        self.assertEqual(h(MM1, 0.0), 0.0)
        self.assertEqual(h(MM1, 0.5), 0.0)
        self.assertEqual(h(MM1, 1.2), -math.inf)
        self.assertEqual(arrival_log_mgf(MM1, 0.0), 0.0)
        self.assertEqual(arrival_log_mgf(MM1, 0.5), 0.5)
        self.assertEqual(arrival_log_mgf(MM1, 1.0), math.inf)

    def test_concave(self) -> None:
        thetas = [0.99 * i / 100 for i in range(101)]
        values = [h(MM1, theta) for theta in thetas]
        for a, b, c in zip(values, values[1:], values[2:]):
            self.assertLessEqual(c - 2 * b + a, 1e-12)


class TestBusyPeriodDecay(unittest.TestCase):

    def test_mm1_closed_forms(self) -> None:
        for rho in [0.1, 0.25, 0.5, 0.75, 0.9]:
            model = QueueModel(rho, Exponential(1.0))
            expected = mm1_closed_forms(rho, 1.0)

            busy = busy_period_decay(model)
            self.assertAlmostEqual(busy.c, expected.c_fb, delta=1e-10)
            self.assertAlmostEqual(
                busy.theta_star,
                1 - math.sqrt(rho),
                delta=1e-9,
            )
            self.assertLess(busy.derivative_residual, 1e-8)
            self.assertLessEqual(busy.tolerance, 1e-12)

            self.assertAlmostEqual(
                fifo_decay(model),
                expected.c_fifo,
                delta=1e-10,
            )

    def test_deterministic(self) -> None:
        busy = busy_period_decay(MD1)
        self.assertAlmostEqual(busy.c, math.log(2) - 0.5, delta=1e-10)
        self.assertAlmostEqual(busy.theta_star, math.log(2), delta=1e-9)
        self.assertAlmostEqual(fifo_decay(MD1), 1.25643, delta=1e-5)

    def test_cox_smith_agrees(self) -> None:
        for model in MODELS:
            busy = busy_period_decay(model)
            cox_smith = cox_smith_decay(model)
            self.assertAlmostEqual(busy.c, cox_smith.c, delta=1e-8)
            self.assertAlmostEqual(
                busy.theta_star,
                -cox_smith.zeta,
                delta=1e-8,
            )

    def test_cramer_is_the_same_maximization(self) -> None:
        for model in MODELS:
            self.assertEqual(
                cramer_decay(model).c,
                busy_period_decay(model).c,
            )

    def test_ordering(self) -> None:
        for model in MODELS:
            rates = analytic_rates(model)
            self.assertLess(0, rates.c)
            self.assertLess(rates.c, rates.theta0)
            self.assertLess(rates.theta0, rates.dr_b)

    def test_mm1_rates(self) -> None:
        rates = mm1_closed_forms(0.25, 1.0)
        self.assertEqual(
            (rates.c_fb, rates.c_fifo, rates.dr_b),
            (0.25, 0.75, 1.0),
        )
        with self.assertRaises(UnstableModel):
            mm1_closed_forms(1.0, 1.0)
        with self.assertRaises(UnstableModel):
            mm1_closed_forms(2.0, 1.0)

    def test_fifo_uses_given_theta_star(self) -> None:
        busy = busy_period_decay(MM1)
        self.assertEqual(
            fifo_decay(MM1, theta_star=busy.theta_star),
            fifo_decay(MM1),
        )

    def test_heavy_load(self) -> None:
        self.assertAlmostEqual(
            fifo_decay(QueueModel(0.9, Exponential(1.0))),
            0.1,
            delta=1e-10,
        )


class TestWorkloadTransform(unittest.TestCase):

    def test_mm1(self) -> None:
        self.assertAlmostEqual(workload_transform(MM1, 1.0), 2 / 3, places=12)
        self.assertAlmostEqual(workload_transform(MM1, 1e-8), 1.0, delta=1e-6)

    def test_decreasing(self) -> None:
        for model in MODELS:
            values = [
                workload_transform(model, s) for s in [0.1, 0.5, 1.0, 2.0, 4.0]
            ]
            self.assertEqual(values, sorted(values, reverse=True))
            self.assertTrue(all(0 < value < 1 for value in values))

    def test_preconditions(self) -> None:
        with self.assertRaises(PreconditionViolated):
            workload_transform(MM1, 0.0)
        with self.assertRaises(PreconditionViolated):
            workload_transform(MM1, -1.0)


class TestTruncatedDecay(unittest.TestCase):

    def test_monotone_and_converging(self) -> None:
        taus = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
        curve = truncated_decay_curve(MM1, taus)
        self.assertEqual([tau for tau, _ in curve], taus)

        c = busy_period_decay(MM1).c
        rates = [rate for _, rate in curve]
        for a, b in zip(rates, rates[1:]):
            self.assertGreater(a, b)
        for rate in rates:
            self.assertGreaterEqual(rate, c)

        self.assertLess(abs(dict(curve)[8.0] - c), 1e-3)
        self.assertLess(abs(dict(curve)[16.0] - c), 1e-4)

    def test_large_tau_matches_untruncated(self) -> None:
        ((_, rate),) = truncated_decay_curve(MM1, [50.0])
        self.assertAlmostEqual(rate, busy_period_decay(MM1).c, delta=1e-6)

    def test_bounded_service(self) -> None:
        c = busy_period_decay(MD1).c
        ((_, rate),) = truncated_decay_curve(MD1, [1.0])
        self.assertEqual(rate, c)
        ((_, rate),) = truncated_decay_curve(MD1, [0.5])
        self.assertGreater(rate, c)

        with self.assertRaises(PreconditionViolated):
            truncated_decay_curve(MD1, [2.0])
        with self.assertRaises(PreconditionViolated):
            truncated_decay_curve(MM1, [0.0])

    def test_analytic_rates_include_curve(self) -> None:
        rates = analytic_rates(MM1, [1.0, 2.0])
        self.assertEqual([tau for tau, _ in rates.c_tau], [1.0, 2.0])
        self.assertEqual(rates.service, "exp:1.0")
        self.assertEqual(rates.rho, 0.5)


class TestLowerBound(unittest.TestCase):

    def test_above_c(self) -> None:
        c = busy_period_decay(MM1).c
        bound = sojourn_lower_bound(MM1, 1.0)
        self.assertTrue(math.isfinite(bound))
        self.assertGreaterEqual(bound, c)

        # All of the mass sits where c(tau) is already c.
        self.assertAlmostEqual(sojourn_lower_bound(MM1, 30.0), c, delta=1e-4)

    def test_deterministic(self) -> None:
        self.assertAlmostEqual(
            sojourn_lower_bound(MD1, 0.5),
            busy_period_decay(MD1).c,
            places=12,
        )

    def test_precondition(self) -> None:
        with self.assertRaises(PreconditionViolated):
            sojourn_lower_bound(MD1, 2.0)


class TestMisc(unittest.TestCase):

    def test_means(self) -> None:
        self.assertAlmostEqual(mean_busy_period(MM1), 2.0)
        self.assertAlmostEqual(mean_residual_busy(MM1), 4.0)

    def test_h_curve(self) -> None:
        curve = h_curve(MM1)
        self.assertEqual(len(curve), 201)
        self.assertEqual(curve[0], (0.0, 0.0))
        self.assertLess(curve[-1][0], 1.0)

        curve = h_curve(MM1, [0.5, 0.25])
        self.assertEqual([theta for theta, _ in curve], [0.0, 0.25, 0.5])

        # Infinite radius: grid up to 1.5 theta0.
        curve = h_curve(MD1)
        self.assertAlmostEqual(curve[-1][0], 1.5 * fifo_decay(MD1))


if __name__ == '__main__':
    unittest.main()
