import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st

from mechanisms.exceptions import GammaOutOfRange, GridMismatch, IncompatibleMode, InvalidInstance, NonMonotoneCurve
from mechanisms.services.algorithms import FunctionAlgorithm, ServeAll, ServeNone, UniqueArgmax
from mechanisms.services.core_model import DiscreteAtoms, ProductPrior, UniformContinuous
from mechanisms.services.interim_engine import (
    BlatantMonotonizedAlgorithm,
    CurveSource,
    DiscretizationConfig,
    InterimCurve,
    Provenance,
    SamplingConfig,
    blatant_gamma,
    blatant_interim_curve,
    blatant_monotonize,
    eps_close,
    estimate_interim_curve,
    exact_interim_curve,
    expected_truncated_payment,
    fill_absent,
    hoeffding_samples,
    interim_curves,
    max_deviation,
    pava_monotonize,
    pool_adjacent_violators,
    sampled_payment,
    sampled_payments,
    truncated_interim_payment,
    truncated_payments,
)
from mechanisms.services.randomness import Stream, keyed_generator

QUARTERS = DiscreteAtoms(((0.25, 0.25), (0.5, 0.25), (0.75, 0.25), (1.0, 0.25)))


def make_curve(values, disc, agent=0):
    values = np.asarray(values, dtype=float)
    masses = np.full(disc.size, 1.0 / max(disc.cells, 1))
    masses[0] = 0.0
    return InterimCurve(agent, disc, values, masses, masses > 0, Provenance(CurveSource.EXACT))


class DiscretizationTests(SimpleTestCase):
    def test_cell_lookup(self):
        disc = DiscretizationConfig(0.25, 1.0)
        self.assertEqual(disc.cells, 4)
        self.assertEqual(disc.cell_of(0.0), 0)
        self.assertEqual(disc.cell_of(0.25), 1)
        self.assertEqual(disc.cell_of(0.26), 2)
        self.assertEqual(disc.cell_of(1.0), 4)
        self.assertEqual(disc.cell_of(7.0), 4)
        self.assertEqual(list(disc.cell_of(np.array([0.5, 0.75]))), [2, 3])

    def test_invalid_grid(self):
        with self.assertRaises(InvalidInstance):
            DiscretizationConfig(0.0, 1.0)
        with self.assertRaises(InvalidInstance):
            DiscretizationConfig(0.5, -1.0)

    def test_fill_absent_carries_neighbours(self):
        raw = np.array([0.0, 0.3, 0.0, 0.5, 0.0])
        present = np.array([False, True, False, True, False])
        self.assertEqual(list(fill_absent(raw, present)), [0.3, 0.3, 0.3, 0.5, 0.5])


class ExactCurveTests(SimpleTestCase):
    def setUp(self):
        self.prior = ProductPrior.iid(QUARTERS, 2)
        self.disc = DiscretizationConfig(0.25, 1.0)

    def test_argmax_curves_with_lower_index_tie_break(self):
        first, second = exact_interim_curve(UniqueArgmax(), self.prior, self.disc)
        np.testing.assert_allclose(first.values, [0.25, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(second.values, [0.0, 0.0, 0.25, 0.5, 0.75])
        self.assertTrue(first.monotone and second.monotone)

    def test_closed_form_curves_skip_enumeration(self):
        curves = interim_curves(ServeAll(), self.prior, self.disc, exact=False)
        self.assertEqual(curves[0].provenance.source, CurveSource.CLOSED_FORM)
        self.assertTrue(np.all(curves[1].values == 1.0))

    def test_estimation_needs_sampling_config(self):
        with self.assertRaises(IncompatibleMode):
            interim_curves(UniqueArgmax(), self.prior, self.disc, exact=False)


class EstimationTests(SimpleTestCase):
    def setUp(self):
        self.prior = ProductPrior.iid(QUARTERS, 2)
        self.disc = DiscretizationConfig(0.25, 1.0)

    def test_hoeffding_sample_count(self):
        self.assertEqual(hoeffding_samples(0.1, 0.25, 2), 254)
        self.assertEqual(SamplingConfig.for_grid(0.1, 0.25, 2).samples, 254)

    def test_sampling_config_validation(self):
        with self.assertRaises(InvalidInstance):
            SamplingConfig(epsilon=1.5, samples=10)
        with self.assertRaises(InvalidInstance):
            SamplingConfig(epsilon=0.1, samples=0)

    def test_estimates_are_close_to_exact_curves(self):
        exact = exact_interim_curve(UniqueArgmax(), self.prior, self.disc)
        misses = 0
        for seed in range(500):
            sampling = SamplingConfig.for_grid(0.1, 0.25, 2, seed=seed)
            estimated = estimate_interim_curve(UniqueArgmax(), self.prior, self.disc, sampling, jobs=1)
            if not eps_close(estimated, exact, 0.1):
                misses += 1
        self.assertLessEqual(misses, 50)

    def test_estimates_do_not_depend_on_jobs(self):
        sampling = SamplingConfig(epsilon=0.1, samples=300, seed=9)
        one = estimate_interim_curve(UniqueArgmax(), self.prior, self.disc, sampling, jobs=1)
        three = estimate_interim_curve(UniqueArgmax(), self.prior, self.disc, sampling, jobs=3)
        self.assertEqual(max_deviation(one, three), 0.0)

    def test_estimated_curves_are_monotone_with_raw_kept(self):
        sampling = SamplingConfig(epsilon=0.2, samples=50, seed=2)
        for curve in estimate_interim_curve(UniqueArgmax(), self.prior, self.disc, sampling):
            self.assertTrue(curve.monotone)
            self.assertIsNotNone(curve.raw)
            self.assertEqual(curve.provenance.samples, 50)


class CurveComparisonTests(SimpleTestCase):
    def test_eps_close_is_strict(self):
        disc = DiscretizationConfig(0.5, 1.0)
        low = make_curve([0.5, 0.5, 0.5], disc)
        high = make_curve([0.75, 0.75, 0.75], disc)
        self.assertFalse(eps_close(low, high, 0.25))
        self.assertTrue(eps_close(low, high, 0.26))

    def test_different_grids_are_rejected(self):
        a = make_curve([0.0, 0.5, 1.0], DiscretizationConfig(0.5, 1.0))
        b = make_curve([0.0, 0.5, 1.0, 1.0], DiscretizationConfig(0.5, 1.5))
        with self.assertRaises(GridMismatch):
            max_deviation(a, b)

    def test_curve_needs_one_entry_per_cell(self):
        with self.assertRaises(GridMismatch):
            make_curve([0.0, 1.0], DiscretizationConfig(0.5, 1.0))


class PoolingTests(SimpleTestCase):
    def test_pool_adjacent_violators(self):
        pooled, pools = pool_adjacent_violators(np.array([0.0, 0.6, 0.2, 0.8]), np.array([0.0, 0.5, 0.5, 1.0]))
        np.testing.assert_allclose(pooled, [0.4, 0.4, 0.4, 0.8])
        self.assertEqual(pools, [(0, 2), (3, 3)])

    @hsettings(max_examples=60, derandomize=True)
    @given(st.lists(
        st.tuples(st.floats(min_value=0, max_value=1), st.floats(min_value=0.01, max_value=1)),
        min_size=1, max_size=12,
    ))
    def test_pooled_curve_is_monotone_and_keeps_weighted_mean(self, cells):
        raw = np.array([r for r, _ in cells])
        masses = np.array([m for _, m in cells])
        pooled, pools = pool_adjacent_violators(raw, masses)
        self.assertTrue(np.all(np.diff(pooled) >= -1e-12))
        self.assertAlmostEqual(float(masses @ pooled), float(masses @ raw), places=9)
        self.assertEqual(pools[0][0], 0)
        self.assertEqual(pools[-1][1], raw.size - 1)

    def test_resampling_within_pools_matches_pooled_curve(self):
        prior = ProductPrior((DiscreteAtoms(((1.0, 1 / 3), (2.0, 1 / 3), (3.0, 1 / 3))),))
        disc = DiscretizationConfig(1.0, 3.0)
        middle_only = FunctionAlgorithm(lambda v: [0] if v[0] == 2.0 else [], name="middle_only")
        raw = exact_interim_curve(middle_only, prior, disc)
        self.assertFalse(raw[0].monotone)

        pooled = pava_monotonize(middle_only, prior, disc, raw)
        np.testing.assert_allclose(pooled.curves[0].values, [0.0, 0.0, 0.5, 0.5])
        realized = exact_interim_curve(pooled, prior, disc)
        np.testing.assert_allclose(realized[0].values, pooled.curves[0].values)


class BlatantTests(SimpleTestCase):
    def setUp(self):
        self.disc = DiscretizationConfig(0.25, 1.0)

    def test_corrected_curve(self):
        zero = make_curve(np.zeros(5), self.disc)
        per_agent = blatant_interim_curve(zero, n=2, gamma=0.5)
        np.testing.assert_allclose(per_agent.values, [0.0, 0.0625, 0.125, 0.1875, 0.25])
        pooled_share = blatant_interim_curve(zero, n=2, gamma=0.5, per_agent=False)
        np.testing.assert_allclose(pooled_share.values, [0.0, 0.125, 0.25, 0.375, 0.5])
        self.assertEqual(per_agent.provenance.source, CurveSource.BLATANT)

    def test_gamma_out_of_range(self):
        with self.assertRaises(GammaOutOfRange):
            blatant_interim_curve(make_curve(np.zeros(5), self.disc), n=2, gamma=1.5)
        with self.assertRaises(GammaOutOfRange):
            BlatantMonotonizedAlgorithm(ServeNone(), self.disc, -0.1)

    def test_outcome_law(self):
        law = dict(BlatantMonotonizedAlgorithm(ServeNone(), self.disc, 0.5).outcome_distribution((0.25, 1.0)))
        self.assertAlmostEqual(sum(law.values()), 1.0)
        self.assertAlmostEqual(law[frozenset({0})], 0.0625)
        self.assertAlmostEqual(law[frozenset({1})], 0.25)
        self.assertAlmostEqual(law[frozenset()], 0.6875)

    def test_shared_correction_fixes_dips_the_per_agent_one_does_not(self):
        gamma = blatant_gamma(1 / 16, self.disc.delta)
        self.assertEqual(gamma, 0.5)
        dipped = make_curve([0.0, 0.5, 0.375, 0.375, 0.375], self.disc)

        per_agent = blatant_interim_curve(dipped, n=4, gamma=gamma)
        np.testing.assert_allclose(per_agent.values[:3], [0.0, 0.28125, 0.25])
        self.assertFalse(per_agent.monotone)

        shared = blatant_interim_curve(dipped, n=4, gamma=gamma, per_agent=False)
        np.testing.assert_allclose(shared.values, [0.0, 0.375, 0.4375, 0.5625, 0.6875])
        self.assertTrue(shared.monotone)

    @hsettings(max_examples=80, derandomize=True)
    @given(
        m=st.integers(min_value=2, max_value=16),
        frac=st.floats(min_value=0.05, max_value=0.95),
        n=st.integers(min_value=1, max_value=6),
        draws=st.lists(st.floats(min_value=0, max_value=1), min_size=17, max_size=17),
        per_agent=st.booleans(),
    )
    def test_correction_removes_bounded_dips(self, m, frac, n, draws, per_agent):
        disc = DiscretizationConfig(1 / m, 1.0)
        epsilon = frac / (2 * m)
        gamma = blatant_gamma(epsilon, disc.delta)
        # largest dip each reading is guaranteed to absorb
        dip = 2 * epsilon * (1 - gamma) / n if per_agent else 2 * epsilon
        values = [draws[0]]
        for d in draws[1:m + 1]:
            values.append(max(d, values[-1] - dip))

        corrected = blatant_interim_curve(make_curve(values, disc), n=n, gamma=gamma, per_agent=per_agent)
        self.assertTrue(corrected.monotone, corrected.first_decrease())

    def test_zero_gamma_runs_the_base_unchanged(self):
        alg = blatant_monotonize(UniqueArgmax(), self.disc, 0.0)
        self.assertEqual(alg.serve((0.25, 1.0)), frozenset({1}))
        with self.assertRaises(InvalidInstance):
            blatant_monotonize(UniqueArgmax(), self.disc, 0.5).serve((0.25, 1.0))


class PaymentTests(SimpleTestCase):
    def setUp(self):
        self.disc = DiscretizationConfig(0.25, 1.0)
        self.argmax_curve = make_curve([0.25, 0.25, 0.5, 0.75, 1.0], self.disc)

    def test_truncated_payment_values(self):
        pay = truncated_payments(self.argmax_curve, np.array([0.25, 1.0]), 0.0)
        np.testing.assert_allclose(pay, [0.25 * 0.25 - 0.0625, 0.375])
        truncated = truncated_payments(self.argmax_curve, np.array([0.25, 1.0]), 0.5)
        np.testing.assert_allclose(truncated, [0.0, 0.5625])
        self.assertAlmostEqual(truncated_interim_payment(self.argmax_curve, 1.0, 0.5), 0.5625)

    def test_serve_all_payment_equals_threshold(self):
        ones = make_curve(np.ones(5), self.disc)
        pay = truncated_payments(ones, np.array([0.25, 0.5, 0.75, 1.0]), 0.5)
        np.testing.assert_allclose(pay, [0.0, 0.5, 0.5, 0.5])
        self.assertAlmostEqual(sampled_payment(ones, 0.75, 0.5, np.random.default_rng(1)), 0.5)

    def test_decreasing_curve_rejected(self):
        bad = make_curve([0.0, 0.5, 0.2, 0.8, 1.0], self.disc)
        with self.assertRaises(NonMonotoneCurve):
            truncated_payments(bad, np.array([1.0]), 0.0)
        with self.assertRaises(NonMonotoneCurve):
            sampled_payments(bad, np.array([1.0]), 0.0, np.random.default_rng(0))

    def test_sampled_payments_are_unbiased_and_nonnegative(self):
        disc = DiscretizationConfig(0.125, 2.0)
        for k in range(8):
            rng = keyed_generator(k, Stream.PAYMENT, 0)
            values = np.concatenate(([0.0], np.sort(rng.random(disc.cells))))
            curve = make_curve(values, disc)
            t = float(rng.uniform(0.0, 2.0))
            for v in (float(rng.uniform(0.0, 2.0)), float(rng.uniform(t, 2.0)), 2.0):
                draws = sampled_payments(curve, np.full(100_000, v), t, rng)
                self.assertTrue(np.all(draws >= 0))
                closed = float(truncated_payments(curve, np.array([v]), t)[0])
                se = float(draws.std(ddof=1) / np.sqrt(draws.size))
                self.assertLessEqual(abs(float(draws.mean()) - closed), max(5 * se, 1e-9), (k, v, t))

    def test_expected_payment_for_continuous_marginal(self):
        disc = DiscretizationConfig(0.25, 4.0)
        ones = make_curve(np.ones(disc.size), disc)
        self.assertAlmostEqual(expected_truncated_payment(ones, UniformContinuous(1.0, 4.0), 2.0), 4 / 3, places=6)

    def test_expected_payment_for_atoms(self):
        disc = DiscretizationConfig(0.125, 4.0)
        ones = make_curve(np.ones(disc.size), disc)
        atoms = DiscreteAtoms(((1.0, 0.5), (4.0, 0.5)))
        self.assertAlmostEqual(expected_truncated_payment(ones, atoms, 2.0), 1.0)
        self.assertAlmostEqual(expected_truncated_payment(ones, atoms, 1.0), 1.0)
