import itertools

from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st

from mechanisms.exceptions import InvalidInstance, NonBinaryValuation, ReductionConfigError, ValueOutsideSupport
from mechanisms.services.algorithms import (
    BernoulliServe,
    FixedThreshold,
    FunctionAlgorithm,
    ServeAll,
    SocialCostMinimizer,
    UniqueArgmax,
)
from mechanisms.services.audit import check_expost_truthful, check_no_bossy_report
from mechanisms.services.core_model import CardinalityConcave, PublicExcludable, social_cost
from mechanisms.services.expost_reduction import (
    SupportList,
    check_no_bossy,
    powers_of_two_trace,
    reduce_powers_of_two,
    reduce_support_list,
    reduce_zero_one,
)
from mechanisms.services.mechanisms import (
    PayYourBidMechanism,
    PowersOfTwoMechanism,
    SupportListMechanism,
    ZeroOneMechanism,
)

CONCAVE = CardinalityConcave((0.0, 1.5, 2.0, 2.4, 2.6, 2.7, 2.8, 2.9, 3.0, 3.1, 3.2))


def bossy_algorithm():
    # agent 0 always served; agent 1 served only when agent 0 reports at least 2
    return FunctionAlgorithm(
        lambda v: [0, 1] if v[0] >= 2 else [0],
        name="bossy",
        claims_truthful=True,
        claims_no_bossy=True,
    )


class ZeroOneTests(SimpleTestCase):
    def test_every_binary_profile_recovers_cost(self):
        for n in range(1, 11):
            for base in (SocialCostMinimizer(CONCAVE, n), ServeAll()):
                for profile in itertools.product((0.0, 1.0), repeat=n):
                    result = reduce_zero_one(base, profile, CONCAVE)
                    self.assertGreaterEqual(result.revenue, CONCAVE.cost(result.served) - 1e-12, profile)
                    base_sc = social_cost(base.serve(profile), profile, CONCAVE)
                    self.assertLessEqual(social_cost(result.served, profile, CONCAVE), base_sc + 1e-12, profile)
                    for i in result.served:
                        self.assertEqual(profile[i], 1.0)
                        self.assertEqual(result.payments[i], 1.0)

    def test_single_agent_cannot_cover_the_first_unit(self):
        result = reduce_zero_one(ServeAll(), (1.0, 0.0), CONCAVE)
        self.assertEqual(result.served, frozenset())

    def test_non_binary_values_rejected(self):
        with self.assertRaises(NonBinaryValuation):
            reduce_zero_one(ServeAll(), (1.0, 0.5), CONCAVE)

    def test_any_base_algorithm_is_accepted(self):
        odd = FunctionAlgorithm(lambda v: [0] if v[1] == 1 else [0, 1], name="odd")
        mechanism = ZeroOneMechanism(odd, CONCAVE)
        report = check_expost_truthful(mechanism, [[0.0, 1.0]] * 3)
        self.assertTrue(report.passed, report.worst_violation)


class PowersOfTwoTests(SimpleTestCase):
    def test_trace_stops_at_first_covering_level(self):
        trace = powers_of_two_trace(ServeAll(), (4.0, 4.0, 2.0), PublicExcludable(5.0), h=4.0)
        self.assertEqual([level.price for level in trace.levels], [1.0, 2.0])
        self.assertEqual(trace.chosen, 1)
        self.assertEqual(trace.cost_before_chosen(), 5.0)
        self.assertEqual(trace.excluded_value((4.0, 4.0, 2.0)), 0.0)
        result = trace.result(3)
        self.assertEqual(result.payments, (2.0, 2.0, 2.0))

    def test_no_level_covers_cost(self):
        trace = powers_of_two_trace(ServeAll(), (4.0, 2.0, 1.0), PublicExcludable(5.0), h=4.0)
        self.assertIsNone(trace.chosen)
        self.assertEqual(trace.cost_before_chosen(), 15.0)
        self.assertEqual(trace.excluded_value((4.0, 2.0, 1.0)), 7.0)
        self.assertEqual(trace.result(3).served, frozenset())

    def test_base_must_be_truthful_deterministic_and_not_bossy(self):
        with self.assertRaises(ReductionConfigError):
            reduce_powers_of_two(SocialCostMinimizer(PublicExcludable(2.0), 2), (1.0, 2.0), PublicExcludable(2.0), h=2.0)
        with self.assertRaises(ReductionConfigError):
            PowersOfTwoMechanism(BernoulliServe(0.5), PublicExcludable(2.0), h=4.0)

    @hsettings(max_examples=25, derandomize=True, deadline=None)
    @given(
        c=st.integers(min_value=0, max_value=24).map(lambda x: x / 2),
        base=st.sampled_from(["serve_all", "argmax", "threshold"]),
    )
    def test_truthful_and_cost_recovering_on_every_profile(self, c, base):
        alg = {"serve_all": ServeAll, "argmax": UniqueArgmax}.get(base, lambda: FixedThreshold(2.0))()
        cost = PublicExcludable(c)
        mechanism = PowersOfTwoMechanism(alg, cost, h=4.0)
        grid = [[1.0, 2.0, 4.0]] * 3
        powers = SupportList.powers_of_two(4.0)
        for profile in itertools.product(*grid):
            result = mechanism.run(profile)
            self.assertGreaterEqual(result.revenue, cost.cost(result.served) - 1e-12)
            for i in result.served:
                self.assertLessEqual(result.payments[i], profile[i])

            trace = powers_of_two_trace(alg, profile, cost, h=4.0)
            self.assertLessEqual(trace.excluded_value(profile), 2 * trace.cost_before_chosen(), profile)
            same = reduce_support_list(alg, profile, cost, powers)
            self.assertEqual((same.served, same.payments), (result.served, result.payments))
        report = check_expost_truthful(mechanism, grid)
        self.assertTrue(report.passed, report.worst_violation)


class SupportListTests(SimpleTestCase):
    def test_support_validation(self):
        with self.assertRaises(InvalidInstance):
            SupportList((2.0, 1.0))
        with self.assertRaises(InvalidInstance):
            SupportList((0.0, 1.0))
        self.assertEqual(SupportList.powers_of_two(4.0).values, (1.0, 2.0, 4.0))
        self.assertTrue(SupportList((1.0, 3.0)).contains(3.0))
        self.assertFalse(SupportList((1.0, 3.0)).contains(2.0))

    def test_value_outside_support(self):
        with self.assertRaises(ValueOutsideSupport):
            reduce_support_list(ServeAll(), (1.0, 2.0), PublicExcludable(1.0), SupportList((1.0, 3.0)))

    def test_prices_follow_the_list(self):
        support = SupportList((1.0, 3.0, 8.0))
        result = reduce_support_list(ServeAll(), (8.0, 3.0, 1.0), PublicExcludable(5.0), support)
        self.assertEqual(result.served, frozenset({0, 1}))
        self.assertEqual(result.payments, (3.0, 3.0, 0.0))

    def test_mechanism_is_truthful_on_its_support(self):
        support = SupportList((1.0, 3.0, 8.0))
        mechanism = SupportListMechanism(ServeAll(), PublicExcludable(5.0), support)
        report = check_expost_truthful(mechanism, [list(support.values)] * 2)
        self.assertTrue(report.passed)


class NoBossyTests(SimpleTestCase):
    def test_bossy_algorithm_is_caught(self):
        violations = check_no_bossy(bossy_algorithm(), [[1.0, 2.0], [1.0, 2.0]])
        self.assertTrue(violations)
        first = violations[0]
        self.assertEqual((first.agent, first.value, first.other_value), (0, 1.0, 2.0))
        self.assertEqual(first.others, (None, 1.0))
        self.assertFalse(check_no_bossy_report(bossy_algorithm(), [[1.0, 2.0], [1.0, 2.0]]).passed)

    def test_standard_algorithms_are_not_bossy(self):
        grid = [[1.0, 2.0, 4.0]] * 3
        for alg in (ServeAll(), UniqueArgmax(), FixedThreshold(2.0)):
            self.assertEqual(check_no_bossy(alg, grid), [], alg.name)

    def test_randomized_algorithms_are_rejected(self):
        with self.assertRaises(ReductionConfigError):
            check_no_bossy(BernoulliServe(0.5), [[1.0], [1.0]])


class TruthfulnessAuditTests(SimpleTestCase):
    def test_pay_your_bid_is_not_truthful(self):
        report = check_expost_truthful(PayYourBidMechanism(ServeAll()), [[1.0, 2.0]] * 2)
        self.assertFalse(report.passed)
        self.assertEqual(report.worst_violation["report"], 1.0)
        self.assertAlmostEqual(report.worst_violation["gain"], 1.0)
