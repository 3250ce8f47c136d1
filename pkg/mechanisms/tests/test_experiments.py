from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase

from mechanisms.exceptions import ConfigError, IncompatibleMode, NotDiscrete
from mechanisms.services.algorithms import FunctionAlgorithm
from mechanisms.services.bic_reduction import LOG_H, LOG_N, ReducedMechanism
from mechanisms.services.experiments import (
    build_experiment,
    load_config,
    parse_config,
    parse_grid,
    run_experiment,
    run_sweep,
    sweep_cell_config,
    sweep_cells,
    with_overrides,
)
from mechanisms.services.interim_engine import MonotonizedAlgorithm
from mechanisms.services.mechanisms import EX_POST

CONFIGS = Path(__file__).resolve().parents[2] / "example_data" / "configs"

PUBLIC_GOOD = """
instance:
  prior:
    agents: 2
    distribution:
      kind: discrete
      atoms: [[1.0, 0.5], [4.0, 0.5]]
  cost:
    kind: public_excludable
    c: 3.0
  algorithm:
    kind: serve_all
reduction:
  kind: {kind}
"""


def public_good(kind="log_h", extra=""):
    return parse_config(PUBLIC_GOOD.format(kind=kind) + extra)


class ParseConfigTests(SimpleTestCase):
    def test_error_names_line_and_field(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(CONFIGS / "negative_delta.yaml")
        self.assertIn("line 14: field reduction.delta", str(ctx.exception))

    def test_unknown_keys_are_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            public_good(extra="  bogus: 1\n")
        message = str(ctx.exception)
        self.assertIn("field reduction.bogus", message)
        self.assertIn("line 15:", message)

    def test_prior_needs_exactly_one_source(self):
        text = PUBLIC_GOOD.format(kind="log_h").replace(
            "    agents: 2\n",
            "    agents: 2\n    distributions:\n      - kind: uniform\n        lo: 1.0\n        hi: 2.0\n",
        )
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertIn("field instance.prior", str(ctx.exception))

    def test_kind_specific_parameters(self):
        with self.assertRaises(ConfigError) as ctx:
            public_good("posted_price")
        self.assertIn("posted_price needs 'price'", str(ctx.exception))

    def test_malformed_yaml(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("instance: [1, 2\n")
        self.assertIn("malformed YAML", str(ctx.exception))

    def test_config_must_be_a_mapping(self):
        with self.assertRaises(ConfigError):
            parse_config("- 1\n- 2\n")

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(CONFIGS / "does_not_exist.yaml")
        self.assertIn("cannot read config", str(ctx.exception))

    def test_defaults(self):
        config = public_good()
        self.assertEqual(config.mode.kind, "exact")
        self.assertEqual(config.mode.seed, 0)
        self.assertEqual(config.reduction.epsilon, 0.1)
        self.assertEqual(config.reduction.monotonize, "auto")

    def test_overrides_are_validated(self):
        config = with_overrides(public_good(), seed=5, mode="sampled")
        self.assertEqual((config.mode.seed, config.mode.kind), (5, "sampled"))
        with self.assertRaises(ConfigError):
            with_overrides(public_good(), mode="fast")


class BuildExperimentTests(SimpleTestCase):
    def test_log_h_config(self):
        experiment = build_experiment(load_config(CONFIGS / "public_excludable_log_h.yaml"))
        self.assertIsInstance(experiment.mechanism, ReducedMechanism)
        self.assertEqual(experiment.mechanism.threshold, 4.0)
        self.assertEqual(experiment.disc.delta, 4.0 / 32)
        self.assertEqual(experiment.slack, 0.0)

    def test_combined_config_records_both_selectors(self):
        experiment = build_experiment(load_config(CONFIGS / "public_excludable_combined.yaml"))
        self.assertEqual(set(experiment.selector_costs), {LOG_H, LOG_N})
        self.assertEqual(experiment.mechanism.schedule.selector, LOG_N)
        self.assertEqual(experiment.mechanism.threshold, 2.5)

    def test_exact_mode_needs_discrete_marginals(self):
        with self.assertRaises(NotDiscrete):
            build_experiment(with_overrides(load_config(CONFIGS / "uniform_sampled.yaml"), mode="exact"))

    def test_cost_length_must_match_agents(self):
        text = PUBLIC_GOOD.format(kind="log_h").replace(
            "    kind: public_excludable\n    c: 3.0\n",
            "    kind: additive\n    costs: [1.0, 2.0, 3.0]\n",
        )
        with self.assertRaises(ConfigError) as ctx:
            build_experiment(parse_config(text))
        self.assertIn("instance.cost.costs", str(ctx.exception))

    def test_ex_post_reductions_check_the_value_set(self):
        with self.assertRaises(IncompatibleMode):
            build_experiment(public_good("expost_01"))
        text = PUBLIC_GOOD.format(kind="expost_pow2").replace("[4.0, 0.5]", "[3.0, 0.5]")
        with self.assertRaises(IncompatibleMode):
            build_experiment(parse_config(text))

    def test_epsilon_zero_overrides_slack(self):
        experiment = build_experiment(public_good(extra="  epsilon_zero: 0.25\n"))
        self.assertEqual(experiment.slack, 0.25)
        self.assertEqual(experiment.mechanism.schedule.slack, 0.25)


class RunExperimentTests(SimpleTestCase):
    def test_log_h_summary(self):
        result = run_experiment(load_config(CONFIGS / "public_excludable_log_h.yaml"))
        s = result.summary
        self.assertEqual((s.selector, s.chosen_k, s.threshold), (LOG_H, 2, 4.0))
        self.assertAlmostEqual(s.expected_cost, 2.25)
        self.assertAlmostEqual(s.expected_revenue, 4.0)
        self.assertAlmostEqual(s.expected_social_cost, 3.25)
        self.assertAlmostEqual(s.base_social_cost, 3.0)
        self.assertEqual(s.seed, 7)
        self.assertEqual(s.curve_source, "closed_form")
        self.assertEqual(len(result.profile_rows), 20)
        self.assertEqual([row[-1] for row in result.schedule_rows], [False, False, True])

    def test_powers_of_two_recovers_cost_on_every_profile(self):
        result = run_experiment(load_config(CONFIGS / "powers_of_two.yaml"))
        self.assertEqual(result.summary.extra["guarantee"], EX_POST)
        self.assertAlmostEqual(result.summary.extra["profile_recovery_rate"], 1.0)
        self.assertIsNone(result.summary.threshold)
        self.assertEqual(result.schedule_rows, [])

    def test_zero_one_cardinality(self):
        result = run_experiment(load_config(CONFIGS / "zero_one_cardinality.yaml"))
        self.assertAlmostEqual(result.summary.extra["profile_recovery_rate"], 1.0)
        self.assertGreaterEqual(result.summary.expected_revenue, result.summary.expected_cost - 1e-9)

    def test_pooled_runs_compare_against_the_original_algorithm(self):
        config = parse_config(
            "instance:\n"
            "  prior:\n"
            "    agents: 1\n"
            "    distribution: {kind: discrete, atoms: [[1.0, 0.5], [2.0, 0.5]]}\n"
            "  cost: {kind: public_excludable, c: 0.5}\n"
            "  algorithm: {kind: serve_all}\n"
            "reduction:\n"
            "  kind: log_h\n"
        )
        serve_low = FunctionAlgorithm(lambda v: [0] if v[0] < 1.5 else [], name="serve_low")
        with mock.patch("mechanisms.services.experiments.build_algorithm", return_value=serve_low):
            experiment = build_experiment(config)
            result = run_experiment(config, with_profiles=False)

        self.assertIs(experiment.base, serve_low)
        self.assertIsInstance(experiment.mechanism.base, MonotonizedAlgorithm)
        # 0.5 * C({0}) + 0.5 * 2 for the unpooled algorithm; pooling would give 1.0
        self.assertAlmostEqual(result.summary.base_social_cost, 1.25)
        self.assertEqual(result.summary.extra["base"], "serve_low")

    def test_config_hash_ignores_output_section(self):
        a = run_experiment(public_good(extra="output:\n  prefix: a_\n"), with_profiles=False)
        b = run_experiment(public_good(extra="output:\n  prefix: b_\n"), with_profiles=False)
        self.assertEqual(a.summary.config_hash, b.summary.config_hash)


class SweepTests(SimpleTestCase):
    def test_parse_grid(self):
        grid = parse_grid(["h=4,16,64", "n=2,3"])
        self.assertEqual(grid, {"h": [4.0, 16.0, 64.0], "n": [2, 3]})

    def test_parse_grid_errors(self):
        for items in (["x=1"], ["h"], ["h="], ["n=1.5"], ["n=0"], ["h=a"], ["h=4", "h=8"]):
            with self.assertRaises(ConfigError, msg=items):
                parse_grid(items)

    def test_cells_follow_key_order(self):
        cells = sweep_cells({"n": [2, 3], "h": [4.0, 16.0]})
        self.assertEqual(cells, [
            {"h": 4.0, "n": 2},
            {"h": 4.0, "n": 3},
            {"h": 16.0, "n": 2},
            {"h": 16.0, "n": 3},
        ])
        self.assertEqual(sweep_cells({}), [])

    def test_cell_config_rewrites_fields(self):
        config = load_config(CONFIGS / "equal_revenue_sweep.yaml")
        cell = sweep_cell_config(config, {"h": 16.0, "n": 2, "delta": 0.5})
        self.assertEqual(cell.instance.prior.distribution.h, 16.0)
        self.assertEqual(cell.instance.prior.agents, 2)
        self.assertEqual(cell.reduction.delta, 0.5)

    def test_cell_config_errors(self):
        with self.assertRaises(ConfigError):
            sweep_cell_config(public_good(), {"h": 16.0})
        text = PUBLIC_GOOD.format(kind="log_h").replace(
            "    agents: 2\n    distribution:\n      kind: discrete\n      atoms: [[1.0, 0.5], [4.0, 0.5]]\n",
            "    distributions:\n      - kind: discrete_equal_revenue\n        h: 4\n"
            "      - kind: discrete_equal_revenue\n        h: 4\n",
        )
        with self.assertRaises(ConfigError):
            sweep_cell_config(parse_config(text), {"n": 3})

    def test_run_sweep_over_delta(self):
        rows = run_sweep(public_good(), {"delta": [0.5, 0.25]})
        self.assertEqual([row[0] for row in rows], [0, 1])
        self.assertEqual([row[5] for row in rows], ["completed", "completed"])
        self.assertEqual([row[8] for row in rows], [4.0, 4.0])

    def test_incompatible_cells_are_skipped(self):
        rows = run_sweep(with_overrides(load_config(CONFIGS / "uniform_sampled.yaml"), mode="exact"), {"epsilon": [0.1]})
        self.assertEqual(rows[0][5], "skipped")
        self.assertIn("discrete", rows[0][-1])
