import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from mechanisms.models import AuditRecord, ExperimentRun

CONFIGS = Path(__file__).resolve().parents[2] / "example_data" / "configs"


class CommandTestCase(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out_dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, name, config=None, out_dir=None, **options):
        if config is not None:
            options["config"] = str(CONFIGS / config)
        out = StringIO()
        call_command(name, out_dir=str(out_dir or self.out_dir), stdout=out, **options)
        return out.getvalue()

    def exit_code(self, name, config=None, **options):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, config, **options)
        return ctx.exception.returncode

    def read_csv(self, filename, out_dir=None):
        with open((out_dir or self.out_dir) / filename, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))


class RunCommandTests(CommandTestCase):
    def test_writes_result_files(self):
        output = self.call("run", "public_excludable_log_h.yaml")
        self.assertIn("selector log_h: k=2, T=4", output)
        names = {p.name for p in self.out_dir.iterdir()}
        self.assertEqual(names, {"pe_log_h_schedule.csv", "pe_log_h_profiles.csv", "pe_log_h_summary.json", "pe_log_h_curves.csv"})

        summary = json.loads((self.out_dir / "pe_log_h_summary.json").read_text())
        self.assertEqual(summary["threshold"], 4.0)
        self.assertEqual(summary["seed"], 7)
        schedule = self.read_csv("pe_log_h_schedule.csv")
        self.assertEqual(schedule[0][:3], ["selector", "j", "threshold"])
        self.assertEqual([row[-1] for row in schedule[1:]], ["false", "false", "true"])
        self.assertEqual(len(self.read_csv("pe_log_h_profiles.csv")), 21)

    def test_log_n_and_combined_thresholds(self):
        self.call("run", "public_excludable_log_n.yaml")
        summary = json.loads((self.out_dir / "pe_log_n_summary.json").read_text())
        self.assertEqual(summary["threshold"], 2.5)
        self.call("run", "public_excludable_combined.yaml")
        summary = json.loads((self.out_dir / "summary.json").read_text())
        self.assertEqual((summary["selector"], summary["threshold"]), ("log_n", 2.5))

    def test_seed_override(self):
        self.call("run", "public_excludable_log_h.yaml", seed=3)
        summary = json.loads((self.out_dir / "pe_log_h_summary.json").read_text())
        self.assertEqual(summary["seed"], 3)

    def test_outputs_do_not_depend_on_jobs(self):
        one, two = self.out_dir / "one", self.out_dir / "two"
        self.call("run", "uniform_sampled.yaml", out_dir=one, jobs=1)
        self.call("run", "uniform_sampled.yaml", out_dir=two, jobs=2)
        files = sorted(p.name for p in one.iterdir())
        self.assertEqual(files, sorted(p.name for p in two.iterdir()))
        for name in files:
            self.assertEqual((one / name).read_bytes(), (two / name).read_bytes(), name)

    def test_exit_codes(self):
        self.assertEqual(self.exit_code("run", "negative_delta.yaml"), 2)
        self.assertEqual(self.exit_code("run", "uniform_sampled.yaml", mode="exact"), 3)
        self.assertEqual(self.exit_code("run", "public_excludable_log_h.yaml", jobs=0), 2)
        self.assertEqual(self.exit_code("run", "public_excludable_log_h.yaml", seed=-1), 2)

    def test_config_error_message_names_line(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("run", "negative_delta.yaml")
        self.assertIn("line 14: field reduction.delta", str(ctx.exception))

    def test_journal(self):
        self.call("run", "public_excludable_log_h.yaml")
        run = ExperimentRun.objects.get(command="run")
        self.assertEqual(run.status, ExperimentRun.Status.COMPLETED)
        self.assertEqual(run.seed, 7)
        self.assertEqual(run.summary["threshold"], 4.0)
        self.assertIsNotNone(run.completed_at)

    def test_failed_runs_are_journaled(self):
        self.exit_code("run", "uniform_sampled.yaml", mode="exact")
        run = ExperimentRun.objects.get(command="run")
        self.assertEqual(run.status, ExperimentRun.Status.FAILED)
        self.assertIn("discrete", run.error_message)

    @override_settings(COSTSHARE_RECORD_RUNS=False)
    def test_journal_can_be_disabled(self):
        self.call("run", "public_excludable_log_h.yaml")
        self.assertFalse(ExperimentRun.objects.exists())


class AuditCommandTests(CommandTestCase):
    def test_reduced_mechanism_passes(self):
        output = self.call("audit", "public_excludable_log_h.yaml")
        self.assertIn("bic_grid: pass", output)
        rows = self.read_csv("pe_log_h_audit.csv")
        self.assertEqual(rows[0], ["name", "passed", "hard", "key", "value", "worst_violation"])
        self.assertTrue(all(row[1] == "true" for row in rows[1:]))
        payload = json.loads((self.out_dir / "pe_log_h_audit.json").read_text())
        self.assertEqual(payload["seed"], 7)

    def test_serve_nobody_passes(self):
        self.call("audit", "serve_nobody.yaml")
        run = ExperimentRun.objects.get(command="audit")
        self.assertEqual(run.status, ExperimentRun.Status.COMPLETED)
        self.assertTrue(AuditRecord.objects.filter(run=run, name="cost_recovery", passed=True).exists())

    def test_broken_mechanism_exits_one(self):
        self.assertEqual(self.exit_code("audit", "broken_posted_price.yaml"), 1)
        payload = json.loads((self.out_dir / "audit.json").read_text())
        bic = next(r for r in payload["reports"] if r["name"] == "bic_grid")
        self.assertFalse(bic["passed"])
        self.assertEqual(bic["worst_violation"]["agent"], 0)
        self.assertEqual(bic["worst_violation"]["value"], 3.0)
        self.assertEqual(bic["worst_violation"]["report"], 1.0)
        self.assertEqual(bic["worst_violation"]["gain"], 2.0)

        run = ExperimentRun.objects.get(command="audit")
        self.assertEqual(run.status, ExperimentRun.Status.FAILED)
        self.assertEqual(run.summary, {"failed": ["bic_grid"]})
        self.assertFalse(AuditRecord.objects.get(run=run, name="bic_grid").passed)

    def test_ex_post_audit(self):
        output = self.call("audit", "powers_of_two.yaml")
        self.assertIn("expost_truthful: pass", output)
        self.assertIn("no_bossy: pass", output)


class SweepCommandTests(CommandTestCase):
    def test_one_row_per_cell(self):
        self.call("sweep", "equal_revenue_sweep.yaml", grid=["h=4,16,64"])
        rows = self.read_csv("sweep.csv")
        self.assertEqual(rows[0][:6], ["cell", "h", "n", "delta", "epsilon", "status"])
        self.assertEqual([row[1] for row in rows[1:]], ["4", "16", "64"])
        self.assertTrue(all(row[5] == "completed" for row in rows[1:]))

    def test_empty_grid_writes_only_the_header(self):
        self.call("sweep", "equal_revenue_sweep.yaml")
        rows = self.read_csv("sweep.csv")
        self.assertEqual(len(rows), 1)

    @override_settings(COSTSHARE_ENUMERATION_CAP=100)
    def test_cells_over_the_enumeration_cap_are_skipped(self):
        output = self.call("sweep", "equal_revenue_sweep.yaml", grid=["h=64", "n=2,3"])
        rows = self.read_csv("sweep.csv")
        self.assertEqual([row[5] for row in rows[1:]], ["completed", "skipped"])
        self.assertIn("1 of 2 cells skipped", output)

    def test_bad_grid(self):
        self.assertEqual(self.exit_code("sweep", "equal_revenue_sweep.yaml", grid=["q=1"]), 2)


class LowerBoundCommandTests(CommandTestCase):
    def test_small_instance_passes(self):
        output = self.call("lowerbound", h=4.0, n=64, samples=2000, cost_samples=500, seed=3)
        self.assertIn("baseline SC=1", output)
        payload = json.loads((self.out_dir / "lowerbound.json").read_text())
        self.assertTrue(payload["report"]["passed"])
        self.assertEqual(payload["parameters"]["n"], 64)
        self.assertEqual(ExperimentRun.objects.get(command="lowerbound").status, ExperimentRun.Status.COMPLETED)

    def test_invalid_parameters(self):
        self.assertEqual(self.exit_code("lowerbound", h=1.0), 2)
        self.assertEqual(self.exit_code("lowerbound", n=0), 2)
        self.assertEqual(self.exit_code("lowerbound", epsilon=1.5), 2)
