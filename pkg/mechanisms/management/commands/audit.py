from mechanisms.decorators import command_exit_codes
from mechanisms.exceptions import AuditFailure
from mechanisms.management.base import ExperimentCommand
from mechanisms.models import ExperimentRun
from mechanisms.services.audit import run_audit_suite
from mechanisms.services.experiments import build_experiment
from mechanisms.services.exports import write_audit
from mechanisms.services.journal import finish_run, start_run
from mechanisms.utils import config_hash


class Command(ExperimentCommand):
    help = 'Run the audit suite for the configured mechanism; exits 1 if any hard check fails'

    @command_exit_codes
    def handle(self, *args, **options):
        config = self.load(options)
        out_dir = self.output_dir(options, config)
        digest = config_hash(config.hashed_payload())
        self.journal = start_run('audit', digest, config.mode.seed, config.mode.kind, out_dir)

        experiment = build_experiment(config, options.get('jobs'))
        reports = run_audit_suite(
            experiment.mechanism,
            experiment.base,
            experiment.prior,
            experiment.cost,
            experiment.mode,
            experiment.disc,
            table=experiment.table,
            samples=config.mode.audit_samples,
            seed=config.mode.seed,
            jobs=options.get('jobs'),
            epsilon=config.reduction.epsilon,
        )
        write_audit(out_dir, config.output.prefix, reports, digest, config.mode.seed)

        for report in reports:
            verdict = 'pass' if report.passed else ('FAIL' if report.hard else 'note')
            line = f"  {report.name}: {verdict}"
            if report.worst_violation:
                line += f" worst={report.worst_violation}"
            self.stdout.write(self.style.ERROR(line) if report.failed else line)

        failed = [r.name for r in reports if r.failed]
        status = ExperimentRun.Status.FAILED if failed else ExperimentRun.Status.COMPLETED
        finish_run(self.journal, status, summary={"failed": failed}, reports=reports)
        self.journal = None
        if failed:
            raise AuditFailure(f"audit failed: {', '.join(failed)}")
        self.stdout.write(self.style.SUCCESS(f"All {len(reports)} audits passed; reports in {out_dir}"))
