from mechanisms.decorators import command_exit_codes
from mechanisms.management.base import ExperimentCommand
from mechanisms.models import ExperimentRun
from mechanisms.services.experiments import run_experiment
from mechanisms.services.exports import write_run
from mechanisms.services.journal import finish_run, start_run
from mechanisms.utils import config_hash, format_number


class Command(ExperimentCommand):
    help = 'Run the configured cost-recovering reduction and write schedule, profile and summary files'

    @command_exit_codes
    def handle(self, *args, **options):
        config = self.load(options)
        out_dir = self.output_dir(options, config)
        self.journal = start_run('run', config_hash(config.hashed_payload()), config.mode.seed, config.mode.kind, out_dir)

        result = run_experiment(config, options.get('jobs'))
        paths = write_run(out_dir, config.output.prefix, result)
        finish_run(self.journal, ExperimentRun.Status.COMPLETED, summary=result.summary.model_dump())

        s = result.summary
        self.stdout.write(f"{s.reduction} ({s.mode}, seed {s.seed}) config {s.config_hash[:12]}")
        if s.selector:
            self.stdout.write(f"  selector {s.selector}: k={s.chosen_k}, T={format_number(s.threshold)}")
        self.stdout.write(
            f"  E[cost]={format_number(s.expected_cost)} E[revenue]={format_number(s.expected_revenue)} "
            f"E[SC]={format_number(s.expected_social_cost)} base E[SC]={format_number(s.base_social_cost)} "
            f"ratio={format_number(s.ratio)}"
        )
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(paths)} files to {out_dir}"))
