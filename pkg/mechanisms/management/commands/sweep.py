from mechanisms.decorators import command_exit_codes
from mechanisms.management.base import ExperimentCommand
from mechanisms.models import ExperimentRun
from mechanisms.services.experiments import parse_grid, run_sweep
from mechanisms.services.exports import write_sweep
from mechanisms.services.journal import finish_run, start_run
from mechanisms.utils import config_hash


class Command(ExperimentCommand):
    help = 'Run the configured experiment over a parameter grid and write one summary row per cell'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--grid',
            action='append',
            default=[],
            help='KEY=V1,V2,... with KEY in h, n, delta, epsilon; repeat for several keys',
        )

    @command_exit_codes
    def handle(self, *args, **options):
        config = self.load(options)
        grid = parse_grid(options['grid'])
        out_dir = self.output_dir(options, config)
        digest = config_hash({'config': config.hashed_payload(), 'grid': grid})
        self.journal = start_run('sweep', digest, config.mode.seed, config.mode.kind, out_dir)

        rows = run_sweep(config, grid, options.get('jobs'))
        path = write_sweep(out_dir, config.output.prefix, rows)

        skipped = sum(1 for row in rows if row[5] == 'skipped')
        finish_run(self.journal, ExperimentRun.Status.COMPLETED, summary={'cells': len(rows), 'skipped': skipped})
        if skipped:
            self.stdout.write(self.style.WARNING(f"{skipped} of {len(rows)} cells skipped"))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(rows)} rows to {path}"))
