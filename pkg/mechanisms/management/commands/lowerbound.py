from mechanisms.decorators import command_exit_codes
from mechanisms.exceptions import AuditFailure, ConfigError
from mechanisms.management.base import ExperimentCommand
from mechanisms.models import ExperimentRun
from mechanisms.services.audit import lower_bound_experiment
from mechanisms.services.exports import write_lowerbound
from mechanisms.services.journal import finish_run, start_run
from mechanisms.utils import config_hash, format_number


class Command(ExperimentCommand):
    help = 'Equal-revenue lower-bound experiment: sampler calibration and social cost against the floor'
    needs_config = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--h', type=float, default=16.0, help='Value ratio h > 1')
        parser.add_argument('--n', type=int, default=1024, help='Number of agents')
        parser.add_argument('--samples', type=int, default=100_000, help='Monte Carlo profiles')
        parser.add_argument('--selector', choices=['combined', 'log_h', 'log_n'], default='combined')
        parser.add_argument('--delta', type=float, help='Grid width (default v_max/64)')
        parser.add_argument('--epsilon', type=float, default=0.1)
        parser.add_argument('--epsilon-zero', type=float, help='Stopping-test slack (default 2*eps*n*v_max)')
        parser.add_argument('--cost-samples', type=int, default=4_000, help='Profiles in the cost table')
        parser.add_argument('--prefix', type=str, default='')

    def parameters(self, options) -> dict:
        self.check_options(options)
        if not options['h'] > 1:
            raise ConfigError(f"--h must be > 1, got {options['h']}")
        for name in ('n', 'samples', 'cost_samples'):
            if options[name] < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must be >= 1, got {options[name]}")
        if options['delta'] is not None and options['delta'] <= 0:
            raise ConfigError(f"--delta must be > 0, got {options['delta']}")
        if not 0 < options['epsilon'] < 1:
            raise ConfigError(f"--epsilon must lie in (0, 1), got {options['epsilon']}")
        if options['epsilon_zero'] is not None and options['epsilon_zero'] < 0:
            raise ConfigError(f"--epsilon-zero must be >= 0, got {options['epsilon_zero']}")
        return {
            'h': options['h'],
            'n': options['n'],
            'samples': options['samples'],
            'seed': options['seed'] if options['seed'] is not None else 0,
            'selector': options['selector'],
            'delta': options['delta'],
            'epsilon': options['epsilon'],
            'epsilon_zero': options['epsilon_zero'],
            'cost_samples': options['cost_samples'],
        }

    @command_exit_codes
    def handle(self, *args, **options):
        params = self.parameters(options)
        out_dir = self.output_dir(options)
        self.journal = start_run('lowerbound', config_hash(params), params['seed'], 'sampled', out_dir)

        report = lower_bound_experiment(jobs=options.get('jobs'), **params)
        path = write_lowerbound(out_dir, options['prefix'], report, params)

        m = report.measured
        self.stdout.write(
            f"E[V]={format_number(m['expected_total_value'])} (target {format_number(m['target_total_value'])}), "
            f"SC={format_number(m['mechanism_social_cost'])} floor={format_number(m['social_cost_floor'])}, "
            f"baseline SC={format_number(m['baseline_social_cost'])}, "
            f"Pr[served]={format_number(m['nonempty_rate'])}"
        )
        status = ExperimentRun.Status.COMPLETED if report.passed else ExperimentRun.Status.FAILED
        finish_run(self.journal, status, summary=params, reports=[report])
        self.journal = None
        if not report.passed:
            raise AuditFailure(f"lower-bound checks failed; report in {path}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))
