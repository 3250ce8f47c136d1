from pathlib import Path
from typing import Optional

from django.core.management.base import BaseCommand

from mechanisms.exceptions import ConfigError
from mechanisms.schemas import ExperimentConfig
from mechanisms.services.experiments import default_output_dir, load_config, with_overrides


class ExperimentCommand(BaseCommand):
    """Shared flags: --config, --seed, --out-dir, --mode, --jobs."""

    needs_config = True
    journal = None

    def add_arguments(self, parser):
        if self.needs_config:
            parser.add_argument(
                '--config',
                type=str,
                required=True,
                help='Experiment config (YAML with instance/reduction/mode/output sections)',
            )
            parser.add_argument(
                '--mode',
                choices=['exact', 'sampled'],
                help='Override mode.kind from the config',
            )
        parser.add_argument(
            '--seed',
            type=int,
            help='Override the seed (non-negative)',
        )
        parser.add_argument(
            '--out-dir',
            type=str,
            help='Directory for result files (default: output.dir, then COSTSHARE_OUTPUT_DIR)',
        )
        parser.add_argument(
            '--jobs',
            type=int,
            help='Worker threads for sampling (default: COSTSHARE_JOBS); outputs do not depend on it',
        )

    def check_options(self, options) -> None:
        if options.get('jobs') is not None and options['jobs'] < 1:
            raise ConfigError(f"--jobs must be >= 1, got {options['jobs']}")
        if options.get('seed') is not None and options['seed'] < 0:
            raise ConfigError(f"--seed must be >= 0, got {options['seed']}")

    def load(self, options) -> ExperimentConfig:
        self.check_options(options)
        config = load_config(options['config'])
        return with_overrides(config, seed=options.get('seed'), mode=options.get('mode'))

    def output_dir(self, options, config: Optional[ExperimentConfig] = None) -> Path:
        if options.get('out_dir'):
            return Path(options['out_dir'])
        if config is not None and config.output.dir:
            return Path(config.output.dir)
        return default_output_dir()
