import logging
import sys

from django.core.management.base import BaseCommand, CommandError

from tagger.config import load_run_config
from tagger.exceptions import ConfigError, TaggerError

logger = logging.getLogger(__name__)


class TaggerCommand(BaseCommand):
    """
    Base for the tagger commands.

    Domain errors become ``CommandError`` with the matching exit code
    (1 config, 2 data, 3 numeric); argument errors exit with 1.
    """

    common_options = True

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)

        def error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(ConfigError.exit_code, f"{parser.prog}: error: {message}\n")
            raise CommandError(f"Error: {message}", returncode=ConfigError.exit_code)

        parser.error = error
        return parser

    def add_arguments(self, parser):
        if self.common_options:
            parser.add_argument('--config', help='key=value run configuration file')
            parser.add_argument('--seed', type=int, help='random seed, overrides the config file')
            parser.add_argument('--out', help='output directory, overrides the config file')
            parser.add_argument(
                '--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
                help='override one configuration key (repeatable)',
            )

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except TaggerError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e}")
            raise CommandError(str(e), returncode=e.exit_code) from e

    def run(self, **options):
        raise NotImplementedError

    def load_config(self, options):
        return load_run_config(
            options.get('config'),
            overrides=options.get('overrides') or (),
            seed=options.get('seed'),
            out_dir=options.get('out'),
        )

    def require_path(self, run_config, key):
        path = run_config.path(key)
        if path is None:
            raise ConfigError(f"{key} is not configured (config file, --set {key}=... or a flag)")
        return path
