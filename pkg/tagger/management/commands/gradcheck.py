import logging
from dataclasses import replace

from tagger.config import RunConfig, dump_settings
from tagger.exceptions import NumericError
from tagger.management.base import TaggerCommand
from tagger.reports import staged_output, write_effective_config
from tagger.train import toy_config, toy_gradient_check

logger = logging.getLogger(__name__)

THRESHOLD = 1e-4


class Command(TaggerCommand):
    help = (
        'Finite-difference gradient check of the configured model at toy size; '
        'prints the toy configuration as "# key=value" lines, then the max relative error per parameter'
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--hidden-size', type=int, default=4, help='recurrent width, at most 8')
        parser.add_argument('--embedding-dim', type=int, default=6)
        parser.add_argument('--labels', type=int, default=3)
        parser.add_argument('--utterances', type=int, default=3)
        parser.add_argument('--eps', type=float, default=1e-5)

    def run(self, **options):
        run_config = self.load_config(options)
        config = toy_config(replace(
            run_config.train,
            hidden_size=options['hidden_size'],
            embedding_dim=options['embedding_dim'],
        ))
        effective = RunConfig(train=config, paths=run_config.paths)
        toy = {'toy.labels': options['labels'], 'toy.utterances': options['utterances'], 'toy.eps': options['eps']}
        for line in (effective.dump() + dump_settings(toy)).splitlines():
            self.stdout.write(f"# {line}")
        logger.info(
            f"Gradient check at hidden_size={config.hidden_size} embedding_dim={config.embedding_dim} "
            f"variant={config.variant} classifier={config.classifier}"
        )

        report = toy_gradient_check(
            config, num_labels=options['labels'], utterances=options['utterances'], eps=options['eps']
        )
        for name, error in report.items():
            self.stdout.write(f"{name}\t{error:.3e}")
        worst = max(report.values())
        self.stdout.write(f"max_relative_error\t{worst:.3e}")

        out_dir = run_config.path('out_dir')
        if out_dir is not None:
            with staged_output(out_dir) as stage:
                write_effective_config(stage, effective)

        failed = [name for name, error in report.items() if error >= THRESHOLD]
        if failed:
            raise NumericError(f"gradient check above {THRESHOLD:g} for: {', '.join(failed)}")
