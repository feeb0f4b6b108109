import logging

from tagger.checkpoint import save_checkpoint
from tagger.exceptions import NumericError
from tagger.management.base import TaggerCommand
from tagger.network import build_model
from tagger.pipeline import prepare_run
from tagger.reports import staged_output, write_effective_config, write_history
from tagger.train import train

logger = logging.getLogger(__name__)


class Command(TaggerCommand):
    help = 'Train a dialogue act tagger; writes the checkpoint, history.tsv and effective_config.txt'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--params-format', choices=['text', 'npz'], default='text',
            help='parameter container inside the checkpoint (default: text)',
        )

    def run(self, **options):
        run_config = self.load_config(options)
        out_dir = self.require_path(run_config, 'out_dir')
        config = run_config.train
        data = prepare_run(run_config)

        model = build_model(
            config,
            len(data.vocab),
            len(data.labels),
            len(data.pos_vocab) if data.pos_vocab is not None else 0,
            data.pretrained,
        )
        result = train(model, data.train, data.valid, config, data.labels.labels)

        with staged_output(out_dir) as stage:
            write_effective_config(stage, run_config)
            write_history(stage, result.history)
            save_checkpoint(
                stage / 'checkpoint', result.model, data.vocab, data.labels, data.pos_vocab,
                params_format=options['params_format'],
            )

        if result.diverged:
            raise NumericError(
                f"training diverged after {len(result.history)} epoch(s); "
                f"the last good checkpoint was written to {out_dir}"
            )
        self.stdout.write(f"best_epoch {result.best_epoch}")
        self.stdout.write(f"valid_accuracy {result.best_valid_acc:.6f}")
