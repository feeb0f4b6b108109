import logging

from tagger.checkpoint import load_checkpoint
from tagger.config import RunConfig
from tagger.management.base import TaggerCommand
from tagger.management.commands.eval import load_eval_corpus
from tagger.reports import staged_file, staged_output, write_effective_config, write_predictions
from tagger.train import evaluate

logger = logging.getLogger(__name__)


class Command(TaggerCommand):
    help = 'Decode a corpus with a checkpoint; one CSV record per utterance'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='checkpoint directory written by train')
        parser.add_argument('--corpus', required=True, help='corpus file to decode')
        parser.add_argument('--output', help='prediction file (default: standard output)')
        parser.add_argument('--header', action='store_true', help='start the output with a column header row')

    def run(self, **options):
        run_config = self.load_config(options)
        checkpoint = load_checkpoint(options['checkpoint'])
        conversations = load_eval_corpus(run_config, checkpoint, options['corpus'])
        config = checkpoint.config
        evaluation = evaluate(
            checkpoint.model, conversations, checkpoint.labels.labels, config.max_batch, config.eval_workers
        )

        if options['output']:
            with staged_file(options['output']) as stream:
                count = write_predictions(stream, evaluation.predictions, checkpoint.labels, options['header'])
            logger.info(f"Wrote {count} predictions to {options['output']}")
        else:
            count = write_predictions(self.stdout, evaluation.predictions, checkpoint.labels, options['header'])

        out_dir = run_config.path('out_dir')
        if out_dir is not None:
            with staged_output(out_dir) as stage:
                write_effective_config(stage, RunConfig(train=config, paths=run_config.paths))
