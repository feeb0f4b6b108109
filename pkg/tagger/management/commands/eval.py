import logging

from tagger.checkpoint import load_checkpoint
from tagger.config import RunConfig
from tagger.corpus import apply_class_map, load_class_map, load_corpus
from tagger.management.base import TaggerCommand
from tagger.reports import staged_output, write_confusion, write_effective_config
from tagger.train import evaluate

logger = logging.getLogger(__name__)


def load_eval_corpus(run_config, checkpoint, path):
    config = checkpoint.config
    corpus = load_corpus(path, 'test', require_pos=config.pos.enabled, normalize=config.normalize)
    if run_config.path('class_map_path'):
        apply_class_map(corpus, load_class_map(run_config.path('class_map_path')))
    return checkpoint.encode(corpus)


class Command(TaggerCommand):
    help = 'Evaluate a checkpoint on a corpus; prints the accuracy and writes the confusion matrices'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='checkpoint directory written by train')
        parser.add_argument('--corpus', required=True, help='corpus file to evaluate on')

    def run(self, **options):
        run_config = self.load_config(options)
        out_dir = self.require_path(run_config, 'out_dir')
        checkpoint = load_checkpoint(options['checkpoint'])
        conversations = load_eval_corpus(run_config, checkpoint, options['corpus'])

        config = checkpoint.config
        evaluation = evaluate(
            checkpoint.model, conversations, checkpoint.labels.labels, config.max_batch, config.eval_workers
        )
        metrics = evaluation.metrics
        for true_label, predicted_label, count in metrics.most_confused(5):
            logger.info(f"Confused {true_label} -> {predicted_label}: {count}")

        with staged_output(out_dir) as stage:
            write_effective_config(stage, RunConfig(train=config, paths=run_config.paths))
            write_confusion(stage, metrics)
        self.stdout.write(f"accuracy {metrics.accuracy:.6f}")
