import logging

from tagger.management.base import TaggerCommand
from tagger.pipeline import prepare_run
from tagger.reports import format_ablation_table, staged_output, write_ablation, write_effective_config
from tagger.train import ablate

logger = logging.getLogger(__name__)


class Command(TaggerCommand):
    help = 'Train the six variant x classifier cells and print the 3x2 accuracy table'

    def run(self, **options):
        run_config = self.load_config(options)
        out_dir = self.require_path(run_config, 'out_dir')
        data = prepare_run(run_config)
        if data.test is None:
            logger.warning("No test split configured; the table reports validation accuracy")
        eval_data = data.test if data.test is not None else data.valid

        table = ablate(
            run_config.train, data.train, data.valid, eval_data, len(data.vocab), data.labels.labels,
            pretrained=data.pretrained,
        )
        with staged_output(out_dir) as stage:
            write_effective_config(stage, run_config)
            write_ablation(stage, table)
        self.stdout.write(format_ablation_table(table), ending='')
