import logging
from dataclasses import asdict
from pathlib import Path

from tagger.config import dump_settings
from tagger.corpus import SPLITS, SYNTH_SCHEMES, SynthSizes, dump_corpus, synth_corpus
from tagger.exceptions import ConfigError
from tagger.management.base import TaggerCommand
from tagger.reports import CONFIG_FILE, staged_file, staged_output

logger = logging.getLogger(__name__)


def parse_splits(text):
    try:
        counts = [int(part) for part in text.split(',')]
    except ValueError:
        raise ConfigError(f"--splits expects three integers a,b,c, got {text!r}") from None
    if len(counts) != len(SPLITS) or min(counts) < 1:
        raise ConfigError(f"--splits expects three positive integers a,b,c, got {text!r}")
    return counts


def synth_settings(scheme, seed, sizes, splits=None):
    """Generator settings in the run configuration syntax; ``splits`` replaces the conversation count."""
    settings = {'scheme': scheme, 'seed': seed, **asdict(sizes)}
    if splits is not None:
        del settings['conversations']
        settings['splits'] = ','.join(str(count) for count in splits)
    return dump_settings(settings)


class Command(TaggerCommand):
    help = 'Write a synthetic corpus (or train/valid/test splits) for a generator scheme'
    common_options = False

    def add_arguments(self, parser):
        parser.add_argument('--scheme', required=True, choices=SYNTH_SCHEMES)
        parser.add_argument('--conversations', type=int, default=100)
        parser.add_argument('--labels', type=int, default=4)
        parser.add_argument('--min-utterances', type=int, default=3)
        parser.add_argument('--max-utterances', type=int, default=8)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out', required=True, help='corpus file, or a directory with --splits')
        parser.add_argument('--splits', help='a,b,c conversations for train.jsonl, valid.jsonl, test.jsonl')

    def run(self, **options):
        scheme, seed = options['scheme'], options['seed']

        def sizes(conversations):
            return SynthSizes(
                conversations=conversations,
                labels=options['labels'],
                min_utterances=options['min_utterances'],
                max_utterances=options['max_utterances'],
            )

        if options['splits']:
            counts = parse_splits(options['splits'])
            settings = synth_settings(scheme, seed, sizes(counts[0]), splits=counts)
            with staged_output(options['out']) as stage:
                for offset, (split, count) in enumerate(zip(SPLITS, counts)):
                    corpus = synth_corpus(scheme, sizes(count), seed + offset, split)
                    (Path(stage) / f"{split}.jsonl").write_text(dump_corpus(corpus), encoding='utf-8')
                (Path(stage) / CONFIG_FILE).write_text(settings, encoding='utf-8')
            logger.info(f"Wrote {scheme} splits {counts} to {options['out']}")
            return

        out = Path(options['out'])
        corpus_sizes = sizes(options['conversations'])
        corpus = synth_corpus(scheme, corpus_sizes, seed)
        with staged_file(out) as stream:
            stream.write(dump_corpus(corpus))
        # One settings file per corpus file, so corpora can share a directory.
        with staged_file(out.with_name(f"{out.name}.{CONFIG_FILE}")) as stream:
            stream.write(synth_settings(scheme, seed, corpus_sizes))
        logger.info(f"Wrote {len(corpus)} {scheme} conversations to {out}")
