from tagger.corpus import build_vocab, corpus_stats
from tagger.management.base import TaggerCommand
from tagger.pipeline import load_corpora, resolve_labels


class Command(TaggerCommand):
    help = 'Print conversation, utterance and label counts per split plus the vocabulary size'

    def run(self, **options):
        run_config = self.load_config(options)
        corpora = load_corpora(run_config, required=("train",))
        labels = resolve_labels(run_config, corpora)
        vocab = build_vocab(corpora["train"], run_config.train.min_count)

        self.stdout.write("split\tconversations\tutterances\tutterances_per_conversation\ttokens_per_utterance\tlabels")
        for corpus in corpora.values():
            stats = corpus_stats(corpus)
            self.stdout.write(
                f"{stats.split}\t{stats.conversations}\t{stats.utterances}\t"
                f"{stats.mean_utterances:.2f}\t{stats.mean_tokens:.2f}\t{stats.labels}"
            )
        self.stdout.write(f"K\t{len(labels)}")
        self.stdout.write(f"|V|\t{len(vocab)}")
