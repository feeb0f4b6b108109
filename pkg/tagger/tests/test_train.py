import math
from dataclasses import replace
from types import SimpleNamespace
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from tagger.config import TrainConfig
from tagger.corpus import LabelSet, SynthSizes, build_batch, build_vocab, encode_corpus, make_batches, synth_corpus
from tagger.exceptions import ConfigError, DataError, NumericError
from tagger.extensions import AttentionConfig, PosConfig
from tagger.network import build_model
from tagger.numcore import Parameter, scale
from tagger.train import (
    AdadeltaState,
    EarlyStopping,
    Metrics,
    adadelta_step,
    clip_gradients,
    evaluate,
    lr_at,
    toy_config,
    toy_gradient_check,
    train,
)

from .utils import tiny_config


def encoded_splits(scheme="lexical_labels", counts=(30, 8), seed=0, pos=False):
    sizes = dict(min_utterances=2, max_utterances=5, min_tokens=2, max_tokens=5)
    train_corpus = synth_corpus(scheme, SynthSizes(conversations=counts[0], **sizes), seed, "train")
    valid_corpus = synth_corpus(scheme, SynthSizes(conversations=counts[1], **sizes), seed + 1, "valid")
    vocab = build_vocab(train_corpus)
    pos_vocab = build_vocab(train_corpus, field="pos") if pos else None
    labels = LabelSet(train_corpus.label_set)
    return (
        encode_corpus(train_corpus, vocab, labels, pos_vocab),
        encode_corpus(valid_corpus, vocab, labels, pos_vocab),
        vocab,
        labels,
        pos_vocab,
    )


class OptimizerTests(SimpleTestCase):
    def test_first_adadelta_step_closed_form(self):
        param = Parameter([1.0, -2.0], "w", decay=False)
        param.grad[...] = [0.5, -1.0]
        adadelta_step([param], AdadeltaState(rho=0.95, eps=1e-6), lr=1.0, weight_decay=0.0)
        for start, grad, value in zip((1.0, -2.0), (0.5, -1.0), param.data):
            expected = start - math.sqrt(1e-6) / math.sqrt(0.05 * grad * grad + 1e-6) * grad
            self.assertAlmostEqual(value, expected, places=14)

    def test_weight_decay_shrinks_decayed_parameters_only(self):
        weight = Parameter([2.0, -3.0], "W")
        bias = Parameter([2.0, -3.0], "b", decay=False)
        state = AdadeltaState()
        for _ in range(3):
            adadelta_step([weight, bias], state, lr=1.0, weight_decay=0.1)
        self.assertTrue(np.all(np.abs(weight.data) < [2.0, 3.0]))
        np.testing.assert_array_equal(bias.data, [2.0, -3.0])

    def test_non_finite_gradient_aborts_before_any_update(self):
        good = Parameter([1.0], "a")
        bad = Parameter([1.0], "b")
        good.grad[...] = 1.0
        bad.grad[...] = np.nan
        with self.assertRaises(NumericError):
            adadelta_step([good, bad], AdadeltaState(), lr=1.0, weight_decay=0.0)
        np.testing.assert_array_equal(good.data, [1.0])

    def test_clipping(self):
        a, b = Parameter([0.0, 0.0], "a"), Parameter([0.0], "b")
        a.grad[...] = [3.0, 0.0]
        b.grad[...] = [4.0]
        self.assertEqual(clip_gradients([a, b], 1.0), 5.0)
        np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])

    def test_learning_rate_schedule(self):
        config = TrainConfig()
        self.assertEqual([lr_at(e, config) for e in (0, 4, 5, 12)], [1.0, 1.0, 0.5, 0.25])


class EarlyStoppingTests(SimpleTestCase):
    def test_keeps_the_first_best_epoch(self):
        stopper = EarlyStopping(patience=2)
        improved = [stopper.update(epoch, score) for epoch, score in enumerate([0.5, 0.6, 0.6, 0.55], start=1)]
        self.assertEqual(improved, [True, True, False, False])
        self.assertEqual(stopper.best_epoch, 2)
        self.assertTrue(stopper.should_stop)


class MetricsTests(SimpleTestCase):
    def test_accuracy_and_confusion(self):
        metrics = Metrics.from_predictions(["a", "b"], [0, 0, 1, 1], [0, 1, 1, 0])
        self.assertEqual(metrics.accuracy, 0.5)
        np.testing.assert_array_equal(metrics.confusion, [[1, 1], [1, 1]])
        np.testing.assert_array_equal(metrics.class_counts, [2, 2])
        np.testing.assert_allclose(metrics.percentages(), [[50.0, 50.0], [50.0, 50.0]])

    def test_most_confused(self):
        metrics = Metrics.from_predictions(
            ["a", "b", "c"], [0, 0, 0, 1, 2, 2, 2], [1, 1, 0, 1, 0, 1, 2]
        )
        self.assertEqual(metrics.most_confused(2), [("a", "b", 2), ("c", "a", 1)])

    def test_empty_row_percentages(self):
        metrics = Metrics.from_predictions(["a", "b"], [0], [0])
        np.testing.assert_array_equal(metrics.percentages()[1], [0.0, 0.0])


class ModelAssemblyTests(SimpleTestCase):
    def setUp(self):
        self.train_data, _, self.vocab, self.labels, self.pos_vocab = encoded_splits(pos=True)
        self.batch = make_batches(self.train_data, 8)[0]

    def test_all_variants_build_and_score(self):
        widths = {"WE": 8, "WE_UL": 16, "WE_UL_CL": 16}
        for variant in ("WE", "WE_UL", "WE_UL_CL"):
            for classifier in ("LR", "CRF"):
                config = tiny_config(variant=variant, classifier=classifier)
                model = build_model(config, len(self.vocab), len(self.labels))
                self.assertEqual(model.feature_width, widths[variant])
                loss = model.loss(self.batch, training=False)
                self.assertTrue(np.isfinite(loss.item()) and loss.item() > 0)
                paths = model.predict(self.batch)
                self.assertEqual([len(p) for p in paths], [self.batch.length] * self.batch.size)

    def test_extension_widths(self):
        config = tiny_config(
            attention=AttentionConfig(enabled=True, window=2),
            pos=PosConfig(enabled=True, dim=4, hidden_size=3),
        )
        model = build_model(config, len(self.vocab), len(self.labels), len(self.pos_vocab))
        self.assertEqual(model.feature_width, 2 * 16 + 6)
        self.assertTrue(np.isfinite(model.loss(self.batch, training=False).item()))

        config = replace(config, pos=PosConfig(enabled=True, dim=4, hidden_size=3, fusion_point="pre_conversation"))
        model = build_model(config, len(self.vocab), len(self.labels), len(self.pos_vocab))
        self.assertIn("conversation.l0.fwd.W", model.params)
        self.assertEqual(model.params["conversation.l0.fwd.W"].shape, (32, 16 + 6))

    def test_invalid_combinations(self):
        with self.assertRaises(ConfigError):
            build_model(tiny_config(variant="WE", attention=AttentionConfig(enabled=True)), 10, 3)
        with self.assertRaises(ConfigError):
            build_model(
                tiny_config(variant="WE_UL", pos=PosConfig(enabled=True, fusion_point="pre_conversation")), 10, 3, 5
            )
        with self.assertRaises(ConfigError):
            build_model(tiny_config(pos=PosConfig(enabled=True)), 10, 3, 0)

    def test_predictions_do_not_depend_on_batching(self):
        model = build_model(tiny_config(), len(self.vocab), len(self.labels))
        grouped = {}
        for max_batch in (1, 3, 64):
            for batch in make_batches(self.train_data, max_batch):
                for conversation, path in zip(batch.conversations, model.predict(batch)):
                    grouped.setdefault(conversation.id, []).append(path)
        for conversation in self.train_data:
            alone = model.predict(build_batch([conversation]))[0]
            for path in grouped[conversation.id]:
                self.assertEqual(path, alone)


class TrainingTests(SimpleTestCase):
    def setUp(self):
        self.train_data, self.valid_data, self.vocab, self.labels, _ = encoded_splits()

    def run_training(self, config):
        model = build_model(config, len(self.vocab), len(self.labels))
        return train(model, self.train_data, self.valid_data, config, self.labels.labels)

    def test_history_records_every_epoch(self):
        result = self.run_training(tiny_config(max_epochs=2))
        self.assertEqual([r.epoch for r in result.history], [1, 2])
        self.assertEqual([r.lr for r in result.history], [1.0, 1.0])
        for record in result.history:
            self.assertTrue(record.train_loss > 0 and 0.0 <= record.valid_acc <= 1.0)
        self.assertEqual(result.best_valid_acc, max(r.valid_acc for r in result.history))

    def test_same_seed_same_run(self):
        first = self.run_training(tiny_config(max_epochs=2, dropout=0.2))
        second = self.run_training(tiny_config(max_epochs=2, dropout=0.2))
        self.assertEqual(first.history, second.history)
        for name, value in first.model.params.state_dict().items():
            np.testing.assert_array_equal(value, second.model.params[name].data)

    def test_best_checkpoint_is_returned(self):
        result = self.run_training(tiny_config(max_epochs=4, early_stop_patience=1))
        accuracy = evaluate(result.model, self.valid_data, self.labels.labels, 16).metrics.accuracy
        self.assertEqual(accuracy, result.best_valid_acc)

    def test_loss_falls_on_the_lexical_corpus(self):
        result = self.run_training(tiny_config(max_epochs=5, early_stop_patience=5))
        losses = [record.train_loss for record in result.history]
        self.assertEqual(len(losses), 5)
        for before, after in zip(losses, losses[1:]):
            self.assertLess(after, before)

    def test_falling_validation_accuracy_stops_after_patience(self):
        config = tiny_config(max_epochs=20, early_stop_patience=5)
        model = build_model(config, len(self.vocab), len(self.labels))
        snapshots = []

        def falling(model, conversations, labels, max_batch=64, workers=1):
            snapshots.append(model.params.state_dict())
            return SimpleNamespace(metrics=SimpleNamespace(accuracy=0.9 - 0.1 * len(snapshots)))

        with mock.patch("tagger.train.evaluate", side_effect=falling):
            result = train(model, self.train_data, self.valid_data, config, self.labels.labels)
        self.assertEqual([r.epoch for r in result.history], [1, 2, 3, 4, 5, 6])
        self.assertEqual(result.best_epoch, 1)
        self.assertAlmostEqual(result.best_valid_acc, 0.8)
        for name, value in snapshots[0].items():
            np.testing.assert_array_equal(model.params[name].data, value)
        self.assertFalse(np.array_equal(snapshots[0]["crf.W_u"], snapshots[-1]["crf.W_u"]))

    def test_divergence_keeps_the_last_good_checkpoint(self):
        config = tiny_config(max_epochs=3)
        model = build_model(config, len(self.vocab), len(self.labels))
        batches_per_epoch = len(make_batches(self.train_data, config.max_batch))
        original = model.loss
        calls = []

        def diverging(batch, training=True, rng=None):
            calls.append(batch)
            loss = original(batch, training, rng)
            return scale(loss, math.nan) if len(calls) > batches_per_epoch else loss

        model.loss = diverging
        result = train(model, self.train_data, self.valid_data, config, self.labels.labels)
        self.assertTrue(result.diverged)
        self.assertEqual(len(result.history), 1)
        for param in model.params:
            self.assertTrue(np.all(np.isfinite(param.data)))
        accuracy = evaluate(model, self.valid_data, self.labels.labels, config.max_batch).metrics.accuracy
        self.assertEqual(accuracy, result.history[0].valid_acc)

    def test_empty_corpus(self):
        with self.assertRaises(DataError):
            self.run_training_on([], self.valid_data)

    def run_training_on(self, train_data, valid_data):
        config = tiny_config()
        model = build_model(config, len(self.vocab), len(self.labels))
        return train(model, train_data, valid_data, config)

    def test_evaluate_matches_a_recount(self):
        model = build_model(tiny_config(), len(self.vocab), len(self.labels))
        evaluation = evaluate(model, self.valid_data, self.labels.labels, max_batch=4, workers=3)
        correct = sum(
            int(gold == predicted)
            for conversation, path in evaluation.predictions
            for gold, predicted in zip(conversation.labels.tolist(), path)
        )
        total = sum(len(c) for c in self.valid_data)
        self.assertEqual(evaluation.metrics.accuracy, correct / total)
        np.testing.assert_array_equal(
            evaluation.metrics.class_counts, np.bincount(np.concatenate([c.labels for c in self.valid_data]), minlength=4)
        )
        serial = evaluate(model, self.valid_data, self.labels.labels, max_batch=4, workers=1)
        self.assertEqual([p for _, p in serial.predictions], [p for _, p in evaluation.predictions])


class GradientCheckTests(SimpleTestCase):
    def test_full_model_at_toy_size(self):
        config = TrainConfig(hidden_size=4, embedding_dim=6)
        report = toy_gradient_check(config)
        self.assertIn("crf.T", report)
        self.assertLess(max(report.values()), 1e-4)

    def test_passes_across_seeds(self):
        for seed in range(5):
            report = toy_gradient_check(TrainConfig(hidden_size=4, embedding_dim=6, seed=seed))
            self.assertLess(max(report.values()), 1e-4, f"seed {seed}")

    def test_toy_config_caps_pos_widths(self):
        config = toy_config(TrainConfig(hidden_size=4, embedding_dim=6, pos=PosConfig(enabled=True)))
        self.assertLessEqual(config.pos.dim, 6)
        self.assertLessEqual(config.pos.hidden_size, 4)

    def test_with_attention_and_pos(self):
        config = TrainConfig(
            hidden_size=4,
            embedding_dim=6,
            attention=AttentionConfig(enabled=True, window=2),
            pos=PosConfig(enabled=True),
        )
        report = toy_gradient_check(config)
        self.assertIn("pos.embedding", report)
        self.assertLess(max(report.values()), 1e-4)

    def test_softmax_head(self):
        report = toy_gradient_check(TrainConfig(hidden_size=4, embedding_dim=6, classifier="LR"))
        self.assertIn("softmax.W_u", report)
        self.assertLess(max(report.values()), 1e-4)

    def test_hidden_size_guard(self):
        with self.assertRaises(ConfigError):
            toy_gradient_check(TrainConfig(hidden_size=300, embedding_dim=6))
