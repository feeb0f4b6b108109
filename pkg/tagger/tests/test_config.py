import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from tagger.config import TrainConfig, load_run_config, parse_value, read_config_file
from tagger.exceptions import ConfigError


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "run.cfg"

    def tearDown(self):
        self.tmp.cleanup()

    def test_comments_and_types(self):
        self.path.write_text(
            "# desk run\n"
            "hidden_size = 16\n"
            "\n"
            "dropout=0.1  # lighter\n"
            "bidirectional=false\n"
            "attention.enabled=yes\n"
            "attention.window=all\n"
            "train_path=data/train.jsonl\n",
            encoding="utf-8",
        )
        run = load_run_config(self.path)
        self.assertEqual(run.train.hidden_size, 16)
        self.assertEqual(run.train.dropout, 0.1)
        self.assertFalse(run.train.bidirectional)
        self.assertTrue(run.train.attention.enabled)
        self.assertIsNone(run.train.attention.window)
        self.assertEqual(str(run.path("train_path")), "data/train.jsonl")
        self.assertIsNone(run.path("test_path"))

    def test_unknown_key_names_file_and_line(self):
        self.path.write_text("hidden_size=16\nhiden_size=8\n", encoding="utf-8")
        with self.assertRaisesMessage(ConfigError, "run.cfg:2"):
            read_config_file(self.path)

    def test_precedence(self):
        self.path.write_text("seed=1\nout_dir=from_file\nhidden_size=16\n", encoding="utf-8")
        run = load_run_config(self.path, overrides=["hidden_size=32"], seed=5, out_dir="from_flag")
        self.assertEqual(run.train.seed, 5)
        self.assertEqual(run.train.hidden_size, 32)
        self.assertEqual(str(run.path("out_dir")), "from_flag")
        run = load_run_config(self.path, overrides=["seed=9"], seed=5)
        self.assertEqual(run.train.seed, 9)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(Path(self.tmp.name) / "absent.cfg")


class ValueTests(SimpleTestCase):
    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            parse_value("hidden_size", "big")
        with self.assertRaises(ConfigError):
            parse_value("embed_dropout", "maybe")
        with self.assertRaises(ConfigError):
            load_run_config(overrides=["variant=WE_CL"])
        with self.assertRaises(ConfigError):
            load_run_config(overrides=["pos.fusion_point=late"])
        with self.assertRaises(ConfigError):
            load_run_config(overrides=["no_equals_sign"])

    def test_out_of_range_values_warn(self):
        with self.assertLogs("tagger.config", level="WARNING") as logs:
            load_run_config(overrides=["hidden_size=4"])
        self.assertIn("hidden_size=4", logs.output[0])

    def test_dump_round_trips(self):
        run = load_run_config(overrides=["attention.window=none", "learning_rate=0.7", "train_path=t.jsonl"])
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        path = Path(tmp.name) / "effective_config.txt"
        path.write_text(run.dump(), encoding="utf-8")
        again = load_run_config(path)
        self.assertEqual(again.train, run.train)
        self.assertEqual(again.paths, run.paths)
        keys = [line.split("=", 1)[0] for line in run.dump().splitlines()]
        self.assertEqual(keys, sorted(keys))

    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual((config.learning_rate, config.lr_halving_period, config.weight_decay), (1.0, 5, 1e-4))
        self.assertEqual((config.variant, config.classifier, config.pooling), ("WE_UL_CL", "CRF", "last"))
        self.assertEqual((config.rho, config.eps, config.clip_norm), (0.95, 1e-6, 5.0))
        self.assertEqual(config.to_dict()["pos.fusion_point"], "pre_classifier")
