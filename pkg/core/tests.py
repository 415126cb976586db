import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

import torch
from django.core.exceptions import ImproperlyConfigured
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from classifier.network import IntentMatcher, ModelConfig, SemanticMatchingNetwork
from corpus.splits import build_splits
from evaluation.metrics import harmonic_accuracy
from trainer.training import train

from .heatmaps import head_match_matrix, word_match_matrix
from .pipeline import build_embedder, load_corpus, nonepisodic_report, split_spec, train_config
from .runconfig import RunConfig

TINY = {
    'data.path': 'synthetic',
    'embeddings.source': 'synthetic:6',
    'model.d_h': '4',
    'model.d_a': '5',
    'model.r': '2',
    'model.perspectives': '3',
    'episode.count': '2',
    'episode.NQ': '4',
    'eval.episodes': '2',
    'eval.seeds': '0',
    'train.log_every': '1',
}


ABLATION = {
    'preset': 'snips',
    'embeddings.source': 'synthetic:16',
    'model.d_h': '16',
    'model.r': '4',
    'model.perspectives': '3',
    'episode.K': '5',
    'episode.NQ': '10',
    'episode.count': '300',
    'train.learning_rate': '1e-3',
    'eval.episodes': '50',
    'eval.seeds': '0,1,2',
}


def write_config(directory, values=TINY):
    path = Path(directory) / 'run.cfg'
    path.write_text(''.join(f'{key} = {value}\n' for key, value in values.items()), encoding='utf-8')
    return path


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name) / 'run'
        self.config = write_config(self.tmp.name)

    def call(self, name, *args, out=None, **options):
        stdout = StringIO()
        call_command(name, *args, config=str(self.config), out=str(out or self.out), stdout=stdout, **options)
        return stdout.getvalue()


class RunConfigTest(SimpleTestCase):
    """Test run configuration loading"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_defaults(self):
        """Test defaults apply without a file"""
        run = RunConfig.load()
        self.assertEqual(run['model.d_h'], 64)
        self.assertEqual(run['eval.seeds'], [0, 1, 2, 3, 4])
        self.assertEqual(run['train.learning_rate'], 1e-4)

    def test_overrides_beat_file(self):
        """Test --set values win over the file"""
        run = RunConfig.load(write_config(self.tmp.name), ['model.d_h=7'])
        self.assertEqual(run['model.d_h'], 7)
        self.assertEqual(run['model.r'], 2)

    def test_preset(self):
        """Test the nlue preset fills weights and explicit keys still win"""
        run = RunConfig.load(overrides=['preset=nlue', 'reg.beta=0.5'])
        self.assertEqual(run['reg.alpha'], 1e-5)
        self.assertEqual(run['reg.gamma'], 0.001)
        self.assertEqual(run['episode.C'], 5)
        self.assertEqual(run['reg.beta'], 0.5)

    def test_unknown_preset(self):
        """Test an unknown preset is rejected"""
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.load(overrides=['preset=atis'])

    def test_unknown_file_key(self):
        """Test unknown keys in the file are rejected"""
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.load(write_config(self.tmp.name, {'model.depth': '3'}))

    def test_unknown_override_key(self):
        """Test unknown --set keys are rejected"""
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.load(overrides=['train.momentum=0.9'])

    def test_malformed_override(self):
        """Test an override without '=' is rejected"""
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.load(overrides=['model.d_h'])

    def test_invalid_value(self):
        """Test a value that does not cast is reported with its key"""
        run = RunConfig.load(overrides=['model.d_h=wide'])
        with self.assertRaisesMessage(ImproperlyConfigured, 'model.d_h'):
            run['model.d_h']

    def test_missing_data_file(self):
        """Test a missing corpus path fails the path check"""
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.load(overrides=['data.path=/nonexistent/corpus.tsv']).check_paths()

    def test_effective_config_sorted(self):
        """Test the echoed configuration lists every key in sorted order"""
        text = RunConfig.load(write_config(self.tmp.name)).effective_text()
        keys = [line.split(' = ')[0] for line in text.splitlines()]
        self.assertEqual(keys, sorted(keys))
        self.assertIn('embeddings.source = synthetic:6', text)


class PrepareSplitsCommandTest(CommandTestCase):
    """Test the prepare_splits command"""

    def test_writes_manifest_and_config(self):
        """Test the manifest and effective config land in the output directory"""
        output = self.call('prepare_splits', shots=5)
        self.assertIn('6 seen / 2 novel', output)
        manifest = (self.out / 'splits.manifest').read_text().splitlines()
        self.assertTrue(manifest[0].endswith('K=5'))
        self.assertIn('episode.K = 5', (self.out / 'effective_config.txt').read_text())

    def test_unknown_novel_label(self):
        """Test a module error becomes a CommandError"""
        with self.assertRaises(CommandError):
            self.call('prepare_splits', novel='no_such_intent')


class GradCheckCommandTest(CommandTestCase):
    """Test the grad_check command"""

    def test_passes(self):
        """Test the default tiny check passes and writes its report"""
        output = self.call('grad_check')
        self.assertIn('Gradient check passed', output)
        report = json.loads((self.out / 'grad_check.json').read_text())
        self.assertTrue(report['passed'])
        self.assertEqual(report['abs_tol'], 1e-10)
        self.assertIn('below_noise_floor', report)


class TrainCommandTest(CommandTestCase):
    """Test the train command"""

    def test_zero_episodes(self):
        """Test --episodes 0 exits with the precondition message"""
        with self.assertRaisesMessage(CommandError, 'n_episodes'):
            self.call('train', episodes=0)

    def test_artifacts(self):
        """Test the checkpoint, sidecar and training log are written"""
        self.call('train')
        self.assertTrue((self.out / 'model.params').is_file())
        self.assertTrue((self.out / 'model.json').is_file())
        self.assertEqual(len((self.out / 'train_log.csv').read_text().splitlines()), 3)

    def test_missing_checkpoint(self):
        """Test evaluating without a checkpoint fails cleanly"""
        with self.assertRaises(CommandError):
            self.call('eval_nonepisodic')


class EvaluationCommandTest(CommandTestCase):
    """Test the evaluation commands"""

    def test_byte_identical_metrics(self):
        """Test two identical train + eval runs give identical metrics JSON"""
        texts = []
        for name in ('first', 'second'):
            out = Path(self.tmp.name) / name
            self.call('train', out=out)
            self.call('eval_nonepisodic', out=out)
            texts.append((out / 'metrics_nonepisodic.json').read_bytes())
        self.assertEqual(texts[0], texts[1])

    def test_spaces_merge_into_h_acc(self):
        """Test a joint-space run then a novel-space run yield the full row"""
        self.call('train')
        self.call('eval_nonepisodic', space='joint')
        self.call('eval_nonepisodic', space='novel')
        metrics = json.loads((self.out / 'metrics_nonepisodic.json').read_text())
        self.assertEqual(set(metrics['confusion']), {'joint', 'novel'})
        if metrics['s_j'] or metrics['s_n']:
            self.assertAlmostEqual(metrics['h_acc'], harmonic_accuracy(metrics['s_j'], metrics['s_n']), delta=0.01)
        matrix = metrics['confusion']['novel']['matrix']
        self.assertEqual(len(matrix), 2)

    def test_episodic(self):
        """Test the episodic report records its episodes and seeds"""
        self.call('train')
        self.call('eval_episodic', seeds='3,4')
        metrics = json.loads((self.out / 'metrics_episodic.json').read_text())
        self.assertEqual(metrics['mode'], 'episodic')
        self.assertEqual(metrics['seeds'], [3, 4])
        self.assertEqual(metrics['n_episodes'], 2)
        self.assertIsNotNone(metrics['h_acc'])


class ReportCommandTest(CommandTestCase):
    """Test heatmap export"""

    def test_csv_files(self):
        """Test attention CSVs have a token header row and one row per head"""
        self.call('train')
        self.call('report', count=2)
        report = self.out / 'report'
        self.assertEqual(len(list(report.glob('*.csv'))), 8)
        with (report / 'attention_query0.csv').open() as fh:
            rows = list(csv.reader(fh))
        self.assertEqual(rows[0][0], 'head')
        self.assertEqual(len(rows), 3)
        self.assertEqual(len(rows[1]), len(rows[0]))
        self.assertAlmostEqual(sum(float(v) for v in rows[1][1:]), 1.0, places=9)

    def test_free_text(self):
        """Test free-text queries are paired with a predicted class"""
        self.call('train')
        self.call('report', text=['kw00x1 filler01 filler02'])
        with (self.out / 'report' / 'word_match0.csv').open() as fh:
            rows = list(csv.reader(fh))
        self.assertEqual([row[0] for row in rows[1:]], ['kw00x1', 'filler01', 'filler02'])


class HeatmapTest(SimpleTestCase):
    """Test matching heatmap matrices"""

    def setUp(self):
        torch.manual_seed(0)
        self.network = SemanticMatchingNetwork(ModelConfig(d_w=3, d_h=4, d_a=5, r=2, perspectives=3)).double()
        self.a = self.network.encode(torch.randn(4, 3, dtype=torch.float64))
        self.b = self.network.encode(torch.randn(6, 3, dtype=torch.float64))

    def test_shapes_and_range(self):
        """Test head and word matrices have the right shapes and cosine range"""
        heads = head_match_matrix(self.a, self.b, self.network.perspectives)
        words = word_match_matrix(self.a, self.b, self.network.perspectives)
        self.assertEqual(tuple(heads.shape), (2, 2))
        self.assertEqual(tuple(words.shape), (4, 6))
        self.assertTrue(bool((words.abs() <= 1 + 1e-12).all()))

    def test_self_match_diagonal(self):
        """Test an utterance's words match themselves perfectly"""
        words = word_match_matrix(self.a, self.a, self.network.perspectives)
        self.assertTrue(torch.allclose(torch.diagonal(words), torch.ones(4, dtype=torch.float64)))


@tag('slow')
class AblateCommandTest(CommandTestCase):
    """Test the ablation grid"""

    def test_grid_shape(self):
        """Test both grids list their variants and the full model keeps up with every single matcher"""
        self.config = write_config(self.tmp.name, ABLATION)
        self.call('ablate')
        data = json.loads((self.out / 'ablation.json').read_text())
        self.assertEqual(
            [row['variant'] for row in data['matchers']],
            ['head_wise', 'max_attentive', 'attentive', 'max_pool', 'full'],
        )
        self.assertEqual(
            [row['variant'] for row in data['regularizers']],
            ['word_match', 'no_discr', 'no_self_attn', 'no_uniform', 'full'],
        )
        self.assertEqual(data['matchers'][-1], data['regularizers'][-1])
        full = data['matchers'][-1]
        self.assertEqual(full['seeds'], [0, 1, 2])
        best_single = max(row['episodic_h_acc'] for row in data['matchers'][:-1])
        self.assertGreaterEqual(full['episodic_h_acc'], best_single - 2.0)


@tag('slow')
class GeneralizedSanityTest(SimpleTestCase):
    """Test joint and novel accuracy on the synthetic corpus after training"""

    def test_six_seen_two_novel(self):
        """Test 5-shot non-episodic joint and novel accuracy both reach 70% over 3 seeds"""
        run = RunConfig.load(overrides=[
            'embeddings.source=synthetic:16', 'model.d_h=16', 'model.r=4', 'model.perspectives=3',
            'episode.C=5', 'episode.K=5', 'episode.count=500', 'train.learning_rate=1e-3',
        ])
        corpus = load_corpus(run)
        splits = build_splits(corpus, split_spec(run))
        embedder = build_embedder(run, corpus)
        joint, novel = [], []
        for seed in (0, 1, 2):
            params, _ = train(train_config(run.with_values({'train.seed': seed}), embedder.d_w), splits, embedder)
            report = nonepisodic_report(IntentMatcher(params.module, embedder), splits, run)
            joint.append(report.s_j)
            novel.append(report.s_n)
        self.assertGreaterEqual(sum(joint) / 3, 70.0)
        self.assertGreaterEqual(sum(novel) / 3, 70.0)
