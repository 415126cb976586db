import json
import tempfile
from collections import Counter
from pathlib import Path

from django.test import SimpleTestCase

from .parsing import CorpusError, LabeledUtterance, parse_dataset
from .splits import SplitSpec, build_splits, read_manifest, write_manifest
from .synthetic import generate_corpus, synthetic_labels, synthetic_novel_labels

SNIPS_INTENTS = [
    'AddToPlaylist', 'BookRestaurant', 'GetWeather', 'PlayMusic',
    'RateBook', 'SearchCreativeWork', 'SearchScreeningEvent',
]


def make_corpus(counts):
    corpus = []
    for label, count in counts.items():
        corpus += [LabeledUtterance.from_text(f'{label} utterance number {i}', label) for i in range(count)]
    return corpus


class ParseDatasetTest(SimpleTestCase):
    """Test reading TSV and JSONL corpora"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_tsv_line(self):
        """Test that a TSV line is lowercased and whitespace-split"""
        path = self.write('c.tsv', 'Book a table\tBookRestaurant\n')
        [utterance] = parse_dataset(path, 'tsv')
        self.assertEqual(utterance.tokens, ('book', 'a', 'table'))
        self.assertEqual(utterance.label, 'BookRestaurant')

    def test_empty_file(self):
        """Test that an empty file yields no utterances"""
        self.assertEqual(parse_dataset(self.write('e.tsv', ''), 'tsv'), [])

    def test_jsonl_preserves_order(self):
        """Test JSONL parsing keeps record order"""
        lines = [json.dumps({'text': t, 'label': l}) for t, l in [('play jazz', 'PlayMusic'), ('rain today', 'GetWeather')]]
        corpus = parse_dataset(self.write('c.jsonl', '\n'.join(lines)), 'jsonl')
        self.assertEqual([u.label for u in corpus], ['PlayMusic', 'GetWeather'])

    def test_malformed_line_reports_line_number(self):
        """Test the line number appears in the error"""
        path = self.write('bad.tsv', 'ok line\tA\nno tab here\n')
        with self.assertRaisesMessage(CorpusError, ':2:'):
            parse_dataset(path, 'tsv')

    def test_empty_text_rejected(self):
        """Test that a record with blank text is rejected"""
        with self.assertRaises(CorpusError):
            parse_dataset(self.write('blank.tsv', '   \tA\n'), 'tsv')

    def test_missing_file(self):
        """Test a missing file raises CorpusError"""
        with self.assertRaises(CorpusError):
            parse_dataset(self.dir / 'absent.tsv', 'tsv')


class BuildSplitsTest(SimpleTestCase):
    """Test seen/novel/joint split construction"""

    def test_single_seen_class_arithmetic(self):
        """Test 10 seen utterances split 2 joint / 1 shot / 7 train"""
        corpus = make_corpus({'Seen': 10, 'Novel': 4})
        splits = build_splits(corpus, SplitSpec(novel_labels={'Novel'}, shots_K=1))
        self.assertEqual(len(splits.joint_seen_indices), 2)
        self.assertEqual(len(splits.support_shots['Seen']), 1)
        self.assertEqual(len(splits.train_pool), 7)
        self.assertEqual(len(splits.novel_test), 3)
        self.assertEqual(len(splits.joint_test), 5)

    def test_snips_shaped_label_spaces(self):
        """Test a 7-intent corpus yields 5 seen and 2 novel classes"""
        corpus = make_corpus({label: 30 for label in SNIPS_INTENTS})
        splits = build_splits(corpus, SplitSpec(novel_labels={'RateBook', 'AddToPlaylist'}, shots_K=5))
        self.assertEqual(len(splits.seen_labels), 5)
        self.assertEqual(len(splits.novel_labels), 2)
        self.assertTrue(all(len(v) == 5 for v in splits.support_shots.values()))
        self.assertEqual(set(splits.support_shots), set(SNIPS_INTENTS))

    def test_pools_partition_corpus(self):
        """Test pools are disjoint and their union is the corpus"""
        corpus = make_corpus({'A': 12, 'B': 9, 'C': 7, 'D': 6})
        splits = build_splits(corpus, SplitSpec(novel_labels={'C', 'D'}, shots_K=2, seed=11))
        membership = splits.pool_of()
        self.assertEqual(sorted(membership), list(range(len(corpus))))
        rebuilt = splits.train_pool + splits.joint_test + [u for shots in splits.support_shots.values() for u in shots]
        self.assertEqual(Counter(rebuilt), Counter(corpus))
        self.assertTrue({u.label for u in splits.train_pool} <= {'A', 'B'})

    def test_same_seed_same_manifest(self):
        """Test identical inputs give byte-identical manifests"""
        corpus = make_corpus({'A': 15, 'B': 15, 'C': 8})
        spec = SplitSpec(novel_labels={'C'}, shots_K=1, seed=2**63 + 5)
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / 'a.manifest', Path(tmp) / 'b.manifest'
            write_manifest(build_splits(corpus, spec), first)
            write_manifest(build_splits(corpus, spec), second)
            self.assertEqual(first.read_bytes(), second.read_bytes())
            self.assertTrue(first.read_text().startswith(f'# seed={2**63 + 5} joint_fraction=0.2 K=1\n'))

    def test_manifest_round_trip(self):
        """Test read_manifest rebuilds the same splits"""
        corpus = make_corpus({'A': 10, 'B': 10, 'C': 5})
        splits = build_splits(corpus, SplitSpec(novel_labels={'C'}, shots_K=2, seed=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'splits.manifest'
            write_manifest(splits, path)
            restored = read_manifest(path, corpus)
        self.assertEqual(restored.train_indices, splits.train_indices)
        self.assertEqual(restored.joint_test_indices, splits.joint_test_indices)
        self.assertEqual(restored.support_indices, splits.support_indices)
        self.assertEqual(restored.spec, splits.spec)

    def test_manifest_keeps_labels_with_spaces(self):
        """Test novel labels containing spaces and commas survive a manifest round trip"""
        corpus = make_corpus({'Book Restaurant': 8, 'Play Music': 10, 'Rate, Book': 10})
        splits = build_splits(corpus, SplitSpec(novel_labels={'Book Restaurant', 'Rate, Book'}, shots_K=2))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'splits.manifest'
            write_manifest(splits, path)
            restored = read_manifest(path, corpus)
        self.assertEqual(restored.novel_labels, ('Book Restaurant', 'Rate, Book'))
        self.assertEqual(restored.seen_labels, ('Play Music',))
        self.assertEqual(restored.spec, splits.spec)

    def test_manifest_novel_label_must_exist(self):
        """Test a manifest naming a label the corpus lacks is rejected"""
        corpus = make_corpus({'A': 10, 'B': 5})
        splits = build_splits(corpus, SplitSpec(novel_labels={'B'}, shots_K=1))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'splits.manifest'
            write_manifest(splits, path)
            path.write_text(path.read_text().replace('["B"]', '["Ghost"]'))
            with self.assertRaisesMessage(CorpusError, 'Ghost'):
                read_manifest(path, corpus)

    def test_manifest_shots_must_match_K(self):
        """Test a manifest whose support pool disagrees with K is rejected"""
        corpus = make_corpus({'A': 10, 'B': 5})
        splits = build_splits(corpus, SplitSpec(novel_labels={'B'}, shots_K=1))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'splits.manifest'
            write_manifest(splits, path)
            path.write_text(path.read_text().replace('K=1', 'K=2'))
            with self.assertRaisesMessage(CorpusError, 'K=2'):
                read_manifest(path, corpus)

    def test_joint_fraction_floor_is_exact(self):
        """Test 0.29 of 100 seen utterances holds out 29"""
        corpus = make_corpus({'A': 100, 'B': 5})
        splits = build_splits(corpus, SplitSpec(novel_labels={'B'}, shots_K=1, joint_fraction=0.29))
        self.assertEqual(len(splits.joint_seen_indices), 29)

    def test_unknown_novel_label(self):
        """Test that a novel label absent from the corpus is rejected"""
        with self.assertRaisesMessage(CorpusError, 'Ghost'):
            build_splits(make_corpus({'A': 10}), SplitSpec(novel_labels={'Ghost'}))

    def test_too_small_novel_class(self):
        """Test a novel class needs K+1 utterances"""
        with self.assertRaises(CorpusError):
            build_splits(make_corpus({'A': 10, 'B': 1}), SplitSpec(novel_labels={'B'}, shots_K=1))

    def test_too_small_seen_class(self):
        """Test a seen class needs ceil(1/joint_fraction) utterances"""
        with self.assertRaises(CorpusError):
            build_splits(make_corpus({'A': 4, 'B': 3}), SplitSpec(novel_labels={'B'}, shots_K=1))


class SyntheticCorpusTest(SimpleTestCase):
    """Test the generated keyword corpus"""

    def test_shape(self):
        """Test default generation gives 8 classes of 40 utterances"""
        corpus = generate_corpus()
        self.assertEqual(Counter(u.label for u in corpus), {label: 40 for label in synthetic_labels(8)})

    def test_keywords_are_exclusive(self):
        """Test every utterance holds a keyword of its own class and none of another's"""
        for utterance in generate_corpus(n_classes=4, per_class=10, seed=3):
            own = utterance.label.replace('intent', 'kw')
            keywords = [t for t in utterance.tokens if t.startswith('kw')]
            self.assertTrue(keywords)
            self.assertTrue(all(t.startswith(own + 'x') for t in keywords))

    def test_same_class_utterances_share_a_keyword(self):
        """Test every pair of utterances of one class has a keyword in common"""
        by_label = {}
        for utterance in generate_corpus(n_classes=3, per_class=15, seed=2):
            by_label.setdefault(utterance.label, []).append({t for t in utterance.tokens if t.startswith('kw')})
        for keyword_sets in by_label.values():
            for i, first in enumerate(keyword_sets):
                self.assertGreaterEqual(len(first), 2)
                for second in keyword_sets[i + 1:]:
                    self.assertTrue(first & second)

    def test_lengths(self):
        """Test utterance lengths stay within the requested range"""
        lengths = {len(u.tokens) for u in generate_corpus(per_class=5, length=(2, 6))}
        self.assertTrue(lengths <= set(range(2, 7)))

    def test_seed_determinism(self):
        """Test the same seed reproduces the corpus and another seed changes it"""
        self.assertEqual(generate_corpus(seed=4), generate_corpus(seed=4))
        self.assertNotEqual(generate_corpus(seed=4), generate_corpus(seed=5))

    def test_default_split(self):
        """Test the last two classes are novel and the corpus splits cleanly"""
        novel = synthetic_novel_labels()
        self.assertEqual(novel, {'intent06', 'intent07'})
        splits = build_splits(generate_corpus(), SplitSpec(novel_labels=novel, shots_K=5))
        self.assertEqual(len(splits.seen_labels), 6)
        self.assertEqual(len(splits.joint_seen_indices), 6 * 8)
