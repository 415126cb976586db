import gzip
import tempfile
from pathlib import Path

import torch
from django.test import SimpleTestCase

from .vectors import (
    UNK, EmbeddingError, Embedder, EmbeddingTable, Vocabulary, embed_tokens, load_vectors,
    synthesize_vectors,
)


class VocabularyTest(SimpleTestCase):
    """Test the token index"""

    def test_unk_is_zero(self):
        """Test UNK owns index 0 and indices are dense"""
        vocab = Vocabulary(['b', 'a', 'b'])
        self.assertEqual(vocab.index(UNK), 0)
        self.assertEqual(sorted(vocab.index(t) for t in vocab), [0, 1, 2])
        self.assertEqual(vocab.index('unseen'), 0)


class LoadVectorsTest(SimpleTestCase):
    """Test reading pretrained vectors"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_oov_gets_mean_vector(self):
        """Test c maps to the mean of the loaded vectors"""
        path = self.write('v.txt', '2 3\na 1 0 0\nb 0 1 0\n')
        vocab = Vocabulary(['a', 'b', 'c'])
        table = load_vectors(path, vocab)
        self.assertEqual(table.matrix[vocab.index('a')].tolist(), [1.0, 0.0, 0.0])
        self.assertEqual(table.matrix[vocab.index('c')].tolist(), [0.5, 0.5, 0.0])
        self.assertEqual(table.matrix[0].tolist(), [0.5, 0.5, 0.0])
        self.assertFalse(table.matrix.requires_grad)

    def test_unk_only_vocabulary(self):
        """Test a vocabulary of only UNK gets the mean vector"""
        table = load_vectors(self.write('v.txt', '2 2\nx 2 0\ny 0 4\n'), Vocabulary())
        self.assertEqual(table.matrix.tolist(), [[1.0, 2.0]])

    def test_full_precision_values(self):
        """Test file values are kept at double precision, not rounded to float32"""
        path = self.write('v.txt', '2 1\na 0.1234567890123\nb 0.3\n')
        vocab = Vocabulary(['a', 'c'])
        table = load_vectors(path, vocab)
        self.assertEqual(table.matrix.dtype, torch.float64)
        self.assertEqual(float(table.matrix[vocab.index('a')][0]), 0.1234567890123)
        self.assertEqual(float(table.matrix[vocab.index('c')][0]), (0.1234567890123 + 0.3) / 2)

    def test_dimension_from_header(self):
        """Test d_w follows the header"""
        values = ' '.join(['0.1'] * 300)
        table = load_vectors(self.write('v.txt', f'1 300\nw {values}\n'), Vocabulary(['w']))
        self.assertEqual(table.d_w, 300)

    def test_gzip_file(self):
        """Test gzip-compressed vector files are read by extension"""
        path = self.dir / 'v.txt.gz'
        with gzip.open(path, 'wt', encoding='utf-8') as fh:
            fh.write('1 2\nw 3 4\n')
        table = load_vectors(path, Vocabulary(['w']))
        self.assertEqual(table.matrix[1].tolist(), [3.0, 4.0])

    def test_malformed_header(self):
        """Test a non-numeric header is rejected"""
        with self.assertRaises(EmbeddingError):
            load_vectors(self.write('v.txt', 'words dims\na 1 2\n'), Vocabulary(['a']))

    def test_dimension_mismatch(self):
        """Test a short vector line is rejected"""
        with self.assertRaises(EmbeddingError):
            load_vectors(self.write('v.txt', '2 3\na 1 0 0\nb 0 1\n'), Vocabulary(['a']))

    def test_no_vectors(self):
        """Test an empty vector file is rejected"""
        with self.assertRaises(EmbeddingError):
            load_vectors(self.write('v.txt', '0 3\n'), Vocabulary(['a']))


class SynthesizeVectorsTest(SimpleTestCase):
    """Test hash-keyed synthetic vectors"""

    def test_deterministic(self):
        """Test the same seed gives the same table"""
        vocab = Vocabulary(['x', 'y', 'z', 'w'])
        first = synthesize_vectors(vocab, 8, seed=3)
        second = synthesize_vectors(vocab, 8, seed=3)
        self.assertTrue(torch.equal(first.matrix, second.matrix))
        self.assertEqual(tuple(first.matrix.shape), (5, 8))
        self.assertTrue(torch.isfinite(first.matrix).all())

    def test_shared_token_shares_vector(self):
        """Test a token gets the same vector in different vocabularies"""
        left, right = Vocabulary(['shared', 'a']), Vocabulary(['shared', 'b', 'c'])
        left_table = synthesize_vectors(left, 6, seed=1)
        right_table = synthesize_vectors(right, 6, seed=1)
        self.assertTrue(torch.equal(
            left_table.matrix[left.index('shared')], right_table.matrix[right.index('shared')],
        ))

    def test_seed_changes_vectors(self):
        """Test a different seed gives a different table"""
        vocab = Vocabulary(['x'])
        self.assertFalse(torch.equal(
            synthesize_vectors(vocab, 4, seed=0).matrix, synthesize_vectors(vocab, 4, seed=1).matrix,
        ))


class EmbedTokensTest(SimpleTestCase):
    """Test token lookup"""

    def setUp(self):
        self.vocab = Vocabulary(['a', 'b'])
        matrix = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
        self.embedder = Embedder(self.vocab, EmbeddingTable(matrix))

    def test_single_token(self):
        """Test [a] maps to a's row"""
        self.assertEqual(self.embedder(('a',)).tolist(), [[1.0, 0.0, 0.0]])

    def test_unseen_token_uses_unk(self):
        """Test unknown tokens fall back to the UNK row"""
        self.assertEqual(self.embedder(('zzz',)).tolist(), [[0.0, 0.0, 1.0]])

    def test_rows_follow_tokens(self):
        """Test a 3-token sequence stacks per-token lookups"""
        X = embed_tokens(('b', 'a', 'b'), self.embedder.table, self.vocab)
        self.assertEqual(tuple(X.shape), (3, 3))
        self.assertTrue(torch.equal(X[0], X[2]))
        self.assertFalse(X.requires_grad)

    def test_empty_sequence(self):
        """Test embedding nothing is an error"""
        with self.assertRaises(EmbeddingError):
            embed_tokens((), self.embedder.table, self.vocab)
