"""
CSV heatmap data: attention matrices and head/word matching matrices.

Matching matrices score unit i of the query against unit j of the support
with the max-pooling perspective weights (W3 forward, W4 backward), averaged
over perspectives and both directions.
"""

import csv
import logging
from pathlib import Path

import torch

from corpus.parsing import tokenize
from matching.perspectives import multi_perspective

logger = logging.getLogger(__name__)


def _grid(q_forward, q_backward, s_forward, s_backward, weights):
    forward = multi_perspective(q_forward.unsqueeze(-2), s_forward.unsqueeze(-3), weights.w3)
    backward = multi_perspective(q_backward.unsqueeze(-2), s_backward.unsqueeze(-3), weights.w4)
    return (forward.mean(dim=-1) + backward.mean(dim=-1)) / 2


@torch.no_grad()
def head_match_matrix(query, support, weights):
    """(r, r): rows are query heads, columns support heads."""
    return _grid(query.m_forward, query.m_backward, support.m_forward, support.m_backward, weights)


@torch.no_grad()
def word_match_matrix(query, support, weights):
    """(T_q, T_s) over the Bi-LSTM states."""
    return _grid(query.h_forward, query.h_backward, support.h_forward, support.h_backward, weights)


def write_matrix_csv(path, corner, header, row_names, matrix):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow([corner, *header])
        for name, row in zip(row_names, matrix.tolist()):
            writer.writerow([name, *(repr(float(v)) for v in row)])
    logger.debug('Wrote %s', path)
    return path


def head_names(r):
    return [f'head{i}' for i in range(r)]


def write_attention(path, instance, tokens):
    """Rows are heads, header row the utterance tokens."""
    return write_matrix_csv(path, 'head', tokens, head_names(instance.r), instance.A.detach())


def write_head_matches(path, query, support, weights):
    return write_matrix_csv(
        path, 'query\\support', head_names(support.r), head_names(query.r),
        head_match_matrix(query, support, weights),
    )


def write_word_matches(path, query, support, weights, query_tokens, support_tokens):
    return write_matrix_csv(
        path, 'query\\support', support_tokens, query_tokens,
        word_match_matrix(query, support, weights),
    )


@torch.no_grad()
def export_report(matcher, splits, directory, count=3, texts=()):
    """
    For each chosen query: its attention matrix, the attention of the
    support shot it is paired with, and the head and word matching matrices
    of the pair. Corpus queries pair with a shot of their own label, free
    text with a shot of the predicted label.
    """
    directory = Path(directory)
    labels = splits.joint_labels
    shots = splits.support_shots
    if texts:
        tokens = [tokenize(text) for text in texts]
        class_supports = [[u.tokens for u in shots[label]] for label in labels]
        paired = [labels[i] for i in matcher.predict(tokens, class_supports)]
        chosen = list(zip(tokens, paired))
    else:
        chosen = [(u.tokens, u.label) for u in splits.joint_test[:count]]
    weights = matcher.network.perspectives
    written = []
    for i, (query_tokens, label) in enumerate(chosen):
        support_tokens = shots[label][0].tokens
        query, support = matcher.encode(query_tokens), matcher.encode(support_tokens)
        written += [
            write_attention(directory / f'attention_query{i}.csv', query, query_tokens),
            write_attention(directory / f'attention_support{i}.csv', support, support_tokens),
            write_head_matches(directory / f'head_match{i}.csv', query, support, weights),
            write_word_matches(directory / f'word_match{i}.csv', query, support, weights, query_tokens, support_tokens),
        ]
    logger.info('Wrote %d heatmap files to %s', len(written), directory)
    return written
