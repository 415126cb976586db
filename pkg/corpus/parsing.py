"""Labeled utterance files: TSV (`text<TAB>label`) or JSONL (`{"text", "label"}`)."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

FORMATS = ('tsv', 'jsonl')


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledUtterance:
    """A tokenized utterance and its intent label"""
    tokens: tuple
    label: str

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError('utterance has no tokens')
        if any(not token for token in self.tokens):
            raise CorpusError('utterance contains an empty token')
        if not self.label:
            raise CorpusError('utterance has no label')

    @classmethod
    def from_text(cls, text, label):
        return cls(tokens=tokenize(text), label=label)

    @property
    def text(self):
        return ' '.join(self.tokens)


def tokenize(text):
    return tuple(text.lower().split())


def _parse_tsv_line(line):
    if '\t' not in line:
        raise CorpusError('expected text<TAB>label')
    text, label = line.rsplit('\t', 1)
    return text, label.strip()


def _parse_jsonl_line(line):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f'invalid JSON ({exc.msg})') from exc
    if not isinstance(record, dict):
        raise CorpusError('expected a JSON object')
    text, label = record.get('text'), record.get('label')
    if not isinstance(text, str) or not isinstance(label, str):
        raise CorpusError('fields "text" and "label" must be strings')
    return text, label.strip()


def parse_dataset(path, format='tsv'):
    """Read labeled utterances in file order."""
    if format not in FORMATS:
        raise CorpusError(f'unknown corpus format {format!r}, expected one of {FORMATS}')
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f'corpus file not found: {path}')
    parse_line = _parse_tsv_line if format == 'tsv' else _parse_jsonl_line
    utterances = []
    with path.open(encoding='utf-8') as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.rstrip('\n').rstrip('\r')
            if not line.strip():
                continue
            try:
                text, label = parse_line(line)
                if not text.strip():
                    raise CorpusError('empty text')
                utterances.append(LabeledUtterance.from_text(text, label))
            except CorpusError as exc:
                raise CorpusError(f'{path}:{number}: {exc}') from exc
    logger.info('Parsed %d utterances from %s', len(utterances), path)
    return utterances
