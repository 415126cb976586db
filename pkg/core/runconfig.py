"""
Run configuration: a flat `key = value` file plus `--set key=value` overrides.

Values resolve as defaults < preset < file < overrides, and are read back
through decouple's Config so every key gets one cast.
"""

import logging
from pathlib import Path

from decouple import Config, Csv, RepositoryEmpty, RepositoryEnv
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

SYNTHETIC_SOURCE = 'synthetic:'

# key -> (default, cast)
KEYS = {
    'preset': ('', str),
    'data.path': ('synthetic', str),
    'data.format': ('tsv', str),
    'data.novel_labels': ('', Csv()),
    'data.joint_fraction': ('0.2', float),
    'data.seed': ('0', int),
    'embeddings.source': ('synthetic:16', str),
    'model.d_a': ('20', int),
    'model.d_h': ('64', int),
    'model.r': ('4', int),
    'model.perspectives': ('5', int),
    'model.match_level': ('head', str),
    'model.matchers': ('head_wise,max_attentive,attentive,max_pool', Csv()),
    'reg.alpha': ('0', float),
    'reg.beta': ('0', float),
    'reg.gamma': ('0', float),
    'reg.kl_cap': ('10', float),
    'episode.C': ('2', int),
    'episode.K': ('1', int),
    'episode.NQ': ('20', int),
    'episode.count': ('1000', int),
    'train.learning_rate': ('1e-4', float),
    'train.seed': ('0', int),
    'train.precision': ('64', int),
    'train.checkpoint_every': ('100', int),
    'train.log_every': ('50', int),
    'eval.episodes': ('100', int),
    'eval.seeds': ('0,1,2,3,4', Csv(cast=int)),
    'eval.threads': (None, int),
    'output.dir': (None, str),
}

_SHARED = {'model.d_a': '20', 'model.d_h': '64', 'model.r': '4', 'model.perspectives': '5'}
PRESETS = {
    'snips': {**_SHARED, 'reg.alpha': '1e-4', 'reg.beta': '1e-5', 'reg.gamma': '0.01', 'episode.C': '2'},
    'nlue': {**_SHARED, 'reg.alpha': '1e-5', 'reg.beta': '1e-5', 'reg.gamma': '0.001', 'episode.C': '5'},
}


class OverlayRepository(RepositoryEmpty):
    """Already-merged values, served to decouple's Config."""

    def __init__(self, values):
        self.data = dict(values)

    def __contains__(self, key):
        return key in self.data

    def __getitem__(self, key):
        return self.data[key]


def _check_keys(keys, origin):
    unknown = sorted(set(keys) - set(KEYS))
    if unknown:
        raise ImproperlyConfigured(f'unknown configuration key(s) in {origin}: {", ".join(unknown)}')


def parse_overrides(pairs):
    values = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ImproperlyConfigured(f'expected key=value, got {pair!r}')
        values[key.strip()] = value.strip()
    _check_keys(values, '--set')
    return values


class RunConfig:
    def __init__(self, values):
        self.values = values
        self._config = Config(OverlayRepository(values))

    @classmethod
    def load(cls, path=None, overrides=()):
        file_values = {}
        if path:
            path = Path(path)
            if not path.is_file():
                raise ImproperlyConfigured(f'configuration file not found: {path}')
            file_values = dict(RepositoryEnv(str(path)).data)
            _check_keys(file_values, str(path))
        override_values = overrides if isinstance(overrides, dict) else parse_overrides(overrides)
        values = {key: default for key, (default, _) in KEYS.items()}
        values['eval.threads'] = str(settings.INTENTMATCH_THREADS)
        values['output.dir'] = str(settings.INTENTMATCH_OUTPUT_DIR)
        preset = override_values.get('preset', file_values.get('preset', ''))
        if preset:
            if preset not in PRESETS:
                raise ImproperlyConfigured(f'unknown preset {preset!r}; expected one of {sorted(PRESETS)}')
            values.update(PRESETS[preset])
        values.update(file_values)
        values.update(override_values)
        return cls(values)

    def __getitem__(self, key):
        if key not in KEYS:
            raise ImproperlyConfigured(f'unknown configuration key {key!r}')
        try:
            return self._config(key, cast=KEYS[key][1])
        except ValueError as exc:
            raise ImproperlyConfigured(f'invalid value {self.values[key]!r} for {key}') from exc

    def with_values(self, values):
        """Copy with some keys replaced."""
        updates = {key: str(value) for key, value in values.items()}
        _check_keys(updates, 'override')
        return RunConfig({**self.values, **updates})

    @property
    def output_dir(self):
        return Path(self['output.dir'])

    @property
    def is_synthetic_data(self):
        return self['data.path'] == 'synthetic'

    @property
    def synthetic_width(self):
        """d_w when embeddings are synthesized, else None."""
        source = self['embeddings.source']
        if not source.startswith(SYNTHETIC_SOURCE):
            return None
        try:
            return int(source[len(SYNTHETIC_SOURCE):])
        except ValueError as exc:
            raise ImproperlyConfigured(f'invalid synthetic embedding source {source!r}') from exc

    def check_paths(self):
        """Every referenced input file must exist."""
        if not self.is_synthetic_data and not Path(self['data.path']).is_file():
            raise ImproperlyConfigured(f'data file not found: {self["data.path"]}')
        if self.synthetic_width is None and not Path(self['embeddings.source']).is_file():
            raise ImproperlyConfigured(f'embedding file not found: {self["embeddings.source"]}')

    def effective_text(self):
        return ''.join(f'{key} = {self.values[key]}\n' for key in sorted(self.values))

    def write_effective(self, directory=None):
        directory = Path(directory or self.output_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / 'effective_config.txt'
        path.write_text(self.effective_text(), encoding='utf-8')
        logger.info('Wrote effective configuration to %s', path)
        return path
