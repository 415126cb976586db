from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from core.runconfig import RunConfig
from corpus.parsing import CorpusError
from diffcore.gradcheck import GradientCheckError
from diffcore.ops import NonFiniteError
from embeddings.vectors import EmbeddingError
from episodes.sampling import EpisodeError
from evaluation.metrics import EvaluationError
from trainer.training import TrainingError

MODULE_ERRORS = (
    CorpusError, EmbeddingError, EpisodeError, EvaluationError, TrainingError, NonFiniteError,
    GradientCheckError, ImproperlyConfigured, ValueError, OSError,
)


class RunCommand(BaseCommand):
    """
    Base for the harness commands: shared --config/--set/--out flags, the
    effective config echo, and module errors turned into CommandError.
    """

    def add_arguments(self, parser):
        parser.add_argument('--config', help='flat key = value run configuration file')
        parser.add_argument(
            '--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
            help='override one configuration key (repeatable)',
        )
        parser.add_argument('--out', help='output directory (output.dir)')

    def flag_overrides(self, options):
        """Configuration keys set by command-specific flags."""
        return {}

    def handle(self, *args, **options):
        try:
            run = RunConfig.load(options.get('config'), options.get('overrides'))
            flags = {key: value for key, value in self.flag_overrides(options).items() if value is not None}
            if options.get('out'):
                flags['output.dir'] = options['out']
            if flags:
                run = run.with_values(flags)
            run.write_effective()
            self.run(run, **options)
        except MODULE_ERRORS as exc:
            raise CommandError(str(exc)) from exc

    def run(self, run, **options):
        raise NotImplementedError
