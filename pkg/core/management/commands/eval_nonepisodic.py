from core.management.base import RunCommand
from core.pipeline import (
    CHECKPOINT, build_embedder, load_corpus, load_matcher, load_splits, nonepisodic_report,
)
from evaluation.metrics import MetricsReport

METRICS = 'metrics_nonepisodic'
SPACES = {'joint': ('joint',), 'novel': ('novel',), 'both': ('joint', 'novel')}


class Command(RunCommand):
    help = 'Non-episodic S-J / S-N / h-acc of a trained checkpoint over the fixed label spaces'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='checkpoint path (default <out>/model.params)')
        parser.add_argument('--space', choices=sorted(SPACES), default='both')
        parser.add_argument('--threads', type=int, help='worker threads (eval.threads)')

    def flag_overrides(self, options):
        return {'eval.threads': options.get('threads')}

    def run(self, run, **options):
        corpus = load_corpus(run)
        splits = load_splits(run, corpus)
        matcher = load_matcher(options.get('checkpoint') or run.output_dir / CHECKPOINT, build_embedder(run, corpus))
        report = nonepisodic_report(matcher, splits, run, SPACES[options['space']])
        existing = run.output_dir / f'{METRICS}.json'
        if options['space'] != 'both' and existing.is_file():
            previous = MetricsReport.read(existing)
            if (previous.mode, previous.shots) == (report.mode, report.shots):
                report = report.merge(previous)
        report.write(run.output_dir, METRICS)
        self.stdout.write(report.table())
        self.stdout.write(self.style.SUCCESS(f'Wrote {existing}'))
