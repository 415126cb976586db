from core.heatmaps import export_report
from core.management.base import RunCommand
from core.pipeline import CHECKPOINT, build_embedder, load_corpus, load_matcher, load_splits


class Command(RunCommand):
    help = 'Dump attention and matching heatmap data as CSV'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='checkpoint path (default <out>/model.params)')
        parser.add_argument('--count', type=int, default=3, help='joint-test utterances to report')
        parser.add_argument('--text', action='append', default=[], help='free-text query (repeatable)')

    def run(self, run, **options):
        corpus = load_corpus(run)
        splits = load_splits(run, corpus)
        matcher = load_matcher(options.get('checkpoint') or run.output_dir / CHECKPOINT, build_embedder(run, corpus))
        written = export_report(matcher, splits, run.output_dir / 'report', options['count'], options['text'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(written)} files to {run.output_dir / "report"}'))
