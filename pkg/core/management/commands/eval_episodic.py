from core.management.base import RunCommand
from core.pipeline import CHECKPOINT, build_embedder, episodic_report, load_corpus, load_matcher, load_splits

METRICS = 'metrics_episodic'


class Command(RunCommand):
    help = 'Episodic S-J / S-N / h-acc of a trained checkpoint'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='checkpoint path (default <out>/model.params)')
        parser.add_argument('--episodes', type=int, help='episodes per seed (eval.episodes)')
        parser.add_argument('--seeds', help='comma separated evaluation seeds (eval.seeds)')
        parser.add_argument('--threads', type=int, help='worker threads (eval.threads)')

    def flag_overrides(self, options):
        return {
            'eval.episodes': options.get('episodes'),
            'eval.seeds': options.get('seeds'),
            'eval.threads': options.get('threads'),
        }

    def run(self, run, **options):
        corpus = load_corpus(run)
        splits = load_splits(run, corpus)
        matcher = load_matcher(options.get('checkpoint') or run.output_dir / CHECKPOINT, build_embedder(run, corpus))
        report = episodic_report(matcher, splits, run)
        report.write(run.output_dir, METRICS)
        self.stdout.write(report.table())
        self.stdout.write(self.style.SUCCESS(f'Wrote {run.output_dir / (METRICS + ".json")}'))
