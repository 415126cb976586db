from core.ablation import ablation_table, run_ablation, write_ablation
from core.management.base import RunCommand
from core.pipeline import build_embedder, load_corpus, load_splits


class Command(RunCommand):
    help = 'Train and evaluate the matcher and regularizer ablation grids on one split'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--episodes', type=int, help='training episodes per variant (episode.count)')
        parser.add_argument('--seeds', help='comma separated seeds shared by every variant (eval.seeds)')

    def flag_overrides(self, options):
        return {'episode.count': options.get('episodes'), 'eval.seeds': options.get('seeds')}

    def run(self, run, **options):
        corpus = load_corpus(run)
        splits = load_splits(run, corpus)
        grids = run_ablation(run, splits, build_embedder(run, corpus))
        write_ablation(grids, run.output_dir)
        self.stdout.write(ablation_table(grids))
        self.stdout.write(self.style.SUCCESS(f'Wrote {run.output_dir / "ablation.json"}'))
