from core.management.base import RunCommand
from core.pipeline import MANIFEST, load_corpus, prepare_splits


class Command(RunCommand):
    help = 'Build the seen/novel/joint splits and write the split manifest'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', help='corpus file, or "synthetic" (data.path)')
        parser.add_argument('--novel', help='comma separated novel labels (data.novel_labels)')
        parser.add_argument('--shots', type=int, help='support shots per class (episode.K)')
        parser.add_argument('--seed', type=int, help='split seed (data.seed)')

    def flag_overrides(self, options):
        return {
            'data.path': options.get('data'),
            'data.novel_labels': options.get('novel'),
            'episode.K': options.get('shots'),
            'data.seed': options.get('seed'),
        }

    def run(self, run, **options):
        splits = prepare_splits(run, load_corpus(run))
        self.stdout.write(
            f'{len(splits.seen_labels)} seen / {len(splits.novel_labels)} novel classes; '
            f'train {len(splits.train_indices)}, joint test {len(splits.joint_test_indices)}, '
            f'novel test {len(splits.novel_indices)}, {splits.shots_K} shot(s) per class'
        )
        self.stdout.write(self.style.SUCCESS(f'Wrote {run.output_dir / MANIFEST}'))
