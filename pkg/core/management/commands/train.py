from core.management.base import RunCommand
from core.pipeline import CHECKPOINT, TRAIN_LOG, build_embedder, load_corpus, load_splits, train_config
from trainer.training import train


class Command(RunCommand):
    help = 'Meta-train the matching network on seen-class episodes'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--episodes', type=int, help='number of training episodes (episode.count)')
        parser.add_argument('--seed', type=int, help='training seed (train.seed)')
        parser.add_argument('--checkpoint', help='checkpoint path (default <out>/model.params)')

    def flag_overrides(self, options):
        return {'episode.count': options.get('episodes'), 'train.seed': options.get('seed')}

    def run(self, run, **options):
        corpus = load_corpus(run)
        splits = load_splits(run, corpus)
        embedder = build_embedder(run, corpus)
        checkpoint = options.get('checkpoint') or run.output_dir / CHECKPOINT
        config = train_config(run, embedder.d_w, checkpoint_path=checkpoint)
        _, log = train(config, splits, embedder)
        log.write_csv(run.output_dir / TRAIN_LOG)
        window = min(50, len(log))
        self.stdout.write(
            f'{len(log)} episodes; mean query accuracy over the last {window}: '
            f'{100 * log.mean_accuracy(window):.2f}%'
        )
        self.stdout.write(self.style.SUCCESS(f'Wrote {checkpoint}'))
