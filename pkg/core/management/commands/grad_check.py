import json

from django.core.management.base import CommandError

from core.management.base import RunCommand
from diffcore.gradcheck import ABS_TOL
from trainer.gradients import check_model_gradients
from trainer.training import tiny_config


class Command(RunCommand):
    help = 'Finite-difference check of the full training objective on a tiny episode'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--coords', type=int, default=64, help='coordinates to sample')
        parser.add_argument('--rel-tol', type=float, default=1e-3)
        parser.add_argument(
            '--abs-tol', type=float, default=ABS_TOL,
            help='absolute error treated as round-off; near-zero gradients within it are listed, not failed',
        )
        parser.add_argument('--seed', type=int, default=0)

    def run(self, run, **options):
        report = check_model_gradients(
            tiny_config(seed=options['seed']),
            n_coords=options['coords'],
            rel_tol=options['rel_tol'],
            abs_tol=options['abs_tol'],
            raise_on_failure=False,
        )
        path = run.output_dir / 'grad_check.json'
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        for name, error in sorted(report.per_parameter().items()):
            self.stdout.write(f'{name:<40} {error:.3e}')
        summary = f'{len(report.checks)} coordinates, max relative error {report.max_rel_error:.3e}'
        if report.below_noise_floor:
            summary += f', {len(report.below_noise_floor)} within the {report.abs_tol:g} noise floor'
        if not report.passed:
            raise CommandError(f'gradient check failed: {len(report.failures)} of {summary}')
        self.stdout.write(self.style.SUCCESS(f'Gradient check passed: {summary}'))
