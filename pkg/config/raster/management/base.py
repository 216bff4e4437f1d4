"""
Infraestructura común de los comandos de gestión del rasterizador.

Códigos de salida: 1 errores de uso, 2 errores de escena, 3 errores del pipeline.
"""
import argparse
import logging
import re
import sys

from django.core.management.base import BaseCommand, CommandError

from ..conf import setting
from ..exceptions import RasterError, SceneError
from ..scene import OverlapMode, load_scene

USAGE_ERROR = 1
SCENE_ERROR = 2
PIPELINE_ERROR = 3

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.INFO, 3: logging.DEBUG}


def resolution(value):
    match = re.fullmatch(r'\s*(\d+)\s*[xX]\s*(\d+)\s*', value)
    if not match or int(match.group(1)) < 1 or int(match.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"resolution must look like 256x256, got {value!r}")
    return int(match.group(1)), int(match.group(2))


def _number(kind, check, description):
    def parse(value):
        try:
            number = kind(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{value!r} is not a valid number")
        if not check(number):
            raise argparse.ArgumentTypeError(f"{value!r} must be {description}")
        return number
    return parse


positive_int = _number(int, lambda n: n >= 1, "a positive integer")
positive_float = _number(float, lambda n: n > 0.0, "positive")
non_negative_float = _number(float, lambda n: n >= 0.0, "zero or positive")


class RasterCommand(BaseCommand):
    """Base de los comandos que cargan una escena y corren (parte de) el pipeline."""

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)

        def usage_error(message):
            if getattr(self, '_called_from_command_line', False):
                parser.print_usage(sys.stderr)
                parser.exit(USAGE_ERROR, f"{parser.prog}: error: {message}\n")
            raise CommandError(f"Error: {message}", returncode=USAGE_ERROR)

        parser.error = usage_error
        return parser

    def add_scene_arguments(self, parser, solver=True):
        parser.add_argument('scene', help="Scene file (JSON).")
        parser.add_argument('--tau', type=non_negative_float, help="Squared snapping distance.")
        parser.add_argument('--epsilon', type=positive_float, help="Curve discretization tolerance.")
        if solver:
            parser.add_argument('--iterations', type=positive_int, help="Fine-level Jacobi sweep budget.")
            parser.add_argument('--mg-levels', type=positive_int, dest='mg_levels', help="Multigrid levels.")
            parser.add_argument('--residual', type=positive_float, help="Residual target (h^2-scaled).")
            parser.add_argument('--overlap', choices=OverlapMode.values, help="Overlapping mesh Laplacian mode.")

    def add_resolution_argument(self, parser, default=True):
        parser.add_argument(
            '--resolution', type=resolution, default=tuple(setting('DEFAULT_RESOLUTION')) if default else None,
            help="Output size as WIDTHxHEIGHT.",
        )

    def load(self, options):
        scene = load_scene(options['scene'])
        return scene.with_settings(
            tau=options.get('tau'),
            epsilon=options.get('epsilon'),
            iterations=options.get('iterations'),
            multigrid_levels=options.get('mg_levels'),
            residual_target=options.get('residual'),
            overlap_mode=options.get('overlap'),
        )

    def configure_logging(self, verbosity):
        logging.getLogger('config.raster').setLevel(VERBOSITY_LEVELS.get(verbosity, logging.DEBUG))

    def handle(self, *args, **options):
        self.configure_logging(options.get('verbosity', 1))
        try:
            return self.run(**options)
        except SceneError as exc:
            raise CommandError(str(exc), returncode=SCENE_ERROR) from exc
        except RasterError as exc:
            raise CommandError(str(exc), returncode=PIPELINE_ERROR) from exc

    def run(self, **options):
        raise NotImplementedError
