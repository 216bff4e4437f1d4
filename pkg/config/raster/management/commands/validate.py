from django.core.management.base import CommandError

from ...edge_graph import build, check_planarity, near_misses
from ...exceptions import FoldedMesh
from ...scene import diffusion_boundary_curve, mesh_boundary_curves
from ..base import SCENE_ERROR, RasterCommand, non_negative_float


class Command(RasterCommand):
    help = "Report leak-prone endpoint gaps, folded meshes and degenerate segments of a scene."

    def add_arguments(self, parser):
        self.add_scene_arguments(parser, solver=False)
        parser.add_argument(
            '--near-miss', type=non_negative_float, default=0.0, dest='near_miss',
            help="Also report endpoint gaps up to this distance; the window is never below 2*sqrt(tau).",
        )

    def run(self, **options):
        scene = self.load(options)
        settings = scene.settings
        errors, warnings = [], []

        curves = []
        for mesh in scene.gradient_meshes:
            try:
                mesh_curves = mesh_boundary_curves(mesh, settings.epsilon)
            except FoldedMesh as exc:
                errors.append(str(exc))
                continue
            expected = 2 * (mesh.rows + mesh.cols)
            if len(mesh_curves) < expected:
                warnings.append(f"mesh {mesh.id!r}: {expected - len(mesh_curves)} zero-length boundary edges skipped")
            curves.extend(mesh_curves)
        for dc in scene.diffusion_curves:
            if dc.spline.dropped_segments:
                warnings.append(f"diffusion curve {dc.id!r}: {dc.spline.dropped_segments} zero-length segments dropped")
            curves.append(diffusion_boundary_curve(dc))
        for pc in scene.poisson_curves:
            if pc.spline.dropped_segments:
                warnings.append(f"poisson curve {pc.id!r}: {pc.spline.dropped_segments} zero-length segments dropped")

        found = near_misses(curves, settings.tau, options.get('near_miss') or 0.0, settings.epsilon)
        for source, end, other, distance in found:
            warnings.append(f"near miss: {source} {end} is {distance:.4g} from {other} (tau={settings.tau:g})")

        if not errors:
            graph = build(curves, settings.tau, settings.epsilon)
            for a, b, point in check_planarity(graph):
                errors.append(f"edges {a} and {b} cross at ({point[0]:.6g}, {point[1]:.6g})")

        for message in warnings:
            self.stdout.write(self.style.WARNING(f"warning: {message}"))
        for message in errors:
            self.stderr.write(f"error: {message}")
        if errors:
            raise CommandError(f"{len(errors)} errors in {options['scene']}", returncode=SCENE_ERROR)
        self.stdout.write(self.style.SUCCESS(f"{options['scene']}: {len(warnings)} warnings, no errors"))
