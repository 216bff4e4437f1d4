import json

from ...pipeline import arrange, render, scene_stats
from ..base import RasterCommand

COLUMNS = ('DCs', 'PCs', 'GMs', 'Vs', 'Es', 'Ps')


class Command(RasterCommand):
    help = "Print primitive, vertex, edge and patch counts of a scene with stage timings."

    def add_arguments(self, parser):
        self.add_scene_arguments(parser)
        self.add_resolution_argument(parser, default=False)
        parser.add_argument('--json', action='store_true', help="Print one JSON object instead of the table.")

    def run(self, **options):
        scene = self.load(options)
        arrangement = arrange(scene)
        result = None
        if options['resolution'] is not None:
            result = render(scene, *options['resolution'], arrangement=arrangement)
        counts, timings = scene_stats(arrangement, result)

        if options['json']:
            self.stdout.write(json.dumps({'counts': counts, 'timings_ms': timings}, sort_keys=True))
            return

        header = ' '.join(f"#{name:>5}" for name in COLUMNS)
        self.stdout.write(header + ' | ' + ' '.join(f"{name:>9}" for name in timings) + '  (ms)')
        row = ' '.join(f"{counts[name]:>6}" for name in COLUMNS)
        self.stdout.write(row + ' | ' + ' '.join(f"{value:>9.1f}" for value in timings.values()))
        for name in COLUMNS:
            self.stdout.write(f"STAT {name} {counts[name]}")
        for name, value in timings.items():
            self.stdout.write(f"STAT time_{name}_ms {value:.3f}")
