from pathlib import Path

import numpy as np
from django.core.management.base import CommandError
from rest_framework.renderers import JSONRenderer

from ... import imaging
from ...pipeline import render
from ...serializers import GraphListingSerializer, PatchListingSerializer
from ..base import USAGE_ERROR, RasterCommand


class Command(RasterCommand):
    help = "Render a scene file to a PNG or PPM image."

    def add_arguments(self, parser):
        self.add_scene_arguments(parser)
        parser.add_argument('output', help="Output image (.png or .ppm).")
        self.add_resolution_argument(parser)
        parser.add_argument('--dump-graph', action='store_true', help="Write the edge graph overlay and listing.")
        parser.add_argument('--dump-patches', action='store_true', help="Write the patch map and listing.")
        parser.add_argument('--dump-masks', action='store_true',
                            help="Write pixel types, staggered flags and per-patch solutions.")
        parser.add_argument('--dump-source', action='store_true',
                            help="Write the source heat map and the unclamped image (.npy).")

    def run(self, **options):
        output = Path(options['output'])
        if output.suffix.lower() not in ('.png', '.ppm'):
            raise CommandError(f"output must end in .png or .ppm, got {output.name!r}", returncode=USAGE_ERROR)
        width, height = options['resolution']
        scene = self.load(options)

        result = render(scene, width, height)
        written = [imaging.write_image(output, result.image)]

        if options['dump_graph']:
            graph = result.arrangement.graph
            written.append(imaging.write_layer(
                imaging.layer_path(output, 'graph'), imaging.graph_overlay(graph, scene.domain, width, height),
            ))
            listing = GraphListingSerializer({
                'tau': graph.tau,
                'epsilon': graph.epsilon,
                'vertices': graph.vertex_list(),
                'edges': graph.edge_list(),
            }).data
            written.append(self.write_json(imaging.layer_path(output, 'graph', '.json'), listing))
        if options['dump_patches']:
            written.append(imaging.write_layer(
                imaging.layer_path(output, 'patches'), imaging.patch_id_image(result.owner),
            ))
            listing = PatchListingSerializer(result.arrangement.patches, many=True).data
            written.append(self.write_json(imaging.layer_path(output, 'patches', '.json'), listing))
        if options['dump_masks']:
            written.append(imaging.write_layer(
                imaging.layer_path(output, 'masks'), imaging.pixel_type_image(result.buffers, width, height),
            ))
            written.append(imaging.write_layer(
                imaging.layer_path(output, 'flags'), imaging.staggered_flag_image(result.buffers, width, height),
            ))
            for grids in result.buffers:
                written.append(imaging.write_layer(
                    imaging.layer_path(output, f'patch{grids.patch_id}'),
                    imaging.solution_layer(grids, width, height),
                ))
        if options['dump_source']:
            written.append(imaging.write_layer(
                imaging.layer_path(output, 'source'), imaging.source_heatmap(result.buffers, width, height),
            ))
            linear = imaging.layer_path(output, 'linear', '.npy')
            np.save(linear, result.image)
            written.append(linear)

        for path in written:
            self.stdout.write(f"Wrote {path}")
        status = self.style.SUCCESS("converged") if result.converged else self.style.WARNING("not converged")
        self.stdout.write(f"Rendered {width}x{height} from {len(result.buffers)} patches ({status})")

    def write_json(self, path, data):
        path.write_bytes(JSONRenderer().render(data, renderer_context={'indent': 2}))
        return path
