import json
import math

import numpy as np
from rest_framework import serializers

from .conf import setting
from .exceptions import ParseError, SceneValidationError
from .geometry import BezierSpline
from .scene import (
    NEUMANN, SCENE_FORMAT, ColorRamp, Dirichlet, DiffusionCurve, GradientMesh, LaplacianProfile,
    OverlapMode, PoissonCurve, Scene, SceneSettings,
)


# ============================================================
# CAMPOS BASE
# ============================================================

class FiniteFloatField(serializers.FloatField):
    default_error_messages = {'finite': 'A finite number is required.'}

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        if not math.isfinite(value):
            self.fail('finite')
        return value


class VectorField(serializers.ListField):
    """Lista de flotantes finitos de largo fijo (puntos [x, y], colores [r, g, b])."""

    def __init__(self, size, **kwargs):
        kwargs.setdefault('child', FiniteFloatField())
        super().__init__(min_length=size, max_length=size, **kwargs)


class ColorField(VectorField):
    def __init__(self, **kwargs):
        super().__init__(3, **kwargs)


class PointField(VectorField):
    def __init__(self, **kwargs):
        super().__init__(2, **kwargs)


def _stops(data, name):
    if not isinstance(data, list) or not data:
        raise serializers.ValidationError(f'{name} must be a non-empty list of [t, [r, g, b]] pairs.')
    color = ColorField()
    stops = []
    for item in data:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise serializers.ValidationError(f'Each {name} entry must be a [t, [r, g, b]] pair.')
        stops.append((FiniteFloatField().run_validation(item[0]), color.run_validation(item[1])))
    return stops


class ConditionField(serializers.Field):
    """Condición de frontera: "neumann", un color [r, g, b] o {"stops": [[t, [r, g, b]], ...]}."""

    def to_internal_value(self, data):
        if data == 'neumann':
            return NEUMANN
        if isinstance(data, list):
            return Dirichlet(ColorRamp.constant(ColorField().run_validation(data)))
        if isinstance(data, dict) and set(data) == {'stops'}:
            try:
                return Dirichlet(ColorRamp(_stops(data['stops'], 'stops')))
            except ValueError as exc:
                raise serializers.ValidationError(str(exc))
        raise serializers.ValidationError('Expected "neumann", an [r, g, b] color or {"stops": [...]}.')

    def to_representation(self, value):
        if not value.is_dirichlet:
            return 'neumann'
        return {'stops': [[t, list(c)] for t, c in value.ramp.stops]}


class ProfileField(serializers.Field):
    """
    Laplaciano objetivo: un número, {"constant": v}, {"linear": [a, b]} o {"piecewise": [[t, v], ...]}.
    
    Cada v es un número (todos los canales) o un trío [r, g, b].
    """

    def _value(self, data):
        if isinstance(data, list):
            return ColorField().run_validation(data)
        value = FiniteFloatField().run_validation(data)
        return [value, value, value]

    def to_internal_value(self, data):
        try:
            if isinstance(data, (int, float)) and not isinstance(data, bool):
                return LaplacianProfile.constant(self._value(data))
            if isinstance(data, dict) and len(data) == 1:
                (kind, payload), = data.items()
                if kind == 'constant':
                    return LaplacianProfile.constant(self._value(payload))
                if kind == 'linear' and isinstance(payload, list) and len(payload) == 2:
                    return LaplacianProfile.linear(self._value(payload[0]), self._value(payload[1]))
                if kind == 'piecewise' and isinstance(payload, list) and payload:
                    if not all(isinstance(p, list) and len(p) == 2 for p in payload):
                        raise serializers.ValidationError('Piecewise entries must be [t, value] pairs.')
                    return LaplacianProfile('piecewise', [
                        (FiniteFloatField().run_validation(t), self._value(v)) for t, v in payload
                    ])
        except ValueError as exc:
            raise serializers.ValidationError(str(exc))
        raise serializers.ValidationError('Expected a number or one of {"constant"|"linear"|"piecewise": ...}.')

    def to_representation(self, value):
        if value.kind == 'constant':
            return {'constant': list(value.stops[0][1])}
        if value.kind == 'linear':
            return {'linear': [list(value.stops[0][1]), list(value.stops[1][1])]}
        return {'piecewise': [[t, list(c)] for t, c in value.stops]}


class SplineField(serializers.Field):
    """Lista plana de 3n+1 puntos de control cúbicos."""

    def to_internal_value(self, data):
        points = serializers.ListField(child=PointField(), min_length=4).run_validation(data)
        if (len(points) - 1) % 3:
            raise serializers.ValidationError('A cubic spline needs 3n+1 control points.')
        try:
            return BezierSpline.from_points(points)
        except ValueError as exc:
            raise serializers.ValidationError(str(exc))

    def to_representation(self, value):
        return [[p.x, p.y] for p in value.control_points()]


# ============================================================
# SERIALIZERS DE PRIMITIVOS
# ============================================================

class NodeSerializer(serializers.Serializer):
    position = PointField()
    color = ColorField()
    du = PointField(default=[0.0, 0.0])
    dv = PointField(default=[0.0, 0.0])
    color_du = ColorField(default=[0.0, 0.0, 0.0])
    color_dv = ColorField(default=[0.0, 0.0, 0.0])


class GradientMeshSerializer(serializers.Serializer):
    """Malla de gradiente: rejilla de (rows+1) x (cols+1) nodos, fila 0 en v = 0."""
    id = serializers.CharField()
    rows = serializers.IntegerField(min_value=1)
    cols = serializers.IntegerField(min_value=1)
    nodes = serializers.ListField(child=serializers.ListField(child=NodeSerializer()))
    left = ConditionField(required=False, allow_null=True)

    def validate(self, attrs):
        nodes = attrs['nodes']
        if len(nodes) != attrs['rows'] + 1 or any(len(row) != attrs['cols'] + 1 for row in nodes):
            raise serializers.ValidationError({
                'nodes': f"Expected {attrs['rows'] + 1} rows of {attrs['cols'] + 1} nodes."
            })
        return attrs

    def to_representation(self, instance):
        nodes = [
            [
                {
                    'position': instance.positions[r, c].tolist(),
                    'color': instance.colors[r, c].tolist(),
                    'du': instance.du[r, c].tolist(),
                    'dv': instance.dv[r, c].tolist(),
                    'color_du': instance.color_du[r, c].tolist(),
                    'color_dv': instance.color_dv[r, c].tolist(),
                }
                for c in range(instance.cols + 1)
            ]
            for r in range(instance.rows + 1)
        ]
        data = {'id': instance.id, 'rows': instance.rows, 'cols': instance.cols, 'nodes': nodes}
        if instance.left is not None:
            data['left'] = ConditionField().to_representation(instance.left)
        return data

    @staticmethod
    def build(attrs, z_order):
        def grid(key):
            return np.array([[node[key] for node in row] for row in attrs['nodes']], dtype=float)

        return GradientMesh(
            id=attrs['id'], rows=attrs['rows'], cols=attrs['cols'],
            positions=grid('position'), colors=grid('color'),
            du=grid('du'), dv=grid('dv'), color_du=grid('color_du'), color_dv=grid('color_dv'),
            left=attrs.get('left'), z_order=z_order,
        )


class DiffusionCurveSerializer(serializers.Serializer):
    id = serializers.CharField()
    points = SplineField(source='spline')
    left = ConditionField()
    right = ConditionField()

    @staticmethod
    def build(attrs):
        return DiffusionCurve(attrs['id'], attrs['spline'], attrs['left'], attrs['right'])


class PoissonCurveSerializer(serializers.Serializer):
    """Curva de Poisson; basta un lado, el otro es su negación."""
    id = serializers.CharField()
    points = SplineField(source='spline')
    left = ProfileField(source='left_profile', required=False)
    right = ProfileField(source='right_profile', required=False)
    band_width = FiniteFloatField(required=False, min_value=1e-6)

    def validate(self, attrs):
        left, right = attrs.get('left_profile'), attrs.get('right_profile')
        if left is None and right is None:
            raise serializers.ValidationError('A Poisson curve needs a left or right profile.')
        if left is None:
            attrs['left_profile'] = right.negated()
        elif right is None:
            attrs['right_profile'] = left.negated()
        else:
            samples = np.linspace(0.0, 1.0, 65)
            if np.max(np.abs(left.sample(samples) + right.sample(samples))) > 1e-12:
                raise serializers.ValidationError({'right': 'Right profile must be the negation of the left profile.'})
        attrs.setdefault('band_width', float(setting('BAND_WIDTH')))
        return attrs

    @staticmethod
    def build(attrs):
        return PoissonCurve(attrs['id'], attrs['spline'], attrs['left_profile'], attrs['right_profile'],
                            attrs['band_width'])


class SettingsSerializer(serializers.Serializer):
    tau = FiniteFloatField(required=False, min_value=0.0)
    epsilon = FiniteFloatField(required=False, min_value=1e-12)
    overlap_mode = serializers.ChoiceField(choices=OverlapMode.choices, required=False)
    iterations = serializers.IntegerField(required=False, min_value=1)
    multigrid_levels = serializers.IntegerField(required=False, min_value=1)
    residual_target = FiniteFloatField(required=False, min_value=0.0)


class SceneSerializer(serializers.Serializer):
    """Documento de escena, formato 1."""
    format = serializers.IntegerField(required=False, default=SCENE_FORMAT)
    domain = serializers.ListField(child=FiniteFloatField(), min_length=4, max_length=4)
    settings = SettingsSerializer(required=False)
    gradient_meshes = GradientMeshSerializer(many=True, required=False)
    diffusion_curves = DiffusionCurveSerializer(many=True, required=False)
    poisson_curves = PoissonCurveSerializer(many=True, required=False)

    def validate_format(self, value):
        if value != SCENE_FORMAT:
            raise serializers.ValidationError(f'Unsupported scene format {value}; expected {SCENE_FORMAT}.')
        return value

    def validate_domain(self, value):
        x0, y0, x1, y1 = value
        if x1 <= x0 or y1 <= y0:
            raise serializers.ValidationError('Domain must have positive area ([x0, y0, x1, y1] with x1 > x0, y1 > y0).')
        return value

    def validate(self, attrs):
        ids = [item['id'] for key in ('gradient_meshes', 'diffusion_curves', 'poisson_curves')
               for item in attrs.get(key, [])]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise serializers.ValidationError({'id': f'Duplicate primitive ids: {duplicates}.'})
        return attrs

    def create(self, validated_data):
        x0, y0, x1, y1 = validated_data['domain']
        given = validated_data.get('settings', {})
        settings = SceneSettings(
            tau=given.get('tau', 0.0),
            epsilon=given.get('epsilon', 0.01 * min(x1 - x0, y1 - y0)),
            overlap_mode=given.get('overlap_mode', setting('OVERLAP_MODE')),
            iterations=given.get('iterations', setting('ITERATIONS')),
            multigrid_levels=given.get('multigrid_levels', setting('MULTIGRID_LEVELS')),
            residual_target=given.get('residual_target', setting('RESIDUAL_TARGET')),
        )
        return Scene(
            domain=(x0, y0, x1, y1),
            gradient_meshes=tuple(GradientMeshSerializer.build(m, z) for z, m in
                                  enumerate(validated_data.get('gradient_meshes', []))),
            diffusion_curves=tuple(DiffusionCurveSerializer.build(d) for d in validated_data.get('diffusion_curves', [])),
            poisson_curves=tuple(PoissonCurveSerializer.build(p) for p in validated_data.get('poisson_curves', [])),
            settings=settings,
        )

    def to_representation(self, instance):
        s = instance.settings
        return {
            'format': SCENE_FORMAT,
            'domain': list(instance.domain),
            'settings': {
                'tau': s.tau, 'epsilon': s.epsilon, 'overlap_mode': str(s.overlap_mode),
                'iterations': s.iterations, 'multigrid_levels': s.multigrid_levels,
                'residual_target': s.residual_target,
            },
            'gradient_meshes': GradientMeshSerializer(instance.gradient_meshes, many=True).data,
            'diffusion_curves': DiffusionCurveSerializer(instance.diffusion_curves, many=True).data,
            'poisson_curves': PoissonCurveSerializer(instance.poisson_curves, many=True).data,
        }


def parse_document(text) -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    serializer = SceneSerializer(data=data)
    if not serializer.is_valid():
        raise SceneValidationError(serializer.errors)
    return serializer.save()


def dump_document(scene: Scene) -> str:
    return json.dumps(SceneSerializer(scene).data, indent=2)


# ============================================================
# SERIALIZERS DE LISTADO (VOLCADOS DE DEPURACIÓN)
# ============================================================

def describe_condition(condition):
    if not condition.is_dirichlet:
        return 'neumann'
    if condition.mesh_id:
        return f'dirichlet(mesh:{condition.mesh_id})'
    return 'dirichlet(' + ', '.join(f'{t:g}:[{c.r:.3f}, {c.g:.3f}, {c.b:.3f}]' for t, c in condition.ramp.stops) + ')'


class VertexListingSerializer(serializers.Serializer):
    id = serializers.IntegerField()
    position = serializers.SerializerMethodField()
    degree = serializers.SerializerMethodField()

    def get_position(self, obj):
        return [float(obj.position[0]), float(obj.position[1])]

    def get_degree(self, obj):
        return len(obj.incident)


class EdgeListingSerializer(serializers.Serializer):
    id = serializers.IntegerField()
    start = serializers.IntegerField(source='v0')
    end = serializers.IntegerField(source='v1')
    source = serializers.SerializerMethodField()
    param_window = serializers.SerializerMethodField()
    left = serializers.SerializerMethodField()
    right = serializers.SerializerMethodField()

    def get_source(self, obj):
        return str(obj.curve.source)

    def get_param_window(self, obj):
        return [obj.ta, obj.tb]

    def get_left(self, obj):
        return describe_condition(obj.curve.left)

    def get_right(self, obj):
        return describe_condition(obj.curve.right)


class GraphListingSerializer(serializers.Serializer):
    tau = serializers.FloatField()
    epsilon = serializers.FloatField()
    vertices = VertexListingSerializer(many=True)
    edges = EdgeListingSerializer(many=True)


class BoundaryCurveListingSerializer(serializers.Serializer):
    edge = serializers.IntegerField(source='edge_id')
    direction = serializers.SerializerMethodField()
    condition = serializers.SerializerMethodField()

    def get_direction(self, obj):
        return 'forward' if obj.forward else 'backward'

    def get_condition(self, obj):
        return describe_condition(obj.condition)


class LoopListingSerializer(serializers.Serializer):
    id = serializers.IntegerField()
    turning = serializers.IntegerField()
    curves = BoundaryCurveListingSerializer(many=True)


class PatchListingSerializer(serializers.Serializer):
    id = serializers.IntegerField()
    outer = LoopListingSerializer()
    contained = LoopListingSerializer(many=True)
    interior_point = serializers.SerializerMethodField()
    mesh_weights = serializers.SerializerMethodField()

    def get_interior_point(self, obj):
        return [float(obj.interior_point[0]), float(obj.interior_point[1])]

    def get_mesh_weights(self, obj):
        return [{'mesh': mesh_id, 'weight': weight} for mesh_id, weight in obj.mesh_weights]
