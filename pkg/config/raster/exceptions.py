"""
Jerarquía de excepciones del rasterizador.

Los comandos de gestión las traducen a códigos de salida: SceneError → 2,
el resto → 3.
"""


class RasterError(Exception):
    """Clase base de todo error lanzado por el motor."""


# ---- Geometría ----

class GeometryError(RasterError):
    pass


class ZeroTangent(GeometryError):
    """La tangente se anula (cúspide); quien llama promedia las tangentes vecinas."""


class OnBoundary(GeometryError):
    """El punto consultado cae sobre el lazo; quien llama lo perturba."""


# ---- Escena ----

class SceneError(RasterError):
    pass


class ParseError(SceneError):
    def __init__(self, message, line=0, column=0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class SceneValidationError(SceneError):
    def __init__(self, detail):
        self.detail = detail
        super().__init__(f"invalid scene: {detail}")


class FoldedMesh(SceneError):
    def __init__(self, mesh_id, edges):
        self.mesh_id = mesh_id
        self.edges = edges
        super().__init__(f"gradient mesh {mesh_id!r} folds over itself at boundary edges {edges}")


# ---- Cálculo sobre mallas ----

class MeshCalculusError(RasterError):
    pass


class NotInPatch(MeshCalculusError):
    pass


class FoldDetected(MeshCalculusError):
    pass


class SingularJacobian(MeshCalculusError):
    pass


# ---- Pipeline ----

class PipelineError(RasterError):
    pass


class TraversalStuck(PipelineError):
    pass


class ContainmentAmbiguity(PipelineError):
    pass
