"""Multi-resolution neural fields on triangle meshes."""

from meshfield.mesh import TriangleMesh, VertexField, VertexPartition, normalize_mesh, vertex_normals
from meshfield.meshio import load_mesh, save_mesh
from meshfield.model import FieldModel, ModelConfig, build_model, model_forward
from meshfield.spectral import assemble_laplacian, solve_eigs, split_spectrum

__version__ = "0.1.0"

__all__ = [
    "FieldModel",
    "ModelConfig",
    "TriangleMesh",
    "VertexField",
    "VertexPartition",
    "assemble_laplacian",
    "build_model",
    "load_mesh",
    "model_forward",
    "normalize_mesh",
    "save_mesh",
    "solve_eigs",
    "split_spectrum",
    "vertex_normals",
]
