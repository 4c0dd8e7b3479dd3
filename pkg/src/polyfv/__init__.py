"""Cell-centred finite volume diffusion on polyhedral meshes."""

from .errors import PolyFVError
from .generate import GenSpec, calibrate, generate
from .mesh import Mesh, audit_mesh
from .quality import quality_report

__all__ = [
    "GenSpec",
    "Mesh",
    "PolyFVError",
    "audit_mesh",
    "calibrate",
    "generate",
    "quality_report",
]
__version__ = "0.1.0"
