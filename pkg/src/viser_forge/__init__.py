"""viser-forge: asset material pipeline, scene layout, and evaluation harness."""

from .mesh import Aabb, AssetMeta, TriangleMesh, bounding_box, load_mesh, save_mesh_json
from .render import Camera, ShadingOverride, ViewBundle, camera_ring, rasterize

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "AssetMeta",
    "TriangleMesh",
    "bounding_box",
    "load_mesh",
    "save_mesh_json",
    "Camera",
    "ShadingOverride",
    "ViewBundle",
    "camera_ring",
    "rasterize",
    "__version__",
]
