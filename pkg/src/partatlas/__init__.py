"""Part-aligned UV unwrapping with bounded area distortion."""

from .estimator import PartUV, check_mesh
from .mesh import Mesh, load_obj, repair_non_manifold, write_obj
from .pipeline import UnwrapResult, unwrap
from .search import SearchConfig

__version__ = "0.1.0"

__all__ = ["Mesh", "PartUV", "SearchConfig", "UnwrapResult", "check_mesh", "load_obj",
           "repair_non_manifold", "unwrap", "write_obj"]
