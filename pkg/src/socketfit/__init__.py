"""Prosthetic socket shape prediction from residual-limb scans."""
from .errors import SocketfitError
from .mesh import DistanceMap, LandmarkPair, TriMesh
from .template import CorrespondedMesh

__version__ = "0.1.0"

__all__ = ["CorrespondedMesh", "DistanceMap", "LandmarkPair", "SocketfitError", "TriMesh"]
