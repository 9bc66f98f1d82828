"""Conditional mesh-to-mesh growth prediction with local KNN and global graph branches."""

from .conditions import ClinicalCondition, Sex, encode_condition
from .mesh import GraphTopology, Mesh, load_mesh, mesh_topology, save_mesh

__version__ = "0.1.0"

__all__ = [
    "ClinicalCondition",
    "GraphTopology",
    "Mesh",
    "Sex",
    "encode_condition",
    "load_mesh",
    "mesh_topology",
    "save_mesh",
]
