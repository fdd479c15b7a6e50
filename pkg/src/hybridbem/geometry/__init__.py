"""Mesh containers, file formats and canonical generators."""
from .generators import (
    fibonacci_directions,
    generate_ball_tets,
    generate_cylinder_tets,
    generate_radial_fibers,
    generate_sphere_surface,
    longitudinal_tensor,
    sphere_electrodes,
)
from .io import (
    MeshFormatError,
    load_electrodes,
    load_surface_mesh,
    load_tet_region,
    load_wire_bundle,
    save_electrodes,
    save_surface_mesh,
    save_tet_region,
    save_wire_bundle,
)
from .meshes import (
    ElectrodeSet,
    MeshError,
    NestedHeadModel,
    NestingReport,
    TetRegion,
    TriangleSurface,
    WireBundle,
    validate_nesting,
)
