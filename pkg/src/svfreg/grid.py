"""Lattice geometry and the dense field containers used across the package.

Conventions
-----------
* A grid has ``dims = (nx, ny, nz)`` voxels and a physical ``spacing`` per
  axis.  Voxel ``(x, y, z)`` sits at physical position ``(x*sx, y*sy, z*sz)``;
  all grids share the origin at voxel ``(0, 0, 0)``.
* Scalar values are stored as an ``(nx, ny, nz)`` array indexed ``[x, y, z]``.
  The flattened-voxel contract is x-fastest: ``i = x + nx*(y + ny*z)``,
  which is exactly ``values.ravel(order="F")``.
* Vector fields store displacements in *voxel units of their own grid* as an
  ``(nx, ny, nz, 3)`` array.  The zero field is the identity map; a position
  map is ``p + field(p)``.
* Containers are treated as immutable: operations never mutate their inputs
  and always return new containers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "Volume",
    "VectorField",
    "SegmentationMap",
    "flat_index",
    "coords_of",
    "identity_map",
    "resample_field",
]


@dataclass(frozen=True)
class GridSpec:
    """Voxel lattice: per-axis extents and physical spacing."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("GridSpec needs 3 dims and 3 spacings")
        if any(d < 2 for d in dims):
            raise ValueError(f"all dims must be >= 2, got {dims}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"all spacings must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


def flat_index(grid: GridSpec, x, y, z):
    """Flattened voxel index with x fastest: ``x + nx*(y + ny*z)``."""
    nx, ny, _ = grid.dims
    return x + nx * (y + ny * z)


def coords_of(grid: GridSpec, i):
    """Inverse of :func:`flat_index`."""
    nx, ny, _ = grid.dims
    x = i % nx
    y = (i // nx) % ny
    z = i // (nx * ny)
    return x, y, z


def _check_finite(arr: np.ndarray, what: str):
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")


class Volume:
    """Dense scalar lattice (image intensities or distance values)."""

    def __init__(self, grid: GridSpec, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != grid.dims:
            raise ValueError(f"values shape {values.shape} != grid dims {grid.dims}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        _check_finite(values, "Volume values")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: GridSpec, dtype=np.float32) -> "Volume":
        return cls(grid, np.zeros(grid.dims, dtype=dtype))

    def copy(self) -> "Volume":
        return Volume(self.grid, self.values.copy())


class VectorField:
    """Dense 3-vector lattice, components in voxel units of ``grid``."""

    def __init__(self, grid: GridSpec, vectors: np.ndarray):
        vectors = np.asarray(vectors)
        if vectors.shape != grid.dims + (3,):
            raise ValueError(
                f"vectors shape {vectors.shape} != grid dims {grid.dims} + (3,)"
            )
        if not np.issubdtype(vectors.dtype, np.floating):
            vectors = vectors.astype(np.float32)
        _check_finite(vectors, "VectorField vectors")
        self.grid = grid
        self.vectors = vectors

    @classmethod
    def zeros(cls, grid: GridSpec, dtype=np.float32) -> "VectorField":
        return cls(grid, np.zeros(grid.dims + (3,), dtype=dtype))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.vectors.copy())


class SegmentationMap:
    """Dense integer label lattice; 0 is background."""

    def __init__(self, grid: GridSpec, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.shape != grid.dims:
            raise ValueError(f"labels shape {labels.shape} != grid dims {grid.dims}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be an integer array")
        if labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        self.grid = grid
        self.labels = labels.astype(np.int32, copy=False)

    def present_labels(self) -> np.ndarray:
        return np.unique(self.labels)


def identity_map(grid: GridSpec) -> VectorField:
    """Zero displacement field: the position map ``p + 0`` is the identity."""
    return VectorField.zeros(grid)


def resample_field(field: VectorField, target: GridSpec) -> VectorField:
    """Linearly interpolate ``field`` onto ``target``.

    Vector components are rescaled by the spacing ratio so the displacement
    in physical units is preserved.  Resampling onto the field's own grid
    returns a bit-identical copy.
    """
    from . import transform  # local import; transform depends on grid

    src = field.grid
    if src == target:
        return field.copy()
    scale = np.array(
        [src.spacing[a] / target.spacing[a] for a in range(3)], dtype=np.float64
    )
    # target voxel j sits at physical j*sp_t -> source coordinate j*sp_t/sp_s
    axes = [
        np.arange(target.dims[a], dtype=np.float64) * (target.spacing[a] / src.spacing[a])
        for a in range(3)
    ]
    qx, qy, qz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([qx, qy, qz], axis=-1).reshape(-1, 3)
    flat = field.vectors.reshape(-1, 3).astype(np.float64)
    idx, w = transform._corner_data(src.dims, pts)
    out = transform._gather(flat, idx, w) * scale
    out = out.reshape(target.dims + (3,)).astype(field.vectors.dtype)
    return VectorField(target, out)
