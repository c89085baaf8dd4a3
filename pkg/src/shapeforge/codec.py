"""Analytic occupancy <-> latent codec.

Encodes an R^3 occupancy grid into a coarse G^3 grid of C-channel feature
vectors by projecting each P^3 patch (G = R / P) onto the C lowest-frequency
orthonormal 3D cosine basis functions; decoding reconstructs the real field
and thresholds it.  Fully deterministic, linear, and exactly testable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import OccupancyGrid

LATENT_MAGIC = b"SCLAT1"


class CodecError(ValueError):
    """Latent/grid shape mismatch or malformed dump."""


@lru_cache(maxsize=16)
def _dct_basis_1d(p: int) -> np.ndarray:
    """Orthonormal DCT-II basis rows: b[k, i] = a_k cos(pi (2i+1) k / (2p))."""
    i = np.arange(p)
    k = np.arange(p)[:, None]
    basis = np.cos(np.pi * (2 * i + 1) * k / (2 * p))
    basis[0] *= np.sqrt(1.0 / p)
    basis[1:] *= np.sqrt(2.0 / p)
    return basis


@lru_cache(maxsize=16)
def _basis_3d(patch: int, channels: int) -> np.ndarray:
    """(C, P, P, P) separable cosine functions, lowest total frequency first,
    lexicographic within equal totals, DC as channel 0."""
    keys = sorted(
        ((kx + ky + kz, kx, ky, kz) for kx in range(patch) for ky in range(patch) for kz in range(patch))
    )[:channels]
    b1 = _dct_basis_1d(patch)
    out = np.empty((channels, patch, patch, patch))
    for c, (_, kx, ky, kz) in enumerate(keys):
        out[c] = np.einsum("x,y,z->xyz", b1[kx], b1[ky], b1[kz])
    return out


@dataclass(frozen=True)
class CodecSpec:
    resolution: int = 32
    patch: int = 4
    channels: int = 8
    threshold: float = 0.5

    def __post_init__(self):
        if self.resolution % self.patch != 0:
            raise CodecError(f"patch {self.patch} must divide resolution {self.resolution}")
        if self.channels < 1 or self.channels > self.patch**3:
            raise CodecError("channel count must lie in [1, P^3]")

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch

    @property
    def latent_dim(self) -> int:
        return self.grid_size**3 * self.channels

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        g = self.grid_size
        return (g, g, g, self.channels)

    def basis(self) -> np.ndarray:
        return _basis_3d(self.patch, self.channels)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "patch": self.patch,
            "channels": self.channels,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecSpec":
        return cls(
            resolution=int(d["resolution"]),
            patch=int(d["patch"]),
            channels=int(d["channels"]),
            threshold=float(d.get("threshold", 0.5)),
        )


@dataclass(frozen=True)
class LatentGrid:
    """Coarse feature grid; ``values`` indexed [gx, gy, gz, channel]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 4 or not (v.shape[0] == v.shape[1] == v.shape[2]):
            raise CodecError(f"latent values must be (G,G,G,C), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise CodecError("non-finite latent values")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[3]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def _patches(real_grid: np.ndarray, spec: CodecSpec) -> np.ndarray:
    g, p = spec.grid_size, spec.patch
    return real_grid.reshape(g, p, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)


def encode(x: OccupancyGrid | np.ndarray, spec: CodecSpec) -> LatentGrid:
    """Project each patch of the (real-valued) grid onto the basis."""
    real = x.cells.astype(float) if isinstance(x, OccupancyGrid) else np.asarray(x, dtype=float)
    if real.shape != (spec.resolution,) * 3:
        raise CodecError(f"grid resolution {real.shape} does not match codec R={spec.resolution}")
    coeff = np.einsum("abcxyz,kxyz->abck", _patches(real, spec), spec.basis())
    return LatentGrid(coeff)


def decode_field(z: LatentGrid, spec: CodecSpec) -> np.ndarray:
    """Real-valued reconstruction before thresholding."""
    if z.values.shape != spec.latent_shape:
        raise CodecError(f"latent shape {z.values.shape} does not match codec {spec.latent_shape}")
    g, p = spec.grid_size, spec.patch
    patches = np.einsum("abck,kxyz->abcxyz", z.values, spec.basis())
    return patches.transpose(0, 3, 1, 4, 2, 5).reshape(g * p, g * p, g * p)


def decode(z: LatentGrid, spec: CodecSpec) -> OccupancyGrid:
    """Threshold the reconstruction; values exactly at threshold decode to 1."""
    field = decode_field(z, spec)
    return OccupancyGrid((field >= spec.threshold).astype(np.uint8))


def roundtrip(x: OccupancyGrid, spec: CodecSpec) -> OccupancyGrid:
    return decode(encode(x, spec), spec)


# ---------------------------------------------------------------------------
# binary field container
#
# layout: magic "SCLAT1" | uint32 R, P, G, C (little endian) | float32 payload
# in row-major (patch z, y, x, channel) order.  Occupancy grids reuse the same
# container with P=1, G=R, C=1; colored grids use C=4 (occupancy, r, g, b).


def dump_field(values: np.ndarray, resolution: int, patch: int) -> bytes:
    v = np.asarray(values, dtype=np.float32)
    g, c = v.shape[0], v.shape[3]
    header = LATENT_MAGIC + struct.pack("<4I", resolution, patch, g, c)
    payload = np.ascontiguousarray(v.transpose(2, 1, 0, 3)).astype("<f4").tobytes()
    return header + payload


def load_field(blob: bytes) -> tuple[np.ndarray, dict]:
    if blob[:6] != LATENT_MAGIC:
        raise CodecError("bad magic in field dump")
    r, p, g, c = struct.unpack("<4I", blob[6:22])
    expected = g * g * g * c * 4
    payload = blob[22:]
    if len(payload) != expected:
        raise CodecError(f"field dump payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(g, g, g, c).transpose(2, 1, 0, 3)
    return values.astype(float), {"resolution": r, "patch": p, "grid_size": g, "channels": c}


def dump_latent(z: LatentGrid, spec: CodecSpec) -> bytes:
    return dump_field(z.values, spec.resolution, spec.patch)


def load_latent(blob: bytes) -> tuple[LatentGrid, dict]:
    values, meta = load_field(blob)
    return LatentGrid(values), meta


def dump_grid(grid: OccupancyGrid) -> bytes:
    r = grid.resolution
    return dump_field(grid.cells.astype(np.float32)[..., None], r, 1)


def load_grid(blob: bytes) -> OccupancyGrid:
    values, meta = load_field(blob)
    if meta["channels"] != 1 or meta["patch"] != 1:
        raise CodecError("not an occupancy grid dump")
    return OccupancyGrid((values[..., 0] >= 0.5).astype(np.uint8))


def dump_colored_grid(grid: OccupancyGrid, colors: np.ndarray) -> bytes:
    """colors: (R, R, R, 3) floats in [0,1], meaningful on occupied cells."""
    r = grid.resolution
    if colors.shape != (r, r, r, 3):
        raise CodecError(f"colors must be (R,R,R,3), got {colors.shape}")
    stacked = np.concatenate([grid.cells.astype(np.float32)[..., None], colors.astype(np.float32)], axis=3)
    return dump_field(stacked, r, 1)


def load_colored_grid(blob: bytes) -> tuple[OccupancyGrid, np.ndarray]:
    values, meta = load_field(blob)
    if meta["channels"] != 4:
        raise CodecError("not a colored grid dump")
    grid = OccupancyGrid((values[..., 0] >= 0.5).astype(np.uint8))
    return grid, values[..., 1:4]
