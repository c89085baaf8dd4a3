"""Superquadric primitives, control scenes, and voxelization.

A superquadric is parameterized by three positive scales, two shape
exponents and a rigid pose (translation + intrinsic Z-Y-X Euler angles),
eleven parameters in total.  Scenes compose primitives (optionally plus a
triangle mesh) and are rasterized into binary occupancy grids over the
unit cube [0,1]^3 by cell-center membership tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

EXPONENT_MIN = 0.05
EXPONENT_MAX = 1.95
MIN_RESOLUTION = 8
MAX_RESOLUTION = 128

SCENE_FORMAT_VERSION = 1

# trig factors below this magnitude are treated as exact zeros before the
# signed power is applied (cos(pi/2) is ~6e-17 in floats, and tiny^0.05 is not small)
_TRIG_SNAP = 1e-12


class GeometryError(ValueError):
    """Invalid geometric input: degenerate scene, bad parameters, bad mesh."""


def rotation_matrix(angles: np.ndarray) -> np.ndarray:
    """Rotation matrix for intrinsic Z-Y-X Euler angles ``(rz, ry, rx)``."""
    rz, ry, rx = float(angles[0]), float(angles[1]), float(angles[2])
    cz, sz = math.cos(rz), math.sin(rz)
    cy, sy = math.cos(ry), math.sin(ry)
    cx, sx = math.cos(rx), math.sin(rx)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return Rz @ Ry @ Rx


def signed_power(c: np.ndarray, exponent: float) -> np.ndarray:
    """sgn(c) * |c|**exponent, with tiny inputs snapped to exact zero."""
    c = np.asarray(c, dtype=float)
    c = np.where(np.abs(c) < _TRIG_SNAP, 0.0, c)
    return np.sign(c) * np.abs(c) ** exponent


@dataclass(frozen=True)
class Superquadric:
    """One primitive: scales, exponents and pose.

    ``exponents`` are clamped into [0.05, 1.95] on construction; the
    implicit form is not Lipschitz at the 0 and 2 limits.
    """

    scale: tuple[float, float, float]
    exponents: tuple[float, float]
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=float)
        e = np.asarray(self.exponents, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        r = np.asarray(self.rotation, dtype=float)
        if s.shape != (3,) or e.shape != (2,) or t.shape != (3,) or r.shape != (3,):
            raise GeometryError("superquadric parameter arity mismatch")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise GeometryError(f"scales must be positive finite, got {self.scale}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r)) and np.all(np.isfinite(e))):
            raise GeometryError("non-finite pose or exponent")
        e = np.clip(e, EXPONENT_MIN, EXPONENT_MAX)
        object.__setattr__(self, "scale", tuple(float(v) for v in s))
        object.__setattr__(self, "exponents", (float(e[0]), float(e[1])))
        object.__setattr__(self, "translation", tuple(float(v) for v in t))
        object.__setattr__(self, "rotation", tuple(float(v) for v in r))

    def rotation_matrix(self) -> np.ndarray:
        return rotation_matrix(np.asarray(self.rotation))

    def to_canonical(self, points: np.ndarray) -> np.ndarray:
        """Map world points into the primitive's canonical frame."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p - np.asarray(self.translation)) @ self.rotation_matrix()

    def to_world(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return p @ self.rotation_matrix().T + np.asarray(self.translation)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """Conservative world-space bounds: the rotated canonical box.

        The canonical surface satisfies |x_i| <= s_i for every exponent, so
        the |R| s box always contains the primitive.
        """
        half = np.abs(self.rotation_matrix()) @ np.asarray(self.scale)
        center = np.asarray(self.translation)
        return center - half, center + half

    def with_pose(self, translation, rotation) -> "Superquadric":
        return Superquadric(self.scale, self.exponents, tuple(translation), tuple(rotation))


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError("mesh arrays must be (V,3) vertices and (F,3) faces")
        if len(f) == 0 or len(v) == 0:
            raise GeometryError("mesh must have at least one face and one vertex")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite mesh vertex")
        if f.min() < 0 or f.max() >= len(v):
            raise GeometryError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class ControlScene:
    """User control geometry: primitives and/or a triangle mesh, plus labels."""

    primitives: tuple[Superquadric, ...]
    global_label: int = 0
    local_labels: tuple[int, ...] | None = None
    mesh: TriangleMesh | None = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        if len(prims) == 0 and self.mesh is None:
            raise GeometryError("scene needs at least one primitive or a mesh")
        if self.local_labels is not None:
            labels = tuple(int(v) for v in self.local_labels)
            if len(labels) != len(prims):
                raise GeometryError(
                    f"local labels must cover every primitive: {len(labels)} labels for {len(prims)} primitives"
                )
            object.__setattr__(self, "local_labels", labels)
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "global_label", int(self.global_label))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        los, his = [], []
        for q in self.primitives:
            lo, hi = q.aabb()
            los.append(lo)
            his.append(hi)
        if self.mesh is not None:
            los.append(self.mesh.vertices.min(axis=0))
            his.append(self.mesh.vertices.max(axis=0))
        return np.min(los, axis=0), np.max(his, axis=0)


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary voxel grid over the unit cube; cells indexed [ix, iy, iz]."""

    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[1] != c.shape[2]:
            raise GeometryError(f"occupancy grid must be cubic, got shape {c.shape}")
        if not np.all((c == 0) | (c == 1)):
            raise GeometryError("occupancy cells must be binary")
        object.__setattr__(self, "cells", c.astype(np.uint8))

    @property
    def resolution(self) -> int:
        return self.cells.shape[0]

    def count(self) -> int:
        return int(self.cells.sum())

    def occupied_centers(self) -> np.ndarray:
        """(L, 3) world-space centers of occupied cells, lexicographic order."""
        idx = np.argwhere(self.cells == 1)
        return (idx + 0.5) / self.resolution

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.cells == 1)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return hash((self.cells.shape, self.cells.tobytes()))


def cell_centers(resolution: int) -> np.ndarray:
    """(R^3, 3) array of cell centers in lexicographic (ix, iy, iz) order."""
    axis = (np.arange(resolution) + 0.5) / resolution
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def inside_outside(q: Superquadric, p: np.ndarray) -> np.ndarray | float:
    """Implicit inside-outside value F: <1 inside, =1 on surface, >1 outside."""
    p_arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p_arr)):
        raise GeometryError("non-finite query point")
    single = p_arr.ndim == 1
    local = q.to_canonical(p_arr)
    e1, e2 = q.exponents
    sx, sy, sz = q.scale
    xy = (np.abs(local[:, 0] / sx) ** (2.0 / e2) + np.abs(local[:, 1] / sy) ** (2.0 / e2)) ** (e2 / e1)
    f = xy + np.abs(local[:, 2] / sz) ** (2.0 / e1)
    return float(f[0]) if single else f


def surface_point(q: Superquadric, eta: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Explicit surface point(s) at parametric angles, in world coordinates.

    Uses the signed-power convention on each trigonometric factor so the
    surface closes over all octants; eta in [-pi/2, pi/2], omega in [-pi, pi].
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    e1, e2 = q.exponents
    ce = signed_power(np.cos(eta), e1)
    se = signed_power(np.sin(eta), e1)
    x = q.scale[0] * ce * signed_power(np.cos(omega), e2)
    y = q.scale[1] * ce * signed_power(np.sin(omega), e2)
    z = q.scale[2] * se
    return q.to_world(np.stack([x, y, z], axis=1))


def surface_sample(q: Superquadric, n: int, seed: int = 0) -> np.ndarray:
    """n random surface points (seeded, uniform in parameter space)."""
    if n < 1:
        raise GeometryError("need at least one sample")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
    omega = rng.uniform(-np.pi, np.pi, size=n)
    return surface_point(q, eta, omega)


def scene_surface_sample(scene: ControlScene, n: int, seed: int = 0) -> np.ndarray:
    """Sample n points over all primitives (and mesh vertices, if any)."""
    if n < 1:
        raise GeometryError("need at least one sample")
    sources = len(scene.primitives) + (1 if scene.mesh is not None else 0)
    counts = [n // sources + (1 if i < n % sources else 0) for i in range(sources)]
    chunks = []
    for i, q in enumerate(scene.primitives):
        if counts[i] > 0:
            chunks.append(surface_sample(q, counts[i], seed=seed + i))
    if scene.mesh is not None and counts[-1] > 0:
        rng = np.random.default_rng(seed + sources)
        verts = scene.mesh.vertices
        chunks.append(verts[rng.integers(0, len(verts), size=counts[-1])])
    return np.concatenate(chunks, axis=0)


def _mesh_inside(mesh: TriangleMesh, points: np.ndarray, resolution: int) -> np.ndarray:
    """Solid point-membership by ray parity along +x.

    Ray origins are shifted by +R^-2 * (1,1,1) so rays exactly grazing an
    edge or vertex resolve deterministically.
    """
    areas = mesh.face_areas()
    keep = areas > 1e-14
    if not np.any(keep):
        raise GeometryError("degenerate mesh: every face has zero area")
    faces = mesh.faces[keep]
    v0 = mesh.vertices[faces[:, 0]]
    e1 = mesh.vertices[faces[:, 1]] - v0
    e2 = mesh.vertices[faces[:, 2]] - v0

    # Moller-Trumbore specialized to direction d = (1, 0, 0)
    h = np.stack([np.zeros(len(faces)), -e2[:, 2], e2[:, 1]], axis=1)  # d x e2
    a = np.einsum("fi,fi->f", e1, h)
    valid = np.abs(a) > 1e-14
    inv_a = np.where(valid, 1.0 / np.where(valid, a, 1.0), 0.0)

    origins = points + (1.0 / resolution**2)
    inside = np.zeros(len(origins), dtype=bool)
    chunk = 8192
    for start in range(0, len(origins), chunk):
        o = origins[start : start + chunk]  # (M, 3)
        s = o[:, None, :] - v0[None, :, :]  # (M, F, 3)
        u = np.einsum("mfi,fi->mf", s, h) * inv_a
        q_cross = np.cross(s, e1[None, :, :])
        v = q_cross[:, :, 0] * inv_a  # d . (s x e1) with d = +x
        t = np.einsum("mfi,fi->mf", q_cross, e2) * inv_a
        hit = valid & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
        inside[start : start + chunk] = (hit.sum(axis=1) % 2) == 1
    return inside


def voxelize(scene: ControlScene, resolution: int = 32) -> OccupancyGrid:
    """Rasterize a scene: a cell is occupied iff its center lies inside any
    primitive or inside the scene mesh (solid interior)."""
    if not (MIN_RESOLUTION <= resolution <= MAX_RESOLUTION):
        raise GeometryError(f"resolution must lie in [{MIN_RESOLUTION}, {MAX_RESOLUTION}]")
    centers = cell_centers(resolution)
    occupied = np.zeros(len(centers), dtype=bool)
    for q in scene.primitives:
        # cheap AABB rejection before the implicit evaluation
        lo, hi = q.aabb()
        box = np.all((centers >= lo) & (centers <= hi), axis=1)
        if np.any(box):
            occupied[box] |= inside_outside(q, centers[box]) < 1.0
    if scene.mesh is not None:
        occupied |= _mesh_inside(scene.mesh, centers, resolution)
    return OccupancyGrid(occupied.reshape(resolution, resolution, resolution).astype(np.uint8))


# ---------------------------------------------------------------------------
# scene JSON and OBJ interchange


def scene_to_dict(scene: ControlScene) -> dict:
    prims = []
    for i, q in enumerate(scene.primitives):
        entry = {
            "scale": list(q.scale),
            "exponents": list(q.exponents),
            "translation": list(q.translation),
            "rotation": list(q.rotation),
        }
        if scene.local_labels is not None:
            entry["local_label"] = scene.local_labels[i]
        prims.append(entry)
    doc = {
        "version": SCENE_FORMAT_VERSION,
        "global_label": scene.global_label,
        "primitives": prims,
    }
    if scene.mesh is not None:
        doc["mesh"] = {
            "vertices": scene.mesh.vertices.tolist(),
            "faces": scene.mesh.faces.tolist(),
        }
    return doc


def scene_from_dict(doc: dict) -> ControlScene:
    if not isinstance(doc, dict):
        raise GeometryError("scene document must be a JSON object")
    if "primitives" not in doc:
        raise GeometryError("scene document missing 'primitives'")
    prims, labels = [], []
    have_labels = False
    for entry in doc["primitives"]:
        try:
            prims.append(
                Superquadric(
                    scale=tuple(entry["scale"]),
                    exponents=tuple(entry["exponents"]),
                    translation=tuple(entry.get("translation", (0, 0, 0))),
                    rotation=tuple(entry.get("rotation", (0, 0, 0))),
                )
            )
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"bad primitive entry: {exc}") from exc
        if "local_label" in entry:
            have_labels = True
            labels.append(int(entry["local_label"]))
        else:
            labels.append(None)
    if have_labels and any(v is None for v in labels):
        raise GeometryError("local labels, when present, must cover every primitive")
    mesh = None
    if doc.get("mesh") is not None:
        m = doc["mesh"]
        mesh = TriangleMesh(np.asarray(m["vertices"], dtype=float), np.asarray(m["faces"], dtype=np.int64))
    return ControlScene(
        primitives=tuple(prims),
        global_label=int(doc.get("global_label", 0)),
        local_labels=tuple(labels) if have_labels else None,
        mesh=mesh,
    )


def scene_to_json(scene: ControlScene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True)


def scene_from_json(text: str) -> ControlScene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryError(f"invalid scene JSON: {exc}") from exc
    return scene_from_dict(doc)


def load_obj(text: str) -> TriangleMesh:
    """Parse the ASCII OBJ subset: 'v' and triangular 'f' lines."""
    vertices, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise GeometryError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise GeometryError(f"line {lineno}: only triangular faces are supported")
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if any(i < 1 for i in idx):
                raise GeometryError(f"line {lineno}: face indices must be positive")
            faces.append([i - 1 for i in idx])
        # all other OBJ directives are ignored
    if not vertices or not faces:
        raise GeometryError("OBJ contains no usable geometry")
    return TriangleMesh(np.asarray(vertices, dtype=float), np.asarray(faces, dtype=np.int64))
