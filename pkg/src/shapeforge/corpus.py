"""Procedural corpus of labeled primitive-composed shapes.

Three categories (chair, table, rocket) with jittered part layouts and a
per-part color rule; every sample doubles as its own ground-truth control
since the generator works directly in primitives.  Token ids are declared
here and stable across builds.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import (
    CodecSpec,
    dump_colored_grid,
    dump_grid,
    encode,
    load_colored_grid,
    load_grid,
)
from .geometry import ControlScene, OccupancyGrid, Superquadric, scene_from_json, scene_to_dict, voxelize
from .guidance import normalize_to_unit_cube

CATEGORY_TOKENS = {"chair": 0, "table": 1, "rocket": 2}
COLOR_TOKENS = {"red": 3, "green": 4, "blue": 5, "white": 6, "gray": 7, "yellow": 8}
TOKEN_NAMES = {v: k for k, v in {**CATEGORY_TOKENS, **COLOR_TOKENS}.items()}
VOCAB_SIZE = 9  # null condition token is VOCAB_SIZE

COLOR_RGB = {
    "red": (0.85, 0.12, 0.12),
    "green": (0.15, 0.72, 0.20),
    "blue": (0.15, 0.25, 0.85),
    "white": (0.92, 0.92, 0.92),
    "gray": (0.45, 0.45, 0.45),
    "yellow": (0.90, 0.80, 0.15),
}

DATASET_FORMAT_VERSION = 1


def _pick_color(rng, names):
    name = names[rng.integers(0, len(names))]
    rgb = np.clip(np.asarray(COLOR_RGB[name]) + rng.uniform(-0.04, 0.04, 3), 0.03, 0.97)
    return COLOR_TOKENS[name], tuple(float(v) for v in rgb)


def _box(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _chair_parts(rng):
    seat_hx = _box(rng, 0.22, 0.30)
    seat_hy = _box(rng, 0.22, 0.30)
    seat_hz = _box(rng, 0.03, 0.05)
    seat_z = _box(rng, 0.36, 0.48)
    leg_h = (seat_z - seat_hz - 0.05) / 2.0
    leg_r = _box(rng, 0.03, 0.048)
    leg_e = _box(rng, 0.05, 0.4)
    back_hz = _box(rng, 0.12, 0.20)
    back_hy = _box(rng, 0.028, 0.045)
    tilt = _box(rng, -0.10, 0.10)

    parts, tokens, rgbs = [], [], []
    seat_tok, seat_rgb = _pick_color(rng, ("red", "blue", "white"))
    parts.append(
        Superquadric((seat_hx, seat_hy, seat_hz), (_box(rng, 0.05, 0.3), _box(rng, 0.05, 0.3)), (0.5, 0.5, seat_z))
    )
    tokens.append(seat_tok)
    rgbs.append(seat_rgb)

    leg_tok, leg_rgb = _pick_color(rng, ("gray", "white"))
    dx, dy = seat_hx - leg_r - 0.01, seat_hy - leg_r - 0.01
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(
                Superquadric(
                    (leg_r, leg_r, leg_h),
                    (leg_e, leg_e),
                    (0.5 + sx * dx, 0.5 + sy * dy, 0.05 + leg_h),
                )
            )
            tokens.append(leg_tok)
            rgbs.append(leg_rgb)

    back_tok, back_rgb = _pick_color(rng, ("red", "blue", "white"))
    parts.append(
        Superquadric(
            (seat_hx * 0.95, back_hy, back_hz),
            (_box(rng, 0.05, 0.3), _box(rng, 0.05, 0.3)),
            (0.5, 0.5 - seat_hy + back_hy, seat_z + seat_hz + back_hz),
            rotation=(0.0, 0.0, tilt),
        )
    )
    tokens.append(back_tok)
    rgbs.append(back_rgb)
    return parts, tokens, rgbs


def _table_parts(rng):
    top_hx = _box(rng, 0.26, 0.36)
    top_hy = _box(rng, 0.26, 0.36)
    top_hz = _box(rng, 0.028, 0.05)
    top_z = _box(rng, 0.42, 0.55)
    leg_h = (top_z - top_hz - 0.05) / 2.0
    leg_r = _box(rng, 0.03, 0.05)

    parts, tokens, rgbs = [], [], []
    top_tok, top_rgb = _pick_color(rng, ("white", "yellow", "green"))
    parts.append(
        Superquadric((top_hx, top_hy, top_hz), (_box(rng, 0.05, 0.25), _box(rng, 0.05, 0.25)), (0.5, 0.5, top_z))
    )
    tokens.append(top_tok)
    rgbs.append(top_rgb)

    leg_tok, leg_rgb = _pick_color(rng, ("gray",))
    dx, dy = top_hx - leg_r - 0.015, top_hy - leg_r - 0.015
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(
                Superquadric(
                    (leg_r, leg_r, leg_h),
                    (_box(rng, 0.05, 0.5), _box(rng, 0.05, 0.5)),
                    (0.5 + sx * dx, 0.5 + sy * dy, 0.05 + leg_h),
                )
            )
            tokens.append(leg_tok)
            rgbs.append(leg_rgb)
    return parts, tokens, rgbs


def _rocket_parts(rng):
    body_r = _box(rng, 0.08, 0.12)
    body_h = _box(rng, 0.24, 0.32)
    body_z = 0.08 + body_h
    nose_h = _box(rng, 0.08, 0.14)

    parts, tokens, rgbs = [], [], []
    body_tok, body_rgb = _pick_color(rng, ("red",))
    parts.append(
        Superquadric((body_r, body_r, body_h), (_box(rng, 0.15, 0.4), _box(rng, 0.8, 1.2)), (0.5, 0.5, body_z))
    )
    tokens.append(body_tok)
    rgbs.append(body_rgb)

    nose_tok, nose_rgb = _pick_color(rng, ("red", "white"))
    parts.append(
        Superquadric(
            (body_r * 0.9, body_r * 0.9, nose_h),
            (_box(rng, 0.9, 1.5), _box(rng, 0.8, 1.2)),
            (0.5, 0.5, body_z + body_h + nose_h * 0.75),
        )
    )
    tokens.append(nose_tok)
    rgbs.append(nose_rgb)

    fin_tok, fin_rgb = _pick_color(rng, ("gray", "red"))
    fin_len = _box(rng, 0.07, 0.11)
    fin_h = _box(rng, 0.06, 0.10)
    for k in range(4):
        angle = k * np.pi / 2.0 + _box(rng, -0.05, 0.05)
        r = body_r + fin_len * 0.55
        parts.append(
            Superquadric(
                (fin_len, 0.02, fin_h),
                (0.05, 0.05),
                (0.5 + r * np.cos(angle), 0.5 + r * np.sin(angle), 0.08 + fin_h),
                rotation=(angle, 0.0, 0.0),
            )
        )
        tokens.append(fin_tok)
        rgbs.append(fin_rgb)
    return parts, tokens, rgbs


@dataclass(frozen=True)
class CategorySpec:
    name: str
    token: int
    arity: int
    builder: Callable


CATEGORY_SPECS = {
    "chair": CategorySpec("chair", CATEGORY_TOKENS["chair"], 6, _chair_parts),
    "table": CategorySpec("table", CATEGORY_TOKENS["table"], 5, _table_parts),
    "rocket": CategorySpec("rocket", CATEGORY_TOKENS["rocket"], 6, _rocket_parts),
}


@dataclass
class ShapeSample:
    scene: ControlScene  # normalized; local labels carry the color tokens
    grid: OccupancyGrid
    colors: np.ndarray  # (R, R, R, 3)
    category: str
    label: int
    part_rgbs: tuple
    seed: int


def owning_part(scene: ControlScene, points: np.ndarray) -> np.ndarray:
    """Index of the part nearest to each point under the implicit-form proxy
    min(scale) * F^(eps1/2); ties go to the lowest part index."""
    from .geometry import inside_outside

    best = np.full(len(points), np.inf)
    owner = np.zeros(len(points), dtype=np.int64)
    for i, q in enumerate(scene.primitives):
        f = np.asarray(inside_outside(q, points))
        proxy = min(q.scale) * np.power(np.maximum(f, 0.0), q.exponents[0] / 2.0)
        better = proxy < best
        best[better] = proxy[better]
        owner[better] = i
    return owner


def sample_shape(spec: CategorySpec, seed: int, resolution: int = 32) -> ShapeSample:
    """Deterministic labeled shape: scene, occupancy grid, per-cell colors."""
    rng = np.random.default_rng(seed)
    parts, tokens, rgbs = spec.builder(rng)
    assert len(parts) == spec.arity, f"{spec.name} template arity drifted"
    raw = ControlScene(primitives=tuple(parts), global_label=spec.token, local_labels=tuple(tokens))
    lo, _ = raw.bounds()
    if lo[2] < 0:
        raise ValueError(f"{spec.name} template dipped below the floor plane")
    scene, _ = normalize_to_unit_cube(raw)
    grid = voxelize(scene, resolution)

    colors = np.zeros((resolution, resolution, resolution, 3))
    centers = grid.occupied_centers()
    if len(centers):
        owners = owning_part(scene, centers)
        rgb_arr = np.asarray(rgbs)
        idx = grid.occupied_indices()
        colors[idx[:, 0], idx[:, 1], idx[:, 2]] = rgb_arr[owners]
    return ShapeSample(
        scene=scene,
        grid=grid,
        colors=colors,
        category=spec.name,
        label=spec.token,
        part_rgbs=tuple(rgbs),
        seed=seed,
    )


def coarse_control_latent(scene: ControlScene, spec: CodecSpec) -> np.ndarray:
    """Encoded voxelization of the scene's coarse (bounding-cuboid) control,
    normalized the same way guided generation normalizes its inputs."""
    coarse, _ = normalize_to_unit_cube(coarsen(scene))
    return encode(voxelize(coarse, spec.resolution), spec).values


def coarsen(scene: ControlScene) -> ControlScene:
    """Replace each part with its axis-aligned bounding cuboid (near-cube
    exponents), preserving labels; the coarse control never shrinks coverage."""
    prims = []
    for q in scene.primitives:
        lo, hi = q.aabb()
        prims.append(
            Superquadric(
                scale=tuple((hi - lo) / 2.0),
                exponents=(0.05, 0.05),
                translation=tuple((hi + lo) / 2.0),
            )
        )
    return ControlScene(
        primitives=tuple(prims),
        global_label=scene.global_label,
        local_labels=scene.local_labels,
        mesh=scene.mesh,
    )


# ---------------------------------------------------------------------------
# persisted datasets


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def build_dataset(
    out_dir,
    n_per_category: int,
    seed: int = 0,
    resolution: int = 32,
    categories=("chair", "table", "rocket"),
) -> Path:
    """Write scenes, grid dumps, colored dumps and a manifest with a 90/10
    train/val split; returns the manifest path."""
    if n_per_category < 1:
        raise ValueError("need at least one sample per category")
    out = Path(out_dir)
    (out / "items").mkdir(parents=True, exist_ok=True)
    items, train_ids, val_ids = [], [], []
    item_id = 0
    for cat in categories:
        spec = CATEGORY_SPECS[cat]
        n_val = n_per_category // 10
        for i in range(n_per_category):
            sample_seed = seed * 1_000_003 + spec.token * 10_007 + i
            sample = sample_shape(spec, sample_seed, resolution)
            stem = f"items/{item_id:05d}"
            scene_doc = json.dumps(scene_to_dict(sample.scene), sort_keys=True).encode()
            _atomic_write(out / f"{stem}_scene.json", scene_doc)
            _atomic_write(out / f"{stem}_grid.bin", dump_grid(sample.grid))
            _atomic_write(out / f"{stem}_color.bin", dump_colored_grid(sample.grid, sample.colors))
            items.append(
                {
                    "id": item_id,
                    "category": cat,
                    "label": spec.token,
                    "seed": sample_seed,
                    "scene": f"{stem}_scene.json",
                    "grid": f"{stem}_grid.bin",
                    "color": f"{stem}_color.bin",
                }
            )
            (val_ids if i >= n_per_category - n_val else train_ids).append(item_id)
            item_id += 1
    manifest = {
        "version": DATASET_FORMAT_VERSION,
        "seed": seed,
        "resolution": resolution,
        "n_per_category": n_per_category,
        "categories": list(categories),
        "vocab": VOCAB_SIZE,
        "items": items,
        "splits": {"train": train_ids, "val": val_ids},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode())
    return out / "manifest.json"


class Dataset:
    """Deterministic reader over a built dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        with open(self.root / "manifest.json") as fh:
            self.manifest = json.load(fh)
        self._by_id = {item["id"]: item for item in self.manifest["items"]}

    @property
    def resolution(self) -> int:
        return self.manifest["resolution"]

    @property
    def vocab(self) -> int:
        return self.manifest.get("vocab", VOCAB_SIZE)

    def dataset_id(self) -> str:
        return manifest_hash(self.manifest)[:16]

    def ids(self, split: str | None = None) -> list[int]:
        if split is None:
            return [item["id"] for item in self.manifest["items"]]
        return list(self.manifest["splits"][split])

    def item(self, item_id: int) -> dict:
        return self._by_id[item_id]

    def load_scene(self, item_id: int) -> ControlScene:
        return scene_from_json((self.root / self.item(item_id)["scene"]).read_text())

    def load_grid(self, item_id: int) -> OccupancyGrid:
        return load_grid((self.root / self.item(item_id)["grid"]).read_bytes())

    def load_colored(self, item_id: int):
        return load_colored_grid((self.root / self.item(item_id)["color"]).read_bytes())

    def labels(self, split: str | None = None) -> np.ndarray:
        return np.asarray([self.item(i)["label"] for i in self.ids(split)], dtype=np.int64)

    def grids(self, split: str | None = None) -> list[OccupancyGrid]:
        return [self.load_grid(i) for i in self.ids(split)]

    def latents(self, spec: CodecSpec, split: str | None = None) -> np.ndarray:
        return np.asarray([encode(self.load_grid(i), spec).flat() for i in self.ids(split)])
