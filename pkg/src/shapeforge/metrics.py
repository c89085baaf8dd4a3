"""Faithfulness and realism metrics plus the control-strength sweep.

Chamfer distance uses squared L2 with mean reduction in both directions;
the Frechet distance fits Gaussians with a small diagonal shrinkage and
takes the matrix square root through a symmetric eigendecomposition.
Latent-space features for the realism score are the per-patch channel
vectors of the analytic codec.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .codec import CodecSpec, LatentGrid, decode, encode, roundtrip
from .corpus import Dataset, coarsen
from .flow import integrate
from .geometry import OccupancyGrid, scene_surface_sample, voxelize
from .guidance import MAX_SAMPLE_ATTEMPTS, GenerationResult, normalize_to_unit_cube, resample_seed
from .nets import ShapeConditionedNet
from .training import Checkpoint, build_net

CD_SCALE = 1e3


class MetricError(ValueError):
    pass


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance between point sets.

    Nearest indices come from a KD-tree; distances are recomputed from the
    indices with plain array arithmetic so the value matches an O(n^2) scan
    bit for bit.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("chamfer distance needs non-empty point sets")
    _, ib = cKDTree(b).query(a, k=1)
    _, ia = cKDTree(a).query(b, k=1)
    d_ab = np.mean(np.sum((a - b[ib]) ** 2, axis=1))
    d_ba = np.mean(np.sum((b - a[ia]) ** 2, axis=1))
    return float(d_ab + d_ba)


def voxel_iou(x: OccupancyGrid, y: OccupancyGrid) -> float:
    """Intersection over union; defined as 1.0 when both grids are empty."""
    if x.resolution != y.resolution:
        raise MetricError(f"resolution mismatch: {x.resolution} vs {y.resolution}")
    inter = int(np.logical_and(x.cells, y.cells).sum())
    union = int(np.logical_or(x.cells, y.cells).sum())
    return 1.0 if union == 0 else inter / union


def frechet_distance(set_a: np.ndarray, set_b: np.ndarray, shrinkage: float = 1e-6) -> float:
    """Wasserstein-2 distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the cross
    root computed as Tr sqrt(S_a^(1/2) S_b S_a^(1/2)) via symmetric
    eigendecompositions (eigenvalues clamped at zero).
    """
    a = np.atleast_2d(np.asarray(set_a, dtype=float))
    b = np.atleast_2d(np.asarray(set_b, dtype=float))
    d = a.shape[1]
    if b.shape[1] != d:
        raise MetricError("feature dimension mismatch")
    if len(a) < d + 1 or len(b) < d + 1:
        raise MetricError(f"need at least d+1={d + 1} samples per set, got {len(a)} and {len(b)}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + shrinkage * np.eye(d)
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + shrinkage * np.eye(d)

    evals, evecs = np.linalg.eigh(cov_a)
    root_a = (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T
    middle = root_a @ cov_b @ root_a
    mid_evals = np.linalg.eigvalsh((middle + middle.T) / 2.0)
    tr_cross = np.sum(np.sqrt(np.maximum(mid_evals, 0.0)))

    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)


def surface_cell_centers(grid: OccupancyGrid) -> np.ndarray:
    """Centers of occupied cells that expose at least one face."""
    cells = grid.cells.astype(bool)
    padded = np.pad(cells, 1, constant_values=False)
    covered = (
        padded[:-2, 1:-1, 1:-1]
        & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1]
        & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2]
        & padded[1:-1, 1:-1, 2:]
    )
    surface = cells & ~covered
    idx = np.argwhere(surface)
    return (idx + 0.5) / grid.resolution


def latent_features(grids, spec: CodecSpec) -> np.ndarray:
    """(n, G^3) realism features: each grid's flattened per-patch DC channel,
    i.e. its occupancy density field at the coarse resolution."""
    return np.asarray([encode(g, spec).values[..., 0].ravel() for g in grids])


def generation_metrics(result: GenerationResult, spec: CodecSpec, n_points: int = 512) -> dict:
    """CD (x 1e3) against the control surface and IoU against the control's
    codec round-trip; uses the control geometry captured in the result."""
    if result.norm_scene is None or result.control_grid is None:
        raise MetricError("generation result carries no control geometry")
    points = scene_surface_sample(result.norm_scene, n_points, seed=0)
    gen_surface = surface_cell_centers(result.structure)
    cd = chamfer(points, gen_surface) * CD_SCALE
    iou = voxel_iou(result.structure, roundtrip(result.control_grid, spec))
    return {"cd_e3": cd, "iou_roundtrip": iou}


# ---------------------------------------------------------------------------
# control-strength sweep


@dataclass
class TradeoffReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "metadata": self.metadata}, sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tau0", "t0", "cd_e3", "iou", "frechet", "n"])
        for row in self.rows:
            writer.writerow([row["tau0"], row["t0"], row["cd_e3"], row["iou"], row["frechet"], row["n"]])
        return buf.getvalue()

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]


def _prepare_controls(dataset: Dataset, spec: CodecSpec, n_controls: int, points_per_control: int, split: str):
    ids = dataset.ids(split)
    if len(ids) < n_controls:
        raise MetricError(f"{split} split has {len(ids)} items, need {n_controls} controls")
    ids = ids[:n_controls]
    grids, latents, points, labels = [], [], [], []
    for item_id in ids:
        coarse = coarsen(dataset.load_scene(item_id))
        norm_scene, _ = normalize_to_unit_cube(coarse)
        grid = voxelize(norm_scene, spec.resolution)
        grids.append(grid)
        latents.append(encode(grid, spec).values)
        points.append(scene_surface_sample(norm_scene, points_per_control, seed=item_id))
        labels.append(dataset.item(item_id)["label"])
    return grids, np.asarray(latents), points, np.asarray(labels, dtype=np.int64)


def sweep_tau(
    checkpoint: Checkpoint,
    dataset: Dataset,
    tau0_list,
    seeds=(0,),
    n_controls: int = 64,
    points_per_control: int = 512,
    split: str = "val",
    with_frechet: bool = True,
) -> TradeoffReport:
    """Generate over every (control, seed, tau0) and tabulate CD / IoU /
    latent-space Frechet distance per tau0.

    Controls are the coarsened held-out scenes; one noise draw is fixed per
    (seed, control) pair so rows differ only through the injection step.
    ``with_frechet=False`` skips the realism column (reported as NaN) for
    cheap CD/IoU-only evaluations.
    """
    if n_controls < 32:
        raise MetricError("sweep needs at least 32 controls")
    spec = checkpoint.codec
    schedule = checkpoint.schedule
    net = build_net(checkpoint)
    tau0_list = sorted(int(v) for v in tau0_list)
    if tau0_list and not (0 <= tau0_list[0] and tau0_list[-1] <= schedule.steps):
        raise MetricError(f"tau0 values must lie in [0, {schedule.steps}]")

    reference = None
    if with_frechet:
        feature_dim = spec.grid_size**3
        if n_controls * len(seeds) < feature_dim + 1:
            raise MetricError(
                f"Frechet features are {feature_dim}-dim: need controls x seeds >= {feature_dim + 1}, "
                f"got {n_controls} x {len(seeds)}; add seeds or controls"
            )
        reference = latent_features(dataset.grids("train"), spec)
        if len(reference) < feature_dim + 1:
            raise MetricError(f"reference corpus has {len(reference)} items, need {feature_dim + 1}")
    control_grids, control_latents, control_points, labels = _prepare_controls(
        dataset, spec, n_controls, points_per_control, split
    )

    rng = np.random.default_rng(int(np.asarray(seeds)[0]) * 7_919 + 17)
    noise = rng.standard_normal((len(seeds), n_controls) + spec.latent_shape)

    rows = []
    for tau0 in tau0_list:
        t0 = float(schedule.times[tau0])
        cds, ious, gen_grids = [], [], []
        for s in range(len(seeds)):
            if isinstance(net, ShapeConditionedNet):
                field_obj = net.bind_control(control_latents.reshape(n_controls, -1, spec.channels))
            else:
                field_obj = net
            z_t0 = t0 * noise[s] + (1.0 - t0) * control_latents
            z0 = integrate(z_t0, field_obj, schedule, start_index=tau0, condition=labels)
            grids = [decode(LatentGrid(z0[c]), spec) for c in range(n_controls)]
            # reject degenerate (empty) samples and redraw their noise with a
            # derived seed; never at tau0 = T where noise has no influence
            for attempt in range(1, MAX_SAMPLE_ATTEMPTS):
                redo = [c for c, g in enumerate(grids) if g.count() == 0]
                if not redo or tau0 == schedule.steps:
                    break
                fresh = np.stack(
                    [
                        np.random.default_rng(resample_seed(int(seeds[s]) * 7919 + c, attempt)).standard_normal(
                            spec.latent_shape
                        )
                        for c in redo
                    ]
                )
                z_redo = t0 * fresh + (1.0 - t0) * control_latents[redo]
                if isinstance(net, ShapeConditionedNet):
                    sub_field = net.bind_control(
                        control_latents[redo].reshape(len(redo), -1, spec.channels)
                    )
                else:
                    sub_field = net
                z0_redo = integrate(z_redo, sub_field, schedule, start_index=tau0, condition=labels[redo])
                for row, c in enumerate(redo):
                    grids[c] = decode(LatentGrid(z0_redo[row]), spec)
            for c in range(n_controls):
                grid = grids[c]
                gen_grids.append(grid)
                cds.append(chamfer(control_points[c], surface_cell_centers(grid)) * CD_SCALE)
                ious.append(voxel_iou(grid, control_grids[c]))
        fd = frechet_distance(latent_features(gen_grids, spec), reference) if with_frechet else float("nan")
        rows.append(
            {
                "tau0": tau0,
                "t0": t0,
                "cd_e3": float(np.mean(cds)),
                "iou": float(np.mean(ious)),
                "frechet": fd,
                "n": len(cds),
            }
        )
    return TradeoffReport(
        rows=rows,
        metadata={
            "checkpoint_id": checkpoint.checkpoint_id(),
            "dataset_id": dataset.dataset_id(),
            "seeds": [int(s) for s in seeds],
            "n_controls": n_controls,
            "points_per_control": points_per_control,
            "split": split,
        },
    )
