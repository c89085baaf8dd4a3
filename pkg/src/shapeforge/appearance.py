"""Second-stage flow over per-active-voxel features, decoded to colors.

Each active voxel carries a feature vector denoised by a small residual MLP
with mean-pooled 6-neighborhood aggregation and, per layer, a cross-attention
block over condition-token embeddings.  Local semantic control blends the
attention output for a per-voxel token with the global one at fixed equal
weights.  The first three clean channels pass through a logistic squash to
become RGB.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .flow import StepSchedule, integrate
from .geometry import ControlScene, OccupancyGrid
from .nets import TIME_FEATURES, time_features
from .training import Adam, Checkpoint, CodecSpec, TrainConfig, TrainingDiverged

POS_FEATURES = 12
MESH_MAGIC = b"SCMESH1"


class AppearanceError(ValueError):
    pass


@dataclass(frozen=True)
class AppearanceLatents:
    """Per-active-voxel features in canonical (lexicographic) voxel order."""

    coords: np.ndarray  # (L, 3) integer indices
    features: np.ndarray  # (L, C)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64)
        f = np.asarray(self.features, dtype=float)
        if len(c) != len(f):
            raise AppearanceError("coords and features disagree on voxel count")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "features", f)

    @property
    def count(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class LocalConditioning:
    global_token: int
    local_tokens: np.ndarray | None = None  # (L,) token per voxel, or None

    def resolved_locals(self, count: int) -> np.ndarray | None:
        if self.local_tokens is None:
            return None
        toks = np.asarray(self.local_tokens, dtype=np.int64)
        if toks.shape != (count,):
            raise AppearanceError(f"local tokens shape {toks.shape} does not cover {count} voxels")
        return toks


def attach_noise(structure: OccupancyGrid, seed: int, channels: int = 8) -> AppearanceLatents:
    """Standard-normal features for every active voxel, canonical order."""
    coords = structure.occupied_indices()
    if len(coords) == 0:
        raise AppearanceError("structure has no active voxels")
    rng = np.random.default_rng(seed)
    return AppearanceLatents(coords=coords, features=rng.standard_normal((len(coords), channels)))


def positional_features(coords: np.ndarray, resolution: int) -> np.ndarray:
    """12 sinusoidal features of the normalized voxel center (2 octaves)."""
    centers = (np.asarray(coords, dtype=float) + 0.5) / resolution
    feats = []
    for freq in (2 * np.pi, 4 * np.pi):
        feats.append(np.sin(freq * centers))
        feats.append(np.cos(freq * centers))
    return np.concatenate(feats, axis=1)


def build_adjacency(coords: np.ndarray, resolution: int):
    """Directed 6-neighborhood edges among active voxels.

    Returns (edges (E, 2) with (dst, src) pairs, counts (L,)); coords must be
    in canonical order so the linear keys are already sorted.
    """
    coords = np.asarray(coords, dtype=np.int64)
    r = resolution
    keys = coords[:, 0] * r * r + coords[:, 1] * r + coords[:, 2]
    edges = []
    offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    for ox, oy, oz in offsets:
        nb = coords + np.asarray([ox, oy, oz])
        valid = np.all((nb >= 0) & (nb < r), axis=1)
        nb_keys = nb[:, 0] * r * r + nb[:, 1] * r + nb[:, 2]
        pos = np.searchsorted(keys, nb_keys)
        pos_clipped = np.minimum(pos, len(keys) - 1)
        found = valid & (keys[pos_clipped] == nb_keys)
        src = pos_clipped[found]
        dst = np.nonzero(found)[0]
        edges.append(np.stack([dst, src], axis=1))
    edges = np.concatenate(edges, axis=0) if edges else np.zeros((0, 2), dtype=np.int64)
    counts = np.bincount(edges[:, 0], minlength=len(coords)).astype(float)
    return edges, counts


def _neighbor_mean(h: np.ndarray, edges: np.ndarray, counts: np.ndarray) -> np.ndarray:
    agg = np.zeros_like(h)
    if len(edges):
        np.add.at(agg, edges[:, 0], h[edges[:, 1]])
    nz = counts > 0
    agg[nz] /= counts[nz, None]
    return agg


def _neighbor_mean_backward(d_agg: np.ndarray, edges: np.ndarray, counts: np.ndarray) -> np.ndarray:
    dh = np.zeros_like(d_agg)
    if len(edges):
        scaled = d_agg / np.maximum(counts, 1.0)[:, None]
        np.add.at(dh, edges[:, 1], scaled[edges[:, 0]])
    return dh


def _ca_forward(q: np.ndarray, emb: np.ndarray, wk: np.ndarray, wv: np.ndarray):
    d = q.shape[1]
    k = emb @ wk
    v = emb @ wv
    scores = (q @ k.T) / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=1, keepdims=True)
    return attn @ v, {"attn": attn, "k": k, "v": v, "emb": emb, "q": q}


def _ca_backward(cache: dict, d_out: np.ndarray, wk: np.ndarray, wv: np.ndarray):
    attn, k, v, emb, q = cache["attn"], cache["k"], cache["v"], cache["emb"], cache["q"]
    d = q.shape[1]
    d_attn = d_out @ v.T
    d_v = attn.T @ d_out
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    d_q = (d_scores @ k) / np.sqrt(d)
    d_k = (d_scores.T @ q) / np.sqrt(d)
    d_emb = d_k @ wk.T + d_v @ wv.T
    d_wk = emb.T @ d_k
    d_wv = emb.T @ d_v
    return d_q, d_emb, d_wk, d_wv


class AppearanceNet:
    """Velocity field over per-voxel features (width 128, depth 3)."""

    kind = "appearance"

    def __init__(
        self,
        vocab: int,
        feat: int = 8,
        hidden: int = 128,
        depth: int = 3,
        sub_tokens: int = 4,
        token_width: int = 32,
        attn_dim: int = 32,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.vocab = vocab
        self.feat = feat
        self.hidden = hidden
        self.depth = depth
        self.sub_tokens = sub_tokens
        self.token_width = token_width
        self.attn_dim = attn_dim
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        h, e, d = hidden, token_width, attn_dim
        p: dict[str, np.ndarray] = {}
        p["token_table"] = (0.2 * rng.standard_normal((vocab + 1, sub_tokens, e))).astype(self.dtype)
        p["w_in"] = (rng.standard_normal((feat + POS_FEATURES, h)) / np.sqrt(feat + POS_FEATURES)).astype(self.dtype)
        p["b_in"] = np.zeros(h, dtype=self.dtype)
        p["w_time"] = (rng.standard_normal((TIME_FEATURES, h)) / np.sqrt(TIME_FEATURES)).astype(self.dtype)
        for j in range(depth):
            p[f"layer{j}_wn"] = (rng.standard_normal((h, h)) / np.sqrt(h) * 0.5).astype(self.dtype)
            p[f"layer{j}_w1"] = (rng.standard_normal((h, h)) / np.sqrt(h)).astype(self.dtype)
            p[f"layer{j}_b1"] = np.zeros(h, dtype=self.dtype)
            p[f"layer{j}_w2"] = (rng.standard_normal((h, h)) / np.sqrt(h)).astype(self.dtype)
            p[f"layer{j}_b2"] = np.zeros(h, dtype=self.dtype)
            p[f"layer{j}_wq"] = (rng.standard_normal((h, d)) / np.sqrt(h)).astype(self.dtype)
            p[f"layer{j}_wp"] = (rng.standard_normal((POS_FEATURES, d)) / np.sqrt(POS_FEATURES)).astype(self.dtype)
            p[f"layer{j}_wk"] = (rng.standard_normal((e, d)) / np.sqrt(e)).astype(self.dtype)
            p[f"layer{j}_wv"] = (rng.standard_normal((e, d)) / np.sqrt(e)).astype(self.dtype)
            p[f"layer{j}_wo"] = (rng.standard_normal((d, h)) / np.sqrt(d) * 0.1).astype(self.dtype)
        p["w_out"] = (rng.standard_normal((h, feat)) / np.sqrt(h)).astype(self.dtype)
        p["b_out"] = np.zeros(feat, dtype=self.dtype)
        self.params = p

    def dims(self) -> dict:
        return {
            "feat": self.feat,
            "hidden": self.hidden,
            "depth": self.depth,
            "sub_tokens": self.sub_tokens,
            "token_width": self.token_width,
            "attn_dim": self.attn_dim,
            "dtype": self.dtype.name,
        }

    def _check_token(self, token: int):
        if not (0 <= token <= self.vocab):
            raise AppearanceError(f"token id {token} outside embedding table")

    def cross_attention_delta(self, layer: int, hidden: np.ndarray, pos: np.ndarray, cond: LocalConditioning):
        """Blended cross-attention output for one layer (no hidden update)."""
        delta, _ = self._ca_block(layer, hidden, pos, cond, want_cache=False)
        return delta

    def _ca_block(self, layer: int, h: np.ndarray, pos: np.ndarray, cond: LocalConditioning, want_cache: bool):
        p = self.params
        table = p["token_table"]
        self._check_token(cond.global_token)
        wq, wp = p[f"layer{layer}_wq"], p[f"layer{layer}_wp"]
        wk, wv, wo = p[f"layer{layer}_wk"], p[f"layer{layer}_wv"], p[f"layer{layer}_wo"]
        q = h @ wq + pos @ wp
        out_g, cache_g = _ca_forward(q, table[cond.global_token], wk, wv)
        locals_ = cond.resolved_locals(len(h))
        local_caches = {}
        if locals_ is None:
            blend = out_g
        else:
            out_l = np.zeros_like(out_g)
            for tok in np.unique(locals_):
                self._check_token(int(tok))
                out_u, cache_u = _ca_forward(q, table[int(tok)], wk, wv)
                mask = locals_ == tok
                out_l[mask] = out_u[mask]
                local_caches[int(tok)] = cache_u
            blend = 0.5 * out_g + 0.5 * out_l
        delta = blend @ wo
        cache = None
        if want_cache:
            cache = {"q": q, "cache_g": cache_g, "local_caches": local_caches, "locals": locals_, "blend": blend}
        return delta, cache

    def forward(
        self,
        features: np.ndarray,
        pos: np.ndarray,
        t: float,
        cond: LocalConditioning,
        edges: np.ndarray,
        counts: np.ndarray,
        want_cache: bool = False,
    ):
        p = self.params
        x = np.concatenate([np.asarray(features, dtype=self.dtype), pos.astype(self.dtype)], axis=1)
        tf = time_features(t).astype(self.dtype)[0]
        h = x @ p["w_in"] + p["b_in"] + tf @ p["w_time"]
        caches = {"x": x, "tf": tf, "layers": []}
        pos_t = pos.astype(self.dtype)
        for j in range(self.depth):
            agg = _neighbor_mean(h, edges, counts)
            h_agg = h + agg @ p[f"layer{j}_wn"]
            u = np.tanh(h_agg @ p[f"layer{j}_w1"] + p[f"layer{j}_b1"])
            h_mid = h_agg + u @ p[f"layer{j}_w2"] + p[f"layer{j}_b2"]
            delta, ca_cache = self._ca_block(j, h_mid, pos_t, cond, want_cache)
            h_new = h_mid + delta
            if want_cache:
                caches["layers"].append(
                    {"h_in": h, "agg": agg, "h_agg": h_agg, "u": u, "h_mid": h_mid, "ca": ca_cache}
                )
            h = h_new
        y = h @ p["w_out"] + p["b_out"]
        if want_cache:
            caches["h_final"] = h
            caches["pos"] = pos_t
            caches["cond"] = cond
            return y, caches
        return y

    def backward(self, cache: dict, dy: np.ndarray, edges: np.ndarray, counts: np.ndarray):
        p = self.params
        g = {name: np.zeros_like(value) for name, value in p.items()}
        g["w_out"] += cache["h_final"].T @ dy
        g["b_out"] += dy.sum(axis=0)
        dh = dy @ p["w_out"].T
        pos = cache["pos"]
        cond: LocalConditioning = cache["cond"]
        for j in reversed(range(self.depth)):
            lc = cache["layers"][j]
            ca = lc["ca"]
            wk, wv, wo = p[f"layer{j}_wk"], p[f"layer{j}_wv"], p[f"layer{j}_wo"]
            # h_new = h_mid + blend @ wo
            g[f"layer{j}_wo"] += ca["blend"].T @ dh
            d_blend = dh @ wo.T
            locals_ = ca["locals"]
            if locals_ is None:
                d_q, d_emb_g, d_wk, d_wv = _ca_backward(ca["cache_g"], d_blend, wk, wv)
                g["token_table"][cond.global_token] += d_emb_g
                g[f"layer{j}_wk"] += d_wk
                g[f"layer{j}_wv"] += d_wv
            else:
                d_q, d_emb_g, d_wk, d_wv = _ca_backward(ca["cache_g"], 0.5 * d_blend, wk, wv)
                g["token_table"][cond.global_token] += d_emb_g
                g[f"layer{j}_wk"] += d_wk
                g[f"layer{j}_wv"] += d_wv
                for tok, cache_u in ca["local_caches"].items():
                    mask = (locals_ == tok)[:, None]
                    d_q_u, d_emb_u, d_wk_u, d_wv_u = _ca_backward(cache_u, 0.5 * d_blend * mask, wk, wv)
                    d_q = d_q + d_q_u
                    g["token_table"][tok] += d_emb_u
                    g[f"layer{j}_wk"] += d_wk_u
                    g[f"layer{j}_wv"] += d_wv_u
            g[f"layer{j}_wq"] += lc["h_mid"].T @ d_q
            g[f"layer{j}_wp"] += pos.T @ d_q
            dh = dh + d_q @ p[f"layer{j}_wq"].T
            # h_mid = h_agg + u @ w2 + b2
            u = lc["u"]
            du = dh @ p[f"layer{j}_w2"].T
            da = du * (1.0 - u * u)
            g[f"layer{j}_w2"] += u.T @ dh
            g[f"layer{j}_b2"] += dh.sum(axis=0)
            g[f"layer{j}_w1"] += lc["h_agg"].T @ da
            g[f"layer{j}_b1"] += da.sum(axis=0)
            dh = dh + da @ p[f"layer{j}_w1"].T
            # h_agg = h_in + neighbor_mean(h_in) @ wn
            g[f"layer{j}_wn"] += lc["agg"].T @ dh
            d_agg = dh @ p[f"layer{j}_wn"].T
            dh = dh + _neighbor_mean_backward(d_agg, edges, counts)
        g["w_in"] += cache["x"].T @ dh
        g["b_in"] += dh.sum(axis=0)
        g["w_time"] += np.outer(cache["tf"], dh.sum(axis=0))
        return g


class BoundAppearanceField:
    """VelocityField adapter for one structure (coords, adjacency, condition)."""

    def __init__(self, net: AppearanceNet, pos: np.ndarray, cond: LocalConditioning, edges, counts):
        self.net = net
        self.pos = pos
        self.cond = cond
        self.edges = edges
        self.counts = counts

    def evaluate(self, z, t, condition=None):
        out = self.net.forward(np.asarray(z), self.pos, t, self.cond, self.edges, self.counts)
        return np.asarray(out, dtype=np.asarray(z).dtype)


def assign_local_tokens(structure: OccupancyGrid, scene: ControlScene) -> np.ndarray:
    """Token of the nearest labeled primitive per active voxel; nearness uses
    the implicit-form proxy min(scale) * F^(eps1/2), ties to the lowest index."""
    if scene.local_labels is None:
        raise AppearanceError("scene has no local labels")
    from .corpus import owning_part

    centers = structure.occupied_centers()
    owners = owning_part(scene, centers)
    return np.asarray(scene.local_labels, dtype=np.int64)[owners]


def color_targets(rgb: np.ndarray, channels: int = 8) -> np.ndarray:
    """Clean feature rows whose logistic squash reproduces the target colors."""
    clipped = np.clip(np.asarray(rgb, dtype=float), 1e-3, 1.0 - 1e-3)
    out = np.zeros((len(clipped), channels))
    out[:, :3] = np.log(clipped / (1.0 - clipped))
    return out


def generate_appearance(
    structure: OccupancyGrid,
    net: AppearanceNet,
    cond: LocalConditioning,
    seed: int,
    schedule: StepSchedule,
) -> np.ndarray:
    """Denoise per-voxel noise over the full schedule; returns (L, 3) RGB."""
    lat = attach_noise(structure, seed, channels=net.feat)
    pos = positional_features(lat.coords, structure.resolution)
    edges, counts = build_adjacency(lat.coords, structure.resolution)
    field = BoundAppearanceField(net, pos, cond, edges, counts)
    s0 = integrate(lat.features, field, schedule, start_index=0)
    return 1.0 / (1.0 + np.exp(-s0[:, :3]))


def train_appearance(
    net: AppearanceNet,
    samples: list,
    config: TrainConfig,
    codec_spec: CodecSpec,
    schedule: StepSchedule,
    local_prob: float = 0.5,
    max_voxels: int = 512,
    log_every: int = 0,
) -> Checkpoint:
    """Flow-matching over per-voxel color features.

    ``samples`` rows are dicts with keys coords, targets, locals, label,
    resolution (see ``prepare_appearance_sample``).  Voxel sets larger than
    ``max_voxels`` are subsampled per iteration; each sample randomly trains
    with local tokens enabled or with the global token alone.
    """
    if not samples:
        raise ValueError("appearance corpus is empty")
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params, config)
    curve = np.zeros(config.iterations, dtype=np.float32)
    n = len(samples)
    for it in range(config.iterations):
        idx = np.sort(rng.integers(0, n, size=config.batch_size))
        total_loss = 0.0
        grand: dict[str, np.ndarray] | None = None
        for sample_i in idx:
            s = samples[sample_i]
            coords, targets = s["coords"], s["targets"]
            count = len(coords)
            take = np.arange(count)
            if count > max_voxels:
                take = np.sort(rng.choice(count, size=max_voxels, replace=False))
            use_local = s["locals"] is not None and rng.uniform() < local_prob
            t = rng.uniform()
            eps = rng.standard_normal((len(take), net.feat))
            sub_coords = coords[take]
            s0 = targets[take]
            st = (1.0 - t) * s0 + t * eps
            target_v = eps - s0
            pos = positional_features(sub_coords, s["resolution"])
            edges, counts = build_adjacency(sub_coords, s["resolution"])
            cond = LocalConditioning(
                global_token=s["label"],
                local_tokens=s["locals"][take] if use_local else None,
            )
            pred, cache = net.forward(st, pos, t, cond, edges, counts, want_cache=True)
            if not np.all(np.isfinite(pred)):
                raise TrainingDiverged(it)
            resid = pred - target_v
            total_loss += float(np.mean(resid**2))
            dy = (2.0 / resid.size / config.batch_size) * resid.astype(net.dtype)
            grads = net.backward(cache, dy, edges, counts)
            if grand is None:
                grand = grads
            else:
                for name in grand:
                    grand[name] += grads[name]
        loss = total_loss / config.batch_size
        if not np.isfinite(loss):
            raise TrainingDiverged(it)
        opt.step(net.params, grand)
        curve[it] = loss
        if log_every and (it % log_every == 0 or it == config.iterations - 1):
            print(f"iter {it:6d}  loss {loss:.6f}", flush=True)
    return Checkpoint(
        kind=net.kind,
        dims=net.dims(),
        vocab=net.vocab,
        schedule=schedule,
        codec=codec_spec,
        train_config=config,
        params={k: v.copy() for k, v in net.params.items()},
        loss_curve=curve,
    )


def prepare_appearance_sample(grid: OccupancyGrid, colors: np.ndarray, scene: ControlScene, label: int) -> dict:
    """Precompute per-voxel training rows for one corpus item."""
    coords = grid.occupied_indices()
    rgb = colors[coords[:, 0], coords[:, 1], coords[:, 2]]
    locals_ = assign_local_tokens(grid, scene) if scene.local_labels is not None else None
    return {
        "coords": coords,
        "targets": color_targets(rgb),
        "locals": locals_,
        "label": int(label),
        "resolution": grid.resolution,
    }


def build_appearance_net(ckpt: Checkpoint) -> AppearanceNet:
    d = ckpt.dims
    net = AppearanceNet(
        vocab=ckpt.vocab,
        feat=d["feat"],
        hidden=d["hidden"],
        depth=d["depth"],
        sub_tokens=d["sub_tokens"],
        token_width=d["token_width"],
        attn_dim=d["attn_dim"],
        dtype=np.dtype(d.get("dtype", "float64")),
    )
    for name, value in ckpt.params.items():
        net.params[name] = value.astype(net.dtype)
    return net


# ---------------------------------------------------------------------------
# surface extraction and export

_FACE_DIRS = [
    ((1, 0, 0), [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)]),
    ((-1, 0, 0), [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)]),
    ((0, 1, 0), [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)]),
    ((0, -1, 0), [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)]),
    ((0, 0, 1), [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]),
    ((0, 0, -1), [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)]),
]


def exposed_faces(grid: OccupancyGrid) -> int:
    """Number of occupied-cell faces adjacent to empty space (or the border)."""
    cells = grid.cells.astype(bool)
    padded = np.pad(cells, 1, constant_values=False)
    total = 0
    shifts = [
        padded[2:, 1:-1, 1:-1],
        padded[:-2, 1:-1, 1:-1],
        padded[1:-1, 2:, 1:-1],
        padded[1:-1, :-2, 1:-1],
        padded[1:-1, 1:-1, 2:],
        padded[1:-1, 1:-1, :-2],
    ]
    for nb in shifts:
        total += int((cells & ~nb).sum())
    return total


def extract_surface(structure: OccupancyGrid, colors: np.ndarray | None = None):
    """Boundary mesh: two triangles per exposed voxel face.

    Vertices lie on the voxel lattice (multiples of 1/R) and are shared
    between faces; vertex colors average the contributing voxel colors.
    Returns (vertices (V,3), faces (F,3), vertex_colors (V,3) or None).
    """
    cells = structure.cells.astype(bool)
    if not cells.any():
        raise AppearanceError("structure has no active voxels")
    r = structure.resolution
    occupied = structure.occupied_indices()
    if colors is not None and len(colors) != len(occupied):
        raise AppearanceError("colors must cover active voxels in canonical order")
    padded = np.pad(cells, 1, constant_values=False)

    corner_ids: dict[int, int] = {}
    vertices: list[tuple[int, int, int]] = []
    color_acc: list[np.ndarray] = []
    color_cnt: list[int] = []

    def corner_index(cx, cy, cz, voxel_rank):
        key = (cx * (r + 1) + cy) * (r + 1) + cz
        idx = corner_ids.get(key)
        if idx is None:
            idx = len(vertices)
            corner_ids[key] = idx
            vertices.append((cx, cy, cz))
            if colors is not None:
                color_acc.append(np.zeros(3))
                color_cnt.append(0)
        if colors is not None:
            color_acc[idx] = color_acc[idx] + colors[voxel_rank]
            color_cnt[idx] += 1
        return idx

    faces = []
    for rank, (ix, iy, iz) in enumerate(occupied):
        for (dx, dy, dz), corners in _FACE_DIRS:
            if padded[ix + 1 + dx, iy + 1 + dy, iz + 1 + dz]:
                continue
            quad = [corner_index(ix + cx, iy + cy, iz + cz, rank) for cx, cy, cz in corners]
            faces.append((quad[0], quad[1], quad[2]))
            faces.append((quad[0], quad[2], quad[3]))
    verts = np.asarray(vertices, dtype=float) / r
    face_arr = np.asarray(faces, dtype=np.int64)
    vcolors = None
    if colors is not None:
        vcolors = np.asarray(color_acc) / np.asarray(color_cnt)[:, None]
    return verts, face_arr, vcolors


def export_obj(vertices: np.ndarray, faces: np.ndarray, vertex_colors: np.ndarray | None = None) -> str:
    """ASCII OBJ; with colors, vertices use the 'v x y z r g b' extension."""
    lines = []
    for i, v in enumerate(vertices):
        if vertex_colors is not None:
            c = vertex_colors[i]
            lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]:.4f} {c[1]:.4f} {c[2]:.4f}")
        else:
            lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for f in faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


def dump_mesh(vertices: np.ndarray, faces: np.ndarray, vertex_colors: np.ndarray | None = None) -> bytes:
    """Binary mesh: magic, u32 vertex/face counts, f32 xyzrgb records, u32 triples."""
    v = np.asarray(vertices, dtype=np.float32)
    c = (
        np.asarray(vertex_colors, dtype=np.float32)
        if vertex_colors is not None
        else np.full((len(v), 3), 0.8, dtype=np.float32)
    )
    records = np.concatenate([v, c], axis=1).astype("<f4")
    f = np.asarray(faces, dtype="<u4")
    return MESH_MAGIC + struct.pack("<II", len(v), len(f)) + records.tobytes() + f.tobytes()


def load_mesh_dump(blob: bytes):
    if blob[:7] != MESH_MAGIC:
        raise AppearanceError("bad mesh dump magic")
    n_v, n_f = struct.unpack("<II", blob[7:15])
    rec = np.frombuffer(blob[15 : 15 + n_v * 24], dtype="<f4").reshape(n_v, 6)
    faces = np.frombuffer(blob[15 + n_v * 24 : 15 + n_v * 24 + n_f * 12], dtype="<u4").reshape(n_f, 3)
    return rec[:, :3].astype(float), faces.astype(np.int64), rec[:, 3:].astype(float)
