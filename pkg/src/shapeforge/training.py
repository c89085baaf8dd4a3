"""Flow-matching training loop and checkpoint serialization.

The regression target is the interpolation velocity eps - z0.  Batches are
re-ordered by a canonical sort key before any reduction, so the loss (and the
whole run) is invariant to how a batch happens to be presented and two runs
with the same seed produce byte-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecSpec, encode
from .flow import StepSchedule, make_schedule
from .geometry import OccupancyGrid
from .nets import ShapeConditionedNet, StructureNet

CHECKPOINT_MAGIC = b"SCCKPT1"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"loss became non-finite at iteration {iteration}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    iterations: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.beta1, self.beta2, self.adam_eps) <= 0:
            raise ValueError("optimizer constants must be positive")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch size and iterations must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def canonical_batch_order(t: np.ndarray, eps: np.ndarray, primary: np.ndarray | None = None) -> np.ndarray:
    """Deterministic row order: primary key (e.g. corpus index), then t, then
    the first noise component.  Continuous tiebreakers make the order unique
    with probability one regardless of presentation order."""
    eps0 = np.asarray(eps).reshape(len(t), -1)[:, 0]
    keys = (eps0, np.asarray(t))
    if primary is not None:
        keys = keys + (np.asarray(primary),)
    return np.lexsort(keys)


def flow_matching_loss(net, z0: np.ndarray, eps: np.ndarray, t, condition=None, control=None) -> float:
    """Mean squared error between the net's output at z_t and eps - z0."""
    loss, _ = _loss_and_grads(net, z0, eps, t, condition, control, want_grads=False)
    return loss


def _loss_and_grads(net, z0, eps, t, condition=None, control=None, want_grads=True, order_key=None):
    z0 = np.atleast_2d(np.asarray(z0, dtype=net.dtype))
    eps = np.atleast_2d(np.asarray(eps, dtype=net.dtype))
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} must match")
    b = z0.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), (b,)).copy()
    cond = net.cond_ids(condition, b)

    order = canonical_batch_order(t_arr, eps, primary=order_key)
    z0, eps, t_arr, cond = z0[order], eps[order], t_arr[order], cond[order]
    ctrl = None
    if control is not None:
        ctrl = np.asarray(control)
        if ctrl.ndim == 3 and ctrl.shape[0] == b:
            ctrl = ctrl[order]

    zt = (1.0 - t_arr)[:, None] * z0 + t_arr[:, None] * eps
    target = eps - z0
    if isinstance(net, ShapeConditionedNet):
        pred, cache = net.forward(zt, t_arr, cond, control=ctrl, want_cache=True)
    else:
        pred, cache = net.forward(zt, t_arr, cond, want_cache=True)
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("non-finite network output")
    resid = pred - target
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    if not want_grads:
        return loss, None
    dy = (2.0 / resid.size) * resid.astype(net.dtype)
    grads = net.backward(cache, dy)
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.cfg = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.step_count
        bc2 = 1.0 - c.beta2**self.step_count
        for name in sorted(grads):
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            denom = np.sqrt(v)
            denom *= 1.0 / np.sqrt(bc2)
            denom += c.adam_eps
            update = m / denom
            update *= c.learning_rate / bc1
            params[name] -= update.astype(params[name].dtype)


@dataclass
class Checkpoint:
    kind: str
    dims: dict
    vocab: int
    schedule: StepSchedule
    codec: CodecSpec
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))

    def to_bytes(self) -> bytes:
        names = sorted(self.params)
        header = {
            "kind": self.kind,
            "dims": self.dims,
            "vocab": self.vocab,
            "schedule": self.schedule.to_dict(),
            "codec": self.codec.to_dict(),
            "train": self.train_config.to_dict(),
            "params": [[n, list(self.params[n].shape)] for n in names],
            "curve_len": int(len(self.loss_curve)),
        }
        head = json.dumps(header, sort_keys=True).encode()
        out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head]
        for n in names:
            out.append(np.ascontiguousarray(self.params[n]).astype("<f4").tobytes())
        out.append(np.asarray(self.loss_curve, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:7] != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        version, head_len = struct.unpack("<II", blob[7:15])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(blob[15 : 15 + head_len].decode())
        offset = 15 + head_len
        params = {}
        for name, shape in header["params"]:
            size = int(np.prod(shape)) * 4
            params[name] = np.frombuffer(blob[offset : offset + size], dtype="<f4").reshape(shape).copy()
            offset += size
        curve = np.frombuffer(blob[offset : offset + header["curve_len"] * 4], dtype="<f4").copy()
        sched = make_schedule(header["schedule"]["steps"], header["schedule"]["rescale"])
        return cls(
            kind=header["kind"],
            dims=header["dims"],
            vocab=int(header["vocab"]),
            schedule=sched,
            codec=CodecSpec.from_dict(header["codec"]),
            train_config=TrainConfig.from_dict(header["train"]),
            params=params,
            loss_curve=curve,
        )

    def save(self, path):
        data = self.to_bytes()
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


def build_net(ckpt: Checkpoint):
    """Reconstruct a runnable net from checkpoint metadata and weights."""
    d = ckpt.dims
    dtype = np.dtype(d.get("dtype", "float64"))
    if ckpt.kind == "structure":
        net = StructureNet(d["latent_dim"], ckpt.vocab, hidden=d["hidden"], depth=d["depth"], dtype=dtype)
    elif ckpt.kind == "spicet":
        net = ShapeConditionedNet(
            d["latent_dim"],
            ckpt.vocab,
            tokens=d["tokens"],
            token_width=d["token_width"],
            hidden=d["hidden"],
            depth=d["depth"],
            attn_dim=d["attn_dim"],
            dtype=dtype,
        )
    else:
        raise ValueError(f"unknown checkpoint kind {ckpt.kind!r}")
    for name, value in ckpt.params.items():
        net.params[name] = value.astype(dtype)
    return net


def _as_latents(samples, spec: CodecSpec) -> np.ndarray:
    rows = []
    for s in samples:
        if isinstance(s, OccupancyGrid):
            rows.append(encode(s, spec).flat())
        else:
            rows.append(np.asarray(s, dtype=float).ravel())
    return np.asarray(rows)


def train(
    net,
    grids,
    labels,
    config: TrainConfig,
    codec_spec: CodecSpec,
    schedule: StepSchedule,
    controls: np.ndarray | None = None,
    log_every: int = 0,
) -> Checkpoint:
    """Run flow matching over a corpus of (grid, label) pairs.

    ``controls`` (n, tokens, width) supplies per-sample control latents for
    the shape-conditioned net.  Sampling, batching, and reductions are fully
    determined by ``config.seed``.
    """
    z0_all = _as_latents(grids, codec_spec)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(z0_all)
    if n == 0:
        raise ValueError("corpus is empty")
    if z0_all.shape[1] != net.latent_dim:
        raise ValueError(f"latent dim {z0_all.shape[1]} does not match net {net.latent_dim}")
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params, config)
    curve = np.zeros(config.iterations, dtype=np.float32)
    b = config.batch_size
    if log_every:
        print(f"training {net.kind}: {net.n_params():,} parameters, {n} corpus items", flush=True)
    for it in range(config.iterations):
        idx = np.sort(rng.integers(0, n, size=b))
        t = rng.uniform(0.0, 1.0, size=b)
        eps = rng.standard_normal((b, net.latent_dim))
        ctrl = controls[idx] if controls is not None else None
        try:
            loss, grads = _loss_and_grads(net, z0_all[idx], eps, t, labels[idx], ctrl, order_key=idx)
        except FloatingPointError as exc:
            raise TrainingDiverged(it) from exc
        if not np.isfinite(loss):
            raise TrainingDiverged(it)
        opt.step(net.params, grads)
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
