"""Trainable velocity fields over flattened latent grids.

Residual MLPs written directly in numpy with hand-derived backward passes:
this keeps training byte-reproducible and lets analytic gradients be checked
against central finite differences.  The shape-conditioned variant adds one
single-head cross-attention block per residual block, attending from the
hidden state to the encoded control latent; its output projection starts at
zero so the conditioned net initially equals the unconditioned one exactly.
"""

from __future__ import annotations

import numpy as np

TIME_FEATURES = 16
COND_DIM = 32


def time_features(t, count: int = TIME_FEATURES) -> np.ndarray:
    """Sinusoidal features of t at count/2 geometric frequencies in [1, 1e3]."""
    freqs = np.geomspace(1.0, 1000.0, count // 2)
    tt = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
    return np.concatenate([np.sin(freqs * tt), np.cos(freqs * tt)], axis=1)


def gate_features(t, count: int = TIME_FEATURES) -> np.ndarray:
    """Time features extended with 1/t (clamped); the exact velocity carries a
    z/t term that a rank-limited hidden path cannot represent."""
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    inv = 1.0 / np.clip(tt, 1e-3, None)
    return np.concatenate([time_features(tt, count), inv[:, None]], axis=1)


def _init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)


class StructureNet:
    """Velocity net: affine in -> D residual tanh blocks -> affine out.

    Input row is the flattened latent concatenated with 16 sinusoidal time
    features and a 32-wide learned condition embedding; token id ``vocab``
    (one past the last corpus token) is the null condition.
    """

    kind = "structure"

    def __init__(
        self,
        latent_dim: int,
        vocab: int,
        hidden: int = 256,
        depth: int = 4,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.latent_dim = latent_dim
        self.vocab = vocab
        self.hidden = hidden
        self.depth = depth
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        self._init_params(rng)

    # -- construction -------------------------------------------------------

    def _init_params(self, rng):
        n, h = self.latent_dim, self.hidden
        in_width = n + TIME_FEATURES + COND_DIM
        p = self.params
        p["cond_table"] = (0.1 * rng.standard_normal((self.vocab + 1, COND_DIM))).astype(self.dtype)
        p["w_in"] = _init(rng, (in_width, h), in_width, self.dtype)
        p["b_in"] = np.zeros(h, dtype=self.dtype)
        for j in range(self.depth):
            p[f"block{j}_w1"] = _init(rng, (h, h), h, self.dtype)
            p[f"block{j}_b1"] = np.zeros(h, dtype=self.dtype)
            p[f"block{j}_w2"] = _init(rng, (h, h), h, self.dtype)
            p[f"block{j}_b2"] = np.zeros(h, dtype=self.dtype)
        p["w_out"] = _init(rng, (h, n), h, self.dtype)
        p["b_out"] = np.zeros(n, dtype=self.dtype)
        # scalar time-dependent input skip, silent at init
        p["gate_w"] = np.zeros(TIME_FEATURES + 1, dtype=self.dtype)
        p["gate_b"] = np.zeros(1, dtype=self.dtype)

    def dims(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "hidden": self.hidden,
            "depth": self.depth,
            "dtype": self.dtype.name,
        }

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- conditioning helpers ------------------------------------------------

    def cond_ids(self, condition, batch: int) -> np.ndarray:
        """Normalize a condition (None, int, or array) to an id row per sample."""
        if condition is None:
            return np.full(batch, self.vocab, dtype=np.int64)
        ids = np.atleast_1d(np.asarray(condition, dtype=np.int64))
        if ids.size == 1:
            ids = np.full(batch, int(ids[0]), dtype=np.int64)
        if ids.shape != (batch,):
            raise ValueError(f"condition ids shape {ids.shape} does not match batch {batch}")
        if np.any(ids < 0) or np.any(ids > self.vocab):
            raise ValueError("condition token id out of range")
        return ids

    # -- forward / backward --------------------------------------------------

    def forward(self, z: np.ndarray, t, cond_ids: np.ndarray, want_cache: bool = False):
        p = self.params
        z = np.asarray(z, dtype=self.dtype)
        b = z.shape[0]
        tf = np.broadcast_to(time_features(t).astype(self.dtype), (b, TIME_FEATURES))
        gf = np.broadcast_to(gate_features(t).astype(self.dtype), (b, TIME_FEATURES + 1))
        ce = p["cond_table"][cond_ids]
        in_vec = np.concatenate([z, tf, ce], axis=1)
        h = in_vec @ p["w_in"] + p["b_in"]
        hs, us = [h], []
        for j in range(self.depth):
            u = np.tanh(h @ p[f"block{j}_w1"] + p[f"block{j}_b1"])
            h = h + u @ p[f"block{j}_w2"] + p[f"block{j}_b2"]
            us.append(u)
            hs.append(h)
        gate = gf @ p["gate_w"] + p["gate_b"]
        y = h @ p["w_out"] + p["b_out"] + gate[:, None] * z
        if want_cache:
            return y, {"in_vec": in_vec, "hs": hs, "us": us, "cond_ids": cond_ids, "z": z, "gf": gf}
        return y

    def backward(self, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        g: dict[str, np.ndarray] = {}
        hs, us = cache["hs"], cache["us"]
        d_gate = (dy * cache["z"]).sum(axis=1)
        g["gate_w"] = cache["gf"].T @ d_gate
        g["gate_b"] = np.array([d_gate.sum()], dtype=self.dtype)
        g["w_out"] = hs[-1].T @ dy
        g["b_out"] = dy.sum(axis=0)
        dh = dy @ p["w_out"].T
        for j in reversed(range(self.depth)):
            u = us[j]
            du = dh @ p[f"block{j}_w2"].T
            da = du * (1.0 - u * u)
            g[f"block{j}_w2"] = u.T @ dh
            g[f"block{j}_b2"] = dh.sum(axis=0)
            g[f"block{j}_w1"] = hs[j].T @ da
            g[f"block{j}_b1"] = da.sum(axis=0)
            dh = dh + da @ p[f"block{j}_w1"].T
        g["w_in"] = cache["in_vec"].T @ dh
        g["b_in"] = dh.sum(axis=0)
        d_in = dh @ p["w_in"].T
        d_ce = d_in[:, self.latent_dim + TIME_FEATURES :]
        g["cond_table"] = np.zeros_like(p["cond_table"])
        np.add.at(g["cond_table"], cache["cond_ids"], d_ce)
        return g

    # -- VelocityField adapter ------------------------------------------------

    def evaluate(self, z, t, condition=None):
        z_arr = np.asarray(z)
        rows = z_arr.size // self.latent_dim
        flat = z_arr.reshape(rows, self.latent_dim)
        ids = self.cond_ids(condition, rows)
        out = self.forward(flat, t, ids)
        return np.asarray(out, dtype=z_arr.dtype).reshape(z_arr.shape)


class ShapeConditionedNet(StructureNet):
    """StructureNet plus per-block cross-attention to a control latent.

    Queries are a learned projection of the hidden state laid out as one
    token per coarse latent cell; keys and values are linear projections of
    the control latent's cell features.  Single head; zero-initialized
    output projection keeps the control pathway silent at start.
    """

    kind = "spicet"

    def __init__(
        self,
        latent_dim: int,
        vocab: int,
        tokens: int,
        token_width: int,
        hidden: int = 256,
        depth: int = 4,
        attn_dim: int | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.tokens = tokens
        self.token_width = token_width
        self.attn_dim = attn_dim if attn_dim is not None else token_width
        super().__init__(latent_dim, vocab, hidden=hidden, depth=depth, seed=seed, dtype=dtype)

    def _init_params(self, rng):
        super()._init_params(rng)
        h, s, c, d = self.hidden, self.tokens, self.token_width, self.attn_dim
        for j in range(self.depth):
            self.params[f"block{j}_wq"] = _init(rng, (h, s * d), h, self.dtype)
            self.params[f"block{j}_wk"] = _init(rng, (c, d), c, self.dtype)
            self.params[f"block{j}_wv"] = _init(rng, (c, d), c, self.dtype)
            self.params[f"block{j}_wo"] = np.zeros((s * d, h), dtype=self.dtype)

    def dims(self) -> dict:
        out = super().dims()
        out.update({"tokens": self.tokens, "token_width": self.token_width, "attn_dim": self.attn_dim})
        return out

    def forward(self, z, t, cond_ids, control=None, want_cache: bool = False):
        if control is None:
            raise ValueError("shape-conditioned net requires a control latent")
        p = self.params
        z = np.asarray(z, dtype=self.dtype)
        b = z.shape[0]
        s, d = self.tokens, self.attn_dim
        zc = np.asarray(control, dtype=self.dtype)
        if zc.ndim == 2:  # single control shared across the batch
            zc = np.broadcast_to(zc, (b,) + zc.shape)
        scale = 1.0 / np.sqrt(d)

        tf = np.broadcast_to(time_features(t).astype(self.dtype), (b, TIME_FEATURES))
        gf = np.broadcast_to(gate_features(t).astype(self.dtype), (b, TIME_FEATURES + 1))
        ce = p["cond_table"][cond_ids]
        in_vec = np.concatenate([z, tf, ce], axis=1)
        h = in_vec @ p["w_in"] + p["b_in"]
        hs, us, attns, qs, ks, vs = [h], [], [], [], [], []
        for j in range(self.depth):
            u = np.tanh(h @ p[f"block{j}_w1"] + p[f"block{j}_b1"])
            h = h + u @ p[f"block{j}_w2"] + p[f"block{j}_b2"]
            us.append(u)
            hs.append(h)
            q = (h @ p[f"block{j}_wq"]).reshape(b, s, d)
            k = zc @ p[f"block{j}_wk"]
            v = zc @ p[f"block{j}_wv"]
            scores = (q @ k.transpose(0, 2, 1)) * scale
            scores -= scores.max(axis=2, keepdims=True)
            attn = np.exp(scores)
            attn /= attn.sum(axis=2, keepdims=True)
            o = (attn @ v).reshape(b, s * d)
            h = h + o @ p[f"block{j}_wo"]
            qs.append(q)
            ks.append(k)
            vs.append(v)
            attns.append(attn)
            hs.append(h)
        gate = gf @ p["gate_w"] + p["gate_b"]
        y = h @ p["w_out"] + p["b_out"] + gate[:, None] * z
        if want_cache:
            return y, {
                "in_vec": in_vec,
                "hs": hs,
                "us": us,
                "qs": qs,
                "ks": ks,
                "vs": vs,
                "attns": attns,
                "zc": zc,
                "cond_ids": cond_ids,
                "z": z,
                "gf": gf,
            }
        return y

    def backward(self, cache, dy):
        p = self.params
        g: dict[str, np.ndarray] = {}
        hs, us = cache["hs"], cache["us"]  # hs: [h0, h1, h1', h2, h2', ...]
        b = dy.shape[0]
        s, d = self.tokens, self.attn_dim
        scale = 1.0 / np.sqrt(d)
        d_gate = (dy * cache["z"]).sum(axis=1)
        g["gate_w"] = cache["gf"].T @ d_gate
        g["gate_b"] = np.array([d_gate.sum()], dtype=self.dtype)
        g["w_out"] = hs[-1].T @ dy
        g["b_out"] = dy.sum(axis=0)
        dh = dy @ p["w_out"].T
        for j in reversed(range(self.depth)):
            h_mid = hs[2 * j + 1]  # state the attention queries were built from
            q, k, v, attn = cache["qs"][j], cache["ks"][j], cache["vs"][j], cache["attns"][j]
            o = (attn @ v).reshape(b, s * d)
            g[f"block{j}_wo"] = o.T @ dh
            do = (dh @ p[f"block{j}_wo"].T).reshape(b, s, d)
            dattn = do @ v.transpose(0, 2, 1)
            dv = attn.transpose(0, 2, 1) @ do
            dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
            dq = (dscores @ k) * scale
            dk = (dscores.transpose(0, 2, 1) @ q) * scale
            g[f"block{j}_wq"] = h_mid.T @ dq.reshape(b, s * d)
            zc = cache["zc"]
            g[f"block{j}_wk"] = np.einsum("bsc,bsd->cd", zc, dk)
            g[f"block{j}_wv"] = np.einsum("bsc,bsd->cd", zc, dv)
            dh = dh + dq.reshape(b, s * d) @ p[f"block{j}_wq"].T
            u = us[j]
            du = dh @ p[f"block{j}_w2"].T
            da = du * (1.0 - u * u)
            g[f"block{j}_w2"] = u.T @ dh
            g[f"block{j}_b2"] = dh.sum(axis=0)
            g[f"block{j}_w1"] = hs[2 * j].T @ da
            g[f"block{j}_b1"] = da.sum(axis=0)
            dh = dh + da @ p[f"block{j}_w1"].T
        g["w_in"] = cache["in_vec"].T @ dh
        g["b_in"] = dh.sum(axis=0)
        d_in = dh @ p["w_in"].T
        d_ce = d_in[:, self.latent_dim + TIME_FEATURES :]
        g["cond_table"] = np.zeros_like(p["cond_table"])
        np.add.at(g["cond_table"], cache["cond_ids"], d_ce)
        return g

    def bind_control(self, control: np.ndarray) -> "BoundControlField":
        return BoundControlField(self, np.asarray(control))

    def evaluate(self, z, t, condition=None):
        raise RuntimeError("shape-conditioned net must be bound to a control; use bind_control()")


class BoundControlField:
    """VelocityField adapter closing over one control latent (or a batch)."""

    def __init__(self, net: ShapeConditionedNet, control: np.ndarray):
        self.net = net
        self.control = control

    def evaluate(self, z, t, condition=None):
        z_arr = np.asarray(z)
        rows = z_arr.size // self.net.latent_dim
        flat = z_arr.reshape(rows, self.net.latent_dim)
        ids = self.net.cond_ids(condition, rows)
        out = self.net.forward(flat, t, ids, control=self.control)
        return np.asarray(out, dtype=z_arr.dtype).reshape(z_arr.shape)


def control_tokens(latent_values: np.ndarray) -> np.ndarray:
    """Reshape a latent grid's values (G,G,G,C) into (G^3, C) control tokens."""
    v = np.asarray(latent_values)
    c = v.shape[-1]
    return v.reshape(-1, c)
