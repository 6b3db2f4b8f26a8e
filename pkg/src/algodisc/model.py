"""A small pre-norm transformer over token histories, with hand-written backprop.

The input is a summary row followed by one row per action taken.  The summary
position acts as the readout: the policy head produces one logit per
vocabulary slot (up to ``max_vocab``), masked to the legal actions, and the
value head produces a scalar squashed by tanh.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_NUMERIC = 4
MAGIC = b"ALGODISC-CKPT\x00"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureSequence:
    """``actions[0]`` is -1 (the summary row); ``numeric`` has one row per position."""

    actions: np.ndarray
    numeric: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other):
        return (isinstance(other, FeatureSequence) and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.numeric, other.numeric))


def encode_state(path: Sequence[int], trace, summary: dict) -> FeatureSequence:
    """Encode an action history.

    ``trace`` supplies per-action ``losses``, ``costs`` and ``remaining``
    (budget left after the action) plus ``initial_loss`` and ``budget``;
    ``summary`` supplies ``n``, ``gibbs_loss`` and optionally ``loss_scale``
    (losses are divided by it) and ``hide_loss``.
    """
    k = len(path)
    if not (len(trace.losses) == len(trace.costs) == len(trace.remaining) == k):
        raise ValueError(f"trace has {len(trace.losses)} records for a path of {k} actions")
    scale = float(summary.get("loss_scale", 1.0)) or 1.0
    hide = bool(summary.get("hide_loss", False))
    budget = max(float(trace.budget), 1.0)
    left = trace.remaining[-1] if k else trace.budget
    rows = [[math.log(max(summary["n"], 1)) / 4.0,
             0.0 if hide else float(summary["gibbs_loss"]) / scale,
             _frac(left, budget), 1.0]]
    prev = trace.initial_loss
    for loss, cost, rem in zip(trace.losses, trace.costs, trace.remaining):
        inc = 0.0 if hide or prev is None or loss is None else (float(loss) - float(prev)) / scale
        rows.append([inc, math.log1p(cost) / 8.0, _frac(rem, budget), 0.0])
        prev = loss if loss is not None else prev
    numeric = np.asarray(rows, dtype=float)
    if not np.isfinite(numeric).all():
        raise ValueError("non-finite feature")
    actions = np.asarray([-1, *path], dtype=np.int64)
    return FeatureSequence(actions, numeric)


def _frac(x, total):
    return min(1.0, max(0.0, float(x) / total))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelConfig:
    width: int = 64
    heads: int = 4
    blocks: int = 2
    max_len: int = 64
    max_vocab: int = 256
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")


class Params:
    """Named float64 arrays.  The embedding table grows with the vocabulary."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    @classmethod
    def init(cls, config: ModelConfig, vocab_size: int, seed: int = 0) -> "Params":
        if vocab_size > config.max_vocab:
            raise ValueError("vocabulary larger than max_vocab")
        rng = np.random.default_rng(seed)
        d, h = config.width, config.width * config.mlp_ratio

        def lin(i, o, s=1.0):
            return rng.normal(0.0, s / math.sqrt(i), size=(i, o))

        a = {
            "emb": rng.normal(0.0, 0.1, size=(vocab_size, d)),
            "cls": rng.normal(0.0, 0.1, size=d),
            "pos": rng.normal(0.0, 0.02, size=(config.max_len, d)),
            "Wn": lin(N_NUMERIC, d), "bn": np.zeros(d),
        }
        for b in range(config.blocks):
            p = f"b{b}."
            a[p + "g1"], a[p + "be1"] = np.ones(d), np.zeros(d)
            for m in "qkv":
                a[p + "W" + m], a[p + "b" + m] = lin(d, d), np.zeros(d)
            a[p + "Wo"], a[p + "bo"] = lin(d, d, 0.5), np.zeros(d)
            a[p + "g2"], a[p + "be2"] = np.ones(d), np.zeros(d)
            a[p + "W1"], a[p + "c1"] = lin(d, h), np.zeros(h)
            a[p + "W2"], a[p + "c2"] = lin(h, d, 0.5), np.zeros(d)
        a["gf"], a["bf"] = np.ones(d), np.zeros(d)
        a["Wp"], a["bp"] = lin(d, config.max_vocab, 0.1), np.zeros(config.max_vocab)
        a["Wv1"], a["bv1"] = lin(d, d), np.zeros(d)
        a["wv2"], a["bv2"] = lin(d, 1, 0.1)[:, 0], np.zeros(1)
        return cls(config, a)

    @property
    def vocab_size(self) -> int:
        return self.arrays["emb"].shape[0]

    def grow(self, vocab_size: int) -> "Params":
        """Append zero embedding rows for new tokens."""
        if vocab_size < self.vocab_size:
            raise ValueError("vocabulary cannot shrink")
        if vocab_size > self.config.max_vocab:
            raise ValueError("vocabulary larger than max_vocab")
        arrays = dict(self.arrays)
        extra = np.zeros((vocab_size - self.vocab_size, self.config.width))
        arrays["emb"] = np.concatenate([self.arrays["emb"], extra])
        return Params(self.config, arrays)

    def copy(self) -> "Params":
        return Params(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    # checkpoints -------------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        names = sorted(self.arrays)
        header = {
            "version": CHECKPOINT_VERSION, "vocab_size": self.vocab_size,
            "config": self.config.__dict__,
            "arrays": [[k, list(self.arrays[k].shape)] for k in names],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for k in names:
                f.write(np.ascontiguousarray(self.arrays[k], dtype="<f8").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Params":
        with open(path, "rb") as f:
            data = f.read()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path}: not a checkpoint")
        off = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", data, off)
        off += 4
        header = json.loads(data[off:off + hlen])
        off += hlen
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for name, shape in header["arrays"]:
            size = int(np.prod(shape)) if shape else 1
            end = off + 8 * size
            if end > len(data):
                raise ValueError(f"{path}: truncated checkpoint")
            arrays[name] = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).copy()
            off = end
        if off != len(data):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
        return cls(ModelConfig(**header["config"]), arrays)


# ---------------------------------------------------------------------------
# forward / backward


_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    t = np.tanh(_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _C * (1.0 + 3 * 0.044715 * x * x)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x - mu) * inv
    return xh * g + b, (xh, inv)


def _ln_back(dy, g, cache):
    xh, inv = cache
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xh).sum(axes), dy.sum(axes)


def _pad(features: Sequence[FeatureSequence], max_len: int):
    seqs = []
    for f in features:
        if len(f) > max_len:
            # keep the summary row and the most recent actions
            f = FeatureSequence(np.concatenate([f.actions[:1], f.actions[len(f) - max_len + 1:]]),
                                np.concatenate([f.numeric[:1], f.numeric[len(f) - max_len + 1:]]))
        seqs.append(f)
    B, T = len(seqs), max(len(f) for f in seqs)
    acts = np.full((B, T), -1, dtype=np.int64)
    num = np.zeros((B, T, N_NUMERIC))
    valid = np.zeros((B, T), dtype=bool)
    for i, f in enumerate(seqs):
        acts[i, :len(f)] = f.actions
        num[i, :len(f)] = f.numeric
        valid[i, :len(f)] = True
    return acts, num, valid


def forward(params: Params, features: Sequence[FeatureSequence], need_cache: bool = False):
    """Returns ``(logits (B, max_vocab), value (B,), cache)``."""
    a, cfg = params.arrays, params.config
    acts, num, valid = _pad(features, cfg.max_len)
    B, T = acts.shape
    d, H = cfg.width, cfg.heads
    dh = d // H
    if acts.max() >= params.vocab_size:
        raise ValueError("action id outside the embedding table")
    tok = np.where((acts >= 0)[..., None], a["emb"][np.maximum(acts, 0)], a["cls"])
    x = tok + num @ a["Wn"] + a["bn"] + a["pos"][:T]
    bias = np.where(valid[:, None, None, :], 0.0, -1e9)
    caches = []
    for b in range(cfg.blocks):
        p = f"b{b}."
        h1, ln1 = _ln(x, a[p + "g1"], a[p + "be1"])
        q = (h1 @ a[p + "Wq"] + a[p + "bq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = (h1 @ a[p + "Wk"] + a[p + "bk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = (h1 @ a[p + "Wv"] + a[p + "bv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        s = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + bias
        s = s - s.max(-1, keepdims=True)
        att = np.exp(s)
        att /= att.sum(-1, keepdims=True)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + o @ a[p + "Wo"] + a[p + "bo"]
        h2, ln2 = _ln(x, a[p + "g2"], a[p + "be2"])
        u = h2 @ a[p + "W1"] + a[p + "c1"]
        gu, t = _gelu(u)
        x = x + gu @ a[p + "W2"] + a[p + "c2"]
        caches.append((h1, ln1, q, k, v, att, o, h2, ln2, u, gu, t))
    xf, lnf = _ln(x[:, 0], a["gf"], a["bf"])
    logits = xf @ a["Wp"] + a["bp"]
    z = xf @ a["Wv1"] + a["bv1"]
    gz, tz = _gelu(z)
    value = np.tanh(gz @ a["wv2"] + a["bv2"][0])
    cache = (acts, num, valid, caches, xf, lnf, z, gz, tz, value) if need_cache else None
    return logits, value, cache


def backward(params: Params, cache, dlogits: np.ndarray, dvalue: np.ndarray) -> dict[str, np.ndarray]:
    a, cfg = params.arrays, params.config
    acts, num, valid, caches, xf, lnf, z, gz, tz, value = cache
    B, T = acts.shape
    d, H = cfg.width, cfg.heads
    dh = d // H
    g = {k: np.zeros_like(v) for k, v in a.items()}
    g["Wp"] = xf.T @ dlogits
    g["bp"] = dlogits.sum(0)
    dpre = dvalue * (1.0 - value ** 2)
    g["wv2"] = gz.T @ dpre
    g["bv2"] = np.array([dpre.sum()])
    dz = np.outer(dpre, a["wv2"]) * _gelu_grad(z, tz)
    g["Wv1"] = xf.T @ dz
    g["bv1"] = dz.sum(0)
    dxf = dlogits @ a["Wp"].T + dz @ a["Wv1"].T
    dx0, g["gf"], g["bf"] = _ln_back(dxf, a["gf"], lnf)
    dx = np.zeros((B, T, d))
    dx[:, 0] = dx0
    for b in reversed(range(cfg.blocks)):
        p = f"b{b}."
        h1, ln1, q, k, v, att, o, h2, ln2, u, gu, t = caches[b]
        # MLP branch
        g[p + "W2"] = gu.reshape(-1, gu.shape[-1]).T @ dx.reshape(-1, d)
        g[p + "c2"] = dx.sum((0, 1))
        du = (dx @ a[p + "W2"].T) * _gelu_grad(u, t)
        g[p + "W1"] = h2.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
        g[p + "c1"] = du.sum((0, 1))
        dh2 = du @ a[p + "W1"].T
        dxl, g[p + "g2"], g[p + "be2"] = _ln_back(dh2, a[p + "g2"], ln2)
        dx = dx + dxl
        # attention branch
        g[p + "Wo"] = o.reshape(-1, d).T @ dx.reshape(-1, d)
        g[p + "bo"] = dx.sum((0, 1))
        do = (dx @ a[p + "Wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) / math.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dh1 = np.zeros((B, T, d))
        for m, dm in (("q", dq), ("k", dk), ("v", dv)):
            dm = dm.transpose(0, 2, 1, 3).reshape(B, T, d)
            g[p + "W" + m] = h1.reshape(-1, d).T @ dm.reshape(-1, d)
            g[p + "b" + m] = dm.sum((0, 1))
            dh1 += dm @ a[p + "W" + m].T
        dxl, g[p + "g1"], g[p + "be1"] = _ln_back(dh1, a[p + "g1"], ln1)
        dx = dx + dxl
    dx = dx * valid[..., None]
    g["pos"][:T] = dx.sum(0)
    g["Wn"] = num.reshape(-1, N_NUMERIC).T @ dx.reshape(-1, d)
    g["bn"] = dx.sum((0, 1))
    is_cls = acts < 0
    g["cls"] = dx[is_cls].sum(0)
    np.add.at(g["emb"], acts[~is_cls], dx[~is_cls])
    return g


# ---------------------------------------------------------------------------
# inference


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(-1).all():
        raise ValueError("mask has no legal action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(-1, keepdims=True)


def predict(params: Params, features: FeatureSequence, mask) -> tuple[np.ndarray, float]:
    """Policy over the first ``len(mask)`` action slots and a value in [-1, 1]."""
    mask = np.asarray(mask, dtype=bool)
    pol, val = predict_batch(params, [features], mask[None])
    return pol[0], float(val[0])


def predict_batch(params: Params, features: Sequence[FeatureSequence], masks: np.ndarray):
    masks = np.asarray(masks, dtype=bool)
    if masks.shape[-1] > params.config.max_vocab:
        raise ValueError("mask longer than max_vocab")
    logits, value, _ = forward(params, features)
    return masked_softmax(logits[:, :masks.shape[-1]], masks), value


# ---------------------------------------------------------------------------
# training


@dataclass
class Sample:
    features: FeatureSequence
    target: np.ndarray
    reward: float
    mask: np.ndarray | None = None


@dataclass
class TrainBatch:
    features: list[FeatureSequence]
    targets: np.ndarray
    rewards: np.ndarray
    labels: np.ndarray
    masks: np.ndarray
    balanced: bool = True

    def __len__(self) -> int:
        return len(self.features)


def make_batch(samples: Sequence[Sample], balanced: bool = True) -> TrainBatch:
    if not samples:
        raise ValueError("empty batch")
    width = max(len(s.target) for s in samples)
    targets = np.zeros((len(samples), width))
    masks = np.zeros((len(samples), width), dtype=bool)
    for i, s in enumerate(samples):
        t = np.asarray(s.target, dtype=float)
        targets[i, :len(t)] = t
        m = t > 0 if s.mask is None else np.asarray(s.mask, dtype=bool)
        masks[i, :len(m)] = m
    rewards = np.array([s.reward for s in samples], dtype=float)
    return TrainBatch([s.features for s in samples], targets, rewards, rewards > 0, masks, balanced)


def balance_batch(samples: Sequence[Sample], rng: np.random.Generator) -> TrainBatch:
    """Resample to between 40% and 60% positive (reward > 0) at the same size.

    The minority class is drawn with replacement when it has too few
    members.  If either class is empty the batch is returned as is, flagged
    ``balanced=False``.
    """
    if not samples:
        raise ValueError("need at least one sample")
    samples = list(samples)
    pos = [s for s in samples if s.reward > 0]
    neg = [s for s in samples if not s.reward > 0]
    if not pos or not neg:
        return make_batch(samples, balanced=False)
    size = len(samples)
    if 0.4 <= len(pos) / size <= 0.6:
        return make_batch(samples)
    want_pos = size // 2 if size % 2 == 0 else size // 2 + int(rng.integers(0, 2))
    out = _draw(pos, want_pos, rng) + _draw(neg, size - want_pos, rng)
    order = rng.permutation(len(out))
    return make_batch([out[i] for i in order])


def _draw(items, k, rng):
    if k <= len(items):
        idx = rng.choice(len(items), size=k, replace=False)
        return [items[i] for i in sorted(idx)]
    extra = rng.integers(0, len(items), size=k - len(items))
    return list(items) + [items[i] for i in extra]


def losses_and_grads(params: Params, batch: TrainBatch, need_grad: bool = True):
    logits, value, cache = forward(params, batch.features, need_cache=need_grad)
    V = batch.targets.shape[1]
    B = len(batch)
    probs = masked_softmax(logits[:, :V], batch.masks)
    logp = np.log(np.where(batch.masks, probs, 1.0))
    policy_loss = float(-(batch.targets * logp).sum() / B)
    value_loss = float(((value - batch.rewards) ** 2).sum() / B)
    if not need_grad:
        return policy_loss, value_loss, None
    dlogits = np.zeros_like(logits)
    dlogits[:, :V] = (probs * batch.targets.sum(1, keepdims=True) - batch.targets) / B
    dvalue = 2.0 * (value - batch.rewards) / B
    return policy_loss, value_loss, backward(params, cache, dlogits, dvalue)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class Optimizer:
    """Stochastic gradient descent with heavy-ball momentum."""

    lr: float = 1e-3
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)


def train_step(params: Params, batch: TrainBatch, lr: float | None = None,
               opt: Optimizer | None = None) -> tuple[Params, dict]:
    """One momentum-SGD step on cross-entropy plus squared value error.

    A non-finite loss or gradient leaves ``params`` untouched and raises
    :class:`NonFiniteLoss`.
    """
    opt = opt if opt is not None else Optimizer()
    lr = opt.lr if lr is None else lr
    pl, vl, grads = losses_and_grads(params, batch)
    metrics = {"policy_loss": pl, "value_loss": vl, "loss": pl + vl}
    if not (math.isfinite(pl) and math.isfinite(vl)) or not all(np.isfinite(g).all() for g in grads.values()):
        raise NonFiniteLoss(f"non-finite loss (policy {pl}, value {vl}); step rejected")
    if lr == 0:
        return params, metrics
    new = {}
    for k, w in params.arrays.items():
        vel = opt.velocity.get(k)
        if vel is None or vel.shape != w.shape:
            vel = np.zeros_like(w)
            if k in opt.velocity and opt.velocity[k].shape[0] < w.shape[0]:
                vel[:opt.velocity[k].shape[0]] = opt.velocity[k]
        vel = opt.momentum * vel + grads[k]
        opt.velocity[k] = vel
        new[k] = w - lr * vel
    return Params(params.config, new), metrics


METRIC_COLUMNS = ("round", "step", "policy_loss", "value_loss", "loss", "lr", "batch_size")


def append_metrics(path: str | os.PathLike, rows: Sequence[dict]) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r.get(k), float) else r.get(k, ""))
                        for k in METRIC_COLUMNS})
