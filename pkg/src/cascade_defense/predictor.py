"""Pair-embedding MLP that predicts which nodes fail for a joint action.

Each unordered node pair has a learned embedding, one table for attack pairs
and one for defense pairs. The two embeddings are concatenated with the node
feature vector (thresholds or capacities) and passed through ``depth`` dense
layers of width ``h``; a final dense layer with a sigmoid gives one failure
probability per node.

Backpropagation is written out by hand for this fixed architecture. Training
uses per-node binary cross-entropy averaged over nodes, with counterfactual
rows down-weighted by ``cfda_weight``.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .datagen import TrialSet
from .errors import InvalidParams, NonFiniteLoss, ParseError
from .game import pair_indices

RELU = "relu"
TANH = "tanh"
ADAM = "adam"
SGD = "sgd"
ACTIVATIONS = (RELU, TANH)
OPTIMIZERS = (ADAM, SGD)
_MAGIC = b"CDPRED1\n"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = ADAM
    seed: int = 0
    cfda_weight: float = 1.0
    max_steps: int | None = None
    grad_shards: int = 1
    threads: int = 1
    val_fraction: float = 0.0
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise InvalidParams("epochs and batch_size must be positive, learning_rate non-negative")
        if self.optimizer not in (ADAM, SGD):
            raise InvalidParams(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.cfda_weight <= 1.0:
            raise InvalidParams("cfda_weight must lie in [0, 1]")
        if self.grad_shards < 1 or self.threads < 1:
            raise InvalidParams("grad_shards and threads must be positive")
        if not 0.0 <= self.val_fraction < 1.0 or self.patience < 1:
            raise InvalidParams("val_fraction must lie in [0, 1) and patience be positive")


class LossHistory(list):
    """Per-epoch training loss; with a held-out split also its loss and the epoch kept."""

    def __init__(self):
        super().__init__()
        self.validation = []
        self.best_epoch = None


class PredictorModel:
    """Parameters and forward/backward passes of the failure predictor.

    ``params`` is an ordered dict of arrays: ``emb_atk``, ``emb_def``, then
    ``W0, b0, ..., W{depth}, b{depth}``. ``x_scale`` divides the node feature
    vector before it enters the network.
    """

    def __init__(self, n: int, b: int = 64, h: int = 256, depth: int = 3, activation: str = RELU,
                 seed: int = 0, x_scale: float = 1.0, dtype=np.float32):
        if n < 2 or b < 1 or h < 1 or depth < 1:
            raise InvalidParams("need n >= 2 and positive b, h, depth")
        if activation not in (RELU, TANH):
            raise InvalidParams(f"unknown activation {activation!r}")
        self.n, self.b, self.h, self.depth = n, b, h, depth
        self.activation = activation
        self.seed = seed
        self.x_scale = float(x_scale)
        self.dtype = np.dtype(dtype)
        self.n_pairs = comb(n, 2)
        rng = np.random.default_rng(seed)
        p = {}
        p["emb_atk"] = rng.normal(0.0, 1.0 / np.sqrt(b), (self.n_pairs, b))
        p["emb_def"] = rng.normal(0.0, 1.0 / np.sqrt(b), (self.n_pairs, b))
        sizes = [2 * b + n] + [h] * depth + [n]
        gain = 2.0 if activation == RELU else 1.0
        for i in range(depth + 1):
            fan_in = sizes[i]
            p[f"W{i}"] = rng.normal(0.0, np.sqrt(gain / fan_in), (sizes[i], sizes[i + 1]))
            p[f"b{i}"] = np.zeros(sizes[i + 1])
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    @classmethod
    def for_features(cls, x, **kw) -> "PredictorModel":
        x = np.asarray(x, dtype=np.float64)
        scale = float(np.abs(x).max()) or 1.0
        return cls(len(x), x_scale=scale, **kw)

    def astype(self, dtype) -> "PredictorModel":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return other

    def copy(self) -> "PredictorModel":
        other = object.__new__(PredictorModel)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def header(self) -> dict:
        return {"n": self.n, "b": self.b, "h": self.h, "depth": self.depth, "activation": self.activation,
                "seed": self.seed, "x_scale": self.x_scale}

    # -- forward / backward -------------------------------------------------

    def _act(self, z):
        return np.maximum(z, 0) if self.activation == RELU else np.tanh(z)

    def _act_grad(self, z, a):
        return (z > 0).astype(z.dtype) if self.activation == RELU else 1.0 - a * a

    def _check_index(self, idx):
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_pairs):
            raise IndexError("pair index out of range for this model")

    def logits(self, atk_idx, def_idx, x, keep=False):
        atk_idx = np.asarray(atk_idx, dtype=np.int64)
        def_idx = np.asarray(def_idx, dtype=np.int64)
        self._check_index(atk_idx)
        self._check_index(def_idx)
        p = self.params
        xs = (np.asarray(x, dtype=np.float64) / self.x_scale).astype(self.dtype)
        inp = np.concatenate([p["emb_atk"][atk_idx], p["emb_def"][def_idx],
                              np.broadcast_to(xs, (len(atk_idx), self.n))], axis=1)
        zs, acts = [], [inp]
        a = inp
        for i in range(self.depth):
            z = a @ p[f"W{i}"] + p[f"b{i}"]
            a = self._act(z)
            zs.append(z)
            acts.append(a)
        out = a @ p[f"W{self.depth}"] + p[f"b{self.depth}"]
        if keep:
            return out, (atk_idx, def_idx, zs, acts)
        return out

    def predict_indices(self, atk_idx, def_idx, x) -> np.ndarray:
        return _sigmoid(self.logits(atk_idx, def_idx, x))

    def predict(self, atk_pairs, def_pairs, x) -> np.ndarray:
        return self.predict_indices(pair_indices(atk_pairs, self.n), pair_indices(def_pairs, self.n), x)

    def loss_and_grads(self, atk_idx, def_idx, x, y, w=None, need_grads=True):
        """Weighted mean BCE and its gradient for every parameter.

        Embedding gradients come back as ``(rows, values)`` pairs with unique
        rows; all other gradients are dense.
        """
        y = np.asarray(y, dtype=self.dtype)
        bsz = len(y)
        w = np.ones(bsz) if w is None else np.asarray(w, dtype=np.float64)
        wsum = w.sum()
        z, cache = self.logits(atk_idx, def_idx, x, keep=True)
        z64 = z.astype(np.float64)
        bce = np.logaddexp(0.0, z64) - y * z64
        loss = float((w * bce.mean(axis=1)).sum() / wsum)
        if not need_grads:
            return loss, None
        atk_idx, def_idx, zs, acts = cache
        p = self.params
        dz = ((_sigmoid(z64) - y) * (w / (wsum * self.n))[:, None]).astype(self.dtype)
        grads = {}
        grads[f"W{self.depth}"] = acts[-1].T @ dz
        grads[f"b{self.depth}"] = dz.sum(axis=0)
        da = dz @ p[f"W{self.depth}"].T
        for i in range(self.depth - 1, -1, -1):
            dz = da * self._act_grad(zs[i], acts[i + 1])
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ p[f"W{i}"].T
        b = self.b
        grads["emb_atk"] = _segment_sum(atk_idx, da[:, :b])
        grads["emb_def"] = _segment_sum(def_idx, da[:, b:2 * b])
        return loss, grads


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _segment_sum(idx, values):
    rows, inv = np.unique(idx, return_inverse=True)
    out = np.zeros((len(rows), values.shape[1]), dtype=values.dtype)
    np.add.at(out, inv, values)
    return rows, out


# -- public API ----------------------------------------------------------------


def forward(model: PredictorModel, alpha_a, alpha_d, x) -> np.ndarray:
    """Failure probability of every node for one joint action."""
    a = np.asarray(alpha_a).reshape(1, 2)
    d = np.asarray(alpha_d).reshape(1, 2)
    if a[0, 0] == a[0, 1] or d[0, 0] == d[0, 1]:
        raise IndexError("an action must name two distinct nodes")
    if min(a.min(), d.min()) < 0 or max(a.max(), d.max()) >= model.n:
        raise IndexError("node id out of range for this model")
    return model.predict(a, d, x)[0].astype(np.float64)


def predicted_payoff(model: PredictorModel, alpha_a, alpha_d, x) -> float:
    """Expected failed fraction, the mean predicted failure probability."""
    return float(forward(model, alpha_a, alpha_d, x).mean())


def predicted_payoff_matrix(model: PredictorModel, atk_pairs, def_pairs, x, chunk: int = 8192) -> np.ndarray:
    """Mean predicted failure fraction for every (attack, defense) combination."""
    ai = pair_indices(atk_pairs, model.n)
    di = pair_indices(def_pairs, model.n)
    out = np.empty((len(ai), len(di)))
    rows = max(1, chunk // max(1, len(di)))
    for s in range(0, len(ai), rows):
        a = np.repeat(ai[s:s + rows], len(di))
        d = np.tile(di, len(ai[s:s + rows]))
        out[s:s + rows] = model.predict_indices(a, d, x).mean(axis=1).reshape(-1, len(di))
    return out


def _trial_arrays(model, trials: TrialSet):
    return (pair_indices(trials.atk, model.n), pair_indices(trials.dfn, model.n),
            trials.omega.astype(model.dtype))


def validation_error(model: PredictorModel, val_set: TrialSet, x, chunk: int = 4096) -> float:
    """Brier score: squared error of the probabilities, averaged over nodes then trials."""
    if len(val_set) == 0:
        raise InvalidParams("empty validation set")
    ai, di, y = _trial_arrays(model, val_set)
    total = 0.0
    for s in range(0, len(ai), chunk):
        p = model.predict_indices(ai[s:s + chunk], di[s:s + chunk], x).astype(np.float64)
        total += ((p - y[s:s + chunk]) ** 2).mean(axis=1).sum()
    return total / len(ai)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.buf = {k: np.empty_like(v) for k, v in params.items() if v.ndim < 2 or k.startswith("W")}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step = self.lr * np.sqrt(c2) / c1
        for k, g in grads.items():
            if isinstance(g, tuple):
                # lazy update: only the embedding rows present in the batch
                rows, g = g
                m = self.m[k][rows] * self.b1 + (1 - self.b1) * g
                v = self.v[k][rows] * self.b2 + (1 - self.b2) * g * g
                self.m[k][rows] = m
                self.v[k][rows] = v
                params[k][rows] -= (step * m / (np.sqrt(v) + self.eps)).astype(params[k].dtype)
            else:
                m, v, buf = self.m[k], self.v[k], self.buf[k]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                np.multiply(g, g, out=buf)
                buf *= 1 - self.b2
                v += buf
                np.sqrt(v, out=buf)
                buf += self.eps
                np.divide(m, buf, out=buf)
                buf *= step
                params[k] -= buf


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            if isinstance(g, tuple):
                rows, g = g
                params[k][rows] -= (self.lr * g).astype(params[k].dtype)
            else:
                params[k] -= (self.lr * g).astype(params[k].dtype)


def _merge(parts):
    out = {}
    for k in parts[0]:
        if isinstance(parts[0][k], tuple):
            rows = np.concatenate([p[k][0] for p in parts])
            vals = np.concatenate([p[k][1] for p in parts])
            out[k] = _segment_sum(rows, vals)
        else:
            acc = parts[0][k].copy()
            for p in parts[1:]:
                acc += p[k]
            out[k] = acc
    return out


def train(model: PredictorModel, dataset: TrialSet, x, config: TrainConfig | None = None, log=None) -> tuple:
    """Fit ``model`` in place; returns ``(model, loss_history)`` with one mean loss per epoch.

    Batches are split into ``config.grad_shards`` fixed shards whose gradients
    are summed in shard order, so the result does not depend on
    ``config.threads``.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise InvalidParams("cannot train on an empty dataset")
    ai, di, y = _trial_arrays(model, dataset)
    w = np.where(dataset.is_counterfactual, config.cfda_weight, 1.0)
    rows = np.arange(len(ai))
    held = np.empty(0, dtype=np.int64)
    n_held = int(config.val_fraction * len(ai))
    if n_held:
        split = np.random.default_rng([config.seed, 1]).permutation(len(ai))
        held, rows = np.sort(split[:n_held]), np.sort(split[n_held:])
        if w[held].sum() <= 0:
            held, rows = held[:0], np.arange(len(ai))
    m = len(rows)
    rng = np.random.default_rng(config.seed)
    opt = _Adam(model.params, config.learning_rate) if config.optimizer == ADAM else _SGD(model.params, config.learning_rate)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 and config.grad_shards > 1 else None
    history = LossHistory()
    best, best_params, stale = np.inf, None, 0
    steps = 0
    try:
        for epoch in range(config.epochs):
            order = rows[rng.permutation(m)]
            tot, wtot = 0.0, 0.0
            for s in range(0, m, config.batch_size):
                bidx = order[s:s + config.batch_size]
                wb = w[bidx]
                if wb.sum() <= 0:
                    continue
                shards = [sh for sh in np.array_split(bidx, config.grad_shards) if len(sh)]

                def work(sh, _wsum=wb.sum(), _whole=len(shards) == 1):
                    loss, g = model.loss_and_grads(ai[sh], di[sh], x, y[sh], w[sh])
                    if _whole:
                        return loss, g
                    # shard losses are scaled so that their sum is the batch loss
                    frac = w[sh].sum() / _wsum
                    return loss * frac, {k: ((v[0], v[1] * frac) if isinstance(v, tuple) else v * frac)
                                         for k, v in g.items()}

                results = list(pool.map(work, shards)) if pool else [work(sh) for sh in shards]
                loss = sum(r[0] for r in results)
                if not np.isfinite(loss):
                    big = max(float(np.abs(v).max()) for v in model.params.values())
                    raise NonFiniteLoss(f"loss {loss} at epoch {epoch}, step {steps}; max |param| = {big:.3g}")
                grads = results[0][1] if len(results) == 1 else _merge([r[1] for r in results])
                opt.step(model.params, grads)
                tot += loss * wb.sum()
                wtot += wb.sum()
                steps += 1
                if config.max_steps is not None and steps >= config.max_steps:
                    break
            history.append(tot / wtot)
            if log:
                log(epoch, history[-1])
            if len(held):
                vloss = _held_out_loss(model, ai[held], di[held], x, y[held], w[held])
                history.validation.append(vloss)
                if vloss < best:
                    best, stale, history.best_epoch = vloss, 0, epoch
                    best_params = {k: v.copy() for k, v in model.params.items()}
                else:
                    stale += 1
                    if stale >= config.patience:
                        break
            if config.max_steps is not None and steps >= config.max_steps:
                break
    finally:
        if pool:
            pool.shutdown()
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k][...] = v
    return model, history


def _held_out_loss(model, ai, di, x, y, w, chunk: int = 4096) -> float:
    total = 0.0
    for s in range(0, len(ai), chunk):
        sl = slice(s, s + chunk)
        total += model.loss_and_grads(ai[sl], di[sl], x, y[sl], w[sl], need_grads=False)[0] * w[sl].sum()
    return total / w.sum()


def save_checkpoint(model: PredictorModel, path, config: TrainConfig | None = None) -> None:
    """JSON header line followed by little-endian float32 parameter blocks."""
    header = model.header()
    header["blocks"] = [[k, list(v.shape)] for k, v in model.params.items()]
    if config is not None:
        # thread count does not change the weights, so it stays out of the file
        header["config"] = {k: v for k, v in asdict(config).items() if k != "threads"}
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> PredictorModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ParseError("not a predictor checkpoint")
    off = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    model = PredictorModel(header["n"], header["b"], header["h"], header["depth"], header["activation"],
                           seed=header["seed"], x_scale=header["x_scale"], dtype=dtype)
    for name, shape in header["blocks"]:
        size = int(np.prod(shape))
        block = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        model.params[name] = block.astype(dtype)
        off += 4 * size
    if off != len(raw):
        raise ParseError("checkpoint has trailing bytes")
    return model
