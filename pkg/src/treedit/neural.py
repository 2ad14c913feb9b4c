"""Numeric core: LSTM cell, dot-product attention, masked softmax, SGD.

Everything is float64 numpy with hand-written reverse-mode gradients. Model
parameters live in flat ``dict[str, ndarray]`` containers so that updates,
gradient checks and checkpoints treat every model the same way.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

DEBUG = bool(os.environ.get("TREEDIT_DEBUG"))

CHECKPOINT_FORMAT = "treedit-checkpoint"
CHECKPOINT_VERSION = 1

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    pass


class MaskedTargetError(ValueError):
    """The gold label is excluded by the output mask; data and mask disagree."""


def _finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values after {name}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- initialisation --------------------------------------------------------------


def uniform(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def init_lstm(rng: np.random.Generator, d_in: int, d_h: int, scale: float = 0.08) -> tuple[np.ndarray, np.ndarray]:
    """Stacked gate weights ``(4*d_h, d_in + d_h)`` in i, f, o, g order."""
    W = uniform(rng, (4 * d_h, d_in + d_h), scale)
    b = uniform(rng, (4 * d_h,), scale)
    b[d_h : 2 * d_h] = 1.0
    return W, b


# -- LSTM ------------------------------------------------------------------------


class LstmParams(NamedTuple):
    W: np.ndarray
    b: np.ndarray

    @property
    def d_h(self) -> int:
        return self.W.shape[0] // 4

    @property
    def d_in(self) -> int:
        return self.W.shape[1] - self.d_h


class LstmCache(NamedTuple):
    z: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def lstm_step(p: LstmParams, h_prev: np.ndarray, c_prev: np.ndarray, x: np.ndarray):
    """One LSTM step; returns ``(h, c, cache)``."""
    d_h = p.d_h
    if x.shape != (p.d_in,) or h_prev.shape != (d_h,) or c_prev.shape != (d_h,):
        raise ShapeError(
            f"lstm_step expects x{(p.d_in,)}, h/c{(d_h,)}; got {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    z = np.concatenate([x, h_prev])
    a = p.W @ z + p.b
    i = sigmoid(a[:d_h])
    f = sigmoid(a[d_h : 2 * d_h])
    o = sigmoid(a[2 * d_h : 3 * d_h])
    g = np.tanh(a[3 * d_h :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    if DEBUG:
        _finite("lstm_step", h, c)
    return h, c, LstmCache(z, c_prev, i, f, o, g, tanh_c)


def lstm_step_backward(p: LstmParams, cache: LstmCache, dh: np.ndarray, dc: np.ndarray, dW: np.ndarray, db: np.ndarray):
    """Accumulate into ``dW``/``db``; return ``(dx, dh_prev, dc_prev)``."""
    z, c_prev, i, f, o, g, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c**2)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    da = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)])
    dW += np.outer(da, z)
    db += da
    dz = p.W.T @ da
    d_in = p.d_in
    return dz[:d_in], dz[d_in:], dc * f


# -- attention ---------------------------------------------------------------------


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def attend(query: np.ndarray, keys: np.ndarray):
    """Dot-product attention; returns ``(context, weights)``."""
    keys = np.asarray(keys)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("attend needs a non-empty list of keys")
    if keys.shape[1] != query.shape[0]:
        raise ShapeError(f"query dim {query.shape[0]} != key dim {keys.shape[1]}")
    w = softmax(keys @ query)
    ctx = w @ keys
    if DEBUG:
        _finite("attend", ctx)
    return ctx, w


def attend_backward(query: np.ndarray, keys: np.ndarray, w: np.ndarray, dctx: np.ndarray):
    """Return ``(dquery, dkeys)``."""
    dw = keys @ dctx
    ds = w * (dw - w @ dw)
    return keys.T @ ds, np.outer(w, dctx) + np.outer(ds, query)


# -- output layer ---------------------------------------------------------------------


def masked_softmax(logits: np.ndarray, mask: Sequence[int] | np.ndarray) -> np.ndarray:
    """Softmax restricted to ``mask``; disallowed entries get exactly zero."""
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("masked_softmax needs a non-empty mask")
    sub = logits[idx]
    e = np.exp(sub - sub.max())
    dist = np.zeros_like(logits, dtype=np.float64)
    dist[idx] = e / e.sum()
    return dist


def cross_entropy(dist: np.ndarray, target: int, mask: Iterable[int] | None = None) -> float:
    if mask is not None and target not in set(int(m) for m in mask):
        raise MaskedTargetError(f"target {target} is masked out")
    return float(-np.log(max(dist[target], 1e-12)))


def cross_entropy_grad(dist: np.ndarray, target: int) -> np.ndarray:
    """Gradient of ``cross_entropy(masked_softmax(logits), target)`` w.r.t. logits."""
    g = dist.copy()
    g[target] -= 1.0
    return g


# -- optimisation ---------------------------------------------------------------------


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def sgd_update(params: Params, grads: Mapping[str, np.ndarray], lr: float, clip: float | None = 5.0) -> Params:
    """In-place ``p -= lr * g`` with optional global-norm clipping at ``clip``."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, param {params[k].shape}")
    scale = 1.0
    if clip is not None:
        norm = global_norm(grads)
        if norm > clip:
            scale = clip / norm
    for k in sorted(grads):
        params[k] -= (lr * scale) * grads[k]
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- gradient checking -------------------------------------------------------------------


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def grad_check_groups(
    fn: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Params,
    groups: Iterable[str] | None = None,
    eps: float = 1e-5,
    corrupt: bool = False,
) -> dict[str, float]:
    """Max relative error per parameter group, central differences vs ``fn``'s gradient.

    ``fn(params)`` must return ``(loss, grads)`` and be deterministic.
    ``corrupt`` perturbs the analytic gradient, for exercising failure paths.
    """
    _, analytic = fn(params)
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    out = {}
    for key in groups if groups is not None else sorted(params):
        p = params[key]
        a = analytic[key]
        if corrupt:
            a = a + 1e-2 * (np.abs(a) + 1.0)
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            hi = flat[j]
            lp, _ = fn(params)
            flat[j] = old - eps
            lo = flat[j]
            lm, _ = fn(params)
            flat[j] = old
            # divide by the step actually taken, not the nominal 2*eps
            nflat[j] = (lp - lm) / (hi - lo)
        out[key] = float(relative_error(a, num).max()) if p.size else 0.0
    return out


def grad_check(fn, params: Params, groups=None, eps: float = 1e-5, corrupt: bool = False) -> float:
    """Max relative error over all checked coordinates."""
    errs = grad_check_groups(fn, params, groups, eps, corrupt)
    return max(errs.values()) if errs else 0.0


# -- checkpoints ------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dtype = a.dtype.newbyteorder("<")
    return {
        "dtype": dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(dtype, copy=False).tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def dumps_checkpoint(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "arrays": {k: _encode_array(arrays[k]) for k in sorted(arrays)},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def loads_checkpoint(text: str) -> tuple[dict, Params]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a treedit checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return doc["meta"], {k: _decode_array(v) for k, v in doc["arrays"].items()}


def save_checkpoint(path: str | Path, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_text(dumps_checkpoint(meta, arrays), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict, Params]:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
