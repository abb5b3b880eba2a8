"""Minimal dense-network core: two fully-connected layers, tanh hidden
activation, exact analytic gradients and Adam.  Double precision throughout
so gradient checks hold to tight tolerances.  No autodiff framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class MlpParams:
    w1: np.ndarray   # (hidden, in)
    b1: np.ndarray   # (hidden,)
    w2: np.ndarray   # (out, hidden)
    b2: np.ndarray   # (out,)

    @classmethod
    def init(cls, in_dim: int, hidden: int, out_dim: int, seed: int) -> "MlpParams":
        """Scaled-uniform fan-in init (limit +-sqrt(1/fan_in)), zero biases."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        lim1 = np.sqrt(1.0 / in_dim)
        lim2 = np.sqrt(1.0 / hidden)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden, in_dim)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, size=(out_dim, hidden)),
            b2=np.zeros(out_dim),
        )

    def items(self):
        return [(n, getattr(self, n)) for n in PARAM_NAMES]

    def copy(self) -> "MlpParams":
        return MlpParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]


def forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Raw outputs (logits or value) plus the cache backward() needs.

    Accepts a single state (in,) or a batch (B, in); the output keeps the
    input's rank.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != p.in_dim:
        raise ShapeMismatch(f"state length {xb.shape[1]} != input size {p.in_dim}")
    h = np.tanh(xb @ p.w1.T + p.b1)
    out = h @ p.w2.T + p.b2
    cache = (xb, h)
    return (out[0] if single else out), cache


def backward(p: MlpParams, cache: tuple, d_out: np.ndarray) -> MlpParams:
    """Exact gradients w.r.t. every parameter given d(loss)/d(output)."""
    xb, h = cache
    d_out = np.asarray(d_out, dtype=float)
    if d_out.ndim == 1:
        d_out = d_out[None, :]
    if d_out.shape != (xb.shape[0], p.out_dim):
        raise ShapeMismatch(f"upstream gradient shape {d_out.shape} unexpected")
    dw2 = d_out.T @ h
    db2 = d_out.sum(axis=0)
    dh = d_out @ p.w2
    dz = dh * (1.0 - h ** 2)
    dw1 = dz.T @ xb
    db1 = dz.sum(axis=0)
    return MlpParams(w1=dw1, b1=db1, w2=dw2, b2=db2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_forward(p: MlpParams, state: np.ndarray) -> np.ndarray:
    """Action distribution over the servers for one state or a batch."""
    logits, _ = forward(p, state)
    return softmax(logits)


def value_forward(p: MlpParams, state: np.ndarray):
    """Scalar state value; returns a float for a single state."""
    out, _ = forward(p, state)
    if out.ndim == 1:
        return float(out[0])
    return out[:, 0]


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, p: MlpParams, lr: float = 0.01) -> "AdamState":
        st = cls(lr=lr)
        for name, arr in p.items():
            st.m[name] = np.zeros_like(arr)
            st.v[name] = np.zeros_like(arr)
        return st


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, maximize: bool = False
) -> MlpParams:
    """One bias-corrected Adam update; `maximize` flips to gradient ascent.

    The moment accumulators and step counter are updated in place; a new
    parameter set is returned.
    """
    for _, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    sign = 1.0 if maximize else -1.0
    new = {}
    for name, arr in params.items():
        g = getattr(grads, name)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g ** 2
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        new[name] = arr + sign * state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return MlpParams(**new)


# --- checkpoints ----------------------------------------------------------
# versioned JSON blob: {version, nets: {name: {shapes, weights row-major}}, adam}

def _params_to_doc(p: MlpParams) -> dict:
    return {n: {"shape": list(a.shape), "data": a.ravel().tolist()} for n, a in p.items()}


def _params_from_doc(doc: dict) -> MlpParams:
    arrs = {
        n: np.array(doc[n]["data"], dtype=float).reshape(doc[n]["shape"])
        for n in PARAM_NAMES
    }
    return MlpParams(**arrs)


def _adam_to_doc(st: AdamState) -> dict:
    return {
        "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
        "step": st.step,
        "m": {n: a.ravel().tolist() for n, a in st.m.items()},
        "v": {n: a.ravel().tolist() for n, a in st.v.items()},
        "shapes": {n: list(a.shape) for n, a in st.m.items()},
    }


def _adam_from_doc(doc: dict) -> AdamState:
    st = AdamState(lr=doc["lr"], beta1=doc["beta1"], beta2=doc["beta2"],
                   eps=doc["eps"], step=doc["step"])
    for n, shape in doc["shapes"].items():
        st.m[n] = np.array(doc["m"][n], dtype=float).reshape(shape)
        st.v[n] = np.array(doc["v"][n], dtype=float).reshape(shape)
    return st


def save_checkpoint(
    path: str | Path,
    version: int,
    policy: MlpParams,
    value: MlpParams,
    adam_policy: AdamState | None = None,
    adam_value: AdamState | None = None,
) -> None:
    doc = {
        "format": 1,
        "version": version,
        "policy": _params_to_doc(policy),
        "value": _params_to_doc(value),
    }
    if adam_policy is not None:
        doc["adam_policy"] = _adam_to_doc(adam_policy)
    if adam_value is not None:
        doc["adam_value"] = _adam_to_doc(adam_value)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    out = {
        "version": doc["version"],
        "policy": _params_from_doc(doc["policy"]),
        "value": _params_from_doc(doc["value"]),
    }
    if "adam_policy" in doc:
        out["adam_policy"] = _adam_from_doc(doc["adam_policy"])
    if "adam_value" in doc:
        out["adam_value"] = _adam_from_doc(doc["adam_value"])
    return out
