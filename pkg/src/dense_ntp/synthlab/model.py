"""A minimal differentiable producer of token logits.

``linear``:  Z = X W^T + b
``attn1``:   H = X + softmax(X Wq (X Wk)^T / sqrt(d)) X Wv ;  Z = H W^T + b

Attention runs over the tokens of one scene.  Gradients are written out by
hand so they can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..errors import DenseNTPError


class ShapeError(DenseNTPError, ValueError):
    pass


@dataclass
class TinyModel:
    mode: str
    params: Dict[str, np.ndarray]
    seed: int = 0

    @classmethod
    def init(
        cls,
        mode: str,
        n_features: int,
        vocab_size: int,
        seed: int = 0,
        scale: float = 0.01,
        rank: int = 0,
        bias: bool = True,
    ) -> "TinyModel":
        """``rank > 0`` factors the head as W = E @ A with a shared (rank, F) projection A."""
        if mode not in ("linear", "attn1"):
            raise ValueError(f"unknown model mode {mode!r}")
        rng = np.random.default_rng(seed)
        if rank:
            params = {
                "E": rng.standard_normal((vocab_size, rank)) / np.sqrt(rank),
                "A": scale * rng.standard_normal((rank, n_features)),
            }
        else:
            params = {"W": scale * rng.standard_normal((vocab_size, n_features))}
        if bias:
            params["b"] = np.zeros(vocab_size)
        if mode == "attn1":
            d = n_features
            params["Wq"] = rng.standard_normal((n_features, d)) / np.sqrt(n_features)
            params["Wk"] = rng.standard_normal((n_features, d)) / np.sqrt(n_features)
            params["Wv"] = np.zeros((n_features, d))
        return cls(mode, params, seed)

    @property
    def n_features(self) -> int:
        return (self.params["W"] if "W" in self.params else self.params["A"]).shape[1]

    @property
    def vocab_size(self) -> int:
        return (self.params["W"] if "W" in self.params else self.params["E"]).shape[0]

    def head(self) -> np.ndarray:
        """The effective (V, F) feature -> vocabulary matrix."""
        if "W" in self.params:
            return self.params["W"]
        return self.params["E"] @ self.params["A"]

    def copy(self) -> "TinyModel":
        return TinyModel(self.mode, {k: v.copy() for k, v in self.params.items()}, self.seed)


@dataclass
class _Cache:
    x: np.ndarray
    h: np.ndarray
    attn: np.ndarray = None
    q: np.ndarray = None
    k: np.ndarray = None
    v: np.ndarray = None


def forward(model: TinyModel, x: np.ndarray, return_cache: bool = False):
    """Logits (L, V) for one scene's token features x (L, F)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeError(f"features of shape {x.shape} do not match the model's {model.n_features} inputs")
    p = model.params
    cache = _Cache(x=x, h=x)
    if model.mode == "attn1":
        q = x @ p["Wq"]
        k = x @ p["Wk"]
        v = x @ p["Wv"]
        s = q @ k.T / np.sqrt(q.shape[1])
        s -= s.max(axis=1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=1, keepdims=True)
        cache = _Cache(x=x, h=x + a @ v, attn=a, q=q, k=k, v=v)
    if "W" in p:
        z = cache.h @ p["W"].T
    else:
        z = (cache.h @ p["A"].T) @ p["E"].T
    if "b" in p:
        z = z + p["b"]
    return (z, cache) if return_cache else z


def backward(model: TinyModel, cache: _Cache, grad_z: np.ndarray) -> Dict[str, np.ndarray]:
    p = model.params
    grads = {}
    if "W" in p:
        grads["W"] = grad_z.T @ cache.h
        gh = grad_z @ p["W"]  # (L, F)
    else:
        r = cache.h @ p["A"].T
        grads["E"] = grad_z.T @ r
        gr = grad_z @ p["E"]
        grads["A"] = gr.T @ cache.h
        gh = gr @ p["A"]
    if "b" in p:
        grads["b"] = grad_z.sum(axis=0)
    if model.mode == "attn1":
        a, x = cache.attn, cache.x
        gv = a.T @ gh
        ga = gh @ cache.v.T
        # softmax rows: dS = A * (dA - sum(dA * A))
        gs = a * (ga - np.sum(ga * a, axis=1, keepdims=True))
        gs /= np.sqrt(cache.q.shape[1])
        gq = gs @ cache.k
        gk = gs.T @ cache.q
        grads["Wq"] = x.T @ gq
        grads["Wk"] = x.T @ gk
        grads["Wv"] = x.T @ gv
    return grads


def save_model(path, model: TinyModel) -> None:
    np.savez(path, __mode__=np.array(model.mode), __seed__=np.array(model.seed), **model.params)


def load_model(path) -> TinyModel:
    with np.load(path) as z:
        params = {k: z[k].copy() for k in z.files if not k.startswith("__")}
        return TinyModel(str(z["__mode__"]), params, int(z["__seed__"]))
