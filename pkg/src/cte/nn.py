"""Dense ReLU networks with hand-written backprop and an Adam optimiser.

Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` with ``W_i`` of
shape ``(fan_in, fan_out)``; inputs are row-major batches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def init_dense(sizes: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)  # He-uniform
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def layer_sizes(params: list[np.ndarray]) -> list[int]:
    return [params[0].shape[0]] + [W.shape[1] for W in params[0::2]]


def dense_forward(params, X, final_relu: bool = False):
    """Returns the output and a cache of per-layer inputs / pre-activations."""
    cache = []
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        z = h @ W + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if (i < n_layers - 1 or final_relu) else z
    return h, cache


def dense_backward(params, cache, dout, final_relu: bool = False):
    grads = [None] * len(params)
    n_layers = len(params) // 2
    g = dout
    for i in reversed(range(n_layers)):
        h, z = cache[i]
        if i < n_layers - 1 or final_relu:
            g = g * (z > 0)
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params[2 * i].T
    return grads, g


class Adam:
    """Adam with L2 weight decay folded into the gradient (coupled decay)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class DenseNet:
    """A plain regressor; used for the distilled reward stand-in."""

    params: list[np.ndarray]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return dense_forward(self.params, X)[0]


def save_params(path, kind: str, blocks: dict[str, list[np.ndarray]], meta: dict | None = None) -> None:
    """Writes named parameter blocks as layer sizes plus flat decimal arrays."""
    doc = {"format": "cte-params", "version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "blocks": {}}
    for name, params in blocks.items():
        doc["blocks"][name] = {
            "layer_sizes": layer_sizes(params),
            "arrays": [np.asarray(p, dtype="<f8").ravel().tolist() for p in params],
        }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_params(path) -> tuple[str, dict[str, list[np.ndarray]], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "cte-params":
        raise ValueError(f"{path}: not a parameter file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported parameter file version {doc.get('version')}")
    blocks = {}
    for name, blk in doc["blocks"].items():
        sizes = blk["layer_sizes"]
        arrays = blk["arrays"]
        params = []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            params.append(np.asarray(arrays[2 * i], dtype=float).reshape(fi, fo))
            params.append(np.asarray(arrays[2 * i + 1], dtype=float).reshape(fo))
        blocks[name] = params
    return doc["kind"], blocks, doc.get("meta", {})
