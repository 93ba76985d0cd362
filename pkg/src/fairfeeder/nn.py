"""Minimal dense-network engine with hand-written reverse-mode gradients.

Networks are tanh MLPs with a linear output layer. An optional leading
ensemble axis evaluates several independent networks (e.g. twin critics) in
one batched matmul. ``forward`` returns a cache that ``backward`` consumes, so
the same network can be differentiated along several paths without hidden
state.
"""

from __future__ import annotations

import numpy as np


class MLP:
    def __init__(self, sizes, rng: np.random.Generator, ensemble: int | None = None,
                 out_scale: float = 1.0, dtype=np.float64):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.ensemble = ensemble
        lead = () if ensemble is None else (ensemble,)
        self.shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.shapes += [lead + (fan_in, fan_out), lead + (1, fan_out)]
        self.flat = np.empty(sum(int(np.prod(s)) for s in self.shapes), dtype=dtype)
        self.params = self.views(self.flat)
        n_layers = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == n_layers - 1:
                bound *= out_scale
            self.params[2 * i][...] = rng.uniform(-bound, bound, size=self.shapes[2 * i])
            self.params[2 * i + 1][...] = rng.uniform(-bound, bound, size=self.shapes[2 * i + 1])

    def views(self, flat: np.ndarray) -> list[np.ndarray]:
        """Per-layer arrays sharing memory with a flat parameter vector."""
        out, i = [], 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            out.append(flat[i:i + n].reshape(shape))
            i += n
        return out

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    @property
    def n_params(self) -> int:
        return self.flat.size

    def forward(self, x, params=None):
        """Returns ``(y, cache)``. ``x`` is (B, in); ensemble output is (E, B, out)."""
        params = self.params if params is None else params
        h = x
        cache = [x]
        L = self.n_layers
        for i in range(L):
            z = h @ params[2 * i] + params[2 * i + 1]
            h = np.tanh(z) if i < L - 1 else z
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, params=None, need_params: bool = True):
        """Back-propagate ``grad_out`` (same shape as the output).

        Returns:
            ``(param_grads, input_grad)``; ``param_grads`` is None when
            ``need_params`` is false. For an ensemble fed a shared input the
            input gradient is summed over members.
        """
        params = self.params if params is None else params
        L = self.n_layers
        grads = self.views(np.empty(self.n_params, dtype=self.flat.dtype)) if need_params else None
        g = grad_out
        for i in reversed(range(L)):
            if i < L - 1:
                a = cache[i + 1]
                g = g * (1.0 - a * a)
            h_in = cache[i]
            W = params[2 * i]
            if need_params:
                grads[2 * i][...] = np.swapaxes(h_in, -1, -2) @ g
                grads[2 * i + 1][...] = np.sum(g, axis=-2, keepdims=True)
            g = g @ np.swapaxes(W, -1, -2)
        x = cache[0]
        if g.ndim > np.ndim(x):
            g = g.sum(axis=tuple(range(g.ndim - np.ndim(x))))
        return grads, g

    def copy(self) -> "MLP":
        clone = object.__new__(MLP)
        clone.sizes = self.sizes
        clone.ensemble = self.ensemble
        clone.shapes = list(self.shapes)
        clone.flat = self.flat.copy()
        clone.params = clone.views(clone.flat)
        return clone

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=self.flat.dtype)
        if flat.shape != self.flat.shape:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        self.flat[...] = flat


def flatten(grads: list[np.ndarray]) -> np.ndarray:
    """Gradient list from ``MLP.backward`` as one vector (no copy when possible)."""
    base = grads[0].base
    if base is not None and all(g.base is base for g in grads) and base.ndim == 1 \
            and base.size == sum(g.size for g in grads):
        return base
    return np.concatenate([g.ravel() for g in grads])


def soft_update(source: list[np.ndarray], target: list[np.ndarray], tau: float) -> None:
    """In place: target <- (1 - tau) * target + tau * source."""
    if len(source) != len(target):
        raise ValueError("parameter lists differ in length")
    for s, t in zip(source, target):
        if s.shape != t.shape:
            raise ValueError(f"shape mismatch {s.shape} vs {t.shape}")
        t *= 1.0 - tau
        t += tau * s


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
