"""Desk-scale predictive models over token grids.

Each model exposes ``codebook_size`` and ``predict_logits(grid2d, cond=None)``
returning (H, W, |C|) logits, where ``grid2d`` holds revealed token ids and -1
at masked positions.  Predictions never depend on a position's own token, so
the codec can query all positions at once.

Three models: uniform (for calibration), order-0 learned frequencies, and a
small MLP over the 3x3 revealed neighborhood with masked cells embedded as a
dedicated symbol.  A transformer would slot in behind the same interface.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor

MASKED = -1


class UniformModel:
    """Assigns every symbol equal probability everywhere."""

    def __init__(self, codebook_size: int):
        if codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        self.codebook_size = codebook_size

    def predict_logits(self, grid2d: np.ndarray, cond=None) -> np.ndarray:
        h, w = grid2d.shape
        return np.zeros((h, w, self.codebook_size))

    def to_json_dict(self) -> dict:
        return {"kind": "uniform", "codebook_size": self.codebook_size}


class Order0Model:
    """Context-free model: fixed marginal distribution over symbols.

    Optionally holds per-class tables; ``cond=None`` (the null class) falls
    back to the global marginal, which is what CFG interpolates against.
    """

    def __init__(self, probs: np.ndarray, class_probs: dict | None = None):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs <= 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be a strictly positive 1-D vector")
        self.probs = probs / probs.sum()
        self.codebook_size = probs.size
        self.class_probs = {}
        for label, p in (class_probs or {}).items():
            p = np.asarray(p, dtype=np.float64)
            if p.shape != self.probs.shape or np.any(p <= 0):
                raise ValueError(f"class {label!r} table malformed")
            self.class_probs[int(label)] = p / p.sum()

    def predict_logits(self, grid2d: np.ndarray, cond=None) -> np.ndarray:
        h, w = grid2d.shape
        table = self.class_probs.get(cond, self.probs) if cond is not None else self.probs
        return np.broadcast_to(np.log(table), (h, w, self.codebook_size)).copy()

    def to_json_dict(self) -> dict:
        out = {"kind": "order0", "codebook_size": self.codebook_size,
               "probs": self.probs.tolist()}
        if self.class_probs:
            out["class_probs"] = {str(k): v.tolist() for k, v in self.class_probs.items()}
        return out


def fit_order0(token_arrays, codebook_size: int, laplace: float = 1.0) -> Order0Model:
    """Fit marginal frequencies with Laplace smoothing over any token arrays."""
    counts = np.zeros(codebook_size, dtype=np.float64)
    for arr in token_arrays:
        arr = np.asarray(arr).reshape(-1)
        counts += np.bincount(arr, minlength=codebook_size)[:codebook_size]
    return Order0Model((counts + laplace) / (counts.sum() + laplace * codebook_size))


_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def context_ids(grid2d: np.ndarray, codebook_size: int) -> np.ndarray:
    """(H*W, 9) neighbor ids; masked and out-of-bounds cells become the MASK id.

    The center cell is always blanked so predictions cannot leak a position's
    own token.
    """
    mask_id = codebook_size
    padded = np.pad(grid2d, 1, constant_values=MASKED)
    h, w = grid2d.shape
    planes = []
    for dy, dx in _OFFSETS:
        view = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        if (dy, dx) == (0, 0):
            planes.append(np.full((h, w), mask_id, dtype=np.int64))
        else:
            plane = view.astype(np.int64).copy()
            plane[plane == MASKED] = mask_id
            planes.append(plane)
    return np.stack(planes, axis=-1).reshape(h * w, 9)


class NeighborhoodModel:
    """Two-layer MLP over embedded 3x3 neighborhoods."""

    def __init__(self, codebook_size: int, embed_dim: int = 8, hidden: int = 64,
                 rng: np.random.Generator | None = None, params: dict | None = None):
        self.codebook_size = codebook_size
        self.embed_dim = embed_dim
        self.hidden = hidden
        if params is not None:
            self.embed = Tensor(params["embed"], requires_grad=True)
            self.w1 = Tensor(params["w1"], requires_grad=True)
            self.b1 = Tensor(params["b1"], requires_grad=True)
            self.w2 = Tensor(params["w2"], requires_grad=True)
            self.b2 = Tensor(params["b2"], requires_grad=True)
        else:
            rng = rng or np.random.default_rng(0)
            in_dim = 9 * embed_dim
            self.embed = Tensor(rng.normal(0, 0.1, (codebook_size + 1, embed_dim)),
                                requires_grad=True)
            self.w1 = Tensor(rng.normal(0, np.sqrt(2.0 / in_dim), (in_dim, hidden)),
                             requires_grad=True)
            self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
            # zero output weights: with the bias set to log marginals the
            # fresh model codes exactly like order-0, and training can only
            # move it down from there in-sample
            self.w2 = Tensor(np.zeros((hidden, codebook_size)), requires_grad=True)
            self.b2 = Tensor(np.zeros(codebook_size), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.embed, self.w1, self.b1, self.w2, self.b2]

    def parameter_breakdown(self) -> list[tuple[str, int]]:
        return [(name, p.data.size) for name, p in
                zip(("embed", "w1", "b1", "w2", "b2"), self.parameters())]

    def init_bias_from_marginal(self, probs: np.ndarray) -> None:
        """Start the output bias at log marginals, so the untrained model
        already matches an order-0 coder and training can only improve it."""
        self.b2.data[:] = np.log(np.asarray(probs, dtype=np.float64))

    def logits_for_contexts(self, ctx: np.ndarray) -> Tensor:
        """Differentiable logits for (B, 9) context id rows."""
        e = self.embed.take_rows(ctx).reshape(ctx.shape[0], 9 * self.embed_dim)
        h = (e @ self.w1 + self.b1).relu()
        return h @ self.w2 + self.b2

    def predict_logits(self, grid2d: np.ndarray, cond=None) -> np.ndarray:
        ctx = context_ids(grid2d, self.codebook_size)
        e = self.embed.data[ctx].reshape(ctx.shape[0], 9 * self.embed_dim)
        h = np.maximum(e @ self.w1.data + self.b1.data, 0.0)
        logits = h @ self.w2.data + self.b2.data
        return logits.reshape(grid2d.shape[0], grid2d.shape[1], self.codebook_size)

    def to_json_dict(self) -> dict:
        return {
            "kind": "neighborhood",
            "codebook_size": self.codebook_size,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "embed": self.embed.data.tolist(),
            "w1": self.w1.data.tolist(),
            "b1": self.b1.data.tolist(),
            "w2": self.w2.data.tolist(),
            "b2": self.b2.data.tolist(),
        }


def model_from_json_dict(obj: dict):
    kind = obj.get("kind")
    if kind == "uniform":
        return UniformModel(int(obj["codebook_size"]))
    if kind == "order0":
        class_probs = {int(k): v for k, v in obj.get("class_probs", {}).items()}
        return Order0Model(np.asarray(obj["probs"]), class_probs or None)
    if kind == "neighborhood":
        params = {key: np.asarray(obj[key]) for key in ("embed", "w1", "b1", "w2", "b2")}
        return NeighborhoodModel(int(obj["codebook_size"]), int(obj["embed_dim"]),
                                 int(obj["hidden"]), params=params)
    raise ValueError(f"unknown token model kind {kind!r}")


def dumps_model(model) -> str:
    return json.dumps(model.to_json_dict())


def loads_model(text: str):
    return model_from_json_dict(json.loads(text))
