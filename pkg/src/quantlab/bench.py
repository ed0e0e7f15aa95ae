"""Toy autoencoder harness: train MLP autoencoders with FSQ / VQ / pass-through
bottlenecks on synthetic patches, fit token models on the resulting code
grids, and sweep codebook sizes to reproduce the quantizer trade-off trends.

Everything is deterministic under a fixed seed: dataset, parameter init, and
batch order all derive from the config seed.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis, codec, fsq, vq
from .autodiff import Tensor, adam_step, backward, init_adam_state, zero_grads
from .datasets import dataset_grids, make_dataset
from .tokenmodel import NeighborhoodModel, context_ids, fit_order0


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the trace collected so far."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class AutoencoderConfig:
    bottleneck: str = "fsq"                    # fsq | vq | none
    levels: tuple[int, ...] | None = None      # FSQ level counts
    vq_size: int | None = None                 # VQ codebook size
    vq_dim: int = 8
    vq_mode: str = "gradient"                  # gradient | ema
    ema_decay: float = 0.99
    loss_weights: vq.VqLossWeights = field(default_factory=vq.VqLossWeights)
    splitting: bool = False
    split_interval: int = 500
    latent_dim: int = 8                        # used by the pass-through bottleneck
    input_dim: int = 64                        # flattened 8x8 patches
    hidden: int = 128
    lr: float = 3e-4
    batch_size: int = 256
    steps: int = 20000
    seed: int = 0
    dataset: str = "synthetic-textures"
    dataset_kwargs: dict = field(default_factory=dict)
    n_train: int = 20000
    n_eval: int = 10000
    eval_every: int = 1000

    def __post_init__(self):
        if self.bottleneck not in ("fsq", "vq", "none"):
            raise ValueError(f"unknown bottleneck {self.bottleneck!r}")
        if self.bottleneck == "fsq" and not self.levels:
            raise ValueError("fsq bottleneck needs levels")
        if self.bottleneck == "vq" and not self.vq_size:
            raise ValueError("vq bottleneck needs vq_size")
        if self.vq_mode not in ("gradient", "ema"):
            raise ValueError(f"unknown vq_mode {self.vq_mode!r}")

    @property
    def bottleneck_dim(self) -> int:
        if self.bottleneck == "fsq":
            return len(self.levels)
        if self.bottleneck == "vq":
            return self.vq_dim
        return self.latent_dim

    @property
    def codebook_size(self) -> int | None:
        if self.bottleneck == "fsq":
            return fsq.LevelsSpec(self.levels).codebook_size
        if self.bottleneck == "vq":
            return self.vq_size
        return None


@dataclass
class RunTrace:
    records: list = field(default_factory=list)  # (step, mse, usage, cost)
    wall_time_s: float = 0.0

    def append(self, step: int, mse: float, usage: float, cost: float) -> None:
        if self.records and step <= self.records[-1][0]:
            raise ValueError("trace steps must increase monotonically")
        self.records.append((int(step), float(mse), float(usage), float(cost)))

    def to_csv(self) -> str:
        lines = ["step,mse,usage,cost"]
        for step, mse, usage, cost in self.records:
            lines.append(f"{step},{mse!r},{usage!r},{cost!r}")
        return "\n".join(lines) + "\n"

    @property
    def final(self):
        return self.records[-1] if self.records else None


def _dense(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
    w = Tensor(rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True)
    return w, b


class Autoencoder:
    """3-layer MLP encoder and decoder around a pluggable bottleneck."""

    def __init__(self, cfg: AutoencoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.bottleneck_dim
        h = cfg.hidden
        self.enc = [_dense(rng, cfg.input_dim, h), _dense(rng, h, h), _dense(rng, h, d)]
        self.dec = [_dense(rng, d, h), _dense(rng, h, h), _dense(rng, h, cfg.input_dim)]
        self.levels_spec = fsq.LevelsSpec(cfg.levels) if cfg.bottleneck == "fsq" else None
        self.codebook = (vq.VqCodebook.initialize(cfg.vq_size, cfg.vq_dim, rng)
                         if cfg.bottleneck == "vq" else None)

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in self.enc + self.dec:
            params.extend((w, b))
        return params

    def parameter_breakdown(self) -> list[tuple[str, int]]:
        names = ["enc.l1", "enc.l2", "enc.l3", "dec.l1", "dec.l2", "dec.l3"]
        out = []
        for name, (w, b) in zip(names, self.enc + self.dec):
            out.append((name, w.size + b.size))
        if self.codebook is not None:
            out.append(("bottleneck.codebook", self.codebook.parameter_count()))
        else:
            out.append(("bottleneck", 0))
        return out

    def _mlp(self, layers, x: Tensor) -> Tensor:
        for i, (w, b) in enumerate(layers):
            x = x @ w + b
            if i < len(layers) - 1:
                x = x.relu()
        return x

    def encode(self, x: Tensor) -> Tensor:
        return self._mlp(self.enc, x)

    def decode(self, z: Tensor) -> Tensor:
        return self._mlp(self.dec, z)

    # numpy fast paths for evaluation
    def encode_np(self, x: np.ndarray) -> np.ndarray:
        for i, (w, b) in enumerate(self.enc):
            x = x @ w.data + b.data
            if i < len(self.enc) - 1:
                x = np.maximum(x, 0.0)
        return x

    def decode_np(self, z: np.ndarray) -> np.ndarray:
        for i, (w, b) in enumerate(self.dec):
            z = z @ w.data + b.data
            if i < len(self.dec) - 1:
                z = np.maximum(z, 0.0)
        return z

    def tokens_np(self, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """Code indices for samples, chunked to bound the distance matrices."""
        out = []
        for lo in range(0, x.shape[0], chunk):
            z = self.encode_np(x[lo:lo + chunk])
            if self.cfg.bottleneck == "fsq":
                out.append(fsq.codes_to_indexes(fsq.quantize(z, self.levels_spec),
                                                self.levels_spec))
            elif self.cfg.bottleneck == "vq":
                out.append(vq.nearest_codes(z, self.codebook.vectors.data))
            else:
                out.append(np.zeros(z.shape[0], dtype=np.uint32))
        return np.concatenate(out)

    def reconstruct_np(self, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
        out = []
        for lo in range(0, x.shape[0], chunk):
            z = self.encode_np(x[lo:lo + chunk])
            if self.cfg.bottleneck == "fsq":
                zq = fsq.quantize(z, self.levels_spec)
            elif self.cfg.bottleneck == "vq":
                zq, _ = vq.vq_quantize(z, self.codebook)
            else:
                zq = z
            out.append(self.decode_np(zq))
        return np.concatenate(out)


def _entropy_bits(tokens: np.ndarray, codebook_size: int) -> float:
    """Empirical order-0 entropy in bits/token; the trace's cost column."""
    counts = np.bincount(tokens, minlength=codebook_size).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def data_split(cfg: AutoencoderConfig, n_eval: int):
    """Training set plus held-out samples from one generation stream.

    A single stream keeps distribution parameters (e.g. mixture means) shared
    between the splits; only the draws differ.
    """
    full = make_dataset(cfg.dataset, cfg.n_train + n_eval, cfg.seed,
                        **cfg.dataset_kwargs)
    return full[:cfg.n_train], full[cfg.n_train:]


def train_autoencoder(cfg: AutoencoderConfig):
    """Train per config; returns (model, trace).  Raises TrainingDiverged with
    the partial trace if the loss goes non-finite."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    train, eval_set = data_split(cfg, cfg.n_eval)

    model = Autoencoder(cfg, rng)
    params = model.parameters()
    if cfg.bottleneck == "vq" and cfg.vq_mode == "gradient":
        params = params + [model.codebook.vectors]
    state = init_adam_state(params)
    trace = RunTrace()

    def evaluate(step: int) -> None:
        recon = model.reconstruct_np(eval_set)
        mse = float(np.mean((recon - eval_set) ** 2))
        size = cfg.codebook_size
        if size is None:
            usage, cost = 0.0, 0.0
        else:
            tokens = model.tokens_np(eval_set)
            usage = analysis.codebook_usage(tokens, size).usage_fraction
            cost = _entropy_bits(tokens, size)
        trace.append(step, mse, usage, cost)

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, cfg.n_train, size=cfg.batch_size)
        x = Tensor(train[idx])
        # divergence shows up as a non-finite loss below, not as warnings
        with np.errstate(all="ignore"):
            z = model.encode(x)
            aux = None
            if cfg.bottleneck == "fsq":
                zq = fsq.quantize(z, model.levels_spec)
            elif cfg.bottleneck == "vq":
                cb = model.codebook
                zq, assign = vq.vq_quantize(z, cb)
                weights = cfg.loss_weights
                if cfg.vq_mode == "ema":
                    weights = replace(weights, codebook_weight=0.0)
                aux = vq.vq_losses(z, zq, assign, cb, weights)
                cb.record_usage(assign)
            else:
                zq = z
            recon = model.decode(zq)
            diff = recon - x
            loss = (diff * diff).mean()
            if aux is not None:
                loss = loss + aux
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            trace.wall_time_s = time.perf_counter() - t0
            raise TrainingDiverged(f"non-finite loss at step {step}", trace)

        zero_grads(params)
        with np.errstate(all="ignore"):
            backward(loss)
            adam_step(params, [p.grad for p in params], state, cfg.lr)

        if cfg.bottleneck == "vq":
            if cfg.vq_mode == "ema":
                vq.ema_update(model.codebook, z.data, assign, cfg.ema_decay)
            if cfg.splitting and step % cfg.split_interval == 0:
                if np.any(model.codebook.usage_counts > 0):
                    vq.split_codebook(model.codebook,
                                      rng=np.random.default_rng(cfg.seed * 1000 + step))
                model.codebook.reset_usage()

        if step % cfg.eval_every == 0 or step == cfg.steps:
            evaluate(step)

    trace.wall_time_s = time.perf_counter() - t0
    return model, trace


# ----------------------------------------------------------------------
# token models over encoded grids


@dataclass
class TokenModelConfig:
    kind: str = "order0"              # order0 | neighborhood
    steps: int = 300
    batch_grids: int = 16
    lr: float = 0.01
    embed_dim: int = 8
    hidden: int = 64
    laplace: float = 1.0
    seed: int = 0


def train_token_model(grids: np.ndarray, cfg: TokenModelConfig, codebook_size: int):
    """Fit a token model on (n, H, W) grids by masked cross-entropy.

    The order-0 model reduces to smoothed marginal frequencies.  The
    neighborhood MLP starts from the order-0 solution (bias init) and is
    trained on masked positions with ratios drawn from the cosine schedule's
    lower-bounded distribution.
    """
    grids = np.asarray(grids)
    if grids.ndim != 3:
        raise ValueError(f"grids must be (n, H, W), got {grids.shape}")
    marginal = fit_order0(grids, codebook_size, cfg.laplace)
    if cfg.kind == "order0":
        return marginal
    if cfg.kind != "neighborhood":
        raise ValueError(f"unknown token model kind {cfg.kind!r}")

    rng = np.random.default_rng(cfg.seed)
    model = NeighborhoodModel(codebook_size, cfg.embed_dim, cfg.hidden, rng=rng)
    model.init_bias_from_marginal(marginal.probs)
    params = model.parameters()
    state = init_adam_state(params)
    n, h, w = grids.shape
    s = h * w
    for _ in range(cfg.steps):
        picks = rng.integers(0, n, size=min(cfg.batch_grids, n))
        ctx_rows, targets = [], []
        for gi in picks:
            grid = grids[gi].astype(np.int64)
            r = codec.sample_masking_ratio(rng)
            n_masked = max(1, codec.cosine_mask_count(r, s))
            pos = rng.permutation(s)[:n_masked]
            masked = grid.reshape(-1).copy()
            masked[pos] = -1
            ctx = context_ids(masked.reshape(h, w), codebook_size)
            ctx_rows.append(ctx[pos])
            targets.append(grid.reshape(-1)[pos])
        ctx_all = np.concatenate(ctx_rows)
        target_all = np.concatenate(targets)
        logits = model.logits_for_contexts(ctx_all)
        # stable log-softmax cross-entropy
        shift = Tensor(logits.data.max(axis=1, keepdims=True))
        shifted = logits - shift
        lse = shifted.exp().sum(axis=1, keepdims=True).log()
        onehot = np.zeros((target_all.size, codebook_size))
        onehot[np.arange(target_all.size), target_all] = 1.0
        loss = -((shifted - lse) * Tensor(onehot)).sum(axis=1).mean()
        zero_grads(params)
        backward(loss)
        adam_step(params, [p.grad for p in params], state, cfg.lr)
    return model


def encode_grids(model: Autoencoder, patch_grids: np.ndarray) -> np.ndarray:
    """Token grids (n, H, W) from patch fields (n, H*W, patch_dim)."""
    n, s, dim = patch_grids.shape
    tokens = model.tokens_np(patch_grids.reshape(n * s, dim))
    side = int(np.sqrt(s))
    return tokens.reshape(n, side, s // side).astype(np.int64)


def mean_compression_cost(token_model, grids: np.ndarray, n_groups: int = 8) -> float:
    """Mean codec cost in bits per token over (n, H, W) grids."""
    n, h, w = grids.shape
    sched = codec.deterministic_schedule(h, w, min(n_groups, h * w))
    costs = [codec.compression_cost(codec.TokenGrid(h, w, g.reshape(-1)), token_model, sched)
             for g in grids]
    return float(np.mean(costs) / (h * w))


# ----------------------------------------------------------------------
# sweep


@dataclass
class SweepRunResult:
    quantizer: str
    codebook_size: int
    seed: int
    final_mse: float
    usage: float
    cost_bits_per_token: float
    total_params: int
    trace: RunTrace


def _matched_config(quantizer: str, size: int, seed: int, base: AutoencoderConfig
                    ) -> AutoencoderConfig:
    if quantizer == "fsq":
        levels = fsq.recommend_levels(size).levels
        cfg = replace(base, bottleneck="fsq", levels=levels, vq_size=None, seed=seed)
        actual = cfg.codebook_size
        if abs(actual - size) / size > 0.10:
            raise ValueError(f"levels {levels} give {actual}, not within 10% of {size}")
        return cfg
    if quantizer == "vq":
        return replace(base, bottleneck="vq", levels=None, vq_size=size, seed=seed)
    raise ValueError(f"unknown quantizer {quantizer!r}")


def run_single(quantizer: str, size: int, seed: int, base: AutoencoderConfig,
               usage_eval_min: int = 10_000, cost_grids: int = 24) -> SweepRunResult:
    """One sweep cell: train, then measure final MSE, usage, and codec cost."""
    cfg = _matched_config(quantizer, size, seed, base)
    # Coverage statistics cap measured usage when the eval set is small
    # relative to |C|: 10k uniform draws hit only ~91% of 4096 codes.  Usage
    # eval therefore scales with the codebook (48x, still far below the 50k
    # images x 256 tokens a validation-set census uses at this |C|).
    n_usage = max(usage_eval_min, 48 * size)
    model, trace = train_autoencoder(cfg)

    _, eval_set = data_split(cfg, n_usage)
    tokens = model.tokens_np(eval_set)
    usage = analysis.codebook_usage(tokens, cfg.codebook_size).usage_fraction
    recon = model.reconstruct_np(eval_set[:usage_eval_min])
    mse = float(np.mean((recon - eval_set[:usage_eval_min]) ** 2))

    fields = dataset_grids(cfg.dataset, cost_grids, 4, 4, cfg.seed + 31_337)
    token_grids = encode_grids(model, fields)
    order0 = train_token_model(token_grids, TokenModelConfig(kind="order0"),
                               cfg.codebook_size)
    cost = mean_compression_cost(order0, token_grids)

    total, _ = analysis.parameter_count(model)
    return SweepRunResult(quantizer, size, seed, mse, usage, cost, total, trace)


def _run_cell(args) -> SweepRunResult:
    return run_single(*args)


def sweep(sizes, quantizers, seeds, base: AutoencoderConfig | None = None,
          workers: int | None = None) -> list[SweepRunResult]:
    """Cross product of sizes x quantizers x seeds; deterministic per cell.

    ``workers`` defaults to QUANTLAB_THREADS or the CPU count; cells are
    independent so the pool changes wall time only.
    """
    base = base or AutoencoderConfig(levels=(8, 5, 5, 5))
    cells = [(q, int(s), int(seed), base)
             for s in sizes for q in quantizers for seed in seeds]
    if workers is None:
        workers = int(os.environ.get("QUANTLAB_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, len(cells)))
    if workers == 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, cells))
