"""Aggregator network and task heads.

A bidirectional recurrent cell (LSTM by default, Elman optional) consumes a
sequence of per-window embeddings; the final hidden states of both
directions are concatenated and projected to the context vector z. Five
affine heads read z: case classifier, time-to-event regressor, per-bin
hazard logits, identity adversary (behind a gradient reversal), and one
student head per lab.

Parameters live in a flat name->array map so they can be flattened into
per-task gradient vectors and checkpointed key by key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Tape, VarHandle

LAB_NAMES = ("lac", "na", "trop", "k")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    hidden_dim: int = 32          # context width D
    horizon_bins: int = 24        # L
    bin_width: float = 1.0        # hours per bin
    pvector_dim: int = 128
    cell_kind: str = "lstm"       # "lstm" | "elman"
    hazard_kind: str = "time_varying"  # "time_varying" | "constant_effect"
    grl_alpha: float = 0.5
    windows_per_hour: int = 12

    def __post_init__(self) -> None:
        for name in ("embed_dim", "hidden_dim", "horizon_bins", "pvector_dim", "windows_per_hour"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be >= 1")
        if self.bin_width <= 0:
            raise ValueError("ModelConfig.bin_width must be positive")
        if self.grl_alpha < 0:
            raise ValueError("ModelConfig.grl_alpha must be >= 0")
        if self.cell_kind not in ("lstm", "elman"):
            raise ValueError(f"unknown cell_kind {self.cell_kind!r}")
        if self.hazard_kind not in ("time_varying", "constant_effect"):
            raise ValueError(f"unknown hazard_kind {self.hazard_kind!r}")

    @property
    def horizon_hours(self) -> float:
        return self.horizon_bins * self.bin_width


def _init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    rng = np.random.default_rng(seed)
    e, d = cfg.embed_dim, cfg.hidden_dim
    h = d  # per-direction hidden width
    params: dict[str, np.ndarray] = {}
    gates = ("i", "f", "g", "o") if cfg.cell_kind == "lstm" else ("h",)
    for direction in ("fwd", "bwd"):
        for gate in gates:
            params[f"agg.{direction}.W{gate}"] = _init(rng, (h, e + h), e + h)
            params[f"agg.{direction}.b{gate}"] = _init(rng, (h,), e + h)
    params["proj.W"] = _init(rng, (d, 2 * h), 2 * h)
    params["proj.b"] = _init(rng, (d,), 2 * h)

    params["head.cls.W"] = _init(rng, (1, d), d)
    params["head.cls.b"] = _init(rng, (1,), d)
    params["head.tte.W"] = _init(rng, (1, d), d)
    params["head.tte.b"] = _init(rng, (1,), d)
    if cfg.hazard_kind == "time_varying":
        # stored bin-major: row l is the weight vector for bin l
        params["head.hazard.W"] = _init(rng, (cfg.horizon_bins, d), d)
    else:
        params["head.hazard.W"] = _init(rng, (1, d), d)
    params["head.hazard.b"] = _init(rng, (cfg.horizon_bins,), d)
    params["head.adv.W"] = _init(rng, (cfg.pvector_dim, d), d)
    params["head.adv.b"] = _init(rng, (cfg.pvector_dim,), d)
    for lab in LAB_NAMES:
        params[f"head.lab.{lab}.W"] = _init(rng, (1, d), d)
        params[f"head.lab.{lab}.b"] = _init(rng, (1,), d)
    return params


def shared_param_names(params: dict[str, np.ndarray]) -> list[str]:
    """Aggregator (shared) parameter keys in deterministic order."""
    return sorted(k for k in params if k.startswith(("agg.", "proj.")))


def head_param_names(params: dict[str, np.ndarray]) -> list[str]:
    return sorted(k for k in params if k.startswith("head."))


def bind_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, VarHandle]:
    """Insert every parameter as a leaf on `tape`."""
    return {k: tape.leaf(v) for k, v in sorted(params.items())}


def _cell_step(tape: Tape, bound, direction: str, kind: str, x, h, c):
    xh = tape.concat((x, h))
    if kind == "elman":
        nh = tape.tanh(tape.affine(bound[f"agg.{direction}.Wh"], xh, bound[f"agg.{direction}.bh"]))
        return nh, c
    i = tape.sigmoid(tape.affine(bound[f"agg.{direction}.Wi"], xh, bound[f"agg.{direction}.bi"]))
    f = tape.sigmoid(tape.affine(bound[f"agg.{direction}.Wf"], xh, bound[f"agg.{direction}.bf"]))
    g = tape.tanh(tape.affine(bound[f"agg.{direction}.Wg"], xh, bound[f"agg.{direction}.bg"]))
    o = tape.sigmoid(tape.affine(bound[f"agg.{direction}.Wo"], xh, bound[f"agg.{direction}.bo"]))
    nc = tape.add(tape.mul(f, c), tape.mul(i, g))
    nh = tape.mul(o, tape.tanh(nc))
    return nh, nc


def forward_context(tape: Tape, bound: dict[str, VarHandle], cfg: ModelConfig, sequence: np.ndarray) -> VarHandle:
    """Run the bidirectional aggregator over one batch of sequences.

    `sequence` is (batch, steps, embed_dim) or (steps, embed_dim); returns
    the context z as a (batch, D) (or (D,)) handle recorded on `tape`.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] == 0:
        raise ValueError("forward_context: sequence must be non-empty (batch, steps, embed)")
    if not np.isfinite(seq).all():
        raise ValueError("forward_context: non-finite embeddings")
    b, steps, e = seq.shape
    if e != cfg.embed_dim:
        raise ValueError(f"forward_context: embed dim {e} != config {cfg.embed_dim}")

    finals = {}
    for direction, order in (("fwd", range(steps)), ("bwd", range(steps - 1, -1, -1))):
        h = tape.leaf(np.zeros((b, cfg.hidden_dim)))
        c = tape.leaf(np.zeros((b, cfg.hidden_dim)))
        for t in order:
            x = tape.leaf(seq[:, t, :])
            h, c = _cell_step(tape, bound, direction, cfg.cell_kind, x, h, c)
        finals[direction] = h
    z = tape.affine(bound["proj.W"], tape.concat((finals["fwd"], finals["bwd"])), bound["proj.b"])
    if single:
        z = tape.reshape(z, (cfg.hidden_dim,))
    return z


def grl_wrap(tape: Tape, z: VarHandle, alpha: float) -> VarHandle:
    """Gradient reversal: identity forward, backward scaled by -alpha."""
    if alpha < 0:
        raise ValueError("grl_wrap: alpha must be >= 0")
    return tape.grad_scale(z, -alpha)


@dataclass
class HeadOutputs:
    cls_logit: VarHandle      # (B, 1)
    tte: VarHandle            # (B, 1), normalized hours/horizon
    hazard_logits: VarHandle  # (B, L)
    hazard: VarHandle         # (B, L), sigmoid of logits
    pvec: VarHandle           # (B, d_p), behind the GRL
    labs: dict[str, VarHandle] = field(default_factory=dict)  # each (B, 1)


def forward_heads(tape: Tape, bound: dict[str, VarHandle], cfg: ModelConfig, z: VarHandle) -> HeadOutputs:
    """All task heads on a context batch z of shape (B, D)."""
    cls_logit = tape.affine(bound["head.cls.W"], z, bound["head.cls.b"])
    tte = tape.affine(bound["head.tte.W"], z, bound["head.tte.b"])
    if cfg.hazard_kind == "time_varying":
        eta = tape.affine(bound["head.hazard.W"], z, bound["head.hazard.b"])
    else:
        shared = tape.affine(bound["head.hazard.W"], z, tape.leaf(np.zeros(1)))  # (B, 1)
        eta = tape.add(tape.concat([shared] * cfg.horizon_bins), bound["head.hazard.b"])
    hazard = tape.sigmoid(eta)
    z_rev = grl_wrap(tape, z, cfg.grl_alpha)
    pvec = tape.affine(bound["head.adv.W"], z_rev, bound["head.adv.b"])
    labs = {
        lab: tape.affine(bound[f"head.lab.{lab}.W"], z, bound[f"head.lab.{lab}.b"])
        for lab in LAB_NAMES
    }
    return HeadOutputs(cls_logit, tte, eta, hazard, pvec, labs)


def survival_curve(hazards: np.ndarray) -> dict[str, np.ndarray]:
    """Discrete-survival readout: S_l = prod_{j<=l}(1-h_j), risk_at = 1-S."""
    h = np.asarray(hazards, dtype=np.float64)
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValueError("survival_curve: hazards must lie in (0,1)")
    s = np.cumprod(1.0 - h, axis=-1)
    return {"S": s, "risk_at": 1.0 - s}


# -- checkpointing -----------------------------------------------------------
# Layout: numpy .npz with one float64 array per parameter key, plus
# "__version__" (int array) and "__config__" (JSON string array).


def save_params(path, params: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    import json

    payload = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    payload["__version__"] = np.asarray([CHECKPOINT_VERSION])
    payload["__config__"] = np.asarray([json.dumps(cfg.__dict__, sort_keys=True)])
    np.savez(path, **payload)


def load_params(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    import json

    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} unsupported")
        cfg = ModelConfig(**json.loads(str(data["__config__"][0])))
        params = {k: data[k].copy() for k in data.files if not k.startswith("__")}
    return params, cfg


def flatten(params: dict[str, np.ndarray], names: Iterable[str]) -> np.ndarray:
    return np.concatenate([np.asarray(params[k]).ravel() for k in names])


def unflatten(vec: np.ndarray, params: dict[str, np.ndarray], names: Iterable[str]) -> dict[str, np.ndarray]:
    out = {}
    start = 0
    for k in names:
        n = params[k].size
        out[k] = vec[start : start + n].reshape(params[k].shape)
        start += n
    if start != vec.size:
        raise ValueError("unflatten: size mismatch")
    return out
