"""History-conditioned softmax policy with fully analytic gradients.

The policy scores the four actions from a fixed-size feature vector
built out of the episode instruction and a sliding window over the last
K (observation, previous-action) pairs:

    features = [ mean of instruction token embeddings        (d_e)
               | patch_0 @ obs_proj, act_embed[prev_act_0]   (d_o + d_a)
               | ...   one block per window slot, oldest first
               | patch_{K-1} @ obs_proj, act_embed[prev_act_{K-1}] ]

    logits = tanh(features @ W1 + b1) @ W2 + b2

Slots before the episode start are padded with a zero patch and the
dedicated "no previous action" embedding row.  All math is float64 and
every gradient is hand-derived, so finite differences must agree to
near machine precision.

Parameters flatten in declaration order (instr_embed, obs_proj,
act_embed, W1, b1, W2, b2), each block row-major.  Checkpoints store the
named blocks as little-endian float64 with an integrity checksum.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DimensionMismatch, UnknownToken
from .rng import stream
from .world import DEFAULT_MAX_RUN, vocab_size

# Index used in window slots that precede the first action of an episode.
NO_ACTION = 4
N_ACTIONS = 4


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture hyperparameters; vocab follows from max_run."""

    max_run: int = DEFAULT_MAX_RUN
    obs_k: int = 5
    d_e: int = 16
    d_o: int = 16
    d_a: int = 8
    d_h: int = 64
    history_k: int = 8
    temperature: float = 0.4

    @property
    def vocab(self) -> int:
        return vocab_size(self.max_run)

    @property
    def patch_cells(self) -> int:
        return self.obs_k * self.obs_k

    @property
    def feature_dim(self) -> int:
        return self.d_e + self.history_k * (self.d_o + self.d_a)

    def arch_hash(self) -> str:
        """16-hex digest of the architecture (temperature excluded)."""
        text = (
            f"vocab={self.vocab} obs_k={self.obs_k} d_e={self.d_e}"
            f" d_o={self.d_o} d_a={self.d_a} d_h={self.d_h} k={self.history_k}"
        )
        return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


@dataclass
class PolicyParams:
    """Trainable arrays.  Declaration order is the flattening order."""

    cfg: PolicyConfig
    instr_embed: np.ndarray  # [vocab, d_e]
    obs_proj: np.ndarray     # [patch_cells, d_o]
    act_embed: np.ndarray    # [N_ACTIONS + 1, d_a]
    W1: np.ndarray           # [feature_dim, d_h]
    b1: np.ndarray           # [d_h]
    W2: np.ndarray           # [d_h, N_ACTIONS]
    b2: np.ndarray           # [N_ACTIONS]

    def blocks(self):
        return [
            ("instr_embed", self.instr_embed),
            ("obs_proj", self.obs_proj),
            ("act_embed", self.act_embed),
            ("W1", self.W1),
            ("b1", self.b1),
            ("W2", self.W2),
            ("b2", self.b2),
        ]

    @property
    def count(self) -> int:
        return sum(arr.size for _, arr in self.blocks())

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.blocks()])

    def from_flat(self, theta: np.ndarray) -> "PolicyParams":
        if theta.shape != (self.count,):
            raise DimensionMismatch(f"flat vector has shape {theta.shape}, want ({self.count},)")
        out = {}
        offset = 0
        for name, arr in self.blocks():
            out[name] = theta[offset : offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return PolicyParams(cfg=self.cfg, **out)

    def copy(self) -> "PolicyParams":
        return PolicyParams(cfg=self.cfg, **{n: a.copy() for n, a in self.blocks()})


def init_params(cfg: PolicyConfig, seed: int) -> PolicyParams:
    """Uniform(-s, s) with s = 1/sqrt(fan_in) per block; biases zero."""
    rng = stream(seed, "init")

    def draw(shape, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    return PolicyParams(
        cfg=cfg,
        instr_embed=draw((cfg.vocab, cfg.d_e), cfg.d_e),
        obs_proj=draw((cfg.patch_cells, cfg.d_o), cfg.patch_cells),
        act_embed=draw((N_ACTIONS + 1, cfg.d_a), cfg.d_a),
        W1=draw((cfg.feature_dim, cfg.d_h), cfg.feature_dim),
        b1=np.zeros(cfg.d_h),
        W2=draw((cfg.d_h, N_ACTIONS), cfg.d_h),
        b2=np.zeros(N_ACTIONS),
    )


@dataclass(frozen=True)
class PolicySnapshot:
    """Frozen copy of policy parameters (arrays are read-only)."""

    params: PolicyParams
    role: str = "snapshot"


def snapshot(params: PolicyParams, role: str = "snapshot") -> PolicySnapshot:
    frozen = params.copy()
    for _, arr in frozen.blocks():
        arr.flags.writeable = False
    return PolicySnapshot(params=frozen, role=role)


@dataclass(frozen=True)
class HistoryWindow:
    """Policy conditioning context at one decision point.

    patches are flattened egocentric observations, oldest slot first;
    prev_actions[i] is the action taken just before patches[i] was seen
    (NO_ACTION for padding and for the first step).
    """

    instruction: tuple
    patches: tuple
    prev_actions: tuple


def featurize(params: PolicyParams, window: HistoryWindow) -> np.ndarray:
    cfg = params.cfg
    if len(window.patches) != cfg.history_k or len(window.prev_actions) != cfg.history_k:
        raise DimensionMismatch(
            f"window has {len(window.patches)} slots, want {cfg.history_k}"
        )
    for t in window.instruction:
        if not 0 <= t < cfg.vocab:
            raise UnknownToken(f"instruction token {t} outside vocabulary {cfg.vocab}")
    parts = [params.instr_embed[list(window.instruction)].mean(axis=0)]
    for patch, act in zip(window.patches, window.prev_actions):
        if patch.shape != (cfg.patch_cells,):
            raise DimensionMismatch(f"patch shape {patch.shape}, want ({cfg.patch_cells},)")
        if not 0 <= act <= NO_ACTION:
            raise DimensionMismatch(f"previous-action index out of range: {act}")
        parts.append(patch @ params.obs_proj)
        parts.append(params.act_embed[act])
    return np.concatenate(parts)


def forward(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    """Two-layer tanh MLP from features to the four action logits."""
    if features.shape != (params.cfg.feature_dim,):
        raise DimensionMismatch(
            f"features shape {features.shape}, want ({params.cfg.feature_dim},)"
        )
    hidden = np.tanh(features @ params.W1 + params.b1)
    return hidden @ params.W2 + params.b2


@dataclass
class _Cache:
    features: np.ndarray
    hidden: np.ndarray


def forward_cached(params: PolicyParams, window: HistoryWindow):
    features = featurize(params, window)
    hidden = np.tanh(features @ params.W1 + params.b1)
    return hidden @ params.W2 + params.b2, _Cache(features, hidden)


@dataclass(frozen=True)
class ActionDistribution:
    logits: np.ndarray
    temperature: float
    probs: np.ndarray


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def action_dist(logits: np.ndarray, temperature: float) -> ActionDistribution:
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return ActionDistribution(
        logits=logits, temperature=temperature, probs=softmax(logits / temperature)
    )


def greedy_action(logits: np.ndarray) -> int:
    """Argmax over raw logits; ties resolve to the lowest action index."""
    return int(np.argmax(logits))


class GradAccumulator:
    """Parameter-shaped gradient buffers with shared backprop plumbing."""

    def __init__(self, params: PolicyParams):
        self.params = params
        self.buf = {name: np.zeros_like(arr) for name, arr in params.blocks()}

    def add_step(self, cache: _Cache, window: HistoryWindow, dlogits: np.ndarray):
        """Accumulate d(objective)/d(params) given d(objective)/d(logits)."""
        p = self.params
        cfg = p.cfg
        self.buf["W2"] += np.outer(cache.hidden, dlogits)
        self.buf["b2"] += dlogits
        dhidden = p.W2 @ dlogits
        dpre = dhidden * (1.0 - cache.hidden ** 2)
        self.buf["W1"] += np.outer(cache.features, dpre)
        self.buf["b1"] += dpre
        dfeat = p.W1 @ dpre
        dinstr = dfeat[: cfg.d_e] / len(window.instruction)
        for t in window.instruction:
            self.buf["instr_embed"][t] += dinstr
        offset = cfg.d_e
        for patch, act in zip(window.patches, window.prev_actions):
            self.buf["obs_proj"] += np.outer(patch, dfeat[offset : offset + cfg.d_o])
            offset += cfg.d_o
            self.buf["act_embed"][act] += dfeat[offset : offset + cfg.d_a]
            offset += cfg.d_a

    def flat(self) -> np.ndarray:
        return np.concatenate([self.buf[n].ravel() for n, _ in self.params.blocks()])


def logprob_and_grad(
    params: PolicyParams, window: HistoryWindow, action: int, temperature: float
):
    """log pi(action | window) and its gradient, flattened canonically."""
    logits, cache = forward_cached(params, window)
    probs = softmax(logits / temperature)
    dlogits = -probs / temperature
    dlogits[action] += 1.0 / temperature
    acc = GradAccumulator(params)
    acc.add_step(cache, window, dlogits)
    return float(np.log(probs[action])), acc.flat()


PROB_FLOOR = 1e-12


def kl_divergence(p: ActionDistribution, q: ActionDistribution) -> float:
    """KL(p || q) with q floored at PROB_FLOOR for stability."""
    qp = np.maximum(q.probs, PROB_FLOOR)
    mask = p.probs > 0.0
    return float(np.sum(p.probs[mask] * (np.log(p.probs[mask]) - np.log(qp[mask]))))


# --------------------------------------------------------------------------
# Checkpoint format "budnav-ckpt v1": text header, named little-endian
# float64 blocks, trailing checksum over the raw block bytes.
# --------------------------------------------------------------------------

CKPT_MAGIC = b"budnav-ckpt v1"


def save_checkpoint(path, params: PolicyParams) -> None:
    blocks = params.blocks()
    digest = hashlib.blake2b(digest_size=16)
    chunks = [CKPT_MAGIC + b"\n"]
    chunks.append(f"config {params.cfg.arch_hash()}\n".encode())
    chunks.append(f"params {params.count}\n".encode())
    chunks.append(f"blocks {len(blocks)}\n".encode())
    for name, arr in blocks:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        shape = "x".join(str(d) for d in arr.shape)
        chunks.append(f"block {name} {shape} {len(raw)}\n".encode())
        chunks.append(raw)
        chunks.append(b"\n")
        digest.update(raw)
    chunks.append(f"checksum {digest.hexdigest()}\n".encode())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _read_line(f) -> str:
    raw = f.readline()
    if not raw.endswith(b"\n"):
        raise CheckpointError("truncated checkpoint")
    return raw[:-1].decode("utf-8", errors="replace")


def load_checkpoint(path, temperature: float = 0.4) -> PolicyParams:
    """Parse and verify a checkpoint; architecture is recovered from shapes."""
    with open(path, "rb") as f:
        if _read_line(f) != CKPT_MAGIC.decode():
            raise CheckpointError(f"bad checkpoint magic in {path}")
        header = {}
        for _ in range(3):
            key, _, value = _read_line(f).partition(" ")
            header[key] = value
        if set(header) != {"config", "params", "blocks"}:
            raise CheckpointError(f"malformed checkpoint header in {path}")
        arrays = {}
        digest = hashlib.blake2b(digest_size=16)
        for _ in range(int(header["blocks"])):
            line = _read_line(f)
            try:
                _, name, shape_s, nbytes_s = line.split(" ")
            except ValueError as e:
                raise CheckpointError(f"malformed block header: {line!r}") from e
            raw = f.read(int(nbytes_s))
            if len(raw) != int(nbytes_s) or f.read(1) != b"\n":
                raise CheckpointError(f"truncated block {name}")
            digest.update(raw)
            shape = tuple(int(d) for d in shape_s.split("x"))
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        checksum_line = _read_line(f)
    if checksum_line != f"checksum {digest.hexdigest()}":
        raise CheckpointError(f"checksum mismatch in {path}")

    expected = {"instr_embed", "obs_proj", "act_embed", "W1", "b1", "W2", "b2"}
    if set(arrays) != expected:
        raise CheckpointError(f"unexpected block set: {sorted(arrays)}")
    vocab, d_e = arrays["instr_embed"].shape
    patch_cells, d_o = arrays["obs_proj"].shape
    _, d_a = arrays["act_embed"].shape
    feature_dim, d_h = arrays["W1"].shape
    obs_k = int(round(math.sqrt(patch_cells)))
    slot = d_o + d_a
    cfg = PolicyConfig(
        max_run=vocab - 3,
        obs_k=obs_k,
        d_e=d_e,
        d_o=d_o,
        d_a=d_a,
        d_h=d_h,
        history_k=(feature_dim - d_e) // slot,
        temperature=temperature,
    )
    params = PolicyParams(cfg=cfg, **arrays)
    if obs_k * obs_k != patch_cells or cfg.feature_dim != feature_dim:
        raise CheckpointError("block shapes are mutually inconsistent")
    if cfg.arch_hash() != header["config"]:
        raise CheckpointError(f"config hash mismatch in {path}")
    if params.count != int(header["params"]):
        raise CheckpointError(f"parameter count mismatch in {path}")
    return params
