"""Knowledge encoding: random projection, recursive ridge, classifier growth.

The knowledge-encoding matrix R tracks (X^T X + gamma I)^{-1} over every
sample seen so far and is updated batch-by-batch through the Woodbury
identity, so classifier weights obtained recursively are identical (to
rounding) to the ridge solution computed jointly on all data. Everything here
runs in float64 regardless of upstream precision.

Checkpoint container: magic ``FOROCKPT``, version u16, M u32, c u32,
gamma f64, samples_seen u64, class_ids c*u32, then row-major f64 for R (M*M)
and W (M*c), all little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

CHECKPOINT_MAGIC = b"FOROCKPT"
CHECKPOINT_VERSION = 1

# Woodbury applications are chunked so the inner solve never exceeds this
# many rows; the recursion composes, so results are unchanged.
WOODBURY_CHUNK = 256

_ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}


class InvalidDimsError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class NonPositiveGammaError(ValueError):
    pass


class DuplicateClassError(ValueError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


class CorruptCheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RandomProjection:
    """Frozen random feature map h = phi(x @ w_rp)."""

    w_rp: np.ndarray          # (in_dim, out_dim)
    activation: str
    seed: int

    @property
    def in_dim(self) -> int:
        return self.w_rp.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_rp.shape[1]


@dataclass(frozen=True)
class Kem:
    """Knowledge encoding matrix R = (X^T X + gamma I)^{-1} plus bookkeeping."""

    r: np.ndarray             # (M, M), symmetric positive definite
    gamma: float
    samples_seen: int = 0

    @property
    def dim(self) -> int:
        return self.r.shape[0]


@dataclass(frozen=True)
class Classifier:
    """Linear head with growable class columns."""

    w: np.ndarray             # (M, c)
    class_ids: tuple[int, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)


def nrp_build(in_dim: int, out_dim: int,
              activation: str = "relu", seed: int = 0) -> RandomProjection:
    """i.i.d. standard-normal projection weights, fixed draw order."""
    if in_dim < 1 or out_dim < 1:
        raise InvalidDimsError(f"bad projection dims ({in_dim}, {out_dim})")
    if activation not in _ACTIVATIONS:
        raise InvalidDimsError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((in_dim, out_dim))
    return RandomProjection(w_rp=w, activation=activation, seed=int(seed))


def nrp_project(proj: RandomProjection, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != proj.in_dim:
        raise ShapeMismatchError(
            f"features shape {features.shape} incompatible with "
            f"projection input dim {proj.in_dim}")
    return _ACTIVATIONS[proj.activation](features @ proj.w_rp)


def kem_init(dim: int, gamma: float) -> Kem:
    if dim < 1:
        raise InvalidDimsError(f"KEM dimension must be >= 1, got {dim}")
    if gamma <= 0:
        raise NonPositiveGammaError(f"gamma must be positive, got {gamma}")
    return Kem(r=np.eye(dim) / gamma, gamma=float(gamma))


def _woodbury_step(r: np.ndarray, x: np.ndarray) -> np.ndarray:
    rxt = r @ x.T
    inner = np.eye(x.shape[0]) + x @ rxt
    try:
        factor = cho_factor(inner, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"inner Woodbury solve failed: {exc}") from exc
    r_new = r - rxt @ cho_solve(factor, rxt.T)
    return (r_new + r_new.T) / 2.0


def kem_update(kem: Kem, x: np.ndarray) -> Kem:
    """Absorb a feature batch: R <- R - R X^T (I + X R X^T)^{-1} X R."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != kem.dim:
        raise ShapeMismatchError(
            f"batch shape {x.shape} incompatible with KEM dim {kem.dim}")
    if x.shape[0] == 0:
        return kem
    r = kem.r
    for start in range(0, x.shape[0], WOODBURY_CHUNK):
        r = _woodbury_step(r, x[start:start + WOODBURY_CHUNK])
    return replace(kem, r=r, samples_seen=kem.samples_seen + x.shape[0])


def classifier_init(dim: int) -> Classifier:
    return Classifier(w=np.zeros((dim, 0)), class_ids=())


def classifier_extend(clf: Classifier, new_class_ids) -> Classifier:
    new_ids = tuple(int(c) for c in new_class_ids)
    if len(set(new_ids)) != len(new_ids) or set(new_ids) & set(clf.class_ids):
        raise DuplicateClassError(
            f"new class ids {new_ids} overlap existing {clf.class_ids}")
    if not new_ids:
        return clf
    zeros = np.zeros((clf.w.shape[0], len(new_ids)))
    return Classifier(w=np.hstack([clf.w, zeros]), class_ids=clf.class_ids + new_ids)


def weights_update(clf: Classifier, kem_after: Kem, x: np.ndarray,
                   y: np.ndarray) -> Classifier:
    """W <- W + R_t X^T (Y - X W); the KEM must already include this batch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != kem_after.dim or x.shape[1] != clf.w.shape[0]:
        raise ShapeMismatchError(
            f"feature batch {x.shape} incompatible with dim {kem_after.dim}")
    if y.shape != (x.shape[0], clf.num_classes):
        raise ShapeMismatchError(
            f"label batch {y.shape} != ({x.shape[0]}, {clf.num_classes})")
    if x.shape[0] == 0:
        return clf
    w = clf.w + kem_after.r @ (x.T @ (y - x @ clf.w))
    return replace(clf, w=w)


def predict(clf: Classifier, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and argmax class ids; ties resolve to the lowest class id.

    Columns are ordered by extension history, not by id, so ties are broken
    over (logit, -class_id) explicitly.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != clf.w.shape[0]:
        raise ShapeMismatchError(
            f"features {h.shape} incompatible with classifier dim {clf.w.shape[0]}")
    logits = h @ clf.w
    ids = np.asarray(clf.class_ids)
    order = np.argsort(ids)                      # lowest id first among ties
    winner = order[np.argmax(logits[:, order], axis=1)]
    return logits, ids[winner]


def ridge_fit(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """Ridge weights (X^T X + gamma I)^{-1} X^T Y.

    Uses the dual identity X^T (X X^T + gamma I)^{-1} Y when there are fewer
    samples than features; the two forms are algebraically identical.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if gamma <= 0:
        raise NonPositiveGammaError(f"gamma must be positive, got {gamma}")
    n, m = x.shape
    if x.shape[0] == 0:
        return np.zeros((m, y.shape[1] if y.ndim == 2 else 0))
    try:
        if n < m:
            gram = x @ x.T + gamma * np.eye(n)
            return x.T @ cho_solve(cho_factor(gram, lower=True), y)
        normal = x.T @ x + gamma * np.eye(m)
        return cho_solve(cho_factor(normal, lower=True), x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"ridge solve failed: {exc}") from exc


def batch_solve_oracle(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """Direct closed-form ridge solution; test-support reference path."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if gamma <= 0:
        raise NonPositiveGammaError(f"gamma must be positive, got {gamma}")
    m = x.shape[1]
    if x.shape[0] == 0:
        return np.zeros((m, y.shape[1] if y.ndim == 2 else 0))
    normal = x.T @ x + gamma * np.eye(m)
    try:
        return np.linalg.solve(normal, x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"batch solve failed: {exc}") from exc


def one_hot(labels, class_ids) -> np.ndarray:
    """0/1 target rows in classifier column order."""
    index = {int(c): i for i, c in enumerate(class_ids)}
    y = np.zeros((len(labels), len(index)))
    for row, label in enumerate(labels):
        y[row, index[int(label)]] = 1.0
    return y


def save_checkpoint(path, kem: Kem, clf: Classifier) -> None:
    m = kem.dim
    c = clf.num_classes
    if clf.w.shape[0] != m:
        raise ShapeMismatchError("classifier dim does not match KEM dim")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<HIIdQ", CHECKPOINT_VERSION, m, c,
                        kem.gamma, kem.samples_seen)
    blob += struct.pack(f"<{c}I", *clf.class_ids) if c else b""
    blob += np.ascontiguousarray(kem.r, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(clf.w, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[Kem, Classifier]:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<HIIdQ")
    if len(blob) < len(CHECKPOINT_MAGIC) + header:
        raise CorruptCheckpointError("checkpoint truncated")
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("bad magic")
    offset = len(CHECKPOINT_MAGIC)
    version, m, c, gamma, seen = struct.unpack_from("<HIIdQ", blob, offset)
    offset += header
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}")
    expected = offset + 4 * c + 8 * m * m + 8 * m * c
    if len(blob) != expected:
        raise CorruptCheckpointError(
            f"size {len(blob)} != expected {expected} for M={m}, c={c}")
    class_ids = struct.unpack_from(f"<{c}I", blob, offset) if c else ()
    offset += 4 * c
    r = np.frombuffer(blob, dtype="<f8", count=m * m, offset=offset).reshape(m, m)
    offset += 8 * m * m
    w = np.frombuffer(blob, dtype="<f8", count=m * c, offset=offset).reshape(m, c)
    kem = Kem(r=r.copy(), gamma=gamma, samples_seen=seen)
    clf = Classifier(w=w.copy(), class_ids=tuple(int(i) for i in class_ids))
    return kem, clf
