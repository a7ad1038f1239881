"""Regularized hinge-loss ERM instances and their data.

Feature vectors are sparse (``indices``/``values`` pairs, 0-based indices
internally, 1-based in LIBSVM text); decision variables are dense arrays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, TextIO, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, ParseError

REGULARIZER_KINDS = ("l1", "l2_half", "ball", "zero")


@dataclass(frozen=True, eq=False)
class Sample:
    indices: np.ndarray
    values: np.ndarray
    label: float
    dimension: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 1:
            raise InvalidArgument("indices and values must be 1-D arrays of equal length")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dimension or np.any(np.diff(idx) <= 0)):
            raise InvalidArgument("feature indices must be strictly increasing and within dimension")
        if self.label not in (1.0, -1.0):
            raise InvalidArgument(f"label must be +1 or -1, got {self.label}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", float(self.label))

    @classmethod
    def from_dense(cls, features, label) -> "Sample":
        x = np.asarray(features, dtype=float)
        nz = np.flatnonzero(x)
        return cls(nz, x[nz], label, x.size)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dimension)
        out[self.indices] = self.values
        return out

    def dot(self, x: np.ndarray) -> float:
        return float(self.values @ x[self.indices])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.label == other.label
            and self.dimension == other.dimension
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def _with_dimension(samples, m):
    return [Sample(s.indices, s.values, s.label, m) for s in samples]


# LIBSVM text

def _parse_label(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"malformed label {token!r}", lineno) from None
    if value == 1.0:
        return 1.0
    if value in (-1.0, 0.0):
        return -1.0
    raise ParseError(f"label must be one of +1, -1, 1, 0; got {token!r}", lineno)


def parse_libsvm(stream: Union[TextIO, str], expected_dimension: Optional[int] = None) -> List[Sample]:
    """Parse LIBSVM ``label idx:val ...`` lines.

    Labels 0 are mapped to -1. Blank lines are skipped; ``#`` comments are
    rejected. Without ``expected_dimension`` the dimension is the largest
    index seen.
    """
    text = stream if isinstance(stream, str) else stream.read()
    rows = []
    max_index = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        if not line.strip():
            continue
        if "#" in line:
            raise ParseError("comments are not supported", lineno)
        tokens = line.split()
        label = _parse_label(tokens[0], lineno)
        idx, val = [], []
        prev = 0
        for tok in tokens[1:]:
            key, sep, value = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed feature token {tok!r}", lineno)
            try:
                i = int(key)
                v = float(value)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            if i < 1:
                raise ParseError(f"feature index {i} is not positive", lineno)
            if i <= prev:
                raise ParseError(f"feature index {i} does not increase", lineno)
            if expected_dimension is not None and i > expected_dimension:
                raise ParseError(f"feature index {i} exceeds dimension {expected_dimension}", lineno)
            prev = i
            idx.append(i - 1)
            val.append(v)
        max_index = max(max_index, prev)
        rows.append((idx, val, label))
    m = expected_dimension if expected_dimension is not None else max(max_index, 1)
    return [Sample(np.array(i, dtype=np.int64), np.array(v, dtype=float), y, m) for i, v, y in rows]


def serialize_libsvm(samples: Iterable[Sample]) -> str:
    lines = []
    for s in samples:
        parts = ["+1" if s.label > 0 else "-1"]
        parts += [f"{i + 1}:{v!r}" for i, v in zip(s.indices.tolist(), s.values.tolist())]
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


def load_libsvm(path, expected_dimension: Optional[int] = None) -> List[Sample]:
    with open(path, "r", encoding="ascii", newline="") as fh:
        return parse_libsvm(fh, expected_dimension)


# synthetic data

def generate_synthetic(n_samples: int, dimension: int, margin: float, rng: np.random.Generator) -> List[Sample]:
    """Linearly separable-ish data around a random unit direction.

    Features are standard normal, labelled by the side of the hyperplane
    orthogonal to the ground truth, pushed ``margin`` further along it, and
    finally rescaled so the largest feature norm is exactly 1.
    """
    if n_samples < 1 or dimension < 1:
        raise InvalidArgument("n_samples and dimension must be positive")
    truth = rng.standard_normal(dimension)
    truth /= np.linalg.norm(truth)
    x = rng.standard_normal((n_samples, dimension))
    y = np.where(x @ truth >= 0.0, 1.0, -1.0)
    x += margin * y[:, None] * truth[None, :]
    scale = np.linalg.norm(x, axis=1).max()
    if scale > 0:
        x /= scale
    return [Sample.from_dense(row, label) for row, label in zip(x, y)]


# local datasets and instances

@dataclass(frozen=True, eq=False)
class LocalDataset:
    samples: tuple
    owner: int

    def __post_init__(self):
        if len(self.samples) == 0:
            raise InvalidArgument(f"node {self.owner} has no samples")
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self):
        return len(self.samples)

    @property
    def dimension(self) -> int:
        return self.samples[0].dimension

    @functools.cached_property
    def matrix(self) -> sp.csr_matrix:
        indptr = np.zeros(len(self.samples) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([s.indices.size for s in self.samples])
        indices = np.concatenate([s.indices for s in self.samples]) if indptr[-1] else np.zeros(0, np.int64)
        data = np.concatenate([s.values for s in self.samples]) if indptr[-1] else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(self.samples), self.dimension))

    @functools.cached_property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])


def partition_even(samples: Sequence[Sample], n_nodes: int, rng: np.random.Generator) -> List[LocalDataset]:
    """Shuffle and split into ``n_nodes`` parts whose sizes differ by at most one."""
    if n_nodes < 1:
        raise InvalidArgument("n_nodes must be positive")
    if len(samples) < n_nodes:
        raise InvalidArgument(f"{len(samples)} samples cannot cover {n_nodes} nodes")
    order = rng.permutation(len(samples))
    parts = np.array_split(order, n_nodes)
    return [LocalDataset(tuple(samples[j] for j in part), owner=i + 1) for i, part in enumerate(parts)]


@dataclass(frozen=True)
class Regularizer:
    kind: str
    parameter: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise InvalidArgument(f"unknown regularizer kind {self.kind!r}")
        if self.kind != "zero" and not self.parameter > 0:
            raise InvalidArgument(f"{self.kind} needs a positive parameter, got {self.parameter}")

    @classmethod
    def l1(cls, lam):
        return cls("l1", lam)

    @classmethod
    def l2_half(cls, mu):
        return cls("l2_half", mu)

    @classmethod
    def ball(cls, radius):
        return cls("ball", radius)

    @classmethod
    def zero(cls):
        return cls("zero", 0.0)

    @property
    def modulus(self) -> float:
        """Strong-convexity modulus."""
        return self.parameter if self.kind == "l2_half" else 0.0


def regularizer_value(reg: Regularizer, x) -> float:
    x = np.asarray(x, dtype=float)
    if reg.kind == "l1":
        return reg.parameter * float(np.abs(x).sum())
    if reg.kind == "l2_half":
        return 0.5 * reg.parameter * float(x @ x)
    if reg.kind == "ball":
        return 0.0 if np.linalg.norm(x) <= reg.parameter * (1 + 1e-12) else math.inf
    return 0.0


def hinge_subgradient(x: np.ndarray, sample: Sample) -> np.ndarray:
    """Element of the hinge subdifferential; 0 on the kink."""
    if len(x) != sample.dimension:
        raise InvalidArgument(f"x has dimension {len(x)}, sample has {sample.dimension}")
    g = np.zeros(sample.dimension)
    if 1.0 - sample.label * sample.dot(x) > 0.0:
        g[sample.indices] = -sample.label * sample.values
    return g


def hinge_loss(x: np.ndarray, sample: Sample) -> float:
    return max(0.0, 1.0 - sample.label * sample.dot(x))


def lipschitz_bound(samples: Sequence[Sample]) -> float:
    if len(samples) == 0:
        raise InvalidArgument("need at least one sample")
    return max(s.norm for s in samples)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    locals: tuple
    regularizer: Regularizer
    lipschitz: float
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "locals", tuple(self.locals))
        if not self.locals:
            raise InvalidArgument("problem needs at least one node")
        for local in self.locals:
            if local.dimension != self.dimension:
                raise InvalidArgument("all local datasets must share the problem dimension")
        if self.lipschitz < lipschitz_bound([s for d in self.locals for s in d.samples]) * (1 - 1e-12):
            raise InvalidArgument("lipschitz is below the largest feature norm")

    @classmethod
    def from_partition(cls, locals_, regularizer, lipschitz=None):
        locals_ = tuple(locals_)
        m = max(d.dimension for d in locals_)
        if any(d.dimension != m for d in locals_):
            locals_ = tuple(LocalDataset(tuple(_with_dimension(d.samples, m)), d.owner) for d in locals_)
        if lipschitz is None:
            lipschitz = lipschitz_bound([s for d in locals_ for s in d.samples])
        return cls(locals_, regularizer, lipschitz, m)

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def min_samples(self) -> int:
        return min(len(d) for d in self.locals)

    @functools.cached_property
    def stacked(self):
        """All samples as one CSR matrix, with labels and per-sample weights 1/(n q_i)."""
        mat = sp.vstack([d.matrix for d in self.locals], format="csr")
        labels = np.concatenate([d.labels for d in self.locals])
        weights = np.concatenate([np.full(len(d), 1.0 / (self.n * len(d))) for d in self.locals])
        return mat, labels, weights

    def loss_value(self, x) -> np.ndarray:
        """Data term (1/n) sum_i f_i; ``x`` may be a vector or a (k, m) batch."""
        mat, labels, weights = self.stacked
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        if xs.shape[1] != self.dimension:
            raise InvalidArgument(f"x has dimension {xs.shape[1]}, problem has {self.dimension}")
        margins = (mat @ xs.T) * labels[:, None]
        out = weights @ np.maximum(0.0, 1.0 - margins)
        return out if np.ndim(x) == 2 else float(out[0])

    def full_subgradient(self, x: np.ndarray) -> np.ndarray:
        mat, labels, weights = self.stacked
        active = (1.0 - labels * (mat @ x)) > 0.0
        return -(mat.T @ (weights * labels * active))


def objective_value(problem: ProblemInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return problem.loss_value(x) + np.array([regularizer_value(problem.regularizer, r) for r in x])
    return problem.loss_value(x) + regularizer_value(problem.regularizer, x)
