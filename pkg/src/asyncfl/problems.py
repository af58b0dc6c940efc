"""Client-sharded optimization problems with stochastic gradient oracles.

A parameter vector is a plain 1-D float64 numpy array.  Every public
operation validates dimensions and finiteness; the helpers below implement
those checks.

The gradient noise model is additive isotropic Gaussian with per-coordinate
standard deviation ``noise_sigma / sqrt(d)``, so the expected squared noise
norm equals ``noise_sigma**2`` exactly.  This makes variance checks sharp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError


def check_vector(w: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Validate a parameter vector: 1-D, finite, optionally of dimension ``dim``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {w.shape}")
    if dim is not None and w.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("parameter vector contains NaN or Inf")
    return w


def check_same_dim(*vectors: np.ndarray) -> int:
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mismatched dimensions: {sorted(dims)}")
    return dims.pop()


class Problem:
    """Base class: average of ``n`` client objectives over R^dim.

    Subclasses implement ``client_loss`` and ``client_grad`` (exact,
    full-batch).  The stochastic oracle adds seeded Gaussian noise on top.
    """

    n: int
    dim: int
    noise_sigma: float
    smoothness_L: float

    def client_loss(self, client: int, w: np.ndarray) -> float:
        raise NotImplementedError

    def client_grad(self, client: int, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_client(self, client: int) -> None:
        if not 0 <= client < self.n:
            raise IndexError(f"client {client} out of range [0, {self.n})")

    def loss(self, w: np.ndarray) -> float:
        """Global objective f(w) = (1/n) sum_i f_i(w)."""
        w = check_vector(w, self.dim)
        return sum(self.client_loss(i, w) for i in range(self.n)) / self.n

    def grad(self, w: np.ndarray) -> np.ndarray:
        """Exact full-batch gradient of the global objective."""
        w = check_vector(w, self.dim)
        g = np.zeros(self.dim)
        for i in range(self.n):
            g += self.client_grad(i, w)
        return g / self.n

    def stochastic_gradient(
        self, client: int, w: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Noisy gradient of f_client at w.

        Unbiased, with E||g - grad||^2 = noise_sigma^2.  Deterministic given
        the state of ``rng``.
        """
        self._check_client(client)
        w = check_vector(w, self.dim)
        return self._noisy_grad(client, w, rng)

    def _noisy_grad(
        self, client: int, w: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Validation-free noisy gradient, for hot loops on trusted inputs."""
        g = self.client_grad(client, w)
        if self.noise_sigma > 0:
            g = g + rng.normal(0.0, self.noise_sigma / np.sqrt(self.dim), self.dim)
        return g

    def dissimilarity(self) -> tuple[float, float]:
        """Bounded-gradient-dissimilarity constants (G, B), when known."""
        raise NotImplementedError


@dataclass
class QuadraticProblem(Problem):
    """f_i(w) = 0.5 * sum_k a_ik (w_k - c_ik)^2 with known minimizer.

    ``centers`` has shape (n, dim); ``curvatures`` the same shape (defaults
    to ones).  Exposes the exact global minimizer and optimal value for
    oracle checks.
    """

    centers: np.ndarray
    curvatures: np.ndarray | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2:
            raise DimensionMismatchError("centers must have shape (n, dim)")
        self.n, self.dim = self.centers.shape
        if self.curvatures is None:
            self.curvatures = np.ones_like(self.centers)
        else:
            self.curvatures = np.asarray(self.curvatures, dtype=np.float64)
            if self.curvatures.shape != self.centers.shape:
                raise DimensionMismatchError("curvatures must match centers shape")
        if np.any(self.curvatures <= 0):
            raise ValueError("curvatures must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.smoothness_L = float(np.max(self.curvatures))

    @classmethod
    def heterogeneous(
        cls,
        n: int,
        dim: int,
        rng: np.random.Generator,
        center_scale: float = 1.0,
        noise_sigma: float = 0.0,
    ) -> "QuadraticProblem":
        """Random centers, unit curvature: B = 1 exactly, G in closed form."""
        centers = center_scale * rng.standard_normal((n, dim))
        return cls(centers=centers, noise_sigma=noise_sigma)

    def client_loss(self, client: int, w: np.ndarray) -> float:
        self._check_client(client)
        d = w - self.centers[client]
        return 0.5 * float(np.sum(self.curvatures[client] * d * d))

    def client_grad(self, client: int, w: np.ndarray) -> np.ndarray:
        self._check_client(client)
        return self.curvatures[client] * (w - self.centers[client])

    def minimizer(self) -> np.ndarray:
        total = self.curvatures.sum(axis=0)
        return (self.curvatures * self.centers).sum(axis=0) / total

    def f_star(self) -> float:
        return self.loss(self.minimizer())

    def dissimilarity(self) -> tuple[float, float]:
        if not np.allclose(self.curvatures, self.curvatures[0, 0]):
            raise NotImplementedError("closed form only for uniform curvature")
        a = float(self.curvatures[0, 0])
        # grad f_i = a (w - c_i): mean-square over clients splits into the
        # global gradient plus the center dispersion.
        cbar = self.centers.mean(axis=0)
        g2 = a * a * float(np.mean(np.sum((self.centers - cbar) ** 2, axis=1)))
        return np.sqrt(g2), 1.0


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LogisticProblem(Problem):
    """Multinomial logistic regression over per-client data shards.

    The parameter vector is the flattened (num_features x num_classes)
    weight matrix plus a bias row, optionally ridge-regularized.
    """

    shards: list  # list of DataShard
    num_classes: int
    l2: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.n = len(self.shards)
        if self.n == 0:
            raise ValueError("need at least one shard")
        self.num_features = self.shards[0].features.shape[1]
        self.dim = (self.num_features + 1) * self.num_classes
        # L <= max over shards of mean ||x||^2 (plus bias), times 1/2 for
        # the softmax Hessian bound; keep the conservative constant.
        norms = [
            float(np.mean(np.sum(s.features**2, axis=1)) + 1.0) for s in self.shards
        ]
        self.smoothness_L = 0.5 * max(norms) + self.l2

    def _unpack(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = w.reshape(self.num_features + 1, self.num_classes)
        return m[:-1], m[-1]

    def _scores(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        weights, bias = self._unpack(w)
        return x @ weights + bias

    def client_loss(self, client: int, w: np.ndarray) -> float:
        self._check_client(client)
        shard = self.shards[client]
        p = softmax(self._scores(w, shard.features))
        nll = -np.mean(np.log(p[np.arange(len(shard.labels)), shard.labels] + 1e-300))
        return float(nll + 0.5 * self.l2 * np.dot(w, w))

    def client_grad(self, client: int, w: np.ndarray) -> np.ndarray:
        self._check_client(client)
        shard = self.shards[client]
        x, y = shard.features, shard.labels
        p = softmax(self._scores(w, x))
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        gw = x.T @ p
        gb = p.sum(axis=0)
        return np.concatenate([gw.ravel(), gb]) + self.l2 * w

    def accuracy(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        pred = np.argmax(self._scores(w, features), axis=-1)
        return float(np.mean(pred == labels))

    def test_loss(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        p = softmax(self._scores(w, features))
        return float(-np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300)))


@dataclass
class MLPProblem(Problem):
    """One-hidden-layer tanh network with softmax cross-entropy, per shard.

    The hidden width is configurable; gradients are exact full-batch
    backprop over the client shard.
    """

    shards: list
    num_classes: int
    hidden: int = 16
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.n = len(self.shards)
        if self.n == 0:
            raise ValueError("need at least one shard")
        self.num_features = self.shards[0].features.shape[1]
        self.shapes = [
            (self.num_features, self.hidden),
            (self.hidden,),
            (self.hidden, self.num_classes),
            (self.num_classes,),
        ]
        self.dim = sum(int(np.prod(s)) for s in self.shapes)
        self.smoothness_L = float("nan")  # not known in closed form

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.standard_normal(self.shapes[0]) / np.sqrt(self.num_features)
        b1 = np.zeros(self.shapes[1])
        w2 = rng.standard_normal(self.shapes[2]) / np.sqrt(self.hidden)
        b2 = np.zeros(self.shapes[3])
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def _unpack(self, w: np.ndarray):
        parts = []
        offset = 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            parts.append(w[offset : offset + size].reshape(shape))
            offset += size
        return parts

    def _forward(self, w: np.ndarray, x: np.ndarray):
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(x @ w1 + b1)
        probs = softmax(hidden @ w2 + b2)
        return hidden, probs

    def client_loss(self, client: int, w: np.ndarray) -> float:
        self._check_client(client)
        shard = self.shards[client]
        _, probs = self._forward(w, shard.features)
        labels = shard.labels
        return float(-np.mean(np.log(probs[np.arange(len(labels)), labels] + 1e-300)))

    def client_grad(self, client: int, w: np.ndarray) -> np.ndarray:
        self._check_client(client)
        shard = self.shards[client]
        x, y = shard.features, shard.labels
        w1, b1, w2, b2 = self._unpack(w)
        hidden, probs = self._forward(w, x)
        delta2 = probs
        delta2[np.arange(len(y)), y] -= 1.0
        delta2 /= len(y)
        gw2 = hidden.T @ delta2
        gb2 = delta2.sum(axis=0)
        delta1 = (delta2 @ w2.T) * (1.0 - hidden**2)
        gw1 = x.T @ delta1
        gb1 = delta1.sum(axis=0)
        return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])

    def accuracy(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        _, probs = self._forward(w, features)
        return float(np.mean(np.argmax(probs, axis=-1) == labels))

    def test_loss(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        _, probs = self._forward(w, features)
        return float(-np.mean(np.log(probs[np.arange(len(labels)), labels] + 1e-300)))
