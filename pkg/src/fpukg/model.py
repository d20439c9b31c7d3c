"""FPU-Klein-Gordon chain: parameters, energy and exact vector field.

The Hamiltonian is

    H(x, y) = 1/2 sum_j [y_j^2 + x_j^2 + a (x_{j+1} - x_j)^2]
            + 1/4 sum_j [x_j^4 + b (x_{j+1} - x_j)^4]

on a ring of N sites (x_{j+N} = x_j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INF_RATE = math.inf


def wrap(j, n: int):
    """Periodic site index; negative indices wrap."""
    return np.mod(j, n) if isinstance(j, np.ndarray) else j % n


def decay_rate(coupling: float) -> float:
    """ln((1+2c)/(2c)); +inf for a vanishing coupling."""
    if coupling <= 0.0:
        return INF_RATE
    return math.log((1.0 + 2.0 * coupling) / (2.0 * coupling))


@dataclass(frozen=True)
class DerivedRates:
    c: float
    mu: float
    sigma_a: float
    sigma_b: float
    sigma0: float
    sigma1: float
    sigma_star: float


@dataclass(frozen=True)
class ChainParams:
    N: int
    a: float
    b: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"N must be an integer >= 3, got {self.N}")
        if not (0.0 <= self.a < 1.0):
            raise ValueError(f"linear coupling a must lie in [0, 1), got {self.a}")
        if not (0.0 <= self.b < 1.0):
            raise ValueError(f"nonlinear coupling b must lie in [0, 1), got {self.b}")

    @property
    def c(self) -> float:
        return max(self.a, self.b)

    @property
    def mu(self) -> float:
        c = self.c
        return (2.0 * c / (1.0 + 2.0 * c)) ** 0.25

    @property
    def rates(self) -> DerivedRates:
        sa, sb = decay_rate(self.a), decay_rate(self.b)
        s0 = min(sa, sb)
        return DerivedRates(self.c, self.mu, sa, sb, s0, s0 / 2.0, s0 / 4.0)

    @property
    def h1_constant(self) -> float:
        """Decay-class constant (7/4)(1+2b) of the quartic seed."""
        return 1.75 * (1.0 + 2.0 * self.b)

    def with_coupling(self, a: float, b: float) -> "ChainParams":
        return ChainParams(self.N, a, b)


@dataclass
class ChainState:
    x: np.ndarray
    y: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.zeros_like(self.x) if self.y is None else np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-d arrays of equal length")

    @property
    def N(self) -> int:
        return self.x.size

    @classmethod
    def from_vector(cls, z) -> "ChainState":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n].copy(), z[n:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.x**2) + np.sum(self.y**2)))

    def shifted(self, k: int = 1) -> "ChainState":
        """tau^k z: (x_1, ..., x_N, x_0) for k = 1."""
        return ChainState(np.roll(self.x, -k), np.roll(self.y, -k))


def _xy(z):
    if isinstance(z, ChainState):
        return z.x, z.y
    z = np.asarray(z, dtype=float)
    n = z.shape[-1] // 2
    return z[..., :n], z[..., n:]


def energy(z, p: ChainParams):
    """Total energy; accepts a ChainState or a (..., 2N) array."""
    x, y = _xy(z)
    d = np.roll(x, -1, axis=-1) - x
    quad = 0.5 * np.sum(y**2 + x**2 + p.a * d**2, axis=-1)
    quart = 0.25 * np.sum(x**4 + p.b * d**4, axis=-1)
    return quad + quart


def potential_force(x: np.ndarray, p: ChainParams) -> np.ndarray:
    """-dV/dx for positions of shape (..., N)."""
    xp = np.roll(x, -1, axis=-1)
    xm = np.roll(x, 1, axis=-1)
    f = -(x + x**3) - p.a * (2.0 * x - xp - xm)
    if p.b:
        f -= p.b * ((x - xm) ** 3 - (xp - x) ** 3)
    return f


def potential_hessian_apply(x: np.ndarray, v: np.ndarray, p: ChainParams) -> np.ndarray:
    """Hess V(x) @ v for x of shape (..., N) and v of shape (..., N, K)."""
    xp = np.roll(x, -1, axis=-1)
    dp = xp - x
    dm = np.roll(dp, 1, axis=-1)
    diag = 1.0 + 3.0 * x**2 + 2.0 * p.a + 3.0 * p.b * (dp**2 + dm**2)
    off = -p.a - 3.0 * p.b * dp**2  # coupling between j and j+1
    offm = np.roll(off, 1, axis=-1)
    vp = np.roll(v, -1, axis=-2)
    vm = np.roll(v, 1, axis=-2)
    return diag[..., None] * v + off[..., None] * vp + offm[..., None] * vm


def vector_field(z, p: ChainParams) -> np.ndarray:
    """Hamilton equations (xdot, ydot) stacked as a (..., 2N) array."""
    x, y = _xy(z)
    return np.concatenate([y, potential_force(x, p)], axis=-1)


def split_H(p: ChainParams):
    """Quadratic and quartic seeds of H in original coordinates.

    The quartic seed is returned already rearranged into its range shells:
    ((1+2b)/4) x0^4 + (3/2) b x0^2 x1^2 - b x0 x1 (x0^2 + x1^2).
    """
    from .seeds import Seed

    h0 = Seed.from_terms(
        [
            (0.5 + p.a, ((0, 2, 0),)),
            (0.5, ((0, 0, 2),)),
            (-p.a, ((0, 1, 0), (1, 1, 0))),
        ]
    )
    terms = [(0.25 * (1.0 + 2.0 * p.b), ((0, 4, 0),))]
    if p.b:
        terms += [
            (1.5 * p.b, ((0, 2, 0), (1, 2, 0))),
            (-p.b, ((0, 3, 0), (1, 1, 0))),
            (-p.b, ((0, 1, 0), (1, 3, 0))),
        ]
    h1 = Seed.from_terms(terms)
    return h0, h1
