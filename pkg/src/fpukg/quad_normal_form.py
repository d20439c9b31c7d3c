"""Circulant calculus and the linear change of variables q = A^{1/4} x, p = A^{-1/4} y."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ChainParams, split_H
from .seeds import Seed


class DefinitenessError(ValueError):
    pass


class ConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CirculantSymmetric:
    """Symmetric circulant matrix given by its first floor(N/2)+1 row entries."""

    first_row: np.ndarray
    N: int

    def __post_init__(self):
        row = np.asarray(self.first_row, dtype=float)
        if row.size != self.N // 2 + 1:
            raise ValueError(f"need {self.N // 2 + 1} first-row entries for N={self.N}")
        object.__setattr__(self, "first_row", row)

    @classmethod
    def from_full_row(cls, row) -> "CirculantSymmetric":
        row = np.asarray(row, dtype=float)
        return cls(row[: row.size // 2 + 1].copy(), row.size)

    @property
    def full_row(self) -> np.ndarray:
        n, h = self.N, self.first_row
        d = np.arange(n)
        return h[np.minimum(d, n - d)]

    def dense(self) -> np.ndarray:
        row = self.full_row
        idx = (np.arange(self.N)[None, :] - np.arange(self.N)[:, None]) % self.N
        return row[idx]

    def spectrum_half(self) -> np.ndarray:
        """Eigenvalues lambda_k for k = 0..floor(N/2) (real DFT of the row)."""
        return np.fft.rfft(self.full_row).real

    def eigenvalues(self) -> np.ndarray:
        """All N eigenvalues, indexed by wavenumber k."""
        half = self.spectrum_half()
        k = np.arange(self.N)
        return half[np.minimum(k, self.N - k)]

    def apply_function(self, f) -> "CirculantSymmetric":
        vals = f(self.spectrum_half())
        return CirculantSymmetric.from_full_row(np.fft.irfft(vals, n=self.N))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """A @ v along the last axis."""
        return np.fft.irfft(np.fft.rfft(v, axis=-1) * self.spectrum_half(), n=self.N, axis=-1)

    def __matmul__(self, other: "CirculantSymmetric") -> "CirculantSymmetric":
        return CirculantSymmetric.from_full_row(self.matvec(other.full_row))

    def to_csv(self) -> str:
        return ",".join(repr(float(v)) for v in self.first_row) + "\n"

    @classmethod
    def from_csv(cls, text: str, N: int) -> "CirculantSymmetric":
        return cls(np.array([float(t) for t in text.strip().split(",")]), N)


def build_A(a: float, N: int) -> CirculantSymmetric:
    """A = (1+2a) I - a (tau + tau^T)."""
    row = np.zeros(N // 2 + 1)
    row[0] = 1.0 + 2.0 * a
    row[1] = -a
    return CirculantSymmetric(row, N)


def eigenvalue_formula(a: float, N: int) -> np.ndarray:
    k = np.arange(N)
    return 1.0 + 4.0 * a * np.sin(np.pi * k / N) ** 2


def _check_definite(A: CirculantSymmetric) -> np.ndarray:
    lam = A.spectrum_half()
    if np.any(lam <= 0):
        raise DefinitenessError(f"matrix not positive definite (min eigenvalue {lam.min():.3e})")
    return lam


def omega(A: CirculantSymmetric) -> float:
    """Average of the square roots of the eigenvalues."""
    _check_definite(A)
    return float(np.mean(np.sqrt(A.eigenvalues())))


def matrix_power(A: CirculantSymmetric, exponent: float) -> CirculantSymmetric:
    _check_definite(A)
    return A.apply_function(lambda lam: lam**exponent)


def exponential_decay_fit(row: np.ndarray, floor: float = 1e-14, exclude_core: bool = True):
    """Fit |row[d]| ~ C exp(-sigma d) over periodic distances d >= 1.

    Returns dict(sigma, C, r2, n_points).
    """
    row = np.asarray(row)
    n = row.size
    d = np.arange(n)
    dist = np.minimum(d, n - d)
    sel = (np.abs(row) > floor) & ((dist >= 1) if exclude_core else True)
    # one value per distance
    dd, vals = [], []
    for m in sorted(set(dist[sel].tolist())):
        dd.append(m)
        vals.append(np.max(np.abs(row[dist == m])))
    dd, vals = np.array(dd, dtype=float), np.array(vals)
    if dd.size < 2:
        return {"sigma": math.inf, "C": float(vals[0]) if vals.size else 0.0, "r2": 1.0, "n_points": int(dd.size)}
    y = np.log(vals)
    slope, icpt = np.polyfit(dd, y, 1)
    resid = y - (slope * dd + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return {"sigma": float(-slope), "C": float(math.exp(icpt)), "r2": float(r2), "n_points": int(dd.size)}


@dataclass
class LinearTransform:
    """The canonical map (x, y) -> (q, p) = (A^{1/4} x, A^{-1/4} y)."""

    A: CirculantSymmetric
    quarter: CirculantSymmetric = field(init=False)
    inv_quarter: CirculantSymmetric = field(init=False)

    def __post_init__(self):
        self.quarter = matrix_power(self.A, 0.25)
        self.inv_quarter = matrix_power(self.A, -0.25)

    def forward(self, z: np.ndarray) -> np.ndarray:
        n = self.A.N
        z = np.asarray(z, dtype=float)
        return np.concatenate([self.quarter.matvec(z[..., :n]), self.inv_quarter.matvec(z[..., n:])], axis=-1)

    def inverse(self, w: np.ndarray) -> np.ndarray:
        n = self.A.N
        w = np.asarray(w, dtype=float)
        return np.concatenate([self.inv_quarter.matvec(w[..., :n]), self.quarter.matvec(w[..., n:])], axis=-1)

    def jacobian(self) -> np.ndarray:
        n = self.A.N
        J = np.zeros((2 * n, 2 * n))
        J[:n, :n] = self.quarter.dense()
        J[n:, n:] = self.inv_quarter.dense()
        return J


def linear_transform(z, A: CirculantSymmetric, direction: str = "forward") -> np.ndarray:
    T = LinearTransform(A)
    if direction == "forward":
        return T.forward(z)
    if direction == "inverse":
        return T.inverse(z)
    raise ValueError("direction must be 'forward' or 'inverse'")


@dataclass
class QuadraticSplit:
    omega: float
    h_omega: Seed
    zeta0: Seed
    C_zeta0: float
    sigma0: float
    report: dict


def split_H0(A: CirculantSymmetric, sigma0: float | None = None, tol: float = 1e-16) -> QuadraticSplit:
    """H_0 in the new variables as h_Omega^oplus + zeta_0^oplus.

    With B = A^{1/2}: H_0 = 1/2 (p.Bp + q.Bq), whose diagonal is Omega.
    The decay constant of zeta_0 is the fitted minimal class constant at
    rate ``sigma0`` (default: sigma_a of the matrix).
    """
    N = A.N
    Om = omega(A)
    B = matrix_power(A, 0.5).first_row
    if abs(B[0] - Om) > 1e-12 * max(1.0, Om):
        raise ConstructionError("diagonal of A^{1/2} differs from Omega")
    h_om = Seed.from_terms([(Om / 2, ((0, 2, 0),)), (Om / 2, ((0, 0, 2),))])
    terms = []
    for d in range(1, N // 2 + 1):
        w = B[d] if (2 * d != N) else B[d] / 2.0
        if abs(w) <= tol:
            continue
        terms += [(w, ((0, 1, 0), (d, 1, 0))), (w, ((0, 0, 1), (d, 0, 1)))]
    zeta0 = Seed.from_terms(terms)
    if sigma0 is None:
        a = -A.first_row[1]
        sigma0 = math.inf if a <= 0 else math.log((1 + 2 * a) / (2 * a))
    C = zeta0.fit_decay(sigma0) if not zeta0.is_zero() else 0.0
    shells = zeta0.shell_norms()
    if 0 in shells:
        raise ConstructionError("zeta_0 has a nonzero range-0 shell")
    report = {
        "Omega": Om,
        "sigma0": sigma0,
        "C_zeta0": C,
        "C_zeta0_note": "fitted minimal class constant (not given in closed form)",
        "shell_norms": {str(k): v for k, v in shells.items()},
    }
    return QuadraticSplit(Om, h_om, zeta0, C, sigma0, report)


def numerical_bracket(gradF, gradG, z: np.ndarray) -> np.ndarray:
    """{F, G}(z) from gradients: grad_x F . grad_y G - grad_y F . grad_x G."""
    gf, gg = gradF(z), gradG(z)
    n = gf.shape[-1] // 2
    return np.sum(gf[..., :n] * gg[..., n:] - gf[..., n:] * gg[..., :n], axis=-1)


@dataclass
class QuarticTransform:
    seed: Seed
    cutoff: int
    tail_bound: float
    decay_constant: float
    sigma1: float
    shell_norms: dict


def _substitute_linear(seed: Seed, w_row: np.ndarray, cutoff: int, tol: float, max_range=None) -> Seed:
    """Seed of F(W q) where x_j = sum_d w_d q_{j+d}, |d| <= cutoff."""
    N = w_row.size
    lin = {d: w_row[d % N] for d in range(-cutoff, cutoff + 1) if abs(w_row[d % N]) > 0}
    out = Seed({}, aligned=True)
    for mono, c in seed.terms.items():
        poly = Seed({(): c}, aligned=False)
        for s, p, q in mono:
            if q:
                raise ValueError("only position-dependent seeds can be substituted")
            factor = Seed({((s + d, 1, 0),): w for d, w in lin.items()}, aligned=False)
            for _ in range(p):
                poly = poly.product(factor, tol=tol * 1e-3)
        out = out + Seed(poly.terms, aligned=True)
    if max_range is not None:
        out = out.truncate(max_range=max_range)
    return out.prune(tol)


class TailBoundError(ValueError):
    pass


def transform_H1(
    A: CirculantSymmetric,
    b: float,
    sigma1: float | None = None,
    tol: float = 1e-16,
    cutoff: int | None = None,
    max_range: int | None = None,
    tail_tol: float = 1e-8,
) -> QuarticTransform:
    """Quartic seed of H_1(A^{-1/4} q) with its decay class at rate sigma1.

    ``cutoff`` limits the linear forms x_j = sum_{|d|<=cutoff} w_d q_{j+d};
    by default it is the largest distance whose entry of A^{-1/4} exceeds
    ``tol`` relative to the diagonal. ``max_range`` limits the interaction
    distance of the result; by default it is the smallest m with
    C_h1 exp(-sigma1 m) < 1e-12 ||h_1||_1. The discarded linear tail is
    bounded by ||h_1||_1 ((sum|w|)^4 - (sum_{|d|<=cutoff}|w|)^4).
    """
    N = A.N
    W = matrix_power(A, -0.25).full_row
    a = -A.first_row[1]
    params = ChainParams(max(N, 3), min(max(a, 0.0), 0.999999), b)
    _, h1 = split_H(params)
    if sigma1 is None:
        sigma1 = params.rates.sigma1
    if cutoff is None:
        cutoff = 0
        for d in range(1, N // 2 + 1):
            if abs(W[d]) > tol * abs(W[0]):
                cutoff = d
    cutoff = min(cutoff, (N - 1) // 2)
    if max_range is None and math.isfinite(sigma1):
        target = 1e-12 * h1.poly_norm(1.0) / params.h1_constant
        max_range = max(1, int(math.ceil(-math.log(target) / sigma1)))
    if max_range is not None:
        max_range = min(max_range, N // 2)
    seed = _substitute_linear(h1, W, cutoff, tol, max_range=max_range)
    dist = np.minimum(np.arange(N), N - np.arange(N))
    full = np.abs(W).sum()
    kept = np.abs(W[dist <= cutoff]).sum()
    tail = float(h1.poly_norm(1.0) * (full**4 - kept**4))
    if tail > tail_tol:
        raise TailBoundError(f"tail bound {tail:.3e} exceeds {tail_tol:.1e}; increase the cutoff")
    C = seed.fit_decay(sigma1) if math.isfinite(sigma1) else seed.shell_norms().get(0, 0.0)
    return QuarticTransform(seed, cutoff, tail, C, sigma1, {str(k): v for k, v in seed.shell_norms().items()})


def decay_report(A: CirculantSymmetric) -> str:
    out = {}
    for e in (0.25, -0.25, 0.5, -0.5):
        out[str(e)] = exponential_decay_fit(matrix_power(A, e).full_row)
    return json.dumps(out, indent=2, sort_keys=True)
