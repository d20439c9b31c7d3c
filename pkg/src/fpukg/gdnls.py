"""The truncated normal form K = H_Omega + Z (a generalized discrete NLS) and its single-site solutions.

Conventions. The breather sphere is ||z||^2 = rho^2 and a breather profile
solves grad Z = 2 lambda z there. Because H_Omega = (Omega/2)||z||^2 and
{H_Omega, Z} = 0, the K-flow through such a profile is a uniform rotation of
every (x_j, y_j) plane with angular frequency Omega + 2 lambda.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .normal_form import NormalFormBundle, single_oscillator_normal_form
from .polyeval import CompiledSeed
from .seeds import Seed


def rotate(z: np.ndarray, angle) -> np.ndarray:
    """Exact H_Omega-type flow: every (x_j, y_j) pair rotated clockwise by ``angle``."""
    z = np.asarray(z)
    n = z.shape[-1] // 2
    x, y = z[..., :n], z[..., n:]
    c, s = np.cos(angle), np.sin(angle)
    c = np.asarray(c)[..., None] if np.ndim(angle) else c
    s = np.asarray(s)[..., None] if np.ndim(angle) else s
    return np.concatenate([c * x + s * y, -s * x + c * y], axis=-1)


def J_apply(z: np.ndarray) -> np.ndarray:
    """Symplectic rotation J grad: (x, y) -> (y, -x)."""
    n = z.shape[-1] // 2
    return np.concatenate([z[..., n:], -z[..., :n]], axis=-1)


class GdnlsModel:
    """K = (Omega/2)||z||^2 + Z on a ring of N sites."""

    def __init__(self, Omega: float, zcal: Seed, N: int):
        self.Omega = float(Omega)
        self.N = int(N)
        self.zcal_seed = zcal
        self._Z = CompiledSeed(zcal)

    @classmethod
    def from_bundle(cls, bundle: NormalFormBundle, include_zeta0: bool = True) -> "GdnlsModel":
        return cls(bundle.Omega, bundle.Zcal_seed(include_zeta0), bundle.N)

    @classmethod
    def from_coefficients(cls, coeffs, N: int, Omega: float = 1.0) -> "GdnlsModel":
        """Uncoupled model with zeta_s = c_s (x_0^2 + y_0^2)^{s+1}."""
        seed = Seed()
        for s, c in enumerate(coeffs, start=1):
            seed = seed + c * _action_power(s + 1)
        return cls(Omega, seed, N)

    def H_Omega(self, z):
        z = np.asarray(z)
        return 0.5 * self.Omega * np.sum(z * z, axis=-1)

    def Z(self, z):
        return self._Z.value(z)

    def K(self, z):
        return self.H_Omega(z) + self.Z(z)

    def grad_Z(self, z):
        return self._Z.gradient(z)

    def hess_Z(self, z):
        return self._Z.hessian(z)

    def field_Z(self, z):
        return self._Z.field(z)

    def K_field(self, z):
        z = np.asarray(z, dtype=float)
        return self.Omega * J_apply(z) + self._Z.field(z)


def K_energy(z, model: GdnlsModel):
    return model.K(z)


def K_field(z, model: GdnlsModel):
    return model.K_field(z)


def _action_power(k: int) -> Seed:
    """(x_0^2 + y_0^2)^k as a seed."""
    terms = [(math.comb(k, i), ((0, 2 * i, 2 * (k - i)),)) for i in range(k + 1)]
    return Seed.from_terms(terms)


@dataclass
class UncoupledCoefficients:
    r: int
    b: float
    coeffs: list
    budget_ratios: list
    C_h1: float
    C_r: float

    def to_dict(self):
        return {"r": self.r, "b": self.b, "c_s": self.coeffs, "budget_ratios": self.budget_ratios,
                "C_h1": self.C_h1, "C_r": self.C_r}


def uncoupled_coefficients(r: int, b: float = 0.0) -> UncoupledCoefficients:
    """c_s of the single-oscillator normal form of (1/2)(x^2+y^2) + ((1+2b)/4) x^4.

    The budget ratios |c_s| s / (C_h1 C_r^{s-1}) are reported for s >= 2.
    """
    from .normal_form import constants

    Zs, _, _ = single_oscillator_normal_form(r, 0.25 * (1 + 2 * b))
    coeffs = []
    for s, Zs_ in enumerate(Zs, start=1):
        coeffs.append(float(Zs_.terms.get(((0, 2 * s + 2, 0),), 0.0)))
        target = coeffs[-1] * _action_power(s + 1)
        if not Zs_.allclose(target, atol=1e-12):
            raise RuntimeError(f"order {s} normal form is not a power of the action")
    C_h1 = 1.75 * (1 + 2 * b)
    C_r = constants(r, 0.0, 0.0, C_h1, 1.0).C_r
    ratios = [abs(c) * s / (C_h1 * C_r ** (s - 1)) for s, c in enumerate(coeffs, start=1) if s >= 2]
    return UncoupledCoefficients(r, b, coeffs, ratios, C_h1, C_r)


@dataclass
class SingleSiteSolution:
    rho: float
    coeffs: list
    lam: float
    profile: np.ndarray
    lam_alt: float

    @property
    def frequency(self) -> float:
        return 1.0 + 2.0 * self.lam

    def to_json(self, spectrum=None) -> str:
        d = {"rho": self.rho, "c_s": list(self.coeffs), "lambda0": self.lam,
             "lambda0_sum_s_cs": self.lam_alt, "profile": self.profile.tolist()}
        if spectrum is not None:
            d["spectrum"] = [float(v) for v in spectrum]
        return json.dumps(d, indent=2, sort_keys=True)


def multiplier(rho: float, coeffs) -> float:
    """lambda_0 = sum_s (s+1) c_s rho^{2s}, from grad Z = 2 lambda z at x_0 = rho."""
    return float(sum((s + 1) * c * rho ** (2 * s) for s, c in enumerate(coeffs, start=1)))


def single_site_solution(rho: float, coeffs, N: int = 1) -> SingleSiteSolution:
    prof = np.zeros(2 * N)
    prof[0] = rho
    alt = float(sum(2 * s * c * rho ** (2 * s) for s, c in enumerate(coeffs, start=1)))
    return SingleSiteSolution(rho, list(coeffs), multiplier(rho, coeffs), prof, alt)


def stationarity_residual(z, lam, model: GdnlsModel) -> float:
    return float(np.max(np.abs(model.grad_Z(z) - 2 * lam * np.asarray(z))))


def transverse_basis(z: np.ndarray) -> np.ndarray:
    """Orthonormal basis of V: the complement of span{z, Jz}."""
    z = np.asarray(z, dtype=float)
    n2 = z.size
    U = np.column_stack([z, J_apply(z)])
    Q, _ = np.linalg.qr(np.column_stack([U, np.eye(n2)]))
    return Q[:, 2:]


@dataclass
class ConstrainedHessian:
    matrix: np.ndarray
    restricted: np.ndarray
    eigenvalues: np.ndarray
    coercivity: float
    sign: int


def constrained_hessian(profile, model: GdnlsModel, lam: float | None = None) -> ConstrainedHessian:
    """Hessian of Z - lam ||z||^2 and its restriction to V.

    ``lam`` defaults to the least-squares multiplier of the profile.
    """
    z = np.asarray(profile, dtype=float)
    if lam is None:
        g = model.grad_Z(z)
        lam = float(g @ z / (2 * z @ z))
    M = model.hess_Z(z) - 2 * lam * np.eye(z.size)
    P = transverse_basis(z)
    Mv = P.T @ M @ P
    ev = np.linalg.eigvalsh(0.5 * (Mv + Mv.T))
    if np.all(ev > 0):
        sign = 1
    elif np.all(ev < 0):
        sign = -1
    else:
        sign = 0
    return ConstrainedHessian(M, Mv, ev, float(np.min(np.abs(ev))), sign)
