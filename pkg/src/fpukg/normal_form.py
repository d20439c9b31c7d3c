"""Resonant Lie-transform normal form H_Omega + Z_0 + Z_1 + ... + Z_r + remainder.

The recursion runs in complex coordinates xi = (x+iy)/sqrt2, eta = (x-iy)/sqrt2
where {H_Omega, xi^m eta^n} = i Omega (|m|-|n|) xi^m eta^n. At order s the
degree 2s+2 part f_s of the current Hamiltonian is split into its resonant
part Z_s (|m| = |n|) and the rest g_s, and chi_s solves

    {H_Omega + Z_0, chi_s} = -g_s

by a Neumann series around the diagonal operator {H_Omega, .}. The new
Hamiltonian is exp(L_chi_s) H with L_chi f = {f, chi}, so that
H^(r) = H o phi_chi1 o ... o phi_chir.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import ChainParams
from .polyeval import CompiledSeed
from .quad_normal_form import LinearTransform, build_A, split_H0, transform_H1
from .seeds import Seed, degree

E = math.e


class OrderTooHighError(ValueError):
    def __init__(self, r, r_star):
        super().__init__(f"order r={r} is not below r_*={r_star:.6g}; admissible orders: r < {r_star:.6g}")
        self.r = r
        self.r_star = r_star


class ConsistencyError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


class FlowToleranceError(RuntimeError):
    pass


def f_mu(mu: float) -> float:
    """(1 - mu^4)(1 - mu^3) / mu^2, decreasing on (0, 1)."""
    if mu <= 0:
        return math.inf
    return (1 - mu**4) * (1 - mu**3) / mu**2


def f_mu_inverse(value: float) -> float:
    if value == math.inf:
        return 0.0
    if value <= 0:
        return 1.0
    hi = 1.0
    lo = min(0.5, 1.0 / math.sqrt(value))
    while f_mu(lo) < value:
        lo /= 2
    return brentq(lambda m: f_mu(m) - value, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=200)


@dataclass(frozen=True)
class NFConstants:
    r: int
    mu: float
    Omega: float
    C_zeta0: float
    C_h1: float
    f_mu: float
    r_star: float
    gamma: float
    C_star: float
    C_r: float
    C_starstar: float
    sigma_ladder: tuple
    R_star_bound: float
    mu_star: float
    R_star_uniform: float
    admissible: bool

    def to_json(self) -> str:
        d = asdict(self)
        d["sigma_ladder"] = list(self.sigma_ladder)
        return json.dumps(_jsonable(d), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _c_star(C_h1, gamma, mu):
    den = gamma * (1 - mu**4) * (1 - mu**3)
    return math.inf if den <= 0 else 3 * C_h1 / den


def _R_star(C_r):
    return 0.0 if not math.isfinite(C_r) else math.sqrt(2 / (3 * (1 + E) * C_r))


def constants(
    r: int,
    mu: float,
    C_zeta0: float,
    C_h1: float,
    Omega: float,
    sigma1: float = math.inf,
    sigma_star: float | None = None,
    strict: bool = True,
) -> NFConstants:
    """Closed-form constants of the order-r normal form.

    With ``strict`` an order r >= r_* raises :class:`OrderTooHighError`;
    otherwise the returned ledger carries ``admissible=False``.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    fm = f_mu(mu)
    r_star = math.inf if C_zeta0 == 0 else Omega * fm / (24 * C_zeta0)
    admissible = r < r_star
    if strict and not admissible:
        raise OrderTooHighError(r, r_star)
    gamma = 2 * Omega if math.isinf(r_star) else 2 * Omega * (1 - r / (2 * r_star))
    C_star = _c_star(C_h1, gamma, mu)
    C_r = 64 * r * r * C_star
    C_ss = 8 * math.sqrt(2 * C_star / 3)
    if sigma_star is None:
        sigma_star = sigma1 / 2
    if math.isinf(sigma1):
        ladder = tuple(math.inf for _ in range(r))
    else:
        ladder = tuple(sigma1 - (j - 1) / r * (sigma1 - sigma_star) for j in range(1, r + 1))
    mu_star = f_mu_inverse(24 * C_zeta0 * r / Omega) if C_zeta0 > 0 else 1.0
    # at mu = mu*(r) one has r_* = r, hence gamma = Omega
    Cs_at = _c_star(C_h1, Omega, mu_star)
    R_uniform = _R_star(64 * r * r * Cs_at)
    return NFConstants(
        r, mu, Omega, C_zeta0, C_h1, fm, r_star, gamma, C_star, C_r, C_ss, ladder,
        _R_star(C_r), mu_star, R_uniform, admissible,
    )


# --- homological equation ---------------------------------------------------------


def _imbalance(mono) -> int:
    return sum(p - q for _, p, q in mono)


def resonant_part(f: Seed) -> Seed:
    return f._new({m: c for m, c in f.terms.items() if _imbalance(m) == 0})


def nonresonant_part(f: Seed) -> Seed:
    return f._new({m: c for m, c in f.terms.items() if _imbalance(m) != 0})


def _divide(g: Seed, Omega: float) -> Seed:
    """Inverse of {H_Omega, .} on non-resonant complex monomials."""
    out = {}
    for m, c in g.terms.items():
        k = _imbalance(m)
        if k == 0:
            raise ConsistencyError("zero divisor outside the resonant kernel")
        out[m] = c / (1j * Omega * k)
    return g._new(out)


def solve_homological(g: Seed, Omega: float, zeta0c: Seed, tol: float, max_range: int, max_iter: int = 60):
    """chi with {Omega xi eta + zeta0, chi} = -g on the non-resonant subspace."""
    chi = _divide(-1.0 * g, Omega).prune(tol)
    it = 0
    for it in range(1, max_iter + 1):
        if zeta0c.is_zero():
            break
        corr = zeta0c.bracket(chi, max_range=max_range, tol=tol)
        new = _divide(-1.0 * g - corr, Omega).prune(tol)
        delta = (new - chi).poly_norm(1.0)
        chi = new
        if delta <= tol * max(1.0, chi.poly_norm(1.0)):
            break
    else:
        raise ConsistencyError("Neumann series for the homological equation did not converge")
    return chi, it


def lie_exp(H: Seed, chi: Seed, max_degree: int, max_range: int, tol: float) -> Seed:
    """exp(L_chi) H = H + {H, chi} + {{H, chi}, chi}/2 + ... truncated in degree."""
    out = H
    term = H
    k = 1
    while True:
        term = term.bracket(chi, max_degree=max_degree, max_range=max_range, tol=tol) * (1.0 / k)
        term = term.truncate(max_degree=max_degree).prune(tol)
        if term.is_zero():
            break
        out = out + term
        k += 1
    return out.prune(tol)


# --- bundle ------------------------------------------------------------------------------


@dataclass
class NormalFormBundle:
    params: ChainParams
    r: int
    Omega: float
    h_omega: Seed
    zeta0: Seed
    h1: Seed
    Z: list
    chi: list
    consts: NFConstants
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    # seeds -----------------------------------------------------------------------
    @property
    def N(self) -> int:
        return self.params.N

    def Zcal_seed(self, include_zeta0: bool = True) -> Seed:
        out = self.zeta0.copy() if include_zeta0 else Seed()
        for z in self.Z:
            out = out + z
        return out

    def K_seed(self) -> Seed:
        return self.h_omega + self.Zcal_seed()

    def transformed_H_seed(self) -> Seed:
        """H in the linear (q, p) variables."""
        return self.h_omega + self.zeta0 + self.h1

    def compiled(self, name: str) -> CompiledSeed:
        if name not in self._cache:
            if name == "H":
                seed = self.transformed_H_seed()
            elif name == "K":
                seed = self.K_seed()
            elif name == "H_Omega":
                seed = self.h_omega
            elif name == "Zcal":
                seed = self.Zcal_seed()
            elif name.startswith("chi"):
                seed = self.chi[int(name[3:]) - 1]
            elif name.startswith("Z"):
                seed = self.Z[int(name[1:]) - 1]
            else:
                raise KeyError(name)
            self._cache[name] = CompiledSeed(seed)
        return self._cache[name]

    @property
    def linear(self) -> LinearTransform:
        if "linear" not in self._cache:
            self._cache["linear"] = LinearTransform(build_A(self.params.a, self.N))
        return self._cache["linear"]

    # evaluation -------------------------------------------------------------------
    def H_Omega(self, z):
        return self.compiled("H_Omega").value(z)

    def Zcal(self, z):
        return self.compiled("Zcal").value(z)

    def K(self, z):
        return self.compiled("K").value(z)

    def H_linear(self, z):
        return self.compiled("H").value(z)

    def bracket_residuals(self, z) -> list:
        """max |{H_Omega, Z_s}(z)| over the sample for every s."""
        gO = self.compiled("H_Omega").gradient(z)
        n = self.N
        out = []
        for s in range(1, self.r + 1):
            gz = self.compiled(f"Z{s}").gradient(z)
            br = np.sum(gO[..., :n] * gz[..., n:] - gO[..., n:] * gz[..., :n], axis=-1)
            out.append(float(np.max(np.abs(br))))
        return out

    def decay_ratios(self) -> dict:
        """Fitted class constants of chi_s and zeta_s over their budgets."""
        c = self.consts
        out = {"chi": [], "zeta": []}
        for s in range(1, self.r + 1):
            sig = c.sigma_ladder[s - 1]
            base = c.C_r ** (s - 1) * c.C_h1 / s
            out["chi"].append(self.chi[s - 1].fit_decay(sig) / (base / c.gamma))
            out["zeta"].append(self.Z[s - 1].fit_decay(sig) / base)
        return out

    # transformations ------------------------------------------------------------------
    def _flow(self, s: int, z: np.ndarray, t: float, rtol: float) -> np.ndarray:
        comp = self.compiled(f"chi{s}")
        z0 = np.atleast_2d(np.asarray(z, dtype=float))
        shape = z0.shape
        scale = float(np.max(np.abs(comp.field(z0)))) if z0.size else 0.0
        if scale == 0.0:
            return z0.reshape(np.shape(z))

        def rhs(_, w):
            return comp.field(z0 + w.reshape(shape)).ravel()

        sol = solve_ivp(
            rhs, (0.0, t), np.zeros(z0.size), method="DOP853",
            rtol=rtol, atol=1e-3 * rtol * scale, first_step=abs(t),
        )
        if not sol.success:
            raise FlowToleranceError(sol.message)
        return (z0 + sol.y[:, -1].reshape(shape)).reshape(np.shape(z))

    def _check_domain(self, z, radius):
        if radius is None:
            return
        nz = np.linalg.norm(np.atleast_2d(z), axis=-1).max()
        if nz > radius:
            raise DomainError(f"state norm {nz:.4g} exceeds domain radius {radius:.4g}")

    def apply_transform(self, z, direction: str = "to_original", rtol: float = 1e-12, domain_radius=None):
        """Near-identity map between normal-form and linear (q, p) variables.

        ``to_original`` evaluates phi_chi1 o ... o phi_chir (chi_r first);
        ``to_normal`` is its inverse.
        """
        self._check_domain(z, domain_radius)
        out = np.asarray(z, dtype=float)
        if direction == "to_original":
            for s in range(self.r, 0, -1):
                out = self._flow(s, out, 1.0, rtol)
        elif direction == "to_normal":
            for s in range(1, self.r + 1):
                out = self._flow(s, out, -1.0, rtol)
        else:
            raise ValueError("direction must be 'to_original' or 'to_normal'")
        return out

    def to_normal(self, z_orig, rtol: float = 1e-12):
        """Original chain variables -> normal-form variables."""
        return self.apply_transform(self.linear.forward(z_orig), "to_normal", rtol)

    def to_original(self, z_tilde, rtol: float = 1e-12):
        """Normal-form variables -> original chain variables."""
        return self.linear.inverse(self.apply_transform(z_tilde, "to_original", rtol))

    # bounds -------------------------------------------------------------------------
    def drift_bound(self, R: float, t: float, calibration: float = 1.0):
        return drift_bound(self.consts, R, t, calibration)

    # serialization --------------------------------------------------------------------
    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        files = {"h_omega.txt": self.h_omega, "zeta0.txt": self.zeta0, "h1.txt": self.h1}
        for s in range(1, self.r + 1):
            files[f"Z{s}.txt"] = self.Z[s - 1]
            files[f"chi{s}.txt"] = self.chi[s - 1]
        for name, seed in files.items():
            with open(os.path.join(directory, name), "w") as fh:
                fh.write(seed.to_text())
        info = {
            "N": self.N, "a": self.params.a, "b": self.params.b, "r": self.r, "Omega": self.Omega,
            "constants": json.loads(self.consts.to_json()),
            "meta": _jsonable(self.meta),
            "decay_ratios": _jsonable(self.decay_ratios()),
        }
        with open(os.path.join(directory, "constants.json"), "w") as fh:
            json.dump(info, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str) -> "NormalFormBundle":
        with open(os.path.join(directory, "constants.json")) as fh:
            info = json.load(fh)

        def read(name):
            with open(os.path.join(directory, name)) as fh:
                return Seed.from_text(fh.read())

        def num(v):
            return float(v) if not isinstance(v, list) else tuple(float(x) for x in v)

        cd = {k: (num(v) if k not in ("r", "admissible") else v) for k, v in info["constants"].items()}
        consts = NFConstants(**cd)
        r = info["r"]
        return cls(
            ChainParams(info["N"], info["a"], info["b"]), r, info["Omega"],
            read("h_omega.txt"), read("zeta0.txt"), read("h1.txt"),
            [read(f"Z{s}.txt") for s in range(1, r + 1)],
            [read(f"chi{s}.txt") for s in range(1, r + 1)],
            consts, info["meta"],
        )


def drift_bound(consts: NFConstants, R: float, t: float, calibration: float = 1.0):
    """Bounds on |H_Omega(t) - H_Omega(0)| and |Z(t) - Z(0)| in the normal-form variables."""
    c = consts
    common = R**4 * (2.0 / 3.0 * R * R * c.C_r) ** c.r * abs(t) / (1 - c.mu) ** 2
    b_om = calibration * c.C_h1 * c.Omega * common
    b_z = calibration * c.C_h1 * (c.mu * c.C_zeta0 + c.C_h1 * R * R) * common
    return b_om, b_z


def normal_form_recursion(h_omega, zeta0, h1, Omega, r, tol=1e-14, degree_cap=None, range_cap=8):
    """Real seeds (Z_1..Z_r, chi_1..chi_r) for h_omega + zeta0 + h1 and per-order metadata."""
    if degree_cap is None:
        degree_cap = 2 * r + 2
    zeta0c = zeta0.to_complex()
    H = (h_omega + zeta0 + h1).to_complex()
    Zs, chis, meta_orders = [], [], []
    for s in range(1, r + 1):
        f = H.homogeneous_part(2 * s + 2)
        Zc = resonant_part(f)
        g = nonresonant_part(f)
        chic, iters = solve_homological(g, Omega, zeta0c, tol, range_cap)
        H = lie_exp(H, chic, degree_cap, range_cap, tol)
        leftover = H.homogeneous_part(2 * s + 2) - Zc
        resid = leftover.poly_norm(1.0)
        if resid > 1e3 * tol * max(1.0, f.poly_norm(1.0)) + 1e-11:
            raise ConsistencyError(f"order {s}: homological residual {resid:.3e}")
        Zs.append(Zc.to_real())
        chis.append(chic.to_real())
        meta_orders.append({
            "order": s, "neumann_iterations": iters, "homological_residual": resid,
            "n_terms_Z": len(Zc), "n_terms_chi": len(chic),
        })
    return Zs, chis, meta_orders


def single_oscillator_normal_form(r: int, quartic_coeff: float = 0.25, Omega: float = 1.0, tol: float = 1e-15):
    """Birkhoff normal form of (Omega/2)(x^2+y^2) + quartic_coeff x^4 for one site."""
    h_om = Seed.from_terms([(Omega / 2, ((0, 2, 0),)), (Omega / 2, ((0, 0, 2),))])
    h1 = Seed.from_terms([(quartic_coeff, ((0, 4, 0),))])
    return normal_form_recursion(h_om, Seed(), h1, Omega, r, tol, range_cap=0)


def build_normal_form(
    params: ChainParams,
    r: int,
    tol: float = 1e-14,
    degree_cap: int | None = None,
    range_cap: int | None = None,
    strict: bool = False,
) -> NormalFormBundle:
    """Order-r normal form of the chain Hamiltonian written in (q, p) variables."""
    if r < 1:
        raise ValueError("r must be >= 1")
    N = params.N
    rates = params.rates
    A = build_A(params.a, N)
    quad = split_H0(A, sigma0=rates.sigma0)
    quart = transform_H1(A, params.b, sigma1=rates.sigma1)
    Om = quad.omega
    C_h1 = max(params.h1_constant, quart.decay_constant)
    consts = constants(r, params.mu, quad.C_zeta0, C_h1, Om, rates.sigma1, rates.sigma_star, strict=strict)
    if degree_cap is None:
        degree_cap = 2 * r + 2
    if range_cap is None:
        range_cap = N // 2

    Zs, chis, meta_orders = normal_form_recursion(
        quad.h_omega, quad.zeta0, quart.seed, Om, r, tol, degree_cap, range_cap
    )
    meta = {
        "degree_cap": degree_cap, "range_cap": range_cap, "tol": tol,
        "h1_cutoff": quart.cutoff, "h1_tail_bound": quart.tail_bound,
        "C_h1_formula": params.h1_constant, "C_h1_fitted": quart.decay_constant,
        "C_zeta0_note": "fitted minimal class constant",
        "orders": meta_orders,
    }
    return NormalFormBundle(params, r, Om, quad.h_omega, quad.zeta0, quart.seed, Zs, chis, consts, meta)


def order_threshold(params: ChainParams) -> float:
    """r_*(mu) of the chain, from the quadratic split alone."""
    A = build_A(params.a, params.N)
    quad = split_H0(A, sigma0=params.rates.sigma0)
    if quad.C_zeta0 == 0:
        return math.inf
    return quad.omega * f_mu(params.mu) / (24 * quad.C_zeta0)


def measure_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])
