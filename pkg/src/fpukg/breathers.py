"""Breathers continued from the anti-continuous limit.

GdNLS breathers solve grad Z = 2 lambda z on the sphere ||z|| = rho with the
gauge y_0 = 0. Chain breathers are periodic orbits of the full flow found by
shooting with the period free and the site-0 position pinned.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import flow_map, flow_with_tangent
from .gdnls import GdnlsModel, J_apply, constrained_hessian, single_site_solution, uncoupled_coefficients
from .model import ChainParams, vector_field
from .normal_form import NormalFormBundle, build_normal_form


class ContinuationThresholdError(RuntimeError):
    def __init__(self, message, last_c):
        super().__init__(f"{message} (last converged c = {last_c:.6g})")
        self.last_c = last_c


class ShootingError(RuntimeError):
    pass


def periodic_distance(N: int) -> np.ndarray:
    j = np.arange(N)
    return np.minimum(j, N - j)


def localization_fit(profile: np.ndarray, floor: float = 1e-300):
    """Fit site amplitudes sqrt(x_j^2 + y_j^2) ~ C exp(-kappa d) over d >= 1.

    Amplitudes are grouped by periodic distance from site 0 (max over the
    two sides); returns dict(rate, C, r2).
    """
    z = np.asarray(profile)
    n = z.size // 2
    amp = np.hypot(z[:n], z[n:])
    dist = periodic_distance(n)
    ds, vals = [], []
    for d in range(1, n // 2 + 1):
        v = amp[dist == d].max()
        if v > floor:
            ds.append(d)
            vals.append(v)
    if len(ds) < 2:
        return {"rate": math.inf, "C": 0.0, "r2": 1.0}
    y = np.log(vals)
    slope, icpt = np.polyfit(ds, y, 1)
    res = y - (slope * np.array(ds) + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    return {"rate": float(-slope), "C": float(math.exp(icpt)), "r2": float(1 - res @ res / ss) if ss > 0 else 1.0}


# --- GdNLS --------------------------------------------------------------------------------


@dataclass
class GdnlsBreather:
    profile: np.ndarray
    lam: float
    rho: float
    a: float
    b: float
    Omega: float
    residual: float
    sphere_error: float
    path: list = field(default_factory=list)
    bundle: NormalFormBundle | None = None
    model: GdnlsModel | None = None
    history: list = field(default_factory=list, repr=False)
    bifurcations: list = field(default_factory=list)

    @property
    def frequency(self) -> float:
        """Angular frequency of the K-flow rotation through the profile."""
        return self.Omega + 2.0 * self.lam

    @property
    def period(self) -> float:
        return 2 * math.pi / self.frequency

    def profile_csv(self) -> str:
        n = self.profile.size // 2
        rows = ["j,x,y"] + [f"{j},{self.profile[j]:.17g},{self.profile[n + j]:.17g}" for j in range(n)]
        return "\n".join(rows) + "\n"

    def log_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.path)


def newton_gdnls(model: GdnlsModel, z, lam, rho, tol=1e-13, max_iter=30):
    """Solve grad Z - 2 lam z = 0, ||z||^2 = rho^2, y_0 = 0 (least-squares Newton)."""
    n2 = z.size
    n = n2 // 2
    z = np.array(z, dtype=float)
    scale = max(abs(lam), 1e-300)
    for it in range(max_iter):
        g = model.grad_Z(z)
        F = np.concatenate([g - 2 * lam * z, [z @ z - rho * rho, z[n]]])
        res = np.max(np.abs(F[:n2]))
        if res <= tol * max(scale * rho, 1e-300) and abs(F[n2]) <= 1e-15 and it > 0:
            return z, lam, res, it
        Hs = model.hess_Z(z)
        Jm = np.zeros((n2 + 2, n2 + 1))
        Jm[:n2, :n2] = Hs - 2 * lam * np.eye(n2)
        Jm[:n2, n2] = -2 * z
        Jm[n2, :n2] = 2 * z
        Jm[n2 + 1, n] = 1.0
        if not (np.all(np.isfinite(Jm)) and np.all(np.isfinite(F))):
            raise ShootingError(f"shooting diverged at iteration {it}")
        step, *_ = np.linalg.lstsq(Jm, -F, rcond=None)
        z = z + step[:n2]
        lam = lam + step[n2]
        if not np.all(np.isfinite(z)):
            break
    g = model.grad_Z(z)
    res = float(np.max(np.abs(g - 2 * lam * z)))
    if res <= 1e-10 and abs(z @ z - rho * rho) <= 1e-12:
        return z, lam, res, max_iter
    raise ContinuationThresholdError("GdNLS Newton did not converge", math.nan)


def continuation_grid(c_target: float, n_steps: int = 12, power: float = 4.0) -> np.ndarray:
    """Path parameters t in (0, 1] spaced evenly in t^{1/power} (uniform in mu)."""
    s = np.arange(1, n_steps + 1) / n_steps
    return s**power


def continue_gdnls_breather(
    rho: float,
    a: float,
    b: float = 0.0,
    r: int = 1,
    N: int = 16,
    n_steps: int = 12,
    min_step: float = 1e-8,
    grid=None,
    keep_bundle: bool = True,
) -> GdnlsBreather:
    """Continue the single-site profile from (0, 0) to (a, b) along the ray t (a, b).

    Steps are uniform in mu; a failed Newton solve halves the step, and the
    continuation stops with :class:`ContinuationThresholdError` when the step
    falls below ``min_step``.
    """
    c0 = uncoupled_coefficients(r, b=0.0)
    sol0 = single_site_solution(rho, c0.coeffs, N)
    z = sol0.profile.copy()
    lam = sol0.lam
    path = [{"t": 0.0, "a": 0.0, "b": 0.0, "residual": 0.0, "distance": 0.0, "lambda": lam}]
    ts = list(continuation_grid(1.0, n_steps) if grid is None else grid)
    if a == 0 and b == 0:
        bundle = build_normal_form(ChainParams(N, 0.0, 0.0), r)
        model = GdnlsModel.from_bundle(bundle)
        z, lam, res, _ = newton_gdnls(model, z, lam, rho)
        history = [(0.0, z.copy(), lam, bundle if keep_bundle else None)]
        return GdnlsBreather(z, lam, rho, 0.0, 0.0, model.Omega, res, abs(z @ z - rho**2), path,
                             bundle if keep_bundle else None, model, history)
    t_prev, z_prev, lam_prev = 0.0, None, None
    t_cur = 0.0
    queue = ts[:]
    bundle = model = None
    res = 0.0
    history = []
    bifurcations = []
    last_sign = -1
    while queue:
        t_next = queue[0]
        if t_next - t_cur < min_step:
            raise ContinuationThresholdError("continuation step underflow", max(a, b) * t_cur)
        params = ChainParams(N, a * t_next, b * t_next)
        bundle_n = build_normal_form(params, r)
        model_n = GdnlsModel.from_bundle(bundle_n)
        # secant predictor
        if z_prev is not None and t_cur > t_prev:
            w = (t_next - t_cur) / (t_cur - t_prev)
            zg = z + w * (z - z_prev)
            lg = lam + w * (lam - lam_prev)
        else:
            zg, lg = z, lam
        try:
            zn, ln, res, iters = newton_gdnls(model_n, zg, lg, rho)
        except (ContinuationThresholdError, np.linalg.LinAlgError):
            # retry with half the step; the original target stays queued
            queue.insert(0, 0.5 * (t_cur + t_next))
            continue
        queue.pop(0)
        ch = constrained_hessian(zn, model_n, ln)
        z_prev, lam_prev, t_prev = z, lam, t_cur
        z, lam, t_cur = zn, ln, t_next
        bundle, model = bundle_n, model_n
        history.append((t_cur, z.copy(), lam, bundle if keep_bundle else None))
        if ch.sign != last_sign:
            bifurcations.append({"t": t_cur, "c": max(a, b) * t_cur, "sign": ch.sign})
            last_sign = ch.sign
        path.append({
            "t": t_cur, "a": a * t_cur, "b": b * t_cur, "mu": params.mu, "residual": res,
            "newton_iterations": iters, "distance": float(np.linalg.norm(z - sol0.profile)),
            "lambda": lam, "coercivity": ch.coercivity, "hessian_sign": ch.sign,
        })
    return GdnlsBreather(z, lam, rho, a, b, model.Omega, res, abs(z @ z - rho**2), path,
                         bundle if keep_bundle else None, model, history, bifurcations)


# --- chain breathers ----------------------------------------------------------------------


@dataclass
class KgBreather:
    profile: np.ndarray
    period: float
    residual: float
    params: ChainParams
    anchor: np.ndarray
    monodromy_eigs: np.ndarray | None = None
    flags: list = field(default_factory=list)
    path: list = field(default_factory=list)

    def profile_csv(self) -> str:
        n = self.profile.size // 2
        rows = ["j,x,y"] + [f"{j},{self.profile[j]:.17g},{self.profile[n + j]:.17g}" for j in range(n)]
        return "\n".join(rows) + "\n"


def steps_for(T: float, dt: float) -> int:
    return max(8, int(math.ceil(T / dt)))


def periodicity_residual(z, T, params: ChainParams, dt: float = 0.01, order: int = 8) -> float:
    return float(np.max(np.abs(flow_map(z, params, T, steps_for(T, dt), order) - z)))


def shoot_periodic_orbit(
    z, T, params: ChainParams, x0_target: float, dt: float = 0.01, order: int = 8,
    tol: float = 1e-12, max_iter: int = 30,
):
    """Newton shooting on (z, T) for Phi_T(z) = z, y_0 = 0, x_0 = x0_target."""
    z = np.array(z, dtype=float)
    n2 = z.size
    n = n2 // 2
    for it in range(max_iter):
        ns = steps_for(T, dt)
        zT, M = flow_with_tangent(z, params, T, ns, order)
        F = np.concatenate([zT - z, [z[n], z[0] - x0_target]])
        res = float(np.max(np.abs(zT - z)))
        if res < tol and abs(z[n]) < 1e-15 and it > 0:
            return z, T, res, M, it
        Jm = np.zeros((n2 + 2, n2 + 1))
        Jm[:n2, :n2] = M - np.eye(n2)
        Jm[:n2, n2] = vector_field(zT, params)
        Jm[n2, n] = 1.0
        Jm[n2 + 1, 0] = 1.0
        if not (np.all(np.isfinite(Jm)) and np.all(np.isfinite(F))):
            raise ShootingError(f"shooting diverged at iteration {it}")
        step, *_ = np.linalg.lstsq(Jm, -F, rcond=None)
        z = z + step[:n2]
        T = T + step[n2]
        if not (np.all(np.isfinite(z)) and T > 0):
            break
    if not (np.all(np.isfinite(z)) and T > 0):
        raise ShootingError("shooting left the finite domain")
    ns = steps_for(T, dt)
    zT, M = flow_with_tangent(z, params, T, ns, order)
    res = float(np.max(np.abs(zT - z)))
    if res < 1e-9:
        return z, T, res, M, max_iter
    raise ShootingError(f"shooting did not converge (residual {res:.3e})")


def _check_monodromy(M: np.ndarray, tol: float = 1e-6):
    ev = np.linalg.eigvals(M)
    near = int(np.sum(np.abs(ev - 1.0) < tol))
    flags = []
    if near > 2:
        flags.append(f"monodromy has {near} eigenvalues within {tol:g} of 1")
    return ev, flags


def kg_anchor(gb: GdnlsBreather) -> np.ndarray:
    """psi_{a,b}: the GdNLS profile mapped back to chain variables."""
    return gb.bundle.to_original(gb.profile)


def continue_kg_breather(
    R: float,
    a: float,
    b: float = 0.0,
    r: int = 1,
    N: int = 16,
    n_steps: int = 12,
    dt: float = 0.01,
    order: int = 8,
    gdnls: GdnlsBreather | None = None,
) -> KgBreather:
    """Chain breather near psi_{a,b} with ||psi~|| = R/6, continued from c = 0.

    At every path point the GdNLS breather and its image psi_{a,b} in chain
    variables are recomputed; the shooting pins x_0 to that of psi_{a,b}.
    """
    rho = R / 6.0
    if gdnls is None:
        if a == 0 and b == 0:
            gdnls = continue_gdnls_breather(rho, 0.0, 0.0, r, N)
        else:
            gdnls = continue_gdnls_breather(rho, a, b, r, N, n_steps=n_steps)
    hist = gdnls.history
    if a or b:
        g0 = continue_gdnls_breather(rho, 0.0, 0.0, r, N)
        hist = g0.history + hist
    path = []
    z = T = None
    res = math.nan
    M = None
    anchor = None
    for t, prof, lam, bundle in hist:
        anchor = bundle.to_original(prof)
        params = ChainParams(N, a * t, b * t)
        if z is None:
            z = anchor.copy()
            z[N] = 0.0
            T = 2 * math.pi / (bundle.Omega + 2 * lam)
        z, T, res, M, iters = shoot_periodic_orbit(z, T, params, anchor[0], dt, order)
        path.append({"t": float(t), "a": a * t, "b": b * t, "mu": params.mu, "period": T, "residual": res,
                     "newton_iterations": iters, "distance_to_anchor": float(np.linalg.norm(z - anchor)),
                     "profile": z.tolist(), "anchor": anchor.tolist()})
    ev, flags = _check_monodromy(M)
    return KgBreather(z, T, res, params, anchor, ev, flags, path)


def uncoupled_period(amplitude: float, n_nodes: int = 200) -> float:
    """Period of x'' = -x - x^3 from rest at x = A (Gauss-Legendre quadrature).

    T = 4 int_0^{pi/2} dtheta / sqrt(1 + A^2 (1 + sin^2 theta) / 2).
    """
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)
    th = 0.25 * math.pi * (xg + 1)
    A2 = amplitude * amplitude
    return float(4 * 0.25 * math.pi * np.sum(wg / np.sqrt(1 + 0.5 * A2 * (1 + np.sin(th) ** 2))))


@dataclass
class ClosenessReport:
    c: list
    mu: list
    distances: list
    slope: float
    C_estimate: float

    def to_json(self) -> str:
        return json.dumps({"c": self.c, "mu": self.mu, "distances": self.distances,
                           "slope": self.slope, "C_estimate": self.C_estimate}, indent=2, sort_keys=True)


def closeness_report(kg_profiles, anchors, cs, mus) -> ClosenessReport:
    """||Psi_{a,b} - psi_{a,b}|| per grid point with its power-law fit in mu."""
    d = [float(np.linalg.norm(np.asarray(p) - np.asarray(q))) for p, q in zip(kg_profiles, anchors)]
    mu = np.asarray(mus, dtype=float)
    dd = np.asarray(d)
    sel = (mu > 0) & (dd > 0)
    if sel.sum() >= 2:
        slope = float(np.polyfit(np.log(mu[sel]), np.log(dd[sel]), 1)[0])
        Cest = float(np.max(dd[sel] / mu[sel]))
    else:
        slope, Cest = math.nan, math.nan
    return ClosenessReport([float(c) for c in cs], [float(m) for m in mus], d, slope, Cest)
