"""Orbit metrics, drift monitors and the orbital-stability protocol."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .breathers import (
    ContinuationThresholdError,
    GdnlsBreather,
    continue_gdnls_breather,
    continue_kg_breather,
    kg_anchor,
)
from .dynamics import integrate_full, integrate_gdnls
from .gdnls import J_apply
from .model import ChainParams
from .normal_form import NormalFormBundle, _jsonable, build_normal_form, measure_slope, order_threshold


# --- Hausdorff distance --------------------------------------------------------------


@dataclass
class OrbitSamples:
    states: np.ndarray
    dt: float = math.nan
    span: float = math.nan

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] == 0:
            raise ValueError("orbit sample set is empty")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("orbit samples must be finite")

    def __len__(self):
        return self.states.shape[0]


def _points(A) -> np.ndarray:
    if isinstance(A, OrbitSamples):
        return A.states
    P = np.atleast_2d(np.asarray(A, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("orbit sample set is empty")
    return P


def directed_distance(A, B) -> float:
    """sup_{a in A} inf_{b in B} ||a - b||."""
    P, Q = _points(A), _points(B)
    d, _ = cKDTree(Q).query(P, k=1)
    return float(np.max(d))


def hausdorff(A, B) -> float:
    return max(directed_distance(A, B), directed_distance(B, A))


def circle_distance(points, center_profile) -> np.ndarray:
    """Exact distance from each point to the rotation circle {cos t z + sin t Jz}."""
    z = np.asarray(center_profile, dtype=float)
    rho = np.linalg.norm(z)
    e1 = z / rho
    e2 = J_apply(z) / rho
    P = np.atleast_2d(points)
    u1, u2 = P @ e1, P @ e2
    ru = np.hypot(u1, u2)
    # residual orthogonal to the plane, formed directly to avoid cancellation
    perp = P - np.outer(u1, e1) - np.outer(u2, e2)
    return np.hypot(np.linalg.norm(perp, axis=1), ru - rho)


def fourier_upsample(loop: np.ndarray, n: int) -> np.ndarray:
    """Trigonometric interpolation of a closed loop given by equispaced samples."""
    m = loop.shape[0]
    if n <= m:
        return loop
    F = np.fft.rfft(loop, axis=0)
    return np.fft.irfft(F, n=n, axis=0) * (n / m)


# --- drift monitor ---------------------------------------------------------------------


@dataclass
class DriftReport:
    t: np.ndarray
    dH_Omega: np.ndarray
    dZ: np.ndarray
    bound_H_Omega: np.ndarray
    bound_Z: np.ndarray
    ratio: float
    envelope_slope: float
    escape_time: float | None = None

    @property
    def rate(self) -> float:
        """max |H_Omega(t) - H_Omega(0)| / T over the monitored span."""
        return float(np.max(self.dH_Omega) / self.t[-1]) if self.t[-1] > 0 else 0.0

    def to_dat(self) -> str:
        rows = ["# t dH_Omega dZ bound_H_Omega bound_Z"]
        for row in zip(self.t, self.dH_Omega, self.dZ, self.bound_H_Omega, self.bound_Z):
            rows.append(" ".join(f"{v:.10e}" for v in row))
        return "\n".join(rows) + "\n"


def drift_monitor(traj, bundle: NormalFormBundle, R: float, calibration: float = 1.0,
                  coordinates: str = "original") -> DriftReport:
    """Drift of H_Omega and Z along a trajectory, read in normal-form variables.

    ``coordinates='original'`` maps full-flow states through the normalizing
    transformation first; ``'normal'`` takes them as they are (K-flow runs).
    Batched trajectories report the maximum over the batch.  The monitor stops
    at the first sample leaving B_R in normal-form variables.
    """
    S = traj.states
    if coordinates == "original":
        nt = bundle.to_normal(S.reshape(-1, S.shape[-1])).reshape(S.shape)
    elif coordinates == "normal":
        nt = S
    else:
        raise ValueError("coordinates must be 'original' or 'normal'")
    HO = bundle.H_Omega(nt)
    Zv = bundle.Zcal(nt)
    nrm = np.linalg.norm(nt, axis=-1)
    if HO.ndim > 1:
        nrm = nrm.max(axis=1)
    dHO = np.abs(HO - HO[0])
    dZ = np.abs(Zv - Zv[0])
    if dHO.ndim > 1:
        dHO, dZ = dHO.max(axis=1), dZ.max(axis=1)
    t = np.asarray(traj.t, dtype=float)
    esc = None
    out = np.nonzero(nrm > R)[0]
    if out.size:
        esc = float(t[out[0]])
        k = max(int(out[0]), 1)
        t, dHO, dZ = t[:k], dHO[:k], dZ[:k]
    bO, bZ = bundle.drift_bound(R, np.abs(t), calibration)
    bO, bZ = np.broadcast_to(bO, t.shape), np.broadcast_to(bZ, t.shape)
    pos = np.abs(t) > 0
    ratio = float(np.max(dHO[pos] / bO[pos])) if pos.any() else 0.0
    env = np.maximum.accumulate(dHO)
    slope = float(t[pos] @ env[pos] / (t[pos] @ t[pos])) if pos.any() else 0.0
    return DriftReport(t, dHO, dZ, np.asarray(bO, float), np.asarray(bZ, float), ratio, slope, esc)


def calibrate_drift_constant(report: DriftReport) -> float:
    """Smallest multiplier making the drift bound dominate the measured H_Omega drift."""
    pos = report.t > 0
    if not pos.any():
        return 0.0
    return float(np.max(report.dH_Omega[pos] / report.bound_H_Omega[pos]))


@dataclass
class DriftScaling:
    r: int
    c: float
    N: int
    T: float
    R: list
    rates: list
    slope: float
    expected: int
    rng_seed: int

    def to_csv(self) -> str:
        rows = ["R,drift_rate"] + [f"{R:.6g},{v:.10e}" for R, v in zip(self.R, self.rates)]
        rows.append(f"# slope={self.slope:.6f} expected={self.expected}")
        return "\n".join(rows) + "\n"


def drift_scaling(
    r: int, Rs, c: float = 1e-3, N: int = 16, T: float = 1000.0, dt: float = 0.05,
    n_dirs: int = 4, rng_seed: int = 3, order: int = 8, stride: int = 40,
    bundle: NormalFormBundle | None = None,
) -> DriftScaling:
    """Drift rate of H_Omega against R with initial data on the sphere ||z~|| = 4R/9."""
    if bundle is None:
        bundle = build_normal_form(ChainParams(N, c, 0.0), r)
    rng = np.random.default_rng(rng_seed)
    d = rng.normal(size=(n_dirs, 2 * N))
    d /= np.linalg.norm(d, axis=1)[:, None]
    rates = []
    for R in Rs:
        z0 = bundle.to_original(4.0 / 9.0 * R * d)
        traj = integrate_full(z0, bundle.params, T, dt, stride=stride, order=order)
        rep = drift_monitor(traj, bundle, R)
        if rep.escape_time is not None:
            raise RuntimeError(f"trajectory left B_R at t={rep.escape_time:.4g} for R={R}")
        rates.append(rep.rate)
    slope = measure_slope(np.asarray(Rs, float), np.asarray(rates))
    return DriftScaling(r, c, N, T, [float(R) for R in Rs], rates, slope, 2 * r + 4, rng_seed)


# --- stability timescale ---------------------------------------------------------------


def c_starstar(C_star: float) -> float:
    return 8.0 * math.sqrt(2.0 * C_star / 3.0)


def stability_time(eps: float, R: float, r: int, C_ss: float, C_T: float = 1.0) -> float:
    """T = C_T (eps^2 / R^4) (C_** R r)^{-2r}."""
    return C_T * eps * eps / R**4 * (C_ss * R * r) ** (-2 * r)


def timescale_table(r_list, R_list, eps_rule=lambda R: R * R / 20.0, C_star: float = 2.625, C_T: float = 1.0):
    css = c_starstar(C_star)
    rows = []
    for r in r_list:
        for R in R_list:
            eps = eps_rule(R)
            rows.append({"r": r, "R": R, "eps": eps, "C_starstar": css,
                         "T": stability_time(eps, R, r, css, C_T)})
    return rows


def timescale_csv(rows) -> str:
    out = ["r,R,eps,C_starstar,T"]
    out += [f"{d['r']},{d['R']:.6g},{d['eps']:.6g},{d['C_starstar']:.10g},{d['T']:.10e}" for d in rows]
    return "\n".join(out) + "\n"


# --- stability protocol ----------------------------------------------------------------


@dataclass
class StabilityReport:
    kind: str
    r: int
    R: float
    eps: float
    delta: float
    c: float
    N: int
    rng_seed: int
    T: float
    T_integrated: float
    period: float
    C_T: float
    C_starstar: float
    d_orbit_to_reference: list
    d_reference_to_orbit: list
    escape_times: list
    passed: list
    warnings: list = field(default_factory=list)
    drift: dict = field(default_factory=dict)

    @property
    def max_distance(self) -> float:
        return float(max(max(a, b) for a, b in zip(self.d_orbit_to_reference, self.d_reference_to_orbit)))

    @property
    def all_passed(self) -> bool:
        return bool(all(self.passed))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["max_distance"] = self.max_distance
        d["all_passed"] = self.all_passed
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def ball_samples(center, delta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in the Euclidean delta-ball around ``center``."""
    center = np.asarray(center, dtype=float)
    dim = center.size
    g = rng.normal(size=(n, dim))
    g /= np.linalg.norm(g, axis=1)[:, None]
    u = rng.random(n) ** (1.0 / dim)
    return center + delta * u[:, None] * g


def check_stability_preconditions(R: float, eps: float, delta: float):
    if not eps < R * R / 10:
        raise ValueError(f"precondition eps << R^2 violated: eps={eps:.4g} >= R^2/10={R * R / 10:.4g}")
    if not 0 <= delta < eps:
        raise ValueError(f"precondition delta < eps violated: delta={delta:.4g}, eps={eps:.4g}")


def _reference_density(length: float, eps: float) -> int:
    # spacing below eps/50 keeps the sampling error well under eps/10
    return max(720, int(math.ceil(length / (eps / 50.0))))


def _loop_length(loop: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(np.vstack([loop, loop[:1]]), axis=0), axis=1)))


def stability_experiment(
    kind: str,
    r: int,
    R: float,
    eps: float,
    delta: float,
    c: float,
    samples: int = 8,
    rng_seed: int = 0,
    N: int = 16,
    b: float = 0.0,
    C_T: float = 1.0,
    dt: float | None = None,
    order: int = 8,
    min_periods: float = 0.0,
    include_center: bool = False,
    breather: GdnlsBreather | None = None,
) -> StabilityReport:
    """Perturb the breather by at most delta, run the full chain flow over [-T, T]
    and measure both directed distances between the computed orbit segment and
    the reference loop.

    ``kind='gdnls-orbit'`` uses the GdNLS rotation circle mapped to chain
    variables; ``kind='kg-breather'`` the chain breather found by shooting.
    T follows the timescale law with the normal-form constant C_**;
    ``min_periods`` optionally extends the span to that many periods.
    """
    if kind not in ("gdnls-orbit", "kg-breather"):
        raise ValueError("kind must be 'gdnls-orbit' or 'kg-breather'")
    check_stability_preconditions(R, eps, delta)
    params = ChainParams(N, c, b)
    rho = R / 6.0
    r_star = order_threshold(params)
    if not r < r_star:
        raise ContinuationThresholdError(
            f"c={max(c, b):.4g} exceeds the operational threshold for r={r} (r_*={r_star:.4g})", max(c, b))
    if breather is None:
        breather = continue_gdnls_breather(rho, c, b, r, N)
    bundle = breather.bundle
    css = bundle.consts.C_starstar
    T = stability_time(eps, R, r, css, C_T)
    warn = []

    if kind == "gdnls-orbit":
        period = breather.period
        center = kg_anchor(breather)
        th = np.arange(720) * 2 * math.pi / 720
        circ = np.cos(th)[:, None] * breather.profile + np.sin(th)[:, None] * J_apply(breather.profile)
        coarse = bundle.to_original(circ)
    else:
        kg = continue_kg_breather(R, c, b, r, N, gdnls=breather)
        period = kg.period
        center = kg.profile
        nref = 720 * 10
        ref = integrate_full(center, params, period, period / nref, stride=1, order=order)
        coarse = ref.states[:-1]
    n_ref = _reference_density(_loop_length(coarse), eps)
    reference = fourier_upsample(coarse, n_ref)

    span = max(T, min_periods * period)
    if period > span:
        warn.append(f"breather period {period:.6g} exceeds the integration span {span:.6g}: "
                    "only a piece of the periodic orbit is compared")
        warnings.warn(warn[-1])
    rng = np.random.default_rng(rng_seed)
    starts = ball_samples(center, delta, samples, rng)
    if include_center:
        starts[0] = center
    if dt is None:
        dt = min(0.01, span / 200.0)
    stride = max(1, int(round(span / dt)) // 2000)
    fwd = integrate_full(starts, params, span, dt, stride=stride, order=order)
    bwd = integrate_full(starts, params, -span, dt, stride=stride, order=order)
    tree = cKDTree(reference)
    d_or, d_ro, esc, ok = [], [], [], []
    for i in range(samples):
        seg = np.vstack([bwd.states[::-1, i], fwd.states[1:, i]])
        d1, _ = tree.query(seg)
        d_or.append(float(d1.max()))
        d_ro.append(directed_distance(reference, seg))
        probe_pts = seg[:: max(1, seg.shape[0] // 64)]
        nrm = np.linalg.norm(bundle.to_normal(probe_pts), axis=1)
        out = np.nonzero(nrm > 2 * R / 3)[0]
        esc.append(None if out.size == 0 else float(out[0]))
        ok.append(bool(d_or[-1] < eps and d_ro[-1] < eps and esc[-1] is None))
    drift = {"max_energy_error": float(max(np.max(fwd.invariants["max_energy_error"]),
                                           np.max(bwd.invariants["max_energy_error"])))}
    return StabilityReport(kind, r, R, eps, delta, c, N, rng_seed, T, span, period, C_T, css,
                           d_or, d_ro, esc, ok, warn, drift)


def delta_sweep(kind: str, r: int, R: float, eps: float, c: float, levels: int = 6, **kw):
    """Halve delta from eps/2 until every sample passes; returns [(delta, max d_H, passed)]."""
    out = []
    delta = eps / 2
    for _ in range(levels):
        rep = stability_experiment(kind, r, R, eps, delta, c, **kw)
        out.append((delta, rep.max_distance, rep.all_passed))
        if rep.all_passed:
            break
        delta /= 2
    return out


# --- stability under the normal-form flow ------------------------------------------------


@dataclass
class KFlowStability:
    delta: float
    eps: float
    periods: float
    d_orbit_to_reference: list
    d_reference_to_orbit: list
    H_Omega_error: float
    Z_error: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2, sort_keys=True) + "\n"


def k_flow_stability(
    breather: GdnlsBreather, delta: float, eps: float, periods: float = 1000.0,
    samples: int = 8, rng_seed: int = 0, dt: float = 1.0, n_ref: int = 4096,
) -> KFlowStability:
    """Orbital stability of the GdNLS breather circle under the K-flow itself."""
    model = breather.model
    T = periods * breather.period
    rng = np.random.default_rng(rng_seed)
    starts = ball_samples(breather.profile, delta, samples, rng)
    traj = integrate_gdnls(starts, model, T, dt)
    th = np.arange(n_ref) * 2 * math.pi / n_ref
    prof = breather.profile
    circ = np.cos(th)[:, None] * prof + np.sin(th)[:, None] * J_apply(prof)
    d_or, d_ro = [], []
    for i in range(samples):
        seg = traj.states[:, i]
        d_or.append(float(np.max(circle_distance(seg, prof))))
        d_ro.append(directed_distance(circ, seg))
    HO = traj.invariants["H_Omega"]
    Zv = traj.invariants["Z"]
    eH = float(np.max(np.abs(HO - HO[0])))
    eZ = float(np.max(np.abs(Zv - Zv[0])))
    ok = bool(max(d_or) < eps and max(d_ro) < eps)
    return KFlowStability(delta, eps, periods, d_or, d_ro, eH, eZ, ok)
