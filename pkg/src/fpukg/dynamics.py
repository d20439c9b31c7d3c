"""Time integration of the chain and of the normal-form flow."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import ChainParams, energy

# Yoshida composition weights (order 2 -> 4, 6, 8)
_YOSHIDA = {
    2: [1.0],
    4: [1.0 / (2 - 2 ** (1 / 3)), -(2 ** (1 / 3)) / (2 - 2 ** (1 / 3))],
    6: [0.784513610477560, 0.235573213359357, -1.17767998417887],
    8: [0.914844246229740, 0.253693336566229, -1.44485223686048, -0.158240635368243,
        1.93813913762276, -1.96061023297549, 0.102799849391985],
}


def composition_weights(order: int) -> np.ndarray:
    """Symmetric sequence of Verlet sub-step weights summing to 1."""
    if order not in _YOSHIDA:
        raise ValueError("order must be 2, 4, 6 or 8")
    if order == 2:
        return np.array([1.0])
    if order == 4:
        w1, w0 = _YOSHIDA[4]
        return np.array([w1, w0, w1])
    outer = _YOSHIDA[order]
    w0 = 1.0 - 2.0 * sum(outer)
    return np.array(outer + [w0] + outer[::-1])


def kick_drift_coefficients(order: int):
    """Kick and drift fractions of one composed step (kick, drift, kick, ..., kick)."""
    w = composition_weights(order)
    kicks = np.zeros(w.size + 1)
    kicks[:-1] += w / 2
    kicks[1:] += w / 2
    return kicks, w.copy()


class BlowUpError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"non-finite state at t={t:.6g}")
        self.t = t


class StepSizeError(RuntimeError):
    pass


@njit(cache=True)
def _force(x, a, b, out):
    n = x.shape[0]
    for j in range(n):
        xj = x[j]
        xp = x[(j + 1) % n]
        xm = x[(j - 1) % n]
        f = -(xj + xj * xj * xj) - a * (2.0 * xj - xp - xm)
        if b != 0.0:
            dm = xj - xm
            dp = xp - xj
            f -= b * (dm * dm * dm - dp * dp * dp)
        out[j] = f


@njit(cache=True)
def _energy1(x, y, a, b):
    n = x.shape[0]
    e = 0.0
    for j in range(n):
        d = x[(j + 1) % n] - x[j]
        e += 0.5 * (y[j] * y[j] + x[j] * x[j] + a * d * d) + 0.25 * (x[j] ** 4 + b * d ** 4)
    return e


@njit(cache=True)
def _run(X, Y, a, b, h, kicks, drifts, nsteps, stride, SX, SY, H0, maxdH):
    B, n = X.shape
    f = np.empty(n)
    nrec = 1
    for bb in range(B):
        x = X[bb]
        y = Y[bb]
        rec = 1
        for k in range(1, nsteps + 1):
            for i in range(drifts.shape[0]):
                _force(x, a, b, f)
                for j in range(n):
                    y[j] += kicks[i] * h * f[j]
                for j in range(n):
                    x[j] += drifts[i] * h * y[j]
            _force(x, a, b, f)
            for j in range(n):
                y[j] += kicks[drifts.shape[0]] * h * f[j]
            e = _energy1(x, y, a, b)
            if not np.isfinite(e):
                return bb, k
            dh = abs(e - H0[bb])
            if dh > maxdH[bb]:
                maxdH[bb] = dh
            if k % stride == 0:
                SX[bb, rec] = x
                SY[bb, rec] = y
                rec += 1
        nrec = rec
    return -1, nrec


@njit(cache=True)
def _run_tangent(x, y, a, b, h, kicks, drifts, nsteps, VX, VY):
    n = x.shape[0]
    K = VX.shape[1]
    f = np.empty(n)
    for k in range(nsteps):
        for i in range(drifts.shape[0] + 1):
            # kick: y += c h F(x), v_y -= c h HessV(x) v_x
            c = kicks[i] * h
            _force(x, a, b, f)
            for j in range(n):
                y[j] += c * f[j]
            for j in range(n):
                jp = (j + 1) % n
                jm = (j - 1) % n
                dp = x[jp] - x[j]
                dm = x[j] - x[jm]
                diag = 1.0 + 3.0 * x[j] * x[j] + 2.0 * a + 3.0 * b * (dp * dp + dm * dm)
                offp = -a - 3.0 * b * dp * dp
                offm = -a - 3.0 * b * dm * dm
                for q in range(K):
                    VY[j, q] -= c * (diag * VX[j, q] + offp * VX[jp, q] + offm * VX[jm, q])
            if i < drifts.shape[0]:
                d = drifts[i] * h
                for j in range(n):
                    x[j] += d * y[j]
                for j in range(n):
                    for q in range(K):
                        VX[j, q] += d * VY[j, q]


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    stride: int = 1
    invariants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.size > 1 and np.any(np.diff(self.t) * np.sign(self.t[-1] - self.t[0]) <= 0):
            raise ValueError("time grid must be strictly monotone")

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=-1)

    def to_csv(self, columns: dict | None = None) -> str:
        """CSV with columns t, x_0.., y_0.., then any invariant columns."""
        cols = dict(self.invariants if columns is None else columns)
        cols = {k: v for k, v in cols.items() if np.ndim(v) >= 1 and len(v) == self.t.size}
        n = self.states.shape[-1] // 2
        buf = io.StringIO()
        buf.write(f"# stride={self.stride}\n")
        head = ["t"] + [f"x{j}" for j in range(n)] + [f"y{j}" for j in range(n)] + list(cols)
        buf.write(",".join(head) + "\n")
        for i in range(self.t.size):
            row = [self.t[i]] + list(self.states[i]) + [cols[k][i] for k in cols]
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def integrate_full(z0, params: ChainParams, T: float, dt: float, stride: int = 1, order: int = 2):
    """Stormer-Verlet (order 2) or its Yoshida compositions for the chain.

    ``z0`` may hold a batch (B, 2N); ``T`` may be negative. Returns a
    :class:`Trajectory` (batched states have shape (n_rec, B, 2N)) whose
    ``invariants`` hold the energy at the recorded times and the maximum
    energy error over every step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    z0 = np.asarray(z0, dtype=float)
    single = z0.ndim == 1
    Z = np.atleast_2d(z0).copy()
    Bn, n2 = Z.shape
    n = n2 // 2
    nsteps = int(round(abs(T) / dt))
    h = math.copysign(abs(T) / nsteps, T) if nsteps else 0.0
    kicks, drifts = kick_drift_coefficients(order)
    nrec = nsteps // stride + 1
    SX = np.zeros((Bn, nrec, n))
    SY = np.zeros((Bn, nrec, n))
    SX[:, 0] = Z[:, :n]
    SY[:, 0] = Z[:, n:]
    X = np.ascontiguousarray(Z[:, :n])
    Y = np.ascontiguousarray(Z[:, n:])
    H0 = np.array([_energy1(X[i], Y[i], params.a, params.b) for i in range(Bn)])
    maxdH = np.zeros(Bn)
    bad, k = _run(X, Y, params.a, params.b, h, kicks, drifts, nsteps, stride, SX, SY, H0, maxdH)
    if bad >= 0:
        raise BlowUpError(k * h)
    states = np.concatenate([SX, SY], axis=-1).transpose(1, 0, 2)
    t = np.arange(nrec) * stride * h
    if single:
        states = states[:, 0]
    traj = Trajectory(t, states, stride)
    traj.invariants["H"] = energy(states, params)
    traj.invariants["max_energy_error"] = maxdH[0] if single else maxdH
    return traj


def flow_map(z0, params: ChainParams, T: float, nsteps: int, order: int = 8) -> np.ndarray:
    """End point of the composed integrator with exactly ``nsteps`` steps."""
    Z = np.atleast_2d(np.asarray(z0, dtype=float)).copy()
    n = Z.shape[1] // 2
    kicks, drifts = kick_drift_coefficients(order)
    X = np.ascontiguousarray(Z[:, :n])
    Y = np.ascontiguousarray(Z[:, n:])
    SX = np.zeros((Z.shape[0], 1, n))
    SY = np.zeros_like(SX)
    H0 = np.zeros(Z.shape[0])
    maxdH = np.zeros(Z.shape[0])
    bad, k = _run(X, Y, params.a, params.b, T / nsteps, kicks, drifts, nsteps, nsteps + 1, SX, SY, H0, maxdH)
    if bad >= 0:
        raise BlowUpError(k * T / nsteps)
    out = np.concatenate([X, Y], axis=-1)
    return out[0] if np.ndim(z0) == 1 else out


def flow_with_tangent(z0, params: ChainParams, T: float, nsteps: int, order: int = 8):
    """End point and Jacobian of the discrete flow map (exact tangent propagation)."""
    z0 = np.asarray(z0, dtype=float)
    n = z0.size // 2
    x = z0[:n].copy()
    y = z0[n:].copy()
    V = np.eye(2 * n)
    VX = np.ascontiguousarray(V[:n])
    VY = np.ascontiguousarray(V[n:])
    kicks, drifts = kick_drift_coefficients(order)
    _run_tangent(x, y, params.a, params.b, T / nsteps, kicks, drifts, nsteps, VX, VY)
    return np.concatenate([x, y]), np.vstack([VX, VY])


def escape_time(traj: Trajectory, R_ball: float):
    """First time with ||z|| > R_ball, linearly interpolated; ``None`` if never."""
    nrm = traj.norms()
    if nrm.ndim > 1:
        nrm = nrm.max(axis=tuple(range(1, nrm.ndim)))
    idx = np.nonzero(nrm > R_ball)[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    if i == 0:
        return float(traj.t[0])
    t0, t1 = traj.t[i - 1], traj.t[i]
    n0, n1 = nrm[i - 1], nrm[i]
    return float(t0 + (R_ball - n0) * (t1 - t0) / (n1 - n0))


# --- normal-form flow -------------------------------------------------------------------


def _midpoint_step(z, h, field, tol, max_iter):
    z1 = z + h * field(z)
    for _ in range(max_iter):
        new = z + h * field(0.5 * (z + z1))
        err = np.max(np.abs(new - z1))
        z1 = new
        if err <= tol * max(np.max(np.abs(z)), 1e-300):
            return z1
    raise StepSizeError("implicit midpoint iteration did not converge; reduce dt")


def integrate_gdnls(z0, model, T: float, dt: float, stride: int = 1, tol: float = 1e-13, max_iter: int = 50):
    """Flow of K = H_Omega + Z: exact rotation for H_Omega composed with the
    implicit midpoint rule for Z (the two flows commute).

    Implicit midpoint conserves the quadratic invariant H_Omega exactly and
    is symmetric, so integrating back returns the initial state.
    """
    from .gdnls import rotate

    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.array(z0, dtype=float)
    nsteps = int(round(abs(T) / dt))
    h = math.copysign(abs(T) / nsteps, T) if nsteps else 0.0
    nrec = nsteps // stride + 1
    states = np.empty((nrec,) + z.shape)
    states[0] = z
    HO = [model.H_Omega(z)]
    Zv = [model.Z(z)]
    rec = 1
    for k in range(1, nsteps + 1):
        z = rotate(z, 0.5 * model.Omega * h)
        z = _midpoint_step(z, h, model.field_Z, tol, max_iter)
        z = rotate(z, 0.5 * model.Omega * h)
        if not np.all(np.isfinite(z)):
            raise BlowUpError(k * h)
        if k % stride == 0:
            states[rec] = z
            HO.append(model.H_Omega(z))
            Zv.append(model.Z(z))
            rec += 1
    t = np.arange(nrec) * stride * h
    traj = Trajectory(t, states, stride)
    traj.invariants["H_Omega"] = np.array(HO)
    traj.invariants["Z"] = np.array(Zv)
    return traj
