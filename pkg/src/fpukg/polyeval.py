"""Compiled evaluation of extensive polynomials, their gradients and Hessians."""
from __future__ import annotations

import numpy as np
from numba import njit

from .seeds import Seed, degree


@njit(cache=True)
def _kernel(PX, PY, fsite, fpx, fpy, nfac, coeff, out):
    # PX, PY are padded along the site axis so that j + fsite never wraps
    B = PX.shape[0]
    N = out.shape[1]
    M = coeff.shape[0]
    C = coeff.shape[1]
    for b in range(B):
        for m in range(M):
            nf = nfac[m]
            for j in range(N):
                v = PX[b, j + fsite[m, 0], fpx[m, 0]] * PY[b, j + fsite[m, 0], fpy[m, 0]]
                for f in range(1, nf):
                    s = j + fsite[m, f]
                    v = v * PX[b, s, fpx[m, f]] * PY[b, s, fpy[m, f]]
                for c in range(C):
                    out[b, j, c] += coeff[m, c] * v


def _powers(u: np.ndarray, dmax: int) -> np.ndarray:
    out = np.empty(u.shape + (dmax + 1,), dtype=u.dtype)
    out[..., 0] = 1.0
    for k in range(1, dmax + 1):
        out[..., k] = out[..., k - 1] * u
    return out


class CompiledSeed:
    """Fast evaluator for F = f^oplus (real coordinates) on batches of states.

    One pass over a merged monomial table produces F and its gradient: the
    gradient components at site j are the window polynomials
    sum_s d f/d z_s read on the state shifted by j - s.
    """

    def __init__(self, seed: Seed):
        if seed.complex_coords:
            seed = seed.to_real()
        self.seed = seed
        L = seed.max_range()
        parts = [(seed, 0)]
        gx = seed._new({}, aligned=False)
        gy = seed._new({}, aligned=False)
        for s in range(L + 1):
            gx = gx + seed.derivative(s, 0).shifted(-s)
            gy = gy + seed.derivative(s, 1).shifted(-s)
        parts += [(gx, 1), (gy, 2)]
        table = {}
        for poly, col in parts:
            for m, c in poly.terms.items():
                row = table.setdefault(m, [0.0, 0.0, 0.0])
                row[col] += float(np.real(c))
        monos = list(table)
        M = max(len(monos), 1)
        F = max((len(m) for m in monos), default=1) or 1
        self.fsite = np.zeros((M, F), dtype=np.int64)
        self.fpx = np.zeros((M, F), dtype=np.int64)
        self.fpy = np.zeros((M, F), dtype=np.int64)
        self.nfac = np.zeros(M, dtype=np.int64)
        self.coeff = np.zeros((M, 3))
        for i, m in enumerate(monos):
            self.nfac[i] = len(m)
            for f, (s, p, q) in enumerate(m):
                self.fsite[i, f], self.fpx[i, f], self.fpy[i, f] = s, p, q
            self.coeff[i] = table[m]
        self.dmax = max((max(p, q) for m in monos for _, p, q in m), default=0)
        self.max_degree = max((degree(m) for m in monos), default=0)
        self.n_monomials = len(monos)
        self.const = self.coeff[self.nfac == 0].sum(axis=0)
        self._row_cache = {}

    def _rows(self, cols: slice):
        key = (cols.start, cols.stop)
        if key not in self._row_cache:
            sel = np.nonzero(np.any(self.coeff[:, cols] != 0.0, axis=1) & (self.nfac > 0))[0]
            self._row_cache[key] = (
                np.ascontiguousarray(self.fsite[sel]), np.ascontiguousarray(self.fpx[sel]),
                np.ascontiguousarray(self.fpy[sel]), np.ascontiguousarray(self.nfac[sel]),
                np.ascontiguousarray(self.coeff[sel][:, cols]),
            )
        return self._row_cache[key]

    def _run(self, z: np.ndarray, cols: slice):
        z = np.asarray(z)
        single = z.ndim == 1
        Z = z[None, :] if single else z.reshape(-1, z.shape[-1])
        n = Z.shape[-1] // 2
        dtype = np.complex128 if np.iscomplexobj(Z) else np.float64
        Z = Z.astype(dtype, copy=False)
        fsite, fpx, fpy, nfac, coeff = self._rows(cols)
        lo = int(fsite.min()) if fsite.size else 0
        hi = int(fsite.max()) if fsite.size else 0
        idx = np.mod(np.arange(lo, n + hi) , n)
        PX = np.ascontiguousarray(_powers(Z[:, :n], self.dmax)[:, idx])
        PY = np.ascontiguousarray(_powers(Z[:, n:], self.dmax)[:, idx])
        out = np.zeros((Z.shape[0], n, coeff.shape[1]), dtype=dtype)
        if coeff.shape[0]:
            _kernel(PX, PY, fsite - lo, fpx, fpy, nfac, coeff.astype(dtype), out)
        # constant monomials
        const = self.const[cols]
        if np.any(const):
            out += const
        return out, single, z.shape[:-1]

    def value(self, z):
        out, single, shape = self._run(z, slice(0, 1))
        v = out[..., 0].sum(axis=-1)
        return v[0] if single else v.reshape(shape)

    def gradient(self, z):
        """(dF/dx, dF/dy) stacked as (..., 2N)."""
        out, single, shape = self._run(z, slice(1, 3))
        g = np.concatenate([out[..., 0], out[..., 1]], axis=-1)
        return g[0] if single else g.reshape(shape + (g.shape[-1],))

    def value_and_gradient(self, z):
        out, single, shape = self._run(z, slice(0, 3))
        v = out[..., 0].sum(axis=-1)
        g = np.concatenate([out[..., 1], out[..., 2]], axis=-1)
        if single:
            return v[0], g[0]
        return v.reshape(shape), g.reshape(shape + (g.shape[-1],))

    def field(self, z):
        """Hamiltonian vector field (dF/dy, -dF/dx)."""
        g = self.gradient(z)
        n = g.shape[-1] // 2
        return np.concatenate([g[..., n:], -g[..., :n]], axis=-1)

    def hessian(self, z, h: float = 1e-30):
        """Exact Hessian by complex-step differentiation of the gradient."""
        z = np.asarray(z, dtype=float)
        n2 = z.size
        Z = np.repeat(z[None, :], n2, axis=0).astype(np.complex128)
        Z[np.arange(n2), np.arange(n2)] += 1j * h
        G = self.gradient(Z)
        H = np.imag(G) / h
        return 0.5 * (H + H.T)


def compile_seed(seed: Seed) -> CompiledSeed:
    return CompiledSeed(seed)
