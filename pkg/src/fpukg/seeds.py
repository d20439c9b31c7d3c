"""Sparse algebra of cyclically symmetric polynomials, stored by their seeds.

A monomial is a tuple of ``(site, p, q)`` triples sorted by site, meaning
``prod_site u_site^p v_site^q``; ``(u, v)`` are either the real canonical
pair ``(x, y)`` or the complex pair ``(xi, eta) = ((x+iy)/sqrt2, (x-iy)/sqrt2)``.
A :class:`Seed` ``f`` stands for the extensive function ``F = sum_l tau^l f``.
Seeds are kept left aligned (smallest occupied site is 0), so two monomials
that differ by a shift are merged.
"""
from __future__ import annotations

import math
from collections import defaultdict
from itertools import product
from typing import Dict, Iterable, Tuple

import numpy as np

Monomial = Tuple[Tuple[int, int, int], ...]

MERGE_TOL = 1e-15
SQRT2 = math.sqrt(2.0)


class RangeOverflowError(ValueError):
    """A monomial does not fit on the ring (its diameter reaches N)."""


def degree(mono: Monomial) -> int:
    return sum(p + q for _, p, q in mono)


def interaction_distance(mono: Monomial) -> int:
    """max(S) - min(S) of the support; 0 for a constant."""
    if not mono:
        return 0
    return mono[-1][0] - mono[0][0]


def shift_monomial(mono: Monomial, d: int) -> Monomial:
    return tuple((s + d, p, q) for s, p, q in mono)


def align_monomial(mono: Monomial, N: int | None = None) -> Monomial:
    if not mono:
        return mono
    if N is not None and interaction_distance(mono) >= N:
        raise RangeOverflowError(
            f"monomial {mono} has diameter {interaction_distance(mono)} >= N={N}"
        )
    s0 = mono[0][0]
    return mono if s0 == 0 else shift_monomial(mono, -s0)


def _canon(mono: Iterable[Tuple[int, int, int]]) -> Monomial:
    acc: Dict[int, list] = {}
    for s, p, q in mono:
        if s in acc:
            acc[s][0] += p
            acc[s][1] += q
        else:
            acc[s] = [p, q]
    return tuple((s, pq[0], pq[1]) for s, pq in sorted(acc.items()) if pq[0] or pq[1])


class Seed:
    """Seed polynomial of an extensive function.

    Parameters
    ----------
    terms : dict
        Mapping monomial -> coefficient.
    complex_coords : bool
        ``True`` when the site variables are ``(xi, eta)``.
    aligned : bool
        Left-align and merge monomials (the seed representation). Window
        polynomials such as vector-field seeds use ``aligned=False``.
    """

    __slots__ = ("terms", "complex_coords", "aligned")

    def __init__(self, terms=None, complex_coords=False, aligned=True, tol=MERGE_TOL, N=None):
        self.complex_coords = complex_coords
        self.aligned = aligned
        out: Dict[Monomial, complex] = defaultdict(float)
        for mono, c in (terms or {}).items():
            mono = _canon(mono)
            if aligned:
                mono = align_monomial(mono, N)
            out[mono] += c
        self.terms = {m: c for m, c in out.items() if abs(c) > tol}

    # construction ---------------------------------------------------------
    @classmethod
    def from_terms(cls, pairs, **kw) -> "Seed":
        terms: Dict[Monomial, float] = defaultdict(float)
        for c, mono in pairs:
            terms[_canon(mono)] += c
        return cls(terms, **kw)

    def _new(self, terms, tol=0.0, aligned=None) -> "Seed":
        s = Seed.__new__(Seed)
        s.complex_coords = self.complex_coords
        s.aligned = self.aligned if aligned is None else aligned
        s.terms = {m: c for m, c in terms.items() if abs(c) > tol} if tol else dict(terms)
        return s

    def copy(self) -> "Seed":
        return self._new(self.terms)

    # basic algebra ---------------------------------------------------------
    def _check(self, other: "Seed"):
        if self.complex_coords != other.complex_coords:
            raise ValueError("cannot mix real and complex coordinate seeds")

    def __add__(self, other: "Seed") -> "Seed":
        self._check(other)
        t = dict(self.terms)
        for m, c in other.terms.items():
            t[m] = t.get(m, 0.0) + c
        return self._new(t, tol=MERGE_TOL)

    def __sub__(self, other: "Seed") -> "Seed":
        return self + (-1.0) * other

    def __mul__(self, scalar) -> "Seed":
        return self._new({m: scalar * c for m, c in self.terms.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "Seed":
        return (-1.0) * self

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def __repr__(self) -> str:
        kind = "complex" if self.complex_coords else "real"
        return f"Seed({len(self.terms)} terms, {kind}, degrees={sorted(self.degrees())})"

    def is_zero(self) -> bool:
        return not self.terms

    def prune(self, tol: float) -> "Seed":
        return self._new(self.terms, tol=tol)

    def real_part(self) -> "Seed":
        return self._new({m: float(np.real(c)) for m, c in self.terms.items()}, tol=MERGE_TOL)

    # structure -------------------------------------------------------------
    def degrees(self) -> set:
        return {degree(m) for m in self.terms}

    def homogeneous_part(self, d: int) -> "Seed":
        return self._new({m: c for m, c in self.terms.items() if degree(m) == d})

    def truncate(self, max_degree: int | None = None, max_range: int | None = None) -> "Seed":
        t = self.terms
        if max_degree is not None:
            t = {m: c for m, c in t.items() if degree(m) <= max_degree}
        if max_range is not None:
            t = {m: c for m, c in t.items() if interaction_distance(m) <= max_range}
        return self._new(t)

    def max_range(self) -> int:
        return max((interaction_distance(m) for m in self.terms), default=0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def poly_norm(self, R: float = 1.0) -> float:
        """sum over homogeneous parts of R^s * sum |coeff|."""
        if R <= 0:
            raise ValueError("R must be positive")
        return float(sum(R ** degree(m) * abs(c) for m, c in self.terms.items()))

    def shells(self) -> Dict[int, "Seed"]:
        """Range decomposition: shell m holds the monomials of interaction distance m."""
        out: Dict[int, dict] = defaultdict(dict)
        for m, c in self.terms.items():
            out[interaction_distance(m)][m] = c
        return {k: self._new(v) for k, v in sorted(out.items())}

    def shell_norms(self) -> Dict[int, float]:
        return {k: s.poly_norm(1.0) for k, s in self.shells().items()}

    def fit_decay(self, sigma: float) -> float:
        """Smallest C with ||f^(m)||_1 <= C exp(-sigma m) on every shell."""
        if not sigma > 0:
            raise ValueError("decay rate must be positive")
        norms = self.shell_norms()
        if not norms:
            return 0.0
        if math.isinf(sigma):
            if any(v > 0 for k, v in norms.items() if k > 0):
                return math.inf
            return norms.get(0, 0.0)
        return max(v * math.exp(sigma * k) for k, v in norms.items())

    def left_aligned(self, N: int | None = None) -> "Seed":
        return Seed(self.terms, complex_coords=self.complex_coords, aligned=True, N=N)

    def shifted(self, d: int) -> "Seed":
        """Window polynomial with every site moved by d (not re-aligned)."""
        return self._new({shift_monomial(m, d): c for m, c in self.terms.items()}, aligned=False)

    # calculus ----------------------------------------------------------------
    def derivative(self, site: int, var: int) -> "Seed":
        """d/du_site (var=0) or d/dv_site (var=1); result is a window polynomial."""
        out: Dict[Monomial, complex] = defaultdict(float)
        for m, c in self.terms.items():
            for i, (s, p, q) in enumerate(m):
                if s != site:
                    continue
                e = p if var == 0 else q
                if e == 0:
                    break
                new = list(m)
                new[i] = (s, p - 1, q) if var == 0 else (s, p, q - 1)
                out[_canon(new)] += e * c
                break
        return self._new(out, aligned=False)

    @property
    def bracket_unit(self) -> complex:
        """{u_j, v_j}: 1 for (x, y), -i for (xi, eta)."""
        return -1j if self.complex_coords else 1.0

    def bracket(self, other: "Seed", max_degree=None, max_range=None, tol=MERGE_TOL, N=None) -> "Seed":
        """Seed of {F, G} = sum_d {f, tau^d g} with F = f^oplus, G = g^oplus."""
        self._check(other)
        kappa = self.bracket_unit
        out: Dict[Monomial, complex] = defaultdict(float)
        gl = [(m, c, {s: (p, q) for s, p, q in m}, degree(m)) for m, c in other.terms.items() if m]
        for mf, cf in self.terms.items():
            if not mf:
                continue
            df = degree(mf)
            sf = {s: (p, q) for s, p, q in mf}
            lo_f, hi_f = mf[0][0], mf[-1][0]
            for mg, cg, sg, dg in gl:
                if max_degree is not None and df + dg - 2 > max_degree:
                    continue
                shifts = {a - b for a in sf for b in sg}
                lo_g, hi_g = mg[0][0], mg[-1][0]
                for d in shifts:
                    span = max(hi_f, hi_g + d) - min(lo_f, lo_g + d)
                    if max_range is not None and span > max_range:
                        continue
                    if N is not None and span >= N:
                        raise RangeOverflowError(f"bracket span {span} reaches N={N}")
                    base: Dict[int, list] = {s: [p, q] for s, (p, q) in sf.items()}
                    common = []
                    for s, (p, q) in sg.items():
                        t = s + d
                        if t in base:
                            common.append((t, base[t][0], base[t][1], p, q))
                            base[t][0] += p
                            base[t][1] += q
                        else:
                            base[t] = [p, q]
                    cc = kappa * cf * cg
                    for t, pf, qf, pg, qg in common:
                        w = pf * qg - qf * pg
                        if w == 0:
                            continue
                        exps = dict(base)
                        e = exps[t]
                        exps[t] = [e[0] - 1, e[1] - 1]
                        mono = tuple((s, e0, e1) for s, (e0, e1) in sorted(exps.items()) if e0 or e1)
                        if mono:
                            s0 = mono[0][0]
                            if s0:
                                mono = tuple((s - s0, a, b) for s, a, b in mono)
                        out[mono] += w * cc
        return self._new(out, tol=tol)

    def product(self, other: "Seed", max_degree=None, max_range=None, tol=MERGE_TOL) -> "Seed":
        """Product of window polynomials (no cyclic sum involved)."""
        self._check(other)
        out: Dict[Monomial, complex] = defaultdict(float)
        for mf, cf in self.terms.items():
            for mg, cg in other.terms.items():
                if max_degree is not None and degree(mf) + degree(mg) > max_degree:
                    continue
                mono = _canon(mf + mg)
                if max_range is not None and interaction_distance(mono) > max_range:
                    continue
                out[mono] += cf * cg
        return Seed(out, complex_coords=self.complex_coords, aligned=self.aligned, tol=tol)

    # coordinates -------------------------------------------------------------
    def to_complex(self) -> "Seed":
        if self.complex_coords:
            return self.copy()
        return _convert(self, _real_to_complex_site, True)

    def to_real(self, imag_tol: float = 1e-10) -> "Seed":
        if not self.complex_coords:
            return self.copy()
        s = _convert(self, _complex_to_real_site, False)
        worst = max((abs(np.imag(c)) for c in s.terms.values()), default=0.0)
        scale = max(1.0, s.max_abs_coeff())
        if worst > imag_tol * scale:
            raise ValueError(f"seed is not real: imaginary part {worst:.3e}")
        return s.real_part()

    # evaluation (reference path; see polyeval for the compiled one) ------------
    def evaluate(self, z, N: int | None = None):
        """F(z) = sum_l (tau^l f)(z) for z of shape (..., 2N) in real coordinates."""
        z = np.asarray(z)
        n = z.shape[-1] // 2
        if N is not None and N != n:
            raise ValueError("state length does not match N")
        x, y = z[..., :n], z[..., n:]
        if self.complex_coords:
            u = (x + 1j * y) / SQRT2
            v = (x - 1j * y) / SQRT2
        else:
            u, v = x, y
        total = np.zeros(z.shape[:-1], dtype=complex if self.complex_coords else float)
        for m, c in self.terms.items():
            val = np.ones(z.shape[:-1] + (n,), dtype=total.dtype) * c
            for s, p, q in m:
                if p:
                    val = val * np.roll(u, -s, axis=-1) ** p
                if q:
                    val = val * np.roll(v, -s, axis=-1) ** q
            total = total + val.sum(axis=-1) if self.aligned else total + val[..., 0]
        return total

    # serialization -------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for m in sorted(self.terms, key=lambda k: (degree(k), interaction_distance(k), k)):
            c = self.terms[m]
            cs = repr(complex(c)) if self.complex_coords else repr(float(c))
            body = " ".join(f"{s}:{p}:{q}" for s, p, q in m)
            lines.append(f"{cs} {body}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, complex_coords: bool = False) -> "Seed":
        terms: Dict[Monomial, complex] = defaultdict(float)
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, *rest = line.split()
            c = complex(head) if complex_coords else float(head)
            mono = tuple(tuple(int(v) for v in tok.split(":")) for tok in rest)
            terms[_canon(mono)] += c
        return cls(terms, complex_coords=complex_coords)

    def allclose(self, other: "Seed", atol: float = 1e-12) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(k, 0.0) - other.terms.get(k, 0.0)) <= atol for k in keys)


# --- coordinate changes --------------------------------------------------------

_SITE_CACHE: Dict[tuple, Dict[Tuple[int, int], complex]] = {}


def _poly_pow(base: Dict[Tuple[int, int], complex], e: int):
    out = {(0, 0): 1.0 + 0j}
    for _ in range(e):
        nxt: Dict[Tuple[int, int], complex] = defaultdict(complex)
        for (a, b), c in out.items():
            for (da, db), cb in base.items():
                nxt[(a + da, b + db)] += c * cb
        out = dict(nxt)
    return out


def _site_expand(kind: str, p: int, q: int):
    key = (kind, p, q)
    if key not in _SITE_CACHE:
        if kind == "r2c":
            # x = (xi + eta)/sqrt2, y = -i (xi - eta)/sqrt2
            first = {(1, 0): 1 / SQRT2, (0, 1): 1 / SQRT2}
            second = {(1, 0): -1j / SQRT2, (0, 1): 1j / SQRT2}
        else:
            # xi = (x + i y)/sqrt2, eta = (x - i y)/sqrt2
            first = {(1, 0): 1 / SQRT2, (0, 1): 1j / SQRT2}
            second = {(1, 0): 1 / SQRT2, (0, 1): -1j / SQRT2}
        a, b = _poly_pow(first, p), _poly_pow(second, q)
        out: Dict[Tuple[int, int], complex] = defaultdict(complex)
        for (i, j), ca in a.items():
            for (k, l), cb in b.items():
                out[(i + k, j + l)] += ca * cb
        _SITE_CACHE[key] = {k: v for k, v in out.items() if abs(v) > 1e-16}
    return _SITE_CACHE[key]


_real_to_complex_site = "r2c"
_complex_to_real_site = "c2r"


def _convert(seed: Seed, kind: str, to_complex: bool) -> Seed:
    out: Dict[Monomial, complex] = defaultdict(complex)
    for m, c in seed.terms.items():
        if not m:
            out[()] += c
            continue
        sites = [s for s, _, _ in m]
        expansions = [list(_site_expand(kind, p, q).items()) for _, p, q in m]
        for combo in product(*expansions):
            coeff = c
            mono = []
            for s, ((e0, e1), cc) in zip(sites, combo):
                coeff = coeff * cc
                if e0 or e1:
                    mono.append((s, e0, e1))
            out[tuple(mono)] += coeff
    res = Seed.__new__(Seed)
    res.complex_coords = to_complex
    res.aligned = seed.aligned
    res.terms = {m: c for m, c in out.items() if abs(c) > MERGE_TOL}
    return res


# --- extensive-function helpers -----------------------------------------------------


class ExtensiveFunction:
    """F = f^oplus on a ring of N sites."""

    def __init__(self, seed: Seed, N: int):
        if seed.max_range() >= N:
            raise RangeOverflowError(f"seed range {seed.max_range()} does not fit N={N}")
        self.seed = seed.left_aligned(N)
        self.N = N

    def __call__(self, z):
        return self.seed.evaluate(z, self.N)

    @property
    def norm(self) -> float:
        """||F||^oplus := ||f||_1."""
        return self.seed.poly_norm(1.0)

    def bracket(self, other: "ExtensiveFunction", **kw) -> "ExtensiveFunction":
        if other.N != self.N:
            raise ValueError("extensive functions live on different rings")
        return ExtensiveFunction(self.seed.bracket(other.seed, N=self.N, **kw), self.N)


def left_align(seed: Seed, N: int | None = None) -> Seed:
    return seed.left_aligned(N)


def oplus_eval(F: ExtensiveFunction, z) -> float:
    from .model import ChainState

    if isinstance(z, ChainState):
        z = z.to_vector()
    return F(z)


def poly_norm(seed: Seed, R: float) -> float:
    return seed.poly_norm(R)


def range_decompose(seed: Seed, sigma: float | None = None):
    """Shells of the seed and, when ``sigma`` is given, the fitted class constant."""
    shells = seed.left_aligned().shells()
    if sigma is None:
        return shells
    return shells, seed.fit_decay(sigma)


def poisson_bracket(F: ExtensiveFunction, G: ExtensiveFunction, **kw) -> ExtensiveFunction:
    return F.bracket(G, **kw)


def field_seed(seed: Seed):
    """Window polynomials (X_1, X_{N+1}) of the Hamiltonian field of f^oplus.

    X_1 = dF/dy_0 and X_{N+1} = -dF/dx_0 written in the variables around site
    0; component j is the same polynomial read on the state shifted by j.
    Returns ``(X1, XN1, norm)`` where ``norm = ||X1||_1 + ||XN1||_1``.
    """
    L = seed.max_range()
    X1 = seed._new({}, aligned=False)
    XN1 = seed._new({}, aligned=False)
    for s in range(L + 1):
        X1 = X1 + seed.derivative(s, 1).shifted(-s)
        XN1 = XN1 - seed.derivative(s, 0).shifted(-s)
    return X1, XN1, X1.poly_norm(1.0) + XN1.poly_norm(1.0)


def field_norm(seed: Seed, R: float = 1.0) -> float:
    """Sum of the polynomial norms of the partial derivatives of the seed."""
    L = seed.max_range()
    return sum(seed.derivative(s, v).poly_norm(R) for s in range(L + 1) for v in (0, 1))
