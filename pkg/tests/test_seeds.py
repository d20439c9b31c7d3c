import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpukg.model import ChainState
from fpukg.polyeval import CompiledSeed
from fpukg.seeds import (
    ExtensiveFunction,
    RangeOverflowError,
    Seed,
    field_seed,
    left_align,
    oplus_eval,
    poisson_bracket,
    poly_norm,
    range_decompose,
)


def mono(*factors):
    return tuple(factors)


def fd_grad(F, z, h=1e-6):
    return np.array([(F(z + h * e) - F(z - h * e)) / (2 * h) for e in np.eye(z.size)])


def fd_bracket(F, G, z, h=1e-6):
    gf, gg = fd_grad(F, z, h), fd_grad(G, z, h)
    n = z.size // 2
    return gf[:n] @ gg[n:] - gf[n:] @ gg[:n]


@st.composite
def seeds(draw, max_terms=4, max_deg=4, max_range=2):
    terms = []
    for _ in range(draw(st.integers(1, max_terms))):
        nf = draw(st.integers(1, 2))
        facs = []
        for _ in range(nf):
            facs.append((draw(st.integers(0, max_range)), draw(st.integers(0, 2)), draw(st.integers(0, 2))))
        if sum(p + q for _, p, q in facs) == 0 or sum(p + q for _, p, q in facs) > max_deg:
            continue
        terms.append((draw(st.floats(-1, 1)), tuple(facs)))
    if not terms:
        terms = [(1.0, ((0, 1, 1),))]
    return Seed.from_terms(terms)


def test_left_align_examples():
    s = left_align(Seed.from_terms([(1.0, mono((2, 1, 0), (3, 1, 0)))]))
    assert list(s.terms) == [mono((0, 1, 0), (1, 1, 0))]
    s = left_align(Seed.from_terms([(1.0, mono((0, 4, 0)))]))
    assert list(s.terms) == [mono((0, 4, 0))]
    raw = Seed({mono((3, 1, 0), (5, 0, 1)): 1.0}, aligned=False)
    al = left_align(raw, 8)
    assert list(al.terms) == [mono((0, 1, 0), (2, 0, 1))]
    z = np.random.default_rng(0).normal(size=16)
    assert ExtensiveFunction(al, 8)(z) == pytest.approx(sum(z[(j + 3) % 8] * z[8 + (j + 5) % 8] for j in range(8)))


def test_range_overflow():
    with pytest.raises(RangeOverflowError):
        ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 1, 0), (4, 1, 0)))]), 4)


def test_oplus_examples():
    F = ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 2, 0)))]), 6)
    assert oplus_eval(F, ChainState(np.ones(6))) == pytest.approx(6)
    G = ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 1, 0), (1, 1, 0)))]), 4)
    assert oplus_eval(G, ChainState(np.array([1.0, 2, 3, 4]))) == pytest.approx(24)


@given(seeds(max_deg=4), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_cyclic_symmetry_and_lemma1(seed, k):
    f = seed.homogeneous_part(4)
    if f.is_zero():
        return
    N = 7
    rng = np.random.default_rng(k)
    z = rng.normal(size=2 * N)
    z *= 0.5 / np.linalg.norm(z)
    F = ExtensiveFunction(f, N)
    tz = ChainState.from_vector(z).shifted(3).to_vector()
    assert F(tz) == pytest.approx(F(z), abs=1e-14)
    assert abs(F(z)) <= F.norm * 0.0625 * (1 + 1e-12)


def test_poly_norm_examples():
    f = Seed.from_terms([(0.25, mono((0, 4, 0)))])
    assert poly_norm(f, 1.0) == pytest.approx(0.25)
    assert poly_norm(f, 0.5) == pytest.approx(0.015625)
    mixed = f + Seed.from_terms([(2.0, mono((0, 1, 1)))])
    assert poly_norm(mixed, 0.5) == pytest.approx(0.015625 + 0.5)


def test_range_decompose():
    b = 0.5
    h1 = Seed.from_terms([
        (0.25 * (1 + 2 * b), mono((0, 4, 0))), (1.5 * b, mono((0, 2, 0), (1, 2, 0))),
        (-b, mono((0, 3, 0), (1, 1, 0))), (-b, mono((0, 1, 0), (1, 3, 0))),
    ])
    sh = range_decompose(h1)
    assert sorted(sh) == [0, 1]
    assert sh[0].terms == {mono((0, 4, 0)): 0.5}
    assert len(sh[1]) == 3
    total = Seed()
    for s in sh.values():
        total = total + s
    assert total.allclose(h1, atol=0)
    assert len(range_decompose(Seed.from_terms([(1.0, mono((0, 2, 0)))]))) == 1
    _, C = range_decompose(h1, 1.0)
    assert C >= 1.75 * np.e - 1e-12


def test_bracket_examples():
    N = 4
    hO = Seed.from_terms([(0.6, mono((0, 2, 0))), (0.6, mono((0, 0, 2)))])
    F = ExtensiveFunction(hO, N)
    assert poisson_bracket(F, F).seed.is_zero()
    act = ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 2, 0))), (1.0, mono((0, 0, 2)))]), N)
    assert poisson_bracket(F, act).seed.is_zero()
    X = ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 1, 0)))]), N)
    Y = ExtensiveFunction(Seed.from_terms([(1.0, mono((0, 0, 1)))]), N)
    B = poisson_bracket(X, Y)
    rng = np.random.default_rng(2)
    for _ in range(50):
        z = rng.normal(size=2 * N)
        assert B(z) == pytest.approx(N)
        assert B(z) == pytest.approx(fd_bracket(X, Y, z, h=1e-2), abs=1e-9)


@given(seeds(), seeds(), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_bracket_matches_numerical_oracle(f, g, k):
    N = 8
    F, G = ExtensiveFunction(f, N), ExtensiveFunction(g, N)
    z = np.random.default_rng(k).normal(size=2 * N) * 0.7
    val = poisson_bracket(F, G)(z)
    assert val == pytest.approx(fd_bracket(F, G, z), abs=1e-7 * (1 + abs(val)))


@given(seeds(max_terms=2, max_deg=3, max_range=1), seeds(max_terms=2, max_deg=3, max_range=1),
       seeds(max_terms=2, max_deg=3, max_range=1), st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_jacobi_identity(f, g, h, k):
    N = 9
    F, G, H = (ExtensiveFunction(s, N) for s in (f, g, h))
    j = (poisson_bracket(F, poisson_bracket(G, H)).seed
         + poisson_bracket(G, poisson_bracket(H, F)).seed
         + poisson_bracket(H, poisson_bracket(F, G)).seed)
    z = np.random.default_rng(k).normal(size=2 * N) * 0.5
    assert abs(ExtensiveFunction(j, N)(z)) < 1e-8


def test_field_seed_examples():
    f = Seed.from_terms([(0.25, mono((0, 4, 0)))])
    X1, XN1, _ = field_seed(f)
    assert X1.is_zero()
    assert XN1.allclose(Seed({mono((0, 3, 0)): -1.0}, aligned=False), atol=0)
    Om = 1.3
    hO = Seed.from_terms([(Om / 2, mono((0, 2, 0))), (Om / 2, mono((0, 0, 2)))])
    X1, XN1, _ = field_seed(hO)
    assert X1.allclose(Seed({mono((0, 0, 1)): Om}, aligned=False), atol=1e-15)
    assert XN1.allclose(Seed({mono((0, 1, 0)): -Om}, aligned=False), atol=1e-15)


@given(seeds(max_terms=5, max_deg=4, max_range=2), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_field_reconstruction(f, k):
    N = 7
    X1, XN1, _ = field_seed(f)
    z = np.random.default_rng(k).normal(size=2 * N) * 0.6
    field = np.empty(2 * N)
    for j in range(N):
        zj = ChainState.from_vector(z).shifted(j).to_vector()
        field[j] = X1.evaluate(zj)
        field[N + j] = XN1.evaluate(zj)
    F = ExtensiveFunction(f, N)
    g = fd_grad(F, z)
    assert np.max(np.abs(field - np.concatenate([g[N:], -g[:N]]))) < 1e-8
    assert np.max(np.abs(CompiledSeed(f).field(z) - field)) < 1e-12


def test_text_roundtrip_and_complex_roundtrip():
    f = Seed.from_terms([(0.25, mono((0, 4, 0))), (-0.3, mono((0, 1, 2), (2, 1, 0)))])
    assert Seed.from_text(f.to_text()).allclose(f, atol=0)
    assert f.to_complex().to_real().allclose(f, atol=1e-15)
    z = np.random.default_rng(3).normal(size=10)
    assert f.to_complex().evaluate(z).real == pytest.approx(f.evaluate(z))


def test_compiled_hessian_matches_fd():
    f = Seed.from_terms([(0.25, mono((0, 4, 0))), (-0.3, mono((0, 1, 2), (2, 1, 0)))])
    c = CompiledSeed(f)
    z = np.random.default_rng(4).normal(size=10) * 0.5
    H = c.hessian(z)
    h = 1e-5
    Hfd = np.array([(c.gradient(z + h * e) - c.gradient(z - h * e)) / (2 * h) for e in np.eye(10)])
    assert np.max(np.abs(H - Hfd)) < 1e-8
