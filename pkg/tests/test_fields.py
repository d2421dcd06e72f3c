import math

import numpy as np
import pytest

from nemcol import fields as fl
from nemcol import tensor_algebra as ta
from nemcol.fields import Grid, QField, ScalarField, VectorField


def grid2(n=32, L=1.0):
    return Grid((n, n), (L, L))


def smooth_random_scalar(grid, rng, modes=3):
    """Random low-frequency sine superposition vanishing on the walls."""
    x = grid.cell_centers()
    f = np.zeros(grid.shape)
    for _ in range(modes):
        m1, m2 = rng.integers(1, 4, size=2)
        amp = rng.standard_normal()
        f += amp * np.sin(m1 * np.pi * x[0] / grid.lengths[0]) * np.sin(
            m2 * np.pi * x[1] / grid.lengths[1]
        )
    return f


# --------------------------------------------------------------------- grid

def test_grid_validation():
    with pytest.raises(ValueError, match="dimension"):
        Grid((32,), (1.0,))
    with pytest.raises(ValueError, match=">= 8 cells"):
        Grid((4, 32), (1.0, 1.0))
    with pytest.raises(ValueError, match="aspect"):
        Grid((8, 64), (1.0, 1.0))
    g = Grid((16, 32), (1.0, 2.0))
    assert g.spacing == (1.0 / 16, 2.0 / 32)
    assert abs(g.cell_volume - (1 / 16) * (2 / 32)) < 1e-15


def test_field_shape_validation():
    g = grid2(8)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((8, 9)))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        QField(g, np.zeros((4, 8, 8)))


# ---------------------------------------------------------- basic operators

def test_grad_constant_zero_and_linear_exact():
    g = grid2()
    c = ScalarField(g, np.full(g.shape, 3.7), bc="none")
    assert np.abs(fl.grad(c).data).max() <= 1e-13
    x = g.cell_centers()
    f = ScalarField(g, x[0].copy(), bc="none")
    gf = fl.grad(f).data
    assert np.abs(gf[0] - 1.0).max() <= 1e-12
    assert np.abs(gf[1]).max() <= 1e-12


def test_grad_order_two_under_refinement():
    errs = []
    for n in (32, 64, 128):
        g = Grid((n, n), (1.0, 1.0))
        x = g.cell_centers()
        f = ScalarField(g, np.sin(np.pi * x[0]), bc="dirichlet")
        exact = np.pi * np.cos(np.pi * x[0])
        errs.append(np.abs(fl.grad(f).data[0] - exact).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    for p in orders:
        assert abs(p - 2.0) <= 0.2


def test_div_constant_and_lapl_quadratic():
    g = grid2()
    v = VectorField(g, np.ones((2,) + g.shape), bc="none")
    assert np.abs(fl.div(v).data).max() <= 1e-12
    x = g.cell_centers()
    f = ScalarField(g, x[0] ** 2, bc="none")
    lap = fl.lapl(f).data
    assert np.abs(lap[2:-2, 2:-2] - 2.0).max() <= 1e-10


def test_lapl_order_two():
    errs = []
    for n in (32, 64, 128):
        g = Grid((n, n), (1.0, 1.0))
        x = g.cell_centers()
        f = ScalarField(g, np.sin(np.pi * x[0]) * np.sin(2 * np.pi * x[1]), bc="dirichlet")
        exact = -(np.pi**2 + 4 * np.pi**2) * f.data
        errs.append(np.abs(fl.lapl(f).data - exact).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    for p in orders:
        assert abs(p - 2.0) <= 0.2


def test_div_grad_matches_lapl_at_second_order():
    rng = np.random.default_rng(7)
    diffs = []
    for n in (32, 64):
        g = Grid((n, n), (1.0, 1.0))
        f = ScalarField(g, smooth_random_scalar(g, np.random.default_rng(7)), bc="dirichlet")
        composed = fl.div(fl.grad(f)).data  # wide stencil
        compact = fl.lapl(f).data
        diffs.append(np.abs(composed - compact)[2:-2, 2:-2].max())
    assert diffs[1] <= diffs[0] / 2.5  # ~ factor 4 for O(h^2)


def test_operators_annihilate_constants_interior():
    g = grid2()
    c = np.full(g.shape, -2.2)
    for bc in ("dirichlet", "none"):
        f = ScalarField(g, c.copy(), bc=bc)
        assert np.abs(fl.grad(f).data[:, 2:-2, 2:-2]).max() <= 1e-13
        assert np.abs(fl.lapl(f).data[2:-2, 2:-2]).max() <= 1e-10


def test_advect_trivials_and_linear():
    g = grid2()
    x = g.cell_centers()
    f = ScalarField(g, x[0].copy(), bc="none")
    u0 = VectorField(g, np.zeros((2,) + g.shape), bc="none")
    assert np.abs(fl.advect(f, u0).data).max() == 0.0
    const = ScalarField(g, np.full(g.shape, 5.0), bc="none")
    e1 = VectorField(g, np.stack([np.ones(g.shape), np.zeros(g.shape)]), bc="none")
    assert np.abs(fl.advect(const, e1).data).max() <= 1e-12
    assert np.abs(fl.advect(f, e1).data - 1.0).max() <= 1e-12


def test_advect_negative_velocity_side():
    g = grid2()
    x = g.cell_centers()
    f = ScalarField(g, 2.0 * x[1], bc="none")
    u = VectorField(g, np.stack([np.zeros(g.shape), -np.ones(g.shape)]), bc="none")
    assert np.abs(fl.advect(f, u).data + 2.0).max() <= 1e-12


def test_grad_lapl_shape_and_consistency():
    g = grid2()
    x = g.cell_centers()
    u = VectorField(
        g, np.stack([np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]), np.zeros(g.shape)]),
        bc="dirichlet",
    )
    gl = fl.grad_lapl(u)
    assert gl.shape == (2, 2) + g.shape
    lap = fl.lapl(u).data
    direct = fl.diff1(lap[0], 0, g.spacing[0], "odd")
    np.testing.assert_allclose(gl[0, 0], direct, atol=1e-13)


# ----------------------------------------------------- adjointness and IBP

def test_diff1_odd_even_exact_negative_adjoints():
    rng = np.random.default_rng(0)
    g = grid2(16)
    a = rng.standard_normal(g.shape)
    b = rng.standard_normal(g.shape)
    for ax in (0, 1):
        lhs = np.sum(fl.diff1(a, ax, g.spacing[ax], "odd") * b)
        rhs = -np.sum(a * fl.diff1(b, ax, g.spacing[ax], "even"))
        assert abs(lhs - rhs) <= 1e-11 * (np.abs(a).max() * np.abs(b).max() * a.size)


def test_discrete_integration_by_parts_compatibility():
    # inner(grad f, v) + inner(f, div v) shrinks under refinement for
    # Dirichlet fields (boundary-layer mismatch only)
    vals = []
    for n in (32, 64):
        g = Grid((n, n), (1.0, 1.0))
        rng = np.random.default_rng(5)
        f = ScalarField(g, smooth_random_scalar(g, rng), bc="dirichlet")
        v = VectorField(
            g,
            np.stack([smooth_random_scalar(g, rng), smooth_random_scalar(g, rng)]),
            bc="dirichlet",
        )
        gf = fl.grad(f)
        lhs = fl.inner(VectorField(g, gf.data, bc="none"), v)
        rhs = fl.inner(f, fl.div(v))
        vals.append(abs(lhs + rhs))
    assert vals[1] <= vals[0]
    assert vals[1] <= 1e-2


# ------------------------------------------------------------- projections

def test_project_divfree_contract():
    rng = np.random.default_rng(11)
    g = grid2(32)
    u = VectorField(g, rng.standard_normal((2,) + g.shape), bc="dirichlet")
    up, p = fl.project_divfree(u)
    div = fl._div_data(up.data, g)
    unorm = math.sqrt(float(np.sum(u.data**2)))
    assert np.abs(div).max() <= 1e-8 * unorm / g.min_spacing
    # orthogonal projection never increases energy
    assert np.sum(up.data**2) <= np.sum(u.data**2)


def test_project_divfree_idempotent():
    rng = np.random.default_rng(12)
    g = grid2(32)
    u = VectorField(g, rng.standard_normal((2,) + g.shape), bc="dirichlet")
    up, _ = fl.project_divfree(u)
    up2, _ = fl.project_divfree(up)
    assert np.abs(up2.data - up.data).max() <= 1e-8


def test_project_divfree_kills_gradients():
    g = grid2(32)
    x = g.cell_centers()
    psi = np.cos(np.pi * x[0]) * np.cos(2 * np.pi * x[1])  # Neumann-compatible
    gp = fl._grad_pressure(psi, g)
    u = VectorField(g, gp, bc="dirichlet")
    up, _ = fl.project_divfree(u)
    assert np.abs(up.data).max() <= 1e-9 * np.abs(gp).max()


def test_conjugate_gradient_against_dense_solve():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((40, 40))
    a = m @ m.T + 40 * np.eye(40)
    b = rng.standard_normal(40)
    x, it = fl.conjugate_gradient(lambda v: a @ v, b, tol=1e-12, maxiter=500)
    np.testing.assert_allclose(x, np.linalg.solve(a, b), atol=1e-9)


def test_conjugate_gradient_iteration_cap_raises():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((60, 60))
    a = m @ m.T + 1e-6 * np.eye(60)  # ill-conditioned
    b = rng.standard_normal(60)
    with pytest.raises(fl.SolverError):
        fl.conjugate_gradient(lambda v: a @ v, b, tol=1e-14, maxiter=3)


# ----------------------------------------------------------- inner products

def test_inner_box_volume_and_mask():
    g = Grid((16, 16), (2.0, 3.0))
    one = ScalarField(g, np.ones(g.shape), bc="none")
    assert abs(fl.inner(one, one) - 6.0) <= 1e-12
    mask = np.zeros(g.shape)
    mask[: 8, :] = 1.0
    half = ScalarField(g, mask, bc="none")
    assert abs(fl.restricted_inner(one, one, half) - 3.0) <= 1e-12


def test_inner_sine_analytic():
    g = Grid((64, 64), (1.0, 2.0))
    x = g.cell_centers()
    f = ScalarField(g, np.sin(np.pi * x[0] / 1.0), bc="none")
    # integral of sin^2 over x is L1/2, times transverse length L2
    assert abs(fl.inner(f, f) - 0.5 * 1.0 * 2.0) <= 1e-3


def test_restricted_inner_rejects_bad_mask():
    g = grid2(8)
    one = ScalarField(g, np.ones(g.shape), bc="none")
    bad = ScalarField(g, 2.0 * np.ones(g.shape), bc="none")
    with pytest.raises(ValueError, match="mask"):
        fl.restricted_inner(one, one, bad)


def test_inner_grid_mismatch():
    f = ScalarField(grid2(8), np.ones((8, 8)), bc="none")
    gfield = ScalarField(grid2(16), np.ones((16, 16)), bc="none")
    with pytest.raises(ValueError, match="grids"):
        fl.inner(f, gfield)


# ------------------------------------------------------------ elastic force

def test_elastic_force_trivials():
    g = grid2()
    zero_q = fl.zeros_like_kind(g, "q")
    assert np.abs(fl.elastic_force(zero_q, zero_q, zero_q).data).max() == 0.0
    rngq = QField(g, ta.random_qten(np.random.default_rng(0), g.shape), bc="dirichlet")
    out = fl.elastic_force(rngq, zero_q, zero_q)
    assert np.abs(out.data).max() == 0.0  # both terms carry H or the penalty


def test_elastic_force_manufactured_profile():
    # Q = s(x1) B, H = g(x1) B with a shared director: sigma = 0 and the
    # force reduces to -g(x1) s'(x1) tr(B^2) in direction 1
    director = (0.0, 0.0, 1.0)
    b_comp = ta.uniaxial(1.0, director)
    tr_b2 = ta.qnormsq(b_comp)
    errs = []
    for n in (32, 64):
        g = Grid((n, n), (1.0, 1.0))
        x = g.cell_centers()
        s = np.sin(np.pi * x[0]) ** 2
        gprof = np.cos(np.pi * x[0]) * np.sin(np.pi * x[1])
        q = QField(g, b_comp.reshape(5, 1, 1) * s, bc="dirichlet")
        h = QField(g, b_comp.reshape(5, 1, 1) * gprof, bc="dirichlet")
        zero = fl.zeros_like_kind(g, "q")
        force = fl.elastic_force(q, h, zero).data
        ds = 2 * np.sin(np.pi * x[0]) * np.cos(np.pi * x[0]) * np.pi
        exact = -gprof * ds * tr_b2
        errs.append(np.abs(force[0] - exact)[2:-2, 2:-2].max())
    assert errs[1] <= errs[0] / 2.5


# ------------------------------------------------------------------- export

def test_vtk_export_structure(tmp_path):
    g = Grid((8, 8), (1.0, 1.0))
    path = tmp_path / "snap.vtk"
    fl.write_vtk(
        path, g,
        {
            "p": ScalarField(g, np.arange(64, dtype=float).reshape(8, 8), bc="none"),
            "u": fl.zeros_like_kind(g, "vector"),
            "Q": fl.zeros_like_kind(g, "q"),
        },
    )
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 8 8 1" in text
    assert any(line.startswith("ORIGIN") for line in text)
    assert any(line.startswith("SPACING") for line in text)
    assert "POINT_DATA 64" in text
    assert "SCALARS p double 1" in text
    assert "VECTORS u double" in text
    assert "SCALARS Q_q11 double 1" in text


def test_csv_full_precision(tmp_path):
    path = tmp_path / "series.csv"
    value = 0.1 + 1e-16
    fl.write_csv(path, ["t", "x"], [[0.0, value]])
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x"
    assert float(lines[1].split(",")[1]) == value
