import csv

import numpy as np
import pytest

from causal_pinn.model import SpaceTimeDomain, StructuralModel, library_of, op, source
from causal_pinn.operators import (AnalyticField, GridFieldAdapter, OperatorError, apply_operator,
                                   assemble_design, grid_points, l2_norm, mutual_coherence,
                                   quadrature_weights, residual_field)
from causal_pinn.solvers import evaluate_exact
from causal_pinn.surrogate import Jet2

HEAT = "exp(-pi**2*t)*sin(pi*x)"


def jet(**kw):
    base = dict(u=0.0, u_t=0.0, u_x=0.0)
    base.update(kw)
    return Jet2(**base)


def test_u2_squares():
    assert apply_operator(op("U2"), jet(u=0.5), [0.1, 0.1]) == 0.25


def test_lap_1d_on_mode_one():
    f = AnalyticField(HEAT)
    j = f.jets(np.array([[0.5, 0.0]]))
    assert j.u[0] == pytest.approx(1.0)
    assert apply_operator(op("LAP"), j, [[0.5, 0.0]])[0] == pytest.approx(-np.pi ** 2)


def test_source_value():
    assert apply_operator(source("sin(2*pi*x)"), jet(), [0.25, 0.3]) == pytest.approx(1.0)


def test_operator_table_on_2d_jet():
    j = jet(u=2.0, u_x=3.0, u_y=5.0, u_xx=7.0, u_yy=11.0, u_xy=13.0)
    p = [0.1, 0.2, 0.3]
    want = {"U": 2, "U2": 4, "U3": 8, "DX": 3, "DY": 5, "DXX": 7, "DYY": 11, "DXY": 13, "LAP": 18,
            "ADV_X": 6, "ADV_Y": 10}
    for name, v in want.items():
        assert apply_operator(op(name), j, p) == v


def test_axis_mismatch_raises():
    with pytest.raises(OperatorError, match="DY"):
        apply_operator(op("DY"), jet(), [0.1, 0.2])


def test_design_column_matches_identity():
    f = AnalyticField(HEAT)
    pts = np.random.default_rng(0).uniform(0, 0.2, (40, 2))
    D = assemble_design(StructuralModel.from_dict({"U": 1.0}), f, pts)
    assert np.allclose(D.A[:, 0], D.b / (-np.pi ** 2), rtol=1e-12, atol=1e-14)


def test_design_shape_500_by_3():
    f = AnalyticField("0.5*exp(t)*sin(pi*x)")
    pts = np.random.default_rng(1).uniform(0, 1, (500, 2))
    D = assemble_design(StructuralModel(library_of(["U", "U2", "DXX"]), (1, 1, 1)), f, pts)
    assert D.shape == (500, 3) and D.b.shape == (500,)


def test_design_empty_points():
    with pytest.raises(OperatorError):
        assemble_design(StructuralModel.from_dict({"U": 1.0}), AnalyticField(HEAT), np.empty((0, 2)))


def test_design_non_finite_names_point_and_operator():
    f = AnalyticField("x**1.5")  # u finite, u_xx singular at x = 0
    with pytest.raises(OperatorError, match=r"DXX.*0\.0"):
        assemble_design(StructuralModel(library_of(["U", "DXX"]), (1, 1)), f, np.array([[0.5, 0.1], [0.0, 0.1]]))


def test_design_csv_header(tmp_path):
    f = AnalyticField(HEAT)
    D = assemble_design(StructuralModel(library_of(["U", "DXX"]), (1, 1)), f, np.array([[0.3, 0.1], [0.6, 0.05]]))
    D.to_csv(tmp_path / "A.csv")
    rows = list(csv.reader(open(tmp_path / "A.csv")))
    assert rows[0] == ["U", "DXX", "b"]
    assert float(rows[1][2]) == D.b[0]


def test_residual_of_exact_solution_vanishes():
    axes = (np.linspace(0, 1, 21), np.linspace(0, 0.2, 11))
    m = StructuralModel.from_dict({"DXX": 1.0})
    assert residual_field(m, AnalyticField(HEAT), axes).norm < 1e-8


def test_residual_with_zero_alpha_is_time_derivative():
    axes = (np.linspace(0, 1, 11), np.linspace(0, 0.2, 5))
    f = AnalyticField(HEAT)
    r = residual_field(StructuralModel.from_dict({"U": 0.0}), f, axes)
    assert np.array_equal(r.values, f.jets(grid_points(axes)).u_t)


def test_contaminated_residual_at_t0():
    eps = 0.1
    m = StructuralModel((op("U"), source("sin(2*pi*x)")), (-np.pi ** 2, eps))
    axes = (np.linspace(0, 1, 401), np.array([0.0]))
    assert residual_field(m, AnalyticField(HEAT), axes).norm == pytest.approx(eps / np.sqrt(2), rel=1e-10)


def test_l2_norm_examples():
    x = np.linspace(0, 1, 11)
    assert l2_norm(np.ones(121), (x, x)) == pytest.approx(1.0)
    xf = np.linspace(0, 1, 2001)
    assert abs(l2_norm(np.sin(2 * np.pi * xf), (xf,)) - 1 / np.sqrt(2)) < 1e-4
    assert l2_norm(np.zeros(11), (x,)) == 0.0
    with pytest.raises(OperatorError):
        l2_norm(np.ones(10), (x,))


def test_l2_norm_is_a_norm():
    rng = np.random.default_rng(0)
    axes = (np.linspace(0, 1, 9), np.linspace(0, 2, 7))
    for _ in range(50):
        a, b = rng.normal(size=63), rng.normal(size=63)
        c = rng.normal()
        assert l2_norm(a + b, axes) <= l2_norm(a, axes) + l2_norm(b, axes) + 1e-12
        assert l2_norm(c * a, axes) == pytest.approx(abs(c) * l2_norm(a, axes))


def test_slice_axis_has_unit_weight():
    assert np.array_equal(quadrature_weights((np.array([0.0, 1.0]), np.array([0.3]))), [0.5, 0.5])


def test_coherence_examples():
    assert mutual_coherence(np.eye(4)[:, :3]) == 0.0
    A = np.random.default_rng(0).normal(size=(10, 2))
    assert mutual_coherence(np.column_stack([A, A[:, 0]])) == pytest.approx(1.0)
    with pytest.raises(OperatorError, match="column 1"):
        mutual_coherence(np.column_stack([A[:, 0], np.zeros(10)]))


def test_design_linear_in_field():
    base, c = "exp(-t)*sin(pi*x) + 0.3*x", 2.5
    lib = StructuralModel(library_of(["U", "DX", "DXX", "LAP", "U2"]), (1,) * 5)
    pts = np.random.default_rng(2).uniform(0, 1, (30, 2))
    A1 = assemble_design(lib, AnalyticField(base), pts).A
    A2 = assemble_design(lib, AnalyticField(f"{c}*({base})"), pts).A
    assert np.allclose(A2[:, :4], c * A1[:, :4], rtol=1e-12)
    assert np.allclose(A2[:, 4], c ** 2 * A1[:, 4], rtol=1e-12)


def test_grid_adapter_residual_is_second_order():
    m = StructuralModel.from_dict({"DXX": 1.0})
    norms = []
    for n in (21, 41, 81):
        dom = SpaceTimeDomain(1, (0.0,), (1.0,), 0.1, (n,), n)
        gf = evaluate_exact(HEAT, dom)
        ad = GridFieldAdapter(dom.axes(), gf.values)
        norms.append(residual_field(m, ad, dom.axes()).norm)
    rates = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    assert np.all(rates > 1.8)


def test_grid_adapter_rejects_off_grid_points():
    dom = SpaceTimeDomain(1, (0.0,), (1.0,), 0.1, (11,), 11)
    ad = GridFieldAdapter(dom.axes(), evaluate_exact(HEAT, dom).values)
    with pytest.raises(OperatorError):
        ad.jets(np.array([[0.05, 0.0]]))
