import numpy as np
import pytest

from causal_pinn.model import (CoefficientEstimate, Intervention, ModelError, OperatorSpec, SampleSet,
                               SpaceTimeDomain, StructuralModel, apply_intervention, library_of, op,
                               source, validate_model)

D1 = SpaceTimeDomain(1, (0.0,), (1.0,), 1.0, (11,), 11)
D2 = SpaceTimeDomain(2, (0.0, 0.0), (1.0, 1.0), 1.0, (11, 11), 11)


def test_validate_reports_missing_y_axis():
    m = StructuralModel.from_dict({"U": 1.0, "DY": 0.5})
    problems = validate_model(m, D1)
    assert len(problems) == 1
    assert "DY" in problems[0]


def test_validate_reaction_library_is_clean():
    m = StructuralModel(library_of(["U", "U2", "DXX"]), (1.0, -1.0, 0.0))
    assert validate_model(m, D1) == []


def test_validate_duplicate_id():
    m = StructuralModel(library_of(["U", "U"]), (1.0, 2.0))
    problems = validate_model(m, D1)
    assert len(problems) == 1 and "duplicate" in problems[0]


def test_validate_2d_operators_on_2d_domain():
    m = StructuralModel(library_of(["DY", "DYY", "DXY", "LAP", "ADV_Y"]), (1, 1, 1, 1, 1))
    assert validate_model(m, D2) == []
    assert len(validate_model(m, D1)) == 4  # LAP is fine in 1D


def test_validate_non_finite_coefficient():
    m = StructuralModel(library_of(["U"]), (np.nan,))
    assert any("non-finite" in p for p in validate_model(m, D1))


def test_operator_spec_fields():
    assert op("DXX").order == 2 and op("DXX").is_linear
    assert op("U2").order == 0 and not op("U2").is_linear
    assert op("ADV_X").order == 1 and not op("ADV_X").is_linear
    s = source("sin(2*pi*x)")
    assert s.name == "SOURCE(sin(2*pi*x))"
    assert s.source_fn(np.array([0.25]), np.array([0.0]))[0] == pytest.approx(1.0)
    assert OperatorSpec.parse("SOURCE(x*t)") == source("x*t")
    assert op("U").source_fn is None


@pytest.mark.parametrize("bad", [lambda: OperatorSpec("SOURCE"), lambda: OperatorSpec("U", "x"),
                                 lambda: op("D4X"), lambda: source("__import__('os')")])
def test_operator_spec_invariants(bad):
    with pytest.raises(ModelError):
        bad()


def test_zero_intervention():
    m = StructuralModel.from_dict({"DXX": 0.9, "U": 1.0})
    out = apply_intervention(m, Intervention.zero("DXX"))
    assert out.as_dict() == {"DXX": 0.0, "U": 1.0}
    assert m.as_dict() == {"DXX": 0.9, "U": 1.0}


def test_scale_intervention():
    m = StructuralModel.from_dict({"U": 1.0})
    assert apply_intervention(m, Intervention.scale("U", 0.5)).coef("U") == 0.5


def test_replace_intervention_keeps_alpha():
    m = StructuralModel.from_dict({"U": 2.0, "DXX": 1.0})
    out = apply_intervention(m, Intervention.swap("DXX", op("LAP")))
    assert out.names == ["U", "LAP"] and out.alpha == (2.0, 1.0)


def test_zero_is_idempotent():
    m = StructuralModel.from_dict({"DXX": 0.9, "U": 1.0})
    once = apply_intervention(m, Intervention.zero("U"))
    assert apply_intervention(once, Intervention.zero("U")) == once


def test_zero_commutes_across_targets():
    m = StructuralModel.from_dict({"DXX": 0.9, "U": 1.0, "U2": -1.0})
    a = apply_intervention(apply_intervention(m, Intervention.zero("U")), Intervention.zero("U2"))
    b = apply_intervention(apply_intervention(m, Intervention.zero("U2")), Intervention.zero("U"))
    assert a == b


def test_unknown_target_names_the_id():
    m = StructuralModel.from_dict({"U": 1.0})
    with pytest.raises(ModelError, match="DXX"):
        apply_intervention(m, Intervention.zero("DXX"))


def test_interventions_introduce_no_new_violations():
    m = StructuralModel.from_dict({"U": 1.0, "U2": -1.0, "DXX": 0.1})
    before = validate_model(m, D1)
    for iv in (Intervention.zero("U"), Intervention.scale("DXX", 3.0)):
        assert validate_model(apply_intervention(m, iv), D1) == before


def test_bare_source_name_resolves():
    m = StructuralModel((op("U"), source("sin(2*pi*x)")), (1.0, 0.1))
    assert m.index("SOURCE") == 1


def test_domain_invariants():
    with pytest.raises(ModelError):
        SpaceTimeDomain(1, (1.0,), (0.0,), 1.0, (11,), 11)
    with pytest.raises(ModelError):
        SpaceTimeDomain(1, (0.0,), (1.0,), 0.0, (11,), 11)
    with pytest.raises(ModelError):
        SpaceTimeDomain(1, (0.0,), (1.0,), 1.0, (2,), 11)
    with pytest.raises(ModelError):
        SpaceTimeDomain(3, (0.0,) * 3, (1.0,) * 3, 1.0, (5,) * 3, 5)
    assert D2.shape == (11, 11, 11)
    assert D1.dx == (0.1,) and D1.dt == pytest.approx(0.1)


def test_sample_set_invariants():
    axes = (np.linspace(0, 1, 5), np.linspace(0, 1, 3))
    s = SampleSet(np.array([[0.5, 0.5, 1.0]]), axes)
    assert s.dim == 1 and s.colloc.shape == (15, 2)
    with pytest.raises(ModelError):
        SampleSet(np.array([[0.5, 0.5, np.inf]]), axes)
    with pytest.raises(ModelError):
        SampleSet(np.array([[0.5, 0.5, 1.0]]), (np.linspace(0, 1, 5), np.array([])))
    with pytest.raises(ModelError):
        SampleSet(np.array([[0.5, 0.5, 1.0]]), axes, noise_sigma=-1.0)


def test_estimate_support_is_threshold_set():
    est = CoefficientEstimate((1.0, -1e-3, 2e-3, 0.0), 1e-3, ("a", "b", "c", "d"))
    assert est.support == frozenset({0, 2})
    assert est.support_names == ["a", "c"]
    assert est.pruned().tolist() == [1.0, 0.0, 2e-3, 0.0]
