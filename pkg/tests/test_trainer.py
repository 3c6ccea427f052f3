from dataclasses import replace

import numpy as np
import pytest

from causal_pinn.model import Intervention, SampleSet, StructuralModel
from causal_pinn.operators import AnalyticField, quadrature_weights
from causal_pinn.solvers import generate_benchmark, get_benchmark, solve_counterfactual, solve_fd
from causal_pinn.surrogate import init_net
from causal_pinn.trainer import (NonFiniteLoss, TrainConfig, TrainingDivergence, _Problem, alpha_subproblem,
                                 loss, loss_grad, refresh_alpha, retrain_counterfactual, train,
                                 train_baseline_pinn)
from causal_pinn.diagnostics import counterfactual_deviation, mode1_distance, stable_domain
from causal_pinn.trainer import field_on_grid

TINY = TrainConfig(hidden=(6, 6), epochs=60, warmup_epochs=20, alpha_update_period=10, seed=3)


@pytest.fixture(scope="module")
def reaction():
    spec = get_benchmark("reaction1d")
    samples, _ = generate_benchmark(spec, 1)
    return spec, samples


def small_samples(spec, n=40, seed=0):
    s, _ = generate_benchmark(replace(spec, n_samples=n), seed)
    return SampleSet(s.points, tuple(np.linspace(a[0], a[-1], 9) for a in s.colloc_axes))


def test_exact_field_has_vanishing_residual(reaction):
    spec, samples = reaction
    parts = loss(AnalyticField(spec.exact), spec.embedded_truth(), samples, TrainConfig())
    assert parts.residual < 1e-8
    assert parts.data < 1e-28  # noise-free samples of the same closed form


def test_zero_alpha_residual_is_time_derivative(reaction):
    spec, samples = reaction
    f = AnalyticField(spec.exact)
    m = spec.embedded_truth().with_alpha([0.0] * 3)
    ut = f.jets(samples.colloc).u_t
    want = np.sum(quadrature_weights(samples.colloc_axes) * ut * ut)
    assert loss(f, m, samples, TrainConfig()).residual == pytest.approx(want, rel=1e-12)


def test_unweighted_total_is_data(reaction):
    spec, samples = reaction
    net = init_net([2, 8, 1], seed=0)
    p = loss(net, spec.embedded_truth(), samples, TrainConfig(lambda_r=0.0, lambda_s=0.0))
    assert p.total == p.data and p.residual > 0


def test_loss_gradient_matches_fd(reaction):
    spec, _ = reaction
    samples = small_samples(spec)
    model = spec.embedded_truth().with_alpha([0.7, -0.4, 0.2])
    cfg = TrainConfig()
    net = init_net([2, 6, 6, 1], seed=2)
    g = loss_grad(net, model, samples, cfg)
    theta = net.params()
    rng = np.random.default_rng(0)
    h = 1e-6
    for i in rng.choice(theta.size, 20, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        ref = (loss(net.with_params(tp), model, samples, cfg).total
               - loss(net.with_params(tm), model, samples, cfg).total) / (2 * h)
        assert abs(g[i] - ref) <= 1e-4 * max(abs(ref), 1.0), (i, g[i], ref)


def test_trace_total_invariant_and_determinism(reaction):
    spec, _ = reaction
    samples = small_samples(spec)
    n1, e1, t1 = train(samples, spec.library, TINY)
    n2, e2, t2 = train(samples, spec.library, TINY)
    assert len(t1) == TINY.epochs
    for d, r, l1, tot in zip(t1.data, t1.residual, t1.l1, t1.total):
        assert abs(tot - (d + TINY.lambda_r * r + TINY.lambda_s * l1)) <= 1e-10 * max(1.0, tot)
    assert t1.total == t2.total and np.array_equal(t1.alpha, t2.alpha)
    assert np.array_equal(n1.params(), n2.params()) and e1.coeffs.tolist() == e2.coeffs.tolist()


def test_trace_csv_byte_identical(reaction, tmp_path):
    spec, _ = reaction
    samples = small_samples(spec)
    for k in range(2):
        _, _, tr = train(samples, spec.library, TINY)
        tr.to_csv(tmp_path / f"t{k}.csv")
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()


def test_alpha_refresh_does_not_increase_subproblem_objective(reaction):
    spec, _ = reaction
    samples = small_samples(spec)
    model = StructuralModel(spec.library, (1.0, 1.0, 1.0))
    prob = _Problem(samples, model)
    rng = np.random.default_rng(1)
    for seed in range(5):
        net = init_net([2, 8, 8, 1], seed=seed)
        A, b = prob.design(net, model)
        sw = np.sqrt(prob.w)
        cfg = TrainConfig()
        p, scale = alpha_subproblem(A * sw[:, None], b * sw, cfg.lambda_s / cfg.lambda_r)
        a0 = rng.normal(size=3)
        a1 = refresh_alpha(net, model, prob, cfg, alpha0=a0).coeffs
        assert p.objective(a1 / scale) <= p.objective(a0 / scale) + 1e-14


def test_raw_subproblem_is_the_stated_lasso():
    A = np.random.default_rng(0).normal(size=(20, 3))
    b = A @ np.array([1.0, 0.0, -2.0])
    p, scale = alpha_subproblem(A, b, 0.01, normalize=False)
    assert np.array_equal(p.A, A) and np.all(scale == 1.0)
    q, s = alpha_subproblem(A, b, 0.01)
    assert np.allclose(np.linalg.norm(q.A, axis=0), 1.0) and np.linalg.norm(q.b) == pytest.approx(1.0)
    beta = np.array([0.3, -0.1, 0.5])
    assert np.allclose(q.A @ beta * np.linalg.norm(b), A @ (beta * s))


def test_baseline_keeps_alpha_frozen(reaction):
    spec, _ = reaction
    samples = small_samples(spec)
    frozen = StructuralModel(spec.library, (1.0, 1.0, 1.0))
    _, tr = train_baseline_pinn(samples, frozen, TINY)
    assert np.all(np.asarray(tr.alpha) == 1.0)
    assert frozen.support(TINY.prune_tol) == ["U", "U2", "DXX"]


def test_heat_residual_only_training():
    spec = get_benchmark("heat1d")
    s = SampleSet(np.empty((0, 3)), spec.colloc_axes())
    cfg = TrainConfig(epochs=1500, warmup_epochs=0, lambda_s=0.0, hidden=(16, 16), seed=0)
    _, tr = train_baseline_pinn(s, spec.true_model, cfg)
    r = np.array(tr.residual)
    assert r[-1] < 1e-3
    means = r.reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(means) <= 0)


def test_divergence_raises_with_trace(reaction):
    spec, _ = reaction
    s = small_samples(spec)
    big = SampleSet(s.points * np.array([1, 1, 1e5]), s.colloc_axes)
    with pytest.raises(TrainingDivergence) as exc:
        train(big, spec.library, TINY)
    assert exc.value.trace is not None and len(exc.value.trace) == 1


def test_non_finite_loss_reports_components(reaction):
    spec, _ = reaction
    net = init_net([2, 6, 1], seed=0)
    theta = net.params()
    theta[0] = np.nan
    with pytest.raises(NonFiniteLoss, match="data="):
        loss(net.with_params(theta), spec.embedded_truth(), small_samples(spec), TrainConfig())


def test_identity_counterfactual_is_exact(reaction):
    spec, _ = reaction
    s = small_samples(spec)
    net = init_net([2, 6, 1], seed=0)
    cf, d = retrain_counterfactual(net, spec.embedded_truth(), Intervention.scale("U", 1.0), s, TINY)
    assert d == 0.0 and cf is net


# slow: full-size fits on the benchmark rows

CF = TrainConfig(epochs=3000, warmup_epochs=0, seed=1, cf_epochs=2000)


@pytest.fixture(scope="module")
def reaction_fits(reaction):
    spec, samples = reaction
    cfg = replace(TrainConfig(), seed=1)
    _, _, causal = train(samples, spec.library, cfg)
    bnet, base = train_baseline_pinn(samples, spec.true_model, CF)
    return causal, bnet, base


@pytest.mark.slow
def test_baseline_fits_data_as_well_as_causal(reaction_fits):
    causal, _, base = reaction_fits
    assert base.data[-1] <= 2.0 * causal.data[-1]


@pytest.mark.slow
def test_zero_u2_counterfactual_agrees_with_solver(reaction, reaction_fits):
    spec, samples = reaction
    _, bnet, _ = reaction_fits
    iv = Intervention.zero("U2")
    _, d = retrain_counterfactual(bnet, spec.true_model, iv, samples, CF)
    dom = stable_domain(spec.true_model, spec.domain)
    fd = counterfactual_deviation(solve_fd(spec.true_model, spec.ic, dom),
                                  solve_counterfactual(spec.true_model, iv, spec.ic, dom))
    u_norm = np.sqrt(np.mean(field_on_grid(bnet, samples.colloc_axes) ** 2))
    assert d > 0.01 * u_norm
    assert abs(d - fd) <= 0.2 * fd


@pytest.mark.slow
def test_orthogonal_source_counterfactual_is_mode1_silent():
    spec = get_benchmark("orthogonal1d")
    samples, _ = generate_benchmark(spec, 1)
    B = StructuralModel(spec.library, (-np.pi ** 2, 0.1))
    net, _ = train_baseline_pinn(samples, B, CF)
    cf, _ = retrain_counterfactual(net, B, Intervention.zero("SOURCE"), samples, CF)
    axes = samples.colloc_axes
    assert mode1_distance(field_on_grid(net, axes), field_on_grid(cf, axes), axes) < 1e-3
