from dataclasses import replace

import numpy as np
import pytest

import gromov_gap.harness as harness
from gromov_gap.errors import DegenerateGradient, DomainError, NotConverged, TooLarge
from gromov_gap.geometry import COSINE, CostKernel, PointCloud
from gromov_gap.gmg import distortion, gmg_from_samples
from gromov_gap.harness import (ExperimentConfig, SyntheticSpec, oracle_sweep, sample_synthetic,
                                stability_analysis, sweep_csv, train_map)
from gromov_gap.net import init_mlp, mlp_forward


def small(**kw):
    base = dict(steps=5, batch_size=16, eval_every=5, holdout_size=32, hidden=(8,))
    base.update(kw)
    return ExperimentConfig(**base)


# sampling

def test_point_mass_mixture():
    spec = SyntheticSpec(means=[[1.0, 2.0, 3.0]], covariances=[np.zeros((3, 3)).tolist()], weights=[1.0])
    x, _ = sample_synthetic(spec, 10, 0)
    assert np.all(x.points == [1.0, 2.0, 3.0])


def test_uniform_square_mean():
    _, y = sample_synthetic(SyntheticSpec(), 1000, 3)
    sigma = 1 / np.sqrt(12 * 1000)
    assert np.all(np.abs(y.points.mean(axis=0) - 0.5) < 3 * sigma)
    assert y.points.min() >= 0 and y.points.max() <= 1


def test_circle_without_noise():
    _, y = sample_synthetic(SyntheticSpec(target="circle", radial_noise=0.0), 200, 1)
    assert np.abs(np.linalg.norm(y.points, axis=1) - 1).max() < 1e-12


def test_rigid_target_is_isometric_in_law():
    spec = SyntheticSpec(target="rigid", target_dim=3, covariances=[np.zeros((3, 3)).tolist()] * 3)
    x, y = sample_synthetic(spec, 50, 2)
    # with point masses the target is the rotated, shifted set of means
    means = np.asarray(spec.means)
    ys = np.unique(np.round(y.points, 9), axis=0)
    assert len(ys) == 3
    dx = np.sort(np.linalg.norm(means[:, None] - means[None], axis=-1).ravel())
    dy = np.sort(np.linalg.norm(ys[:, None] - ys[None], axis=-1).ravel())
    assert np.allclose(dx, dy, atol=1e-8)


def test_sampling_is_deterministic():
    a = sample_synthetic(SyntheticSpec(), 20, 5)
    b = sample_synthetic(SyntheticSpec(), 20, 5)
    assert np.array_equal(a[0].points, b[0].points) and np.array_equal(a[1].points, b[1].points)


def test_spec_validation():
    with pytest.raises(DomainError):
        SyntheticSpec(weights=[0.5, 0.5, 0.5])
    with pytest.raises(DomainError):
        SyntheticSpec(covariances=[(-np.eye(3)).tolist()] * 3)
    with pytest.raises(DomainError):
        SyntheticSpec(target="torus")
    with pytest.raises(DomainError):
        SyntheticSpec(target="rigid")  # target_dim 2 vs source 3
    with pytest.raises(DomainError):
        ExperimentConfig(lam=-1.0)


# training

def test_zero_lambda_never_touches_regularizer(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("regularizer evaluated")
    monkeypatch.setattr(harness, "regularizer_value_and_grad", boom)
    res = train_map(SyntheticSpec(), small(regularizer="gmg", lam=0.0))
    assert all(r == 0.0 for _, _, r in res.state.loss_trace)


def test_reproducible_loss_trace():
    cfg = small(regularizer="gmg", lam=1.0)
    a, b = train_map(SyntheticSpec(), cfg), train_map(SyntheticSpec(), cfg)
    assert a.state.loss_trace == b.state.loss_trace
    assert np.array_equal(a.state.params.flat(), b.state.params.flat())
    assert a.metrics_csv() == b.metrics_csv()


@pytest.mark.parametrize("kind", ["dst", "gmg"])
def test_regularizer_accounting(kind):
    spec, cfg = SyntheticSpec(), small(regularizer=kind, lam=0.7, steps=1, eval_every=1)
    res = train_map(spec, cfg)
    params = init_mlp([3, 8, 2], cfg.seed, cfg.activation)
    x, _ = sample_synthetic(spec, cfg.batch_size, harness._batch_seed(cfg.seed, 1))
    mapped = PointCloud(mlp_forward(params, x.points))
    kx, ky = cfg.kernel_pair
    ref = distortion(x, mapped, kx, ky) if kind == "dst" else gmg_from_samples(x, mapped, kx, ky, cfg.gw_config).gmg
    assert abs(res.state.loss_trace[0][2] - 0.7 * ref) <= 1e-10 * max(1.0, abs(ref))


def test_metrics_rows_and_manifest():
    res = train_map(SyntheticSpec(), small(steps=7, eval_every=3))
    assert [r["step"] for r in res.metrics] == [0, 3, 6, 7]
    assert res.metrics_csv().splitlines()[0] == "step,fit_loss,reg_loss,holdout_divergence,holdout_distortion"
    man = res.manifest(small(steps=7, eval_every=3), SyntheticSpec())
    assert man["skipped_steps"] == 0 and man["seed"] == 0 and "wall_time" in man


def test_skip_policy(monkeypatch):
    calls = {"n": 0}
    real = harness.regularizer_value_and_grad

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NotConverged("synthetic failure")
        return real(*a, **k)

    monkeypatch.setattr(harness, "regularizer_value_and_grad", flaky)
    res = train_map(SyntheticSpec(), small(regularizer="dst", lam=1.0, steps=150, eval_every=150))
    assert res.skipped == 1 and len(res.state.loss_trace) == 149

    def always(*a, **k):
        raise NotConverged("synthetic failure")

    monkeypatch.setattr(harness, "regularizer_value_and_grad", always)
    with pytest.raises(NotConverged):
        train_map(SyntheticSpec(), small(regularizer="dst", lam=1.0, steps=150))


@pytest.mark.parametrize("seed", range(5))
def test_unregularized_training_makes_progress(seed):
    res = train_map(SyntheticSpec(), ExperimentConfig(steps=150, eval_every=150, seed=seed, holdout_size=128))
    assert res.metrics[-1]["holdout_divergence"] < res.metrics[0]["holdout_divergence"]


def test_large_lambda_gmg_on_rigid_target():
    # the target law is a rigid motion of the source, so both terms can vanish together;
    # raw costs, because the mean-rescaled gap cannot see the output scale
    spec = SyntheticSpec(target="rigid", target_dim=3)
    gw = replace(ExperimentConfig().gw_config, stat_kind="none")
    res = train_map(spec, ExperimentConfig(regularizer="gmg", lam=10.0, steps=600, batch_size=32, lr=1e-3,
                                           eval_every=600, holdout_size=128, gw_config=gw))
    first, last = res.metrics[0], res.metrics[-1]
    assert last["holdout_distortion"] < 0.1 * first["holdout_distortion"]
    assert last["holdout_divergence"] < 0.15 * first["holdout_divergence"]


# stability

def test_stability_identical_batches():
    params = init_mlp([3, 16, 2], 0)
    for reg in ("dst", "gmg"):
        rep = stability_analysis(SyntheticSpec(), params, reg, batches=3, batch_size=24, reuse_seed=True)
        assert np.all(np.diag(rep.similarity) == 1.0)
        assert np.abs(rep.similarity - 1).max() < 1e-9


def test_stability_matrix_shape_and_errors(monkeypatch):
    params = init_mlp([3, 16, 2], 0)
    rep = stability_analysis(SyntheticSpec(), params, "dst", batches=4, batch_size=24)
    assert rep.similarity.shape == (4, 4) and np.allclose(rep.similarity, rep.similarity.T)
    off = rep.similarity[~np.eye(4, dtype=bool)]
    assert rep.off_diagonal_mean == pytest.approx(off.mean())
    with pytest.raises(DomainError):
        stability_analysis(SyntheticSpec(), params, "none")
    monkeypatch.setattr(harness, "regularizer_value_and_grad", lambda kind, x, m, *a, **k: (0.0, np.zeros_like(m.points)))
    with pytest.raises(DegenerateGradient):
        stability_analysis(SyntheticSpec(), params, "dst", batches=2, batch_size=8)


# sweeps

def test_sweep_two_points():
    rows = oracle_sweep(n_values=(2,), trials=3, seed=1)
    assert len(rows) == 12
    # squared distances at n=2 are identical after mean rescaling
    for r in rows:
        if "sqeuclidean" in r["family"]:
            assert abs(r["entropic"] - r["brute_force"]) < 1e-6
        else:
            # near-tied assignments keep a little entropic mass at the final epsilon
            assert r["relative_gap"] < 1e-3


def test_sweep_identical_points():
    same = lambda rng, n, d, fam: (np.ones((n, d)), np.ones((n, d)))
    rows = oracle_sweep(n_values=(3,), families=("sqeuclidean", COSINE), trials=1, instances=same)
    assert all(r["brute_force"] == 0.0 and abs(r["entropic"]) < 1e-12 and r["relative_gap"] < 1e-3 for r in rows)


def test_sweep_cap_and_csv():
    with pytest.raises(TooLarge):
        oracle_sweep(n_values=(9,))
    rows = oracle_sweep(n_values=(3,), families=("cosine",), trials=2)
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "n,family,trial,entropic,brute_force,relative_gap,converged"
    assert len(text.splitlines()) == 3
