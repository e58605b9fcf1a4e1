"""Tests for initialization, single fits, and multistart selection."""

import numpy as np
import pytest

from gcptensor.exceptions import FeasibilityError
from gcptensor.fitting import FitResult, default_init, fit_gcp, fit_gcp_multistart
from gcptensor.kruskal import KruskalTensor
from gcptensor.losses import LossSpec
from gcptensor.objective import FitProblem, value_and_grad
from gcptensor.optimize import OptOptions, Status


def rank1_truth(rng, shape=(6, 5, 4)):
    return KruskalTensor([rng.uniform(0.5, 1.5, (n, 1)) for n in shape])


class TestDefaultInit:
    def test_deterministic_in_seed(self):
        a = default_init((4, 3), 2, LossSpec("poisson"), seed=11)
        b = default_init((4, 3), 2, LossSpec("poisson"), seed=11)
        c = default_init((4, 3), 2, LossSpec("poisson"), seed=12)
        for fa, fb in zip(a.factors, b.factors):
            assert np.array_equal(fa, fb)
        assert not np.array_equal(a.factors[0], c.factors[0])

    def test_bounded_loss_gets_unit_interval_factors(self):
        m = default_init((30, 20), 3, LossSpec("poisson"), seed=0)
        assert m.weights is None
        for n, f in zip((30, 20), m.factors):
            assert f.shape == (n, 3)
            assert np.all(f >= 0.0)
            assert np.all(f < 1.0)

    def test_unbounded_loss_gets_small_signed_factors(self):
        m = default_init((50, 40), 2, LossSpec("gaussian"), seed=0)
        flat = np.concatenate([f.ravel() for f in m.factors])
        assert (flat < 0).any() and (flat > 0).any()
        # 0.1 times standard normal: sample std close to 0.1
        assert 0.05 < flat.std() < 0.2

    def test_zero_rank_rejected(self):
        with pytest.raises(ValueError):
            default_init((4, 3), 0, LossSpec("gaussian"), seed=0)


class TestFitGcp:
    def test_noiseless_rank1_from_perturbed_truth(self):
        rng = np.random.default_rng(0)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1)
        init = KruskalTensor(
            [f + 0.01 * rng.standard_normal(f.shape) for f in truth.factors]
        )
        result = fit_gcp(problem, init=init)
        assert result.objective < 1e-10
        rel = np.linalg.norm(result.model.full() - truth.full()) / np.linalg.norm(
            truth.full()
        )
        assert rel < 1e-4

    def test_noiseless_rank1_from_random_start(self):
        rng = np.random.default_rng(1)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1)
        result = fit_gcp(problem, seed=3)
        assert result.objective < 1e-8
        assert result.trace.status in (Status.CONVERGED_GRAD, Status.CONVERGED_F)

    def test_returned_model_is_normalized_and_sorted(self):
        rng = np.random.default_rng(2)
        truth = KruskalTensor([rng.uniform(0.5, 2.0, (n, 2)) for n in (6, 5, 4)])
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=2)
        model = fit_gcp(problem, seed=0).model
        assert model.weights is not None
        for f in model.factors:
            np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0, atol=1e-12)
        assert model.weights[0] >= model.weights[1]

    def test_objective_matches_model_and_trace(self):
        rng = np.random.default_rng(3)
        truth = rank1_truth(rng)
        data = truth.full() + 0.05 * rng.standard_normal(truth.shape)
        problem = FitProblem(data, LossSpec("gaussian"), rank=1)
        result = fit_gcp(problem, seed=1)
        assert result.objective == result.trace.objectives[-1]
        # normalization must not change the objective the model attains
        f, _ = value_and_grad(problem, result.model.absorb_weights())
        assert f == pytest.approx(result.objective, rel=1e-12)

    def test_nonnegative_problem_yields_feasible_model(self):
        rng = np.random.default_rng(4)
        truth = KruskalTensor([rng.uniform(0.5, 2.0, (n, 2)) for n in (6, 5, 4)])
        counts = rng.poisson(truth.full()).astype(float)
        problem = FitProblem(counts, LossSpec("poisson"), rank=2)
        result = fit_gcp(problem, seed=0)
        for f in result.model.factors:
            assert np.all(f >= 0.0)
        assert np.all(result.model.weights >= 0.0)
        assert np.isfinite(result.objective)

    def test_scarce_problem_fits(self):
        rng = np.random.default_rng(5)
        truth = KruskalTensor([rng.uniform(0.5, 2.0, (n, 1)) for n in (6, 5, 4)])
        full = truth.full()
        mask = rng.uniform(size=full.shape) < 0.4
        idx = np.argwhere(mask)
        from gcptensor.tensors import CooTensor

        data = CooTensor(full.shape, idx, full[mask], scarce=True)
        problem = FitProblem(data, LossSpec("gaussian"), rank=1)
        result = fit_gcp(problem, seed=0)
        assert result.objective < 1e-8

    def test_weighted_init_optimizes_weights(self, monkeypatch):
        # a weighted init must go through the weighted oracle, improve
        # on its starting objective, and keep the weights nonnegative
        def boom(*args, **kwargs):
            raise AssertionError("weightless route used for weighted init")

        monkeypatch.setattr("gcptensor.fitting.value_and_grad", boom)
        rng = np.random.default_rng(6)
        truth = KruskalTensor([rng.uniform(0.5, 2.0, (n, 2)) for n in (6, 5, 4)])
        counts = rng.poisson(truth.full()).astype(float)
        problem = FitProblem(counts, LossSpec("poisson"), rank=2)
        init = default_init(problem.shape, 2, problem.loss, seed=7).normalize()
        assert init.weights is not None
        from gcptensor.objective import weighted_value_and_grad

        f_init, _, _ = weighted_value_and_grad(problem, init)
        result = fit_gcp(problem, init=init)
        assert result.objective < f_init
        assert np.all(result.model.weights >= 0.0)
        assert result.trace.status in (Status.CONVERGED_GRAD, Status.CONVERGED_F)

    def test_init_shape_mismatch_rejected(self):
        problem = FitProblem(np.ones((4, 3)), LossSpec("gaussian"), rank=2)
        bad = KruskalTensor([np.ones((4, 2)), np.ones((5, 2))])
        with pytest.raises(ValueError):
            fit_gcp(problem, init=bad)

    def test_infeasible_init_rejected(self):
        problem = FitProblem(np.ones((4, 3)), LossSpec("poisson"), rank=1)
        bad = KruskalTensor([-np.ones((4, 1)), np.ones((3, 1))])
        with pytest.raises(FeasibilityError):
            fit_gcp(problem, init=bad)

    def test_deterministic_reruns(self):
        rng = np.random.default_rng(8)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1)
        r1 = fit_gcp(problem, seed=5)
        r2 = fit_gcp(problem, seed=5)
        assert r1.objective == r2.objective
        assert np.array_equal(r1.model.to_vec(), r2.model.to_vec())

    def test_iteration_cap_respected(self):
        rng = np.random.default_rng(9)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1)
        result = fit_gcp(problem, seed=0, options=OptOptions(max_iters=3))
        assert result.trace.n_iters <= 3


class TestOracleRouting:
    def test_gaussian_fully_observed_uses_fast_path(self, monkeypatch):
        # if the generic route were consulted, this fit would explode
        def boom(*args, **kwargs):
            raise AssertionError("generic route used for gaussian")

        monkeypatch.setattr("gcptensor.fitting.value_and_grad", boom)
        rng = np.random.default_rng(10)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1)
        result = fit_gcp(problem, seed=0)
        assert result.objective < 1e-8

    def test_other_losses_use_generic_route(self, monkeypatch):
        def boom(*args, **kwargs):
            raise AssertionError("fast path used for huber")

        monkeypatch.setattr("gcptensor.fitting.gaussian_fast_value_and_grad", boom)
        rng = np.random.default_rng(11)
        truth = rank1_truth(rng)
        problem = FitProblem(truth.full(), LossSpec("huber", delta=1.0), rank=1)
        result = fit_gcp(problem, seed=0, options=OptOptions(max_iters=20))
        assert np.isfinite(result.objective)

    def test_masked_gaussian_avoids_fast_path(self, monkeypatch):
        def boom(*args, **kwargs):
            raise AssertionError("fast path used for masked problem")

        monkeypatch.setattr("gcptensor.fitting.gaussian_fast_value_and_grad", boom)
        rng = np.random.default_rng(12)
        truth = rank1_truth(rng)
        mask = rng.uniform(size=truth.shape) < 0.5
        problem = FitProblem(truth.full(), LossSpec("gaussian"), rank=1, mask=mask)
        result = fit_gcp(problem, seed=0, options=OptOptions(max_iters=20))
        assert np.isfinite(result.objective)


class TestMultistart:
    def test_best_matches_summary_minimum(self):
        rng = np.random.default_rng(13)
        truth = KruskalTensor([rng.uniform(0.5, 2.0, (n, 2)) for n in (6, 5, 4)])
        counts = rng.poisson(truth.full()).astype(float)
        problem = FitProblem(counts, LossSpec("poisson"), rank=2)
        best, summary = fit_gcp_multistart(problem, seeds=[0, 1, 2])
        assert isinstance(best, FitResult)
        assert [s for s, _ in summary] == [0, 1, 2]
        assert best.objective == min(f for _, f in summary)

    def test_empty_seed_list_rejected(self):
        problem = FitProblem(np.ones((4, 3)), LossSpec("gaussian"), rank=1)
        with pytest.raises(ValueError):
            fit_gcp_multistart(problem, seeds=[])
