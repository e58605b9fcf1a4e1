"""Acceptance suite: end-to-end contracts of the whole library.

Each test here states a promise the package makes to its users and checks
it at the advertised tolerance: gradient correctness across the loss
catalog, equivalence of the specialized and generic objective routes,
exact missing-data semantics, recovery of planted models, the held-out
prediction protocol, and the solver's convergence guarantees.  The module
tests cover the same ground piecewise; this file exercises the claims in
the form a user would rely on them.
"""

import time

import numpy as np
import pytest
from numpy.random import Generator, Philox

from gcptensor import objective as obj
from gcptensor.fitting import fit_gcp, fit_gcp_multistart
from gcptensor.gradcheck import check_gradients, random_interior_model
from gcptensor.io import heldout_loglik, make_holdout, sample_from_model
from gcptensor.kruskal import KruskalTensor
from gcptensor.losses import LOSS_NAMES, LossSpec
from gcptensor.objective import (
    FitProblem,
    gaussian_fast_value_and_grad,
    mttkrp,
    value_and_grad,
    weighted_value_and_grad,
)
from gcptensor.optimize import OptOptions, Status, minimize
from gcptensor.tensors import CooTensor

LOSS_PARAMS = {
    "huber": {"delta": 0.25},
    "beta_div": {"beta": 0.5},
    "negbinom": {"failures": 1.5},
}


def catalog_spec(name):
    return LossSpec(name, **LOSS_PARAMS.get(name, {}))


def data_in_domain(name, shape, rng):
    """Random data valid for a loss, continuous wherever kinks are possible."""
    if name in ("bernoulli_odds", "bernoulli_logit"):
        return (rng.uniform(size=shape) < 0.5).astype(np.float64)
    if name in ("poisson", "poisson_log", "negbinom"):
        return rng.poisson(2.0, size=shape).astype(np.float64)
    if name in ("gamma", "rayleigh", "beta_div"):
        return rng.gamma(2.0, 1.0, size=shape)
    return rng.standard_normal(shape)


def scarce_view(x, rng, keep_fraction=0.6):
    """Scarce tensor holding a random subset of a dense array's entries."""
    keep = rng.uniform(size=x.shape) < keep_fraction
    keep.flat[0] = True
    return CooTensor(x.shape, np.argwhere(keep), x[keep], scarce=True)


def assert_trace_contract(trace):
    """Accepted objectives never increase; a run always records its start."""
    f = trace.objectives
    assert f.size >= 1
    assert np.all(np.diff(f) <= 0.0)


class TestGradientCorrectness:
    """Analytic factor gradients match central finite differences."""

    def test_every_loss_shape_rank_and_mask(self):
        start = time.time()
        worst = 0.0
        for name in LOSS_NAMES:
            spec = catalog_spec(name)
            for shape in [(5, 4, 3), (4, 3, 2, 2)]:
                for rank in (1, 2, 3):
                    for scarce in (False, True):
                        rng = np.random.default_rng(
                            abs(hash((name, shape, rank, scarce))) % 2**32
                        )
                        x = data_in_domain(name, shape, rng)
                        data = scarce_view(x, rng) if scarce else x
                        problem = FitProblem(data, spec, rank=rank)
                        model = random_interior_model(problem, seed=rank)
                        report = check_gradients(problem, model)
                        assert report.max_error < 1e-5, (
                            f"{name} shape {shape} rank {rank} "
                            f"scarce={scarce}: {report.max_error:.3e}"
                        )
                        worst = max(worst, report.max_error)
        assert worst < 1e-5
        assert time.time() - start < 60.0

    def test_weighted_models_including_weight_gradient(self):
        worst = 0.0
        for name in LOSS_NAMES:
            spec = catalog_spec(name)
            for shape in [(5, 4, 3), (4, 3, 2, 2)]:
                for rank in (1, 2, 3):
                    for scarce in (False, True):
                        rng = np.random.default_rng(
                            abs(hash((name, shape, rank, scarce, "w"))) % 2**32
                        )
                        x = data_in_domain(name, shape, rng)
                        data = scarce_view(x, rng) if scarce else x
                        problem = FitProblem(data, spec, rank=rank)
                        model = random_interior_model(
                            problem, seed=rank, weighted=True
                        )
                        report = check_gradients(problem, model)
                        assert report.weight_error is not None
                        assert report.weight_error < 1e-5
                        assert report.max_error < 1e-5, (
                            f"{name} shape {shape} rank {rank} "
                            f"scarce={scarce}: {report.max_error:.3e}"
                        )
                        worst = max(worst, report.max_error)
        assert worst < 1e-5


class TestGaussianFastPath:
    """The gram-matrix route agrees with the generic objective."""

    @staticmethod
    def agree(problem, model, tol=1e-10):
        f_gen, g_gen = value_and_grad(problem, model)
        f_fast, g_fast = gaussian_fast_value_and_grad(problem, model)
        scale = max(1.0, abs(f_gen))
        assert abs(f_fast - f_gen) / scale < tol
        for a, b in zip(g_fast, g_gen):
            err = np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b))))
            assert err < tol

    def test_twenty_dense_instances(self):
        spec = LossSpec("gaussian")
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            shape = tuple(rng.integers(2, 7, size=rng.integers(3, 5)))
            rank = int(rng.integers(1, 4))
            reg = 0.1 if trial % 3 == 0 else 0.0
            x = rng.standard_normal(shape)
            problem = FitProblem(x, spec, rank=rank, reg=reg)
            model = random_interior_model(problem, seed=trial)
            self.agree(problem, model)

    def test_twenty_sparse_instances_without_densifying(self, monkeypatch):
        spec = LossSpec("gaussian")
        shape = (20, 20, 20)
        total = 8000
        cases = []
        for trial in range(20):
            rng = np.random.default_rng(2000 + trial)
            nnz = int(rng.integers(20, 81))  # at most 1% density
            lin = rng.choice(total, size=nnz, replace=False)
            idx = np.column_stack(np.unravel_index(lin, shape, order="F"))
            data = CooTensor(shape, idx, rng.standard_normal(nnz))
            problem = FitProblem(data, spec, rank=int(rng.integers(1, 4)))
            model = random_interior_model(problem, seed=trial)
            cases.append((problem, model, value_and_grad(problem, model)))
            problem._dense_cache = None  # drop what the generic route built

        def forbid(*args, **kwargs):
            raise AssertionError("fast path touched a dense intermediate")

        monkeypatch.setattr(obj, "_realize_dense_deriv", forbid)
        monkeypatch.setattr(CooTensor, "to_dense", forbid)
        for problem, model, (f_gen, g_gen) in cases:
            f_fast, g_fast = gaussian_fast_value_and_grad(problem, model)
            assert abs(f_fast - f_gen) / max(1.0, abs(f_gen)) < 1e-10
            for a, b in zip(g_fast, g_gen):
                err = np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b))))
                assert err < 1e-10


class TestMttkrpKernel:
    """The contraction kernel equals the matricized brute force."""

    @staticmethod
    def brute_force(y, factors, mode):
        # independent route: raw unfolding times an explicitly assembled
        # Khatri-Rao matrix, later modes slowest
        d = y.ndim
        unfolded = np.moveaxis(y, mode, 0).reshape(y.shape[mode], -1, order="F")
        rank = factors[0].shape[1]
        cols = []
        for r in range(rank):
            col = np.ones(1)
            for j in reversed(range(d)):
                if j != mode:
                    col = np.kron(col, factors[j][:, r])
            cols.append(col)
        return unfolded @ np.column_stack(cols)

    @pytest.mark.parametrize(
        "shape", [(3, 2), (4, 3, 2), (5, 4, 3), (6, 5, 4, 3)]
    )
    def test_dense_all_modes(self, shape):
        rng = np.random.default_rng(sum(shape))
        y = rng.standard_normal(shape)
        for rank in (1, 2, 3):
            model = KruskalTensor(
                [rng.standard_normal((n, rank)) for n in shape]
            )
            for mode in range(len(shape)):
                got = mttkrp(y, model, mode)
                want = self.brute_force(y, model.factors, mode)
                assert np.max(np.abs(got - want)) < 1e-12 * max(
                    1.0, float(np.max(np.abs(want)))
                )

    @pytest.mark.parametrize(
        "shape", [(3, 2), (4, 3, 2), (5, 4, 3), (6, 5, 4, 3)]
    )
    def test_coo_all_modes(self, shape):
        rng = np.random.default_rng(100 + sum(shape))
        total = int(np.prod(shape))
        nnz = max(1, total // 3)
        lin = rng.choice(total, size=nnz, replace=False)
        idx = np.column_stack(np.unravel_index(lin, shape, order="F"))
        vals = rng.standard_normal(nnz)
        coo = CooTensor(shape, idx, vals)
        dense = coo.to_dense()
        for rank in (1, 2, 3):
            model = KruskalTensor(
                [rng.standard_normal((n, rank)) for n in shape]
            )
            for mode in range(len(shape)):
                got = mttkrp(coo, model, mode)
                want = self.brute_force(dense, model.factors, mode)
                assert np.max(np.abs(got - want)) < 1e-12 * max(
                    1.0, float(np.max(np.abs(want)))
                )


class TestMaskedDataLaw:
    """Unobserved entries are invisible, and the objective is a mean."""

    @pytest.mark.parametrize("loss_name", ["gaussian", "poisson", "huber"])
    def test_representation_invariance_is_exact(self, loss_name):
        spec = catalog_spec(loss_name)
        rng = np.random.default_rng(17)
        shape = (6, 5, 4)
        x = data_in_domain(loss_name, shape, rng)
        observed = rng.uniform(size=shape) < 0.55
        observed.flat[0] = True
        model = KruskalTensor(
            [rng.uniform(0.2, 1.0, size=(n, 2)) for n in shape]
        )

        # same observations, four ways; the unobserved side of the dense
        # arrays is filled with junk the loss would reject outright
        junk = np.where(observed, x, -1e6)
        weights = np.where(observed, 1.0 / observed.sum(), 0.0)
        idx = np.argwhere(observed)
        problems = [
            FitProblem(x, spec, rank=2, mask=observed),
            FitProblem(junk, spec, rank=2, mask=observed),
            FitProblem(junk, spec, rank=2, weights=weights),
            FitProblem(
                CooTensor(shape, idx, x[observed], scarce=True), spec, rank=2
            ),
        ]
        results = [value_and_grad(p, model) for p in problems]
        f0, g0 = results[0]
        for f, g in results[1:]:
            assert f == f0
            for a, b in zip(g, g0):
                assert np.array_equal(a, b)

    def test_objective_is_mean_over_observed(self):
        spec = LossSpec("gaussian")
        rng = np.random.default_rng(23)
        shape = (5, 4, 3)
        x = rng.standard_normal(shape)
        observed = rng.uniform(size=shape) < 0.5
        observed.flat[0] = True
        model = KruskalTensor(
            [rng.uniform(0.2, 1.0, size=(n, 2)) for n in shape]
        )
        f, _ = value_and_grad(
            FitProblem(x, spec, rank=2, mask=observed), model
        )
        # direct summation oracle over the observed entries only
        mvals = model.full()[observed]
        expected = float(np.mean((x[observed] - mvals) ** 2))
        assert f == pytest.approx(expected, rel=1e-13)

    def test_fully_observed_objective_is_mean_over_all(self):
        spec = LossSpec("gaussian")
        rng = np.random.default_rng(29)
        x = rng.standard_normal((5, 4, 3))
        model = KruskalTensor(
            [rng.uniform(0.2, 1.0, size=(n, 2)) for n in (5, 4, 3)]
        )
        f, _ = value_and_grad(FitProblem(x, spec, rank=2), model)
        expected = float(np.mean((x - model.full()) ** 2))
        assert f == pytest.approx(expected, rel=1e-13)


class TestNoiselessRecovery:
    def test_rank2_gaussian_cube_from_five_seeds(self):
        start = time.time()
        rng = Generator(Philox(6))
        truth = KruskalTensor([rng.standard_normal((20, 2)) for _ in range(3)])
        x = truth.full()
        problem = FitProblem(x, LossSpec("gaussian"), rank=2)
        options = OptOptions(max_iters=2000, grad_tol=1e-9, rel_f_tol=1e-16)
        best, summary = fit_gcp_multistart(
            problem, seeds=range(5), options=options
        )
        assert len(summary) == 5
        assert best.objective < 1e-8
        rel = np.linalg.norm(best.model.full() - x) / np.linalg.norm(x)
        assert rel < 1e-4
        assert_trace_contract(best.trace)
        assert time.time() - start < 120.0


class TestPoissonStatisticalRecovery:
    def test_planted_rates_recovered_on_most_seeds(self):
        rng = Generator(Philox(42))
        truth = KruskalTensor(
            [rng.uniform(0.63, 1.35, size=(30, 2)) for _ in range(3)]
        )
        rates = truth.full()
        assert rates.min() >= 0.5 and rates.max() <= 5.0
        spec = LossSpec("poisson")
        errors = []
        for seed in range(5):
            counts = sample_from_model(truth, "poisson", seed=seed)
            problem = FitProblem(counts, spec, rank=2)
            result = fit_gcp(
                problem, seed=seed, options=OptOptions(max_iters=400)
            )
            assert_trace_contract(result.trace)
            errors.append(
                np.linalg.norm(result.model.full() - rates)
                / np.linalg.norm(rates)
            )
        # sampling noise means an occasional miss is acceptable
        assert sum(e < 0.15 for e in errors) >= 4, errors


class TestBinaryPredictionProtocol:
    """Matched likelihoods beat a squared-error fit on held-out entries."""

    def test_bernoulli_losses_beat_gaussian_median(self):
        rng = Generator(Philox(99))
        truth = KruskalTensor(
            [rng.uniform(0.0, 1.0, size=(50, 3)) for _ in range(3)]
        )
        data = sample_from_model(truth, "bernoulli_odds", seed=7)
        options = OptOptions(max_iters=120, grad_tol=1e-4)
        lls = {"gaussian": [], "bernoulli_odds": [], "bernoulli_logit": []}
        for trial in range(20):
            holdout = make_holdout(data, 50, 50, seed=100 + trial)
            for name in lls:
                spec = LossSpec(name)
                problem = FitProblem(
                    data, spec, rank=3, mask=holdout.train_mask
                )
                result = fit_gcp(problem, seed=trial, options=options)
                lls[name].append(
                    heldout_loglik(result.model, holdout, spec)
                )
        gaussian = np.median(lls["gaussian"])
        assert np.median(lls["bernoulli_odds"]) > gaussian
        assert np.median(lls["bernoulli_logit"]) > gaussian


class TestLossCatalogValues:
    """Worked loss values match direct formula evaluation."""

    EPS = 1e-10

    def test_worked_examples(self):
        checks = [
            ("bernoulli_odds", {}, 0.0, 1.0, np.log(2.0)),
            (
                "rayleigh",
                {},
                2.0,
                2.0,
                2.0 * np.log(2.0 + self.EPS)
                + (np.pi / 4.0) * (2.0 / (2.0 + self.EPS)) ** 2,
            ),
            ("negbinom", {"failures": 2.0}, 0.0, 1.0, 2.0 * np.log(2.0)),
            ("huber", {"delta": 0.25}, 1.0, 0.5, 0.1875),
        ]
        for name, params, x, m, expected in checks:
            got = LossSpec(name, **params).value(x, m)
            assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected)), name

    def test_poisson_derivative_near_stationary_point(self):
        got = LossSpec("poisson").deriv(2.0, 2.0)
        expected = 1.0 - 2.0 / (2.0 + self.EPS)
        assert abs(got - expected) <= 1e-12
        assert 0.0 < got < 1e-9

    def test_beta_divergence_special_cases_dispatch_exactly(self):
        rng = np.random.default_rng(31)
        x = rng.gamma(2.0, 1.0, size=100)
        m = rng.uniform(0.2, 3.0, size=100)
        b1, po = LossSpec("beta_div", beta=1.0), LossSpec("poisson")
        assert np.array_equal(b1.value(x, m), po.value(x, m))
        assert np.array_equal(b1.deriv(x, m), po.deriv(x, m))
        b0, ga = LossSpec("beta_div", beta=0.0), LossSpec("gamma")
        assert np.array_equal(b0.value(x, m), ga.value(x, m))
        assert np.array_equal(b0.deriv(x, m), ga.deriv(x, m))


class TestSolverContract:
    """Reference problems converge; traces stay monotone and feasible."""

    @staticmethod
    def feasible_oracle(fg, lower, log):
        def oracle(v):
            assert np.all(v >= lower - 0.0)
            log.append(v.copy())
            return fg(v)

        return oracle

    def test_shifted_parabola_interior_minimum(self):
        visited = []
        oracle = self.feasible_oracle(
            lambda v: (float((v[0] - 3.0) ** 2), 2.0 * (v - 3.0)),
            np.zeros(1),
            visited,
        )
        x, trace = minimize(oracle, np.array([0.5]), lower=np.zeros(1))
        assert abs(x[0] - 3.0) < 1e-6
        assert trace.status in (Status.CONVERGED_GRAD, Status.CONVERGED_F)
        assert_trace_contract(trace)
        assert all(np.all(v >= 0.0) for v in visited)

    def test_shifted_parabola_active_bound(self):
        oracle = lambda v: (float((v[0] + 2.0) ** 2), 2.0 * (v + 2.0))
        x, trace = minimize(oracle, np.array([1.0]), lower=np.zeros(1))
        assert x[0] == 0.0
        # at the bound the projected gradient vanishes
        g = 2.0 * (x + 2.0)
        assert np.max(np.abs(np.maximum(x - g, 0.0) - x)) == 0.0
        assert trace.status == Status.CONVERGED_GRAD
        assert_trace_contract(trace)

    def test_rosenbrock_unbounded(self):
        def oracle(v):
            a, b = v
            f = (1.0 - a) ** 2 + 100.0 * (b - a**2) ** 2
            g = np.array(
                [
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a**2),
                    200.0 * (b - a**2),
                ]
            )
            return f, g

        x, trace = minimize(
            oracle,
            np.array([-1.2, 1.0]),
            options=OptOptions(grad_tol=1e-9),
        )
        assert np.max(np.abs(x - 1.0)) < 1e-6
        assert_trace_contract(trace)

    def test_bounded_separable_quadratic(self):
        d = np.array([1.0, 10.0])
        b = np.array([1.0, 10.0])
        oracle = lambda v: (float(0.5 * v @ (d * v) - b @ v), d * v - b)
        lower = np.full(2, 0.5)
        x, trace = minimize(oracle, np.array([2.0, 2.0]), lower=lower)
        np.testing.assert_allclose(x, np.maximum(b / d, 0.5), atol=1e-6)
        assert np.all(x >= 0.5)
        assert_trace_contract(trace)

    def test_binding_separable_quadratic(self):
        d = np.array([1.0, 10.0])
        b = np.array([0.2, 10.0])
        oracle = lambda v: (float(0.5 * v @ (d * v) - b @ v), d * v - b)
        lower = np.full(2, 0.5)
        x, trace = minimize(oracle, np.array([2.0, 2.0]), lower=lower)
        np.testing.assert_allclose(x, np.array([0.5, 1.0]), atol=1e-6)
        assert_trace_contract(trace)

    def test_fit_traces_monotone_and_feasible(self):
        # a bounded fit records a monotone trace and a feasible model
        rng = Generator(Philox(3))
        truth = KruskalTensor(
            [rng.uniform(0.2, 1.0, size=(8, 2)) for _ in range(3)]
        )
        counts = sample_from_model(truth, "poisson", seed=1)
        result = fit_gcp(
            FitProblem(counts, LossSpec("poisson"), rank=2),
            seed=0,
            options=OptOptions(max_iters=200),
        )
        assert_trace_contract(result.trace)
        for a in result.model.factors:
            assert np.all(a >= 0.0)
