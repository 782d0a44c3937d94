import math

import numpy as np
import pytest

from signform.errors import AllTrialsDivergedError, TrainingDivergedError
from signform.hyperopt import (
    Dimension,
    GPPosterior,
    SearchSpace,
    Trial,
    default_space,
    expected_improvement,
    gp_fit,
    propose_next,
    read_log,
    run_search,
)
from signform.seeding import derive_rng


def trial_at(space, unit, objective, status="ok"):
    unit = np.asarray(unit, dtype=np.float64)
    return Trial(native=space.from_unit(unit), unit=unit,
                 objective=objective, status=status)


def line_space():
    return SearchSpace(dimensions=(Dimension("x", "continuous", 0.0, 1.0),))


class TestDimension:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dimension("a", "weird", 0, 1)
        with pytest.raises(ValueError):
            Dimension("a", "continuous", 1.0, 1.0)
        with pytest.raises(ValueError):
            Dimension("a", "continuous", 0.0, math.inf)
        with pytest.raises(ValueError):
            Dimension("a", "log-continuous", 0.0, 1.0)

    def test_continuous_roundtrip(self):
        dim = Dimension("a", "continuous", -2.0, 6.0)
        for v in (-2.0, 0.0, 3.3, 6.0):
            assert dim.from_unit(dim.to_unit(v)) == pytest.approx(v)

    def test_log_roundtrip(self):
        dim = Dimension("a", "log-continuous", 1e-4, 1.0)
        assert dim.from_unit(0.5) == pytest.approx(1e-2)
        for v in (1e-4, 1e-3, 0.5, 1.0):
            assert dim.from_unit(dim.to_unit(v)) == pytest.approx(v)

    def test_integer_rounding_in_bounds(self):
        dim = Dimension("n", "integer", 2, 7)
        seen = {dim.from_unit(u) for u in np.linspace(-0.2, 1.2, 101)}
        assert seen == {2, 3, 4, 5, 6, 7}
        assert all(isinstance(v, int) for v in seen)

    def test_clipping(self):
        dim = Dimension("a", "continuous", 0.0, 2.0)
        assert dim.from_unit(-0.5) == 0.0
        assert dim.from_unit(1.5) == 2.0


class TestSearchSpace:
    def test_default_space(self):
        space = default_space()
        names = {d.name: d for d in space.dimensions}
        assert set(names) == {"layers", "hidden_size", "pca_d", "dropout"}
        assert (names["layers"].lower, names["layers"].upper) == (1, 3)
        assert (names["hidden_size"].lower,
                names["hidden_size"].upper) == (32, 512)
        assert (names["pca_d"].lower, names["pca_d"].upper) == (2, 300)
        assert (names["dropout"].lower, names["dropout"].upper) == (0.0, 0.5)

    def test_roundtrip_and_validation(self):
        space = default_space()
        native = space.from_unit([0.0, 1.0, 0.5, 0.2])
        assert native["layers"] == 1
        assert native["hidden_size"] == 512
        assert native["dropout"] == pytest.approx(0.1)
        u = space.to_unit(native)
        assert space.from_unit(u) == native
        with pytest.raises(ValueError):
            SearchSpace(dimensions=())
        with pytest.raises(ValueError):
            SearchSpace(dimensions=(Dimension("a", "continuous", 0, 1),
                                    Dimension("a", "continuous", 0, 1)))


class TestTrial:
    def test_validation(self):
        with pytest.raises(ValueError):
            Trial(native={"x": 0.5}, unit=np.array([0.5]),
                  objective=math.nan, status="ok")
        with pytest.raises(ValueError):
            Trial(native={"x": 0.5}, unit=np.array([0.5]), objective=1.0,
                  status="maybe")

    def test_json_roundtrip(self):
        t = Trial(native={"x": 0.25, "n": 3}, unit=np.array([0.25, 0.4]),
                  objective=2.5, status="ok")
        back = Trial.from_json(t.to_json())
        assert back.native == t.native
        np.testing.assert_allclose(back.unit, t.unit)
        assert back.objective == t.objective
        assert back.status == t.status


class TestGP:
    def test_empty_is_prior(self):
        gp = gp_fit([], signal_var=2.0, noise_var=1e-6)
        mu, var = gp.predict(np.array([[0.3], [0.9]]))
        np.testing.assert_allclose(mu, 0.0)
        np.testing.assert_allclose(var, 2.0)

    def test_single_point_interpolates(self):
        space = line_space()
        trials = [trial_at(space, [0.4], 3.25)]
        gp = gp_fit(trials, seed=0)
        mu, _ = gp.predict(np.array([[0.4]]))
        assert mu[0] == pytest.approx(3.25, abs=1e-6)

    def test_fixed_kernel_matches_hand_solve(self):
        space = line_space()
        trials = [trial_at(space, [0.2], 1.0), trial_at(space, [0.8], 3.0)]
        ell, sf, sn = 0.7, 2.0, 0.1
        gp = gp_fit(trials, length_scales=[ell], signal_var=sf,
                    noise_var=sn, fit=False)

        def k(a, b):
            return sf * math.exp(-0.5 * ((a - b) / ell) ** 2)

        big_k = np.array([[k(0.2, 0.2) + sn, k(0.2, 0.8)],
                          [k(0.8, 0.2), k(0.8, 0.8) + sn]])
        ks = np.array([k(0.5, 0.2), k(0.5, 0.8)])
        want_mu = ks @ np.linalg.solve(big_k, np.array([1.0, 3.0]))
        want_var = sf - ks @ np.linalg.solve(big_k, ks)
        mu, var = gp.predict(np.array([[0.5]]))
        assert mu[0] == pytest.approx(want_mu, abs=1e-10)
        assert var[0] == pytest.approx(want_var, abs=1e-10)

    def test_observed_variance_below_far_variance(self):
        space = line_space()
        trials = [trial_at(space, [0.1], 2.0), trial_at(space, [0.2], 2.5)]
        gp = gp_fit(trials, length_scales=[0.1], signal_var=1.0,
                    noise_var=1e-8, fit=False)
        _, var = gp.predict(np.array([[0.1], [0.95]]))
        assert var[0] < var[1]
        assert var[0] == pytest.approx(0.0, abs=1e-6)

    def test_interpolates_within_noise(self):
        space = line_space()
        rng = np.random.default_rng(0)
        xs = rng.uniform(size=8)
        trials = [trial_at(space, [x], float(np.sin(3 * x))) for x in xs]
        gp = gp_fit(trials, seed=1)
        mu, _ = gp.predict(xs[:, None])
        tol = 3 * math.sqrt(gp.noise_var) + 1e-6
        np.testing.assert_allclose(mu, [t.objective for t in trials],
                                   atol=tol)

    def test_none_finite_gives_prior(self):
        space = line_space()
        trials = [trial_at(space, [0.5], math.inf, status="diverged")]
        gp = gp_fit(trials)
        assert gp.n == 0


class TestExpectedImprovement:
    def fixed_gp(self, points, values, noise=1e-12):
        space = line_space()
        trials = [trial_at(space, [p], v) for p, v in zip(points, values)]
        return gp_fit(trials, length_scales=[0.2], signal_var=1.0,
                      noise_var=noise, fit=False)

    def test_zero_sigma_at_incumbent(self):
        gp = self.fixed_gp([0.5], [2.0])
        ei = expected_improvement(gp, 2.0, np.array([[0.5]]))
        assert ei[0] == pytest.approx(0.0, abs=1e-6)

    def test_zero_sigma_certain_improvement(self):
        gp = self.fixed_gp([0.5], [2.0])
        ei = expected_improvement(gp, 3.0, np.array([[0.5]]))
        assert ei[0] == pytest.approx(1.0, abs=1e-5)

    def test_phi_zero_value(self):
        gp = gp_fit([], signal_var=1.0, noise_var=0.0)
        ei = expected_improvement(gp, 0.0, np.array([[0.3]]))
        assert ei[0] == pytest.approx(1.0 / math.sqrt(2 * math.pi),
                                      abs=1e-12)

    def test_nonnegative_everywhere(self):
        space = line_space()
        rng = np.random.default_rng(2)
        trials = [trial_at(space, [x], float(v)) for x, v in
                  zip(rng.uniform(size=6), rng.normal(size=6))]
        gp = gp_fit(trials, seed=3)
        best = min(t.objective for t in trials)
        ei = expected_improvement(gp, best, rng.uniform(size=(200, 1)))
        assert np.all(ei >= 0)


class TestProposeNext:
    def test_cold_start_in_bounds(self):
        space = default_space()
        native = propose_next([], space, seed=4)
        assert 1 <= native["layers"] <= 3
        assert isinstance(native["layers"], int)
        assert 32 <= native["hidden_size"] <= 512
        assert 2 <= native["pca_d"] <= 300
        assert 0.0 <= native["dropout"] <= 0.5

    def test_init_proposals_are_latin_hypercube(self):
        space = SearchSpace(dimensions=(
            Dimension("x", "continuous", 0.0, 1.0),
            Dimension("y", "continuous", 0.0, 1.0)))
        trials = []
        units = []
        for _ in range(5):
            native = propose_next(trials, space, seed=5, n_init=5)
            u = space.to_unit(native)
            units.append(u)
            trials.append(Trial(native=native, unit=u, objective=1.0))
        units = np.array(units)
        for j in range(2):
            assert sorted(np.floor(units[:, j] * 5).astype(int)) == \
                [0, 1, 2, 3, 4]

    def test_deterministic(self):
        space = line_space()
        rng = np.random.default_rng(6)
        trials = [trial_at(space, [x], float(v)) for x, v in
                  zip(rng.uniform(size=7), rng.uniform(1, 3, size=7))]
        a = propose_next(trials, space, seed=7)
        b = propose_next(trials, space, seed=7)
        c = propose_next(trials, space, seed=8)
        assert a == b
        assert a != c

    def test_proposal_ei_dominates_grid(self):
        space = line_space()
        rng = np.random.default_rng(9)
        xs = rng.uniform(size=8)
        trials = [trial_at(space, [x], (x - 0.4) ** 2) for x in xs]
        seed = 10
        native = propose_next(trials, space, seed=seed, n_candidates=512)
        posterior = gp_fit(trials, seed=seed)
        incumbent = min(t.objective for t in trials)
        grid = derive_rng(seed, "hyperopt", "grid",
                          len(trials)).random((512, 1))
        grid_best = expected_improvement(posterior, incumbent, grid).max()
        chosen = expected_improvement(
            posterior, incumbent, space.to_unit(native)[None, :])[0]
        assert chosen >= grid_best - 1e-12


def quadratic(native):
    return (native["x"] - 0.37) ** 2


class TestRunSearch:
    def test_budget_one(self, tmp_path):
        space = line_space()
        log = tmp_path / "search.jsonl"
        result = run_search(quadratic, space, budget=1, seed=0,
                            log_path=log)
        assert len(result.trials) == 1
        assert result.best is result.trials[0]
        replay = read_log(log)
        assert len(replay) == 1
        assert replay[0].objective == result.best.objective

    def test_validation(self):
        space = line_space()
        with pytest.raises(ValueError):
            run_search(quadratic, space, budget=0)
        with pytest.raises(ValueError):
            run_search(quadratic, space, budget=2, mode="grid")

    def test_quadratic_found_and_beats_random(self):
        space = line_space()
        hits = 0
        wins = 0
        for seed in range(10):
            bo = run_search(quadratic, space, budget=20, seed=seed)
            rnd = run_search(quadratic, space, budget=20, seed=seed,
                             mode="random")
            if abs(bo.best.native["x"] - 0.37) <= 0.05:
                hits += 1
            if bo.best.objective <= rnd.best.objective:
                wins += 1
        assert hits >= 9
        assert wins >= 6

    def test_diverged_trials_penalized(self):
        space = line_space()

        def sometimes(native):
            if native["x"] < 0.5:
                raise TrainingDivergedError("loss blew up")
            return native["x"]

        result = run_search(sometimes, space, budget=8, seed=3)
        ok = [t for t in result.trials if t.status == "ok"]
        bad = [t for t in result.trials if t.status == "diverged"]
        assert ok and bad
        assert result.best.status == "ok"
        assert result.best.objective == min(t.objective for t in ok)
        worst_ok = max(t.objective for t in ok)
        for t in bad:
            assert t.objective >= min(worst_ok + 2.0, 22.0) - 1e-9

    def test_nan_return_is_divergence(self):
        # The 5-point init covers all fifths of [0, 1], so both sides of
        # the 0.5 threshold are guaranteed to be evaluated.
        space = line_space()
        result = run_search(lambda native: math.nan if native["x"] < 0.5
                            else 1.0, space, budget=6, seed=4)
        assert any(t.status == "diverged" for t in result.trials)
        assert any(t.status == "ok" for t in result.trials)

    def test_all_diverged_raises(self):
        space = line_space()

        def always_bad(native):
            raise TrainingDivergedError("no luck")

        with pytest.raises(AllTrialsDivergedError):
            run_search(always_bad, space, budget=3, seed=5)

    def test_resume_from_log(self, tmp_path):
        space = line_space()
        log = tmp_path / "resume.jsonl"
        calls = []

        def counting(native):
            calls.append(native["x"])
            return quadratic(native)

        first = run_search(counting, space, budget=3, seed=6, log_path=log)
        assert len(calls) == 3
        second = run_search(counting, space, budget=6, seed=6,
                            log_path=log, resume=True)
        assert len(calls) == 6
        assert len(second.trials) == 6
        for a, b in zip(first.trials, second.trials):
            assert a.objective == b.objective
            assert a.native == b.native
