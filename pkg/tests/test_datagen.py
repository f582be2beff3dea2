import math

import numpy as np
import pytest

from predbench.datagen import (
    CANONICAL_TWEAK,
    GridDesign,
    TweakConfig,
    build_scenario_grid,
    dimension_for,
    generate_dataset,
    make_scenario,
    parse_scenario_id,
    sample_coefficients,
    sample_equicorrelated_normal,
    tweak_dgp,
)
from predbench.streams import derive_stream


def stream(seed=0, sid="sc", rep=0, purpose="train"):
    return derive_stream(seed, sid, rep, purpose)


class TestScenarioGrid:
    def test_default_grid_has_128_scenarios(self):
        grid = build_scenario_grid(GridDesign())
        assert len(grid) == 128

    def test_32_triples_each_once_per_rho(self):
        grid = build_scenario_grid(GridDesign())
        triples = {}
        for s in grid:
            triples.setdefault((s.n, s.epv, s.prev), []).append(s.rho)
        assert len(triples) == 32
        for rhos in triples.values():
            assert sorted(rhos) == [0.0, 0.3, 0.6, 0.95]

    def test_small_p_cell_excluded(self):
        # ceil(100 * 0.01 / 20) = ceil(0.05) = 1 < 2
        assert dimension_for(100, 0.01, 20.0) == 1
        grid = build_scenario_grid(GridDesign())
        assert not any(s.n == 100 and s.prev == 0.01 and s.epv == 20.0 for s in grid)

    def test_large_p_cell_excluded(self):
        # 1000 * 0.1 / 0.5 = 200 > 100
        assert dimension_for(1000, 0.1, 0.5) == 200
        grid = build_scenario_grid(GridDesign())
        assert not any(s.n == 1000 and s.prev == 0.1 and s.epv == 0.5 for s in grid)

    def test_boundary_p_100_kept(self):
        grid = build_scenario_grid(GridDesign())
        assert any(s.p == 100 for s in grid)

    def test_p_bounds_and_formula_hold_everywhere(self):
        for s in build_scenario_grid(GridDesign()):
            assert 2 <= s.p <= 100
            assert s.p == math.ceil(s.n * s.prev / s.epv - 1e-9)
            assert s.beta0 == pytest.approx(math.log(s.prev / (1 - s.prev)))

    def test_sorted_and_deterministic(self):
        a = build_scenario_grid(GridDesign())
        b = build_scenario_grid(GridDesign())
        assert a == b
        assert [s.scenario_id for s in a] == sorted(s.scenario_id for s in a)

    def test_empty_grid_is_an_error(self):
        design = GridDesign(sample_sizes=(100,), epv_values=(20.0,),
                            prevalences=(0.01,), correlations=(0.0,))
        with pytest.raises(ValueError, match="no valid scenarios"):
            build_scenario_grid(design)

    def test_scenario_id_round_trip(self):
        s = make_scenario(500, 0.5, 0.95, 0.05)
        fields = parse_scenario_id(s.scenario_id)
        assert fields["n"] == 500 and fields["epv"] == 0.5
        assert fields["rho"] == 0.95 and fields["prev"] == 0.05
        assert fields["p"] == s.p

    def test_design_validation(self):
        with pytest.raises(ValueError):
            GridDesign(correlations=(1.0,))
        with pytest.raises(ValueError):
            GridDesign(prevalences=(0.0,))
        with pytest.raises(ValueError):
            GridDesign(sample_sizes=())


class TestEquicorrelatedSampling:
    def test_rho_zero_columns_nearly_uncorrelated(self):
        X = sample_equicorrelated_normal(stream(), 50000, 2, 0.0)
        assert abs(np.corrcoef(X.T)[0, 1]) < 0.02

    def test_high_rho_sample_correlations(self):
        X = sample_equicorrelated_normal(stream(1), 50000, 5, 0.95)
        C = np.corrcoef(X.T)
        off = C[~np.eye(5, dtype=bool)]
        assert np.all(np.abs(off - 0.95) < 0.02)

    def test_unit_marginal_variance_single_column(self):
        X = sample_equicorrelated_normal(stream(2), 50000, 1, 0.6)
        assert abs(X.var() - 1.0) < 0.03

    def test_rho_domain(self):
        with pytest.raises(ValueError):
            sample_equicorrelated_normal(stream(), 10, 2, -0.1)
        with pytest.raises(ValueError):
            sample_equicorrelated_normal(stream(), 10, 2, 1.0)


class TestCoefficients:
    def test_base_mode_all_active(self):
        sc = make_scenario(100, 1.0, 0.0, 0.1)  # p = 10
        coefs = sample_coefficients(stream(purpose="coefficients"), sc)
        assert coefs.active_mask.all()
        assert np.all(coefs.beta != 0)
        assert coefs.nonlinear_term is None

    def test_sparsity_counts(self):
        sc = make_scenario(500, 0.5, 0.0, 0.05)  # p = 50
        coefs = sample_coefficients(
            stream(purpose="coefficients"), sc, tweak_dgp(sparsity=0.1)
        )
        assert coefs.active_mask.sum() == 5
        assert np.all(coefs.beta[~coefs.active_mask] == 0.0)
        assert np.all(coefs.beta[coefs.active_mask] != 0.0)

    def test_noop_tweak_identical_to_base(self):
        sc = make_scenario(100, 1.0, 0.0, 0.1)
        base = sample_coefficients(stream(5, purpose="coefficients"), sc)
        noop = sample_coefficients(
            stream(5, purpose="coefficients"), sc,
            tweak_dgp(sparsity=1.0, nonlinear=False),
        )
        assert np.array_equal(base.beta, noop.beta)
        assert noop.nonlinear_term is None

    def test_nonlinear_term_attached_to_first_active(self):
        sc = make_scenario(500, 0.5, 0.0, 0.05)
        coefs = sample_coefficients(
            stream(3, purpose="coefficients"), sc, CANONICAL_TWEAK
        )
        active = np.flatnonzero(coefs.active_mask)
        assert coefs.nonlinear_term is not None
        assert coefs.nonlinear_term.index == active[0]
        assert coefs.nonlinear_term.shape == "quadratic"

    def test_tweak_validation(self):
        with pytest.raises(ValueError):
            tweak_dgp(sparsity=0.0)
        with pytest.raises(ValueError):
            tweak_dgp(sparsity=1.5)
        with pytest.raises(ValueError):
            tweak_dgp(sparsity=0.5, nonlinear_scale=math.inf)
        cfg = tweak_dgp(sparsity=0.1, nonlinear=True, nonlinear_scale=1.0)
        assert cfg == TweakConfig(0.1, True, 1.0)


class TestDatasets:
    def test_null_model_constant_oracle(self):
        sc = make_scenario(100, 1.0, 0.0, 0.05)
        coefs = sample_coefficients(stream(purpose="coefficients"), sc)
        coefs.beta[:] = 0.0
        ds = generate_dataset(sc, coefs, stream(7), 200, "train")
        assert np.allclose(ds.oracle_prob, 0.05)

    def test_outcome_mean_matches_oracle_mean(self):
        sc = make_scenario(500, 10.0, 0.3, 0.1)
        coefs = sample_coefficients(stream(8, purpose="coefficients"), sc)
        ds = generate_dataset(sc, coefs, stream(8), 100000, "train")
        assert abs(ds.y.mean() - ds.oracle_prob.mean()) < 0.005

    def test_bit_identical_regeneration(self):
        sc = make_scenario(100, 1.0, 0.6, 0.1)
        coefs = sample_coefficients(stream(9, purpose="coefficients"), sc)
        d1 = generate_dataset(sc, coefs, stream(9), 500, "train")
        d2 = generate_dataset(sc, coefs, stream(9), 500, "train")
        assert np.array_equal(d1.X, d2.X)
        assert np.array_equal(d1.y, d2.y)
        assert np.array_equal(d1.oracle_prob, d2.oracle_prob)

    def test_oracle_probs_strictly_inside_unit_interval(self):
        sc = make_scenario(500, 0.5, 0.95, 0.05)
        coefs = sample_coefficients(stream(10, purpose="coefficients"), sc)
        coefs.beta[:] = 5.0  # extreme linear predictor exercises the expit clipping
        ds = generate_dataset(sc, coefs, stream(10), 5000, "train")
        assert np.all(ds.oracle_prob > 0.0)
        assert np.all(ds.oracle_prob < 1.0)

    def test_quadratic_symmetry_with_zero_linear_coefficient(self):
        sc = make_scenario(500, 0.5, 0.0, 0.05)
        coefs = sample_coefficients(
            stream(11, purpose="coefficients"), sc, CANONICAL_TWEAK
        )
        k = coefs.nonlinear_term.index
        coefs.beta[k] = 0.0
        ds = generate_dataset(sc, coefs, stream(11), 50, "train")
        X_flipped = ds.X.copy()
        X_flipped[:, k] = -X_flipped[:, k]
        from scipy.special import expit

        eta = coefs.beta0 + X_flipped @ coefs.beta
        eta += coefs.nonlinear_term.scale * (X_flipped[:, k] ** 2 - 1.0)
        assert np.allclose(expit(eta), ds.oracle_prob)

    def test_dimension_mismatch_rejected(self):
        sc = make_scenario(100, 1.0, 0.0, 0.1)
        coefs = sample_coefficients(stream(purpose="coefficients"), sc)
        other = make_scenario(500, 0.5, 0.0, 0.05)
        with pytest.raises(ValueError, match="length"):
            generate_dataset(other, coefs, stream(), 50, "train")


def test_full_replication_data_is_pure_function_of_seed_and_path():
    sc = make_scenario(100, 1.0, 0.3, 0.1)
    sid = sc.scenario_id

    def make(seed, rep):
        coefs = sample_coefficients(derive_stream(seed, sid, rep, "coefficients"), sc)
        train = generate_dataset(sc, coefs, derive_stream(seed, sid, rep, "train"), 100, "train")
        test = generate_dataset(sc, coefs, derive_stream(seed, sid, rep, "test"), 200, "test")
        return train, test

    t1, e1 = make(4, 2)
    t2, e2 = make(4, 2)
    t3, _ = make(5, 2)
    assert np.array_equal(t1.X, t2.X) and np.array_equal(e1.X, e2.X)
    assert not np.array_equal(t1.X, t3.X)
