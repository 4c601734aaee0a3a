"""Instance generation: counts, shell property, separation, determinism."""

import numpy as np
import pytest

from cexforge.datagen import (DataGenConfig, check_separation, gen_dataset,
                              sample_cex_perturbation)


def test_counts_and_kinds():
    ds = gen_dataset(DataGenConfig(input_shape=(10,), eps=0.2, n=10, seed=7))
    assert len(ds.instances) == 20
    assert len(ds.unverifiable) == 10
    assert len(ds.regular) == 10
    assert all(i.cex is not None for i in ds.unverifiable)
    assert all(i.cex is None for i in ds.regular)


def test_deterministic_from_seed():
    cfg = DataGenConfig(input_shape=(1, 5, 5), eps=0.3, n=4, seed=123)
    a, b = gen_dataset(cfg), gen_dataset(cfg)
    for ia, ib in zip(a.instances, b.instances):
        assert ia.id == ib.id and ia.y == ib.y and ia.kind == ib.kind
        assert np.array_equal(ia.x0, ib.x0)
        if ia.cex is not None:
            assert np.array_equal(ia.cex.delta, ib.cex.delta)
            assert ia.cex.target == ib.cex.target


def test_infeasible_packing_errors():
    # four disjoint balls of radius 0.6 cannot fit on the interval [-1, 1]
    with pytest.raises(ValueError, match="reduce eps or n"):
        gen_dataset(DataGenConfig(input_shape=(1,), eps=0.6, n=2, seed=0,
                                  max_retries=200))


def test_inputs_in_domain_and_labels_valid():
    ds = gen_dataset(DataGenConfig(input_shape=(2, 5, 5), eps=0.1, n=6, seed=1))
    for inst in ds.instances:
        assert inst.x0.shape == (2, 5, 5)
        assert (np.abs(inst.x0) <= 1.0).all()
        assert inst.y in (0, 1)
        if inst.cex is not None:
            assert inst.cex.target in (0, 1)
            assert inst.cex.target != inst.y


def test_shell_property_per_instance():
    cfg = DataGenConfig(input_shape=(1, 5, 5), eps=0.2, n=10, r=0.98, seed=5)
    for inst in gen_dataset(cfg).unverifiable:
        mags = np.abs(inst.cex.delta)
        assert mags.min() >= 0.98 * 0.2 - 1e-12
        assert mags.max() <= 0.2 + 1e-12


def test_ball_disjointness_of_generated_datasets():
    for seed in range(5):
        cfg = DataGenConfig(input_shape=(10,), eps=0.15, n=8, seed=seed)
        ds = gen_dataset(cfg)
        assert check_separation([i.x0 for i in ds.instances], cfg.eps)


def test_sample_cex_shell_bounds():
    rng = np.random.default_rng(0)
    d = sample_cex_perturbation(0.2, 0.98, (1000,), rng)
    assert (np.abs(d) >= 0.196 - 1e-12).all()
    assert (np.abs(d) <= 0.2 + 1e-12).all()


def test_sample_cex_r_zero_fills_ball():
    rng = np.random.default_rng(1)
    d = sample_cex_perturbation(0.5, 0.0, (5000,), rng)
    assert (np.abs(d) <= 0.5).all()
    assert np.abs(d).min() < 0.05  # small magnitudes occur once the shell is gone


def test_sample_cex_sign_symmetry_monte_carlo():
    rng = np.random.default_rng(2)
    d = sample_cex_perturbation(0.5, 0.98, (10_000,), rng)
    frac = np.mean(d > 0)
    assert 0.45 <= frac <= 0.55


def test_check_separation_cases():
    a = np.array([0.0, 0.0])
    assert check_separation([a, np.array([1.0, 1.0])], 0.4)  # 1 > 0.8
    assert not check_separation([a, np.array([0.5, 0.0])], 0.3)  # 0.5 < 0.6
    assert check_separation([a], 5.0)  # vacuous


def test_ids_are_kind_neutral():
    ds = gen_dataset(DataGenConfig(input_shape=(10,), eps=0.1, n=10, seed=3))
    unv_nums = sorted(int(i.id[1:]) for i in ds.unverifiable)
    # a seeded permutation assigns ids, so planted ids are not simply 0..n-1
    assert unv_nums != list(range(10))


def test_config_validation():
    with pytest.raises(ValueError):
        DataGenConfig(input_shape=(4,), eps=0.0)
    with pytest.raises(ValueError):
        DataGenConfig(input_shape=(4,), eps=0.1, r=1.0)
    with pytest.raises(ValueError):
        DataGenConfig(input_shape=(4,), eps=0.1, n=0)
