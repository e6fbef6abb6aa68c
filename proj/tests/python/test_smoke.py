import math

import numpy as np
import pytest

import treetasep as tt


def test_simulation_is_reproducible():
    law = tt.OffspringLaw.dirac(2)
    fam = tt.RateFamily.exponential(3)
    a = tt.simulate(law, fam, 0.8, T=30.0, seed=4)
    b = tt.simulate(law, fam, 0.8, T=30.0, seed=4)
    assert len(a) > 0
    assert a.events == b.events
    assert a.events[0][1] == "entry"
    assert a.current(0, 30.0) == a.current_generation(0, 30.0)
    assert tt.simulate(law, fam, 0.8, T=30.0, seed=5).events != a.events


def test_simulate_needs_one_stop_rule():
    with pytest.raises(ValueError):
        tt.simulate(tt.OffspringLaw.dirac(2), tt.RateFamily.constant(), 1.0)


def test_single_particle_disentangles_at_the_root():
    log = tt.simulate(tt.OffspringLaw.dirac(2), tt.RateFamily.constant(), 1.0, entered=1, max_particles=1)
    assert log.disentanglement_generation(1) == 0


def test_bounds_for_exponential_rates():
    b = tt.BoundsModel(tt.RateFamily.exponential(3), tt.OffspringLaw.dirac(2), 0.1)
    assert b.c_o == pytest.approx(1 / math.log(2))
    assert b.D_n(16) == 16
    assert b.M_n(16) == pytest.approx(40.4)
    w = b.time_window(64)
    assert w["t_low"] < w["t_up"]


def test_passage_table_matches_the_recursion():
    rng = np.random.default_rng(3)
    env = rng.exponential(size=(4, 5))
    g = tt.passage_table(env)
    ref = np.zeros_like(env)
    for i in range(4):
        for j in range(5):
            prev = max(ref[i - 1, j] if i else 0.0, ref[i, j - 1] if j else 0.0)
            ref[i, j] = prev + env[i, j]
    assert np.array_equal(g, ref)


def test_slowed_tasep_equals_restricted_lpp():
    law, fam = tt.OffspringLaw.dirac(2), tt.RateFamily.exponential(3)
    env = tt.build_env(5, 3, 1.0, fam, law, seed=9)
    slowed = tt.slowed_passage_times(env, 3)
    lpp = tt.passage_table(env, m=3)
    moves = ~np.isnan(slowed)
    assert moves.any()
    assert np.array_equal(slowed[moves], lpp[moves])


def test_exp_sum_tail_brackets_the_exponential_cdf():
    r = tt.exp_sum_tail([1.0], 1.0, 0.5)
    assert r["lower"] <= 1 - math.exp(-1) <= r["upper1"]


def test_single_site_stationary_law():
    tree = tt.Tree(tt.OffspringLaw.dirac(2))
    verts, marg, residual = tt.stationary_marginals(tree, tt.RateFamily.constant(), 0, 0.5)
    assert verts == [0]
    assert marg[0] == pytest.approx(0.5 / 2.5)
    assert residual <= 1e-10


def test_flow_identity_vanishes():
    tree = tt.Tree(tt.OffspringLaw.dirac(2))
    tree.materialize_to_depth(3)
    assert abs(tt.flow_generator_identity(tree, tt.RateFamily.exponential(3), [0, 1, 4], 0.4, 0.4)) <= 1e-12


def test_run_experiment(tmp_path):
    cfg = "treetasep-config 1\nsubcommand = classify-rates\nrates.family = exponential\n"
    out = tt.run_experiment(cfg, str(tmp_path))
    assert out["ok"]
    assert "Flow, strength 1" in out["summary"]
    assert len(tt.config_hash(cfg)) == 16
