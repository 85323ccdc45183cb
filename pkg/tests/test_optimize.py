import json

import numpy as np
import pytest

from relosc.model import builtin_instance
from relosc.optimize import (MinimizeOptions, cluster_results, minimize_local, multistart,
                             start_paths)
from relosc.path import PeriodicPath, sample_path
from oracles import reduced_minimum

FAST = MinimizeOptions(N=64, starts=16)


def test_stationary_start_is_kept():
    inst = builtin_instance("cosine-desk")
    start = PeriodicPath.constant(0.0, 64, 1.0)
    res = minimize_local(inst, 0.0, 0.0, start, FAST)
    assert res.iterations <= 1 and res.converged
    assert np.array_equal(res.path.nodes, start.nodes)


def test_remark1_every_start_reaches_the_analytic_minimizer():
    inst = builtin_instance("remark1-convex")
    opts = MinimizeOptions(N=256)
    for k in range(50):
        start = sample_path(inst, 256, k, 5.0)
        res = minimize_local(inst, 1.0, 0.0, start, opts, keep_history=True)
        assert res.path.distance(PeriodicPath.constant(-1.0, 256, 1.0)) < 1e-3
        assert res.value == pytest.approx(-1.5, abs=1e-6)
        assert np.all(np.diff(res.history) <= 0.0)


def test_infeasible_start_rejected():
    inst = builtin_instance("cosine-desk")
    with pytest.raises(ValueError):
        minimize_local(inst, 0.0, 0.0, PeriodicPath(np.linspace(0, 3, 8), 1.0), FAST)


def test_local_result_unpacks():
    inst = builtin_instance("cosine-desk")
    path, value = minimize_local(inst, 0.0, 1.0, sample_path(inst, 64, 0, 1.0), FAST)
    assert isinstance(path, PeriodicPath) and np.isfinite(value)


def test_remark1_single_cluster():
    rep = multistart(builtin_instance("remark1-convex"), 1.0, 0.0, FAST)
    assert len(rep.clusters) == 1 and rep.global_set == [0]


def test_cosine_desk_two_wells():
    _, (xm, xp) = reduced_minimum(lambda x: x ** 4 + np.cos(x))
    rep = multistart(builtin_instance("cosine-desk"), 0.0, 1.0, FAST)
    assert rep.n_global == 2
    means = sorted(c.representative.mean[0] for c in rep.global_clusters)
    assert means == pytest.approx([xm, xp], abs=1e-6)
    for c in rep.global_clusters:
        assert c.residual < 1e-5


def test_tilt_breaks_the_tie():
    rep = multistart(builtin_instance("cosine-desk"), 0.2, 1.0, FAST)
    assert rep.n_global == 1 and rep.best.representative.mean[0] < 0


def test_deterministic_and_thread_independent():
    inst = builtin_instance("cosine-desk")
    a = multistart(inst, 0.1, 1.0, FAST).to_json()
    b = multistart(inst, 0.1, 1.0, FAST).to_json()
    c = multistart(inst, 0.1, 1.0, MinimizeOptions(N=64, starts=16, threads=3)).to_json()
    assert a == b
    da, dc = json.loads(a), json.loads(c)
    da["options"].pop("threads"), dc["options"].pop("threads")
    assert da == dc


def test_start_paths_count_and_feasibility():
    inst = builtin_instance("cosine-desk")
    starts = start_paths(inst, 0.0, 1.0, FAST)
    assert len(starts) == 16 and all(p.is_feasible(inst.L) for p in starts)
    assert MinimizeOptions().n_starts(1) == 32 and MinimizeOptions().n_starts(3) == 128


def test_clustering_by_sup_distance():
    mk = lambda c, v: (PeriodicPath.constant(c, 8, 1.0), v, True)
    res = [mk(0.0, 1.0), mk(0.05, 1.0 + 1e-9), mk(1.0, 1.0 + 1e-9), mk(2.0, 3.0)]
    clusters, glob = cluster_results(res, 0.1, 1e-6)
    assert [c[2] for c in clusters] == [2, 1, 1]
    assert glob == [0, 1]


@pytest.mark.parametrize("bad", [dict(N=3), dict(starts=0), dict(armijo=1.5), dict(tol_grad=0.0)])
def test_option_validation(bad):
    with pytest.raises(ValueError):
        MinimizeOptions(**bad)


def test_two_dimensional_instance():
    from relosc.model import instance_from_mapping
    inst = instance_from_mapping(dict(n=2, F="x1^4 + x2^4", G="x1", H="cos(x1) + cos(x2)", q=2,
                                      gamma_side="sup", v=[0, 0], w=[6.283185307179586, 0]))
    rep = multistart(inst, 0.0, 1.0, MinimizeOptions(N=32, starts=32))
    # the reduced potential separates: four symmetric global wells at (+-x*, +-x*)
    assert rep.n_global == 4
