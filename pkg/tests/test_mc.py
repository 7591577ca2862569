import csv
import dataclasses
import math

import numpy as np
import pytest

from exitlaw.acceptance import constant_field
from exitlaw.limitlaw import analyze
from exitlaw.mc import (
    EXITED,
    ExitEnsemble,
    path_generator,
    rescale,
    run_ensemble,
    simulate_batch,
    simulate_path,
    split_seed,
    write_ensemble_csv,
)
from exitlaw.model import problem_from_dict
from exitlaw.stats import summarize

ZERO = [["0", "0"], ["0", "0"]]


def curved(sigma=None):
    return problem_from_dict(
        {
            "b": ["1 + 0.3*sin(x2)", "-x2 + 0.5*cos(x1)"],
            "sigma": sigma or [["1", "0"], ["0", "1"]],
            "alpha1": 10.0,
            "alpha2": 10.0,
            "x0": [0.0, 0.0],
            "surface": "x1^2 + x2^2 - 1",
            "bbox": {"lo": [-3, -3], "hi": [3, 3]},
            "t_max": 4.0,
        }
    )


def test_split_seed_is_pure_and_distinct():
    seeds = [split_seed(7, i) for i in range(1000)]
    assert seeds == [split_seed(7, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert split_seed(8, 0) != split_seed(7, 0)
    assert path_generator(seeds[0]).standard_normal() == path_generator(seeds[0]).standard_normal()


def test_zero_noise_path_matches_flow():
    spec = constant_field(sigma=ZERO)
    h = 1e-3
    s = simulate_path(spec, 0.1, h, 3.0, 123)
    assert s.status == "exited"
    assert abs(s.tau - 1.0) <= 2 * h * 1.0
    np.testing.assert_allclose(s.x_exit, [1.0, 0.0], atol=2 * h)


def test_single_path_constant_field():
    s = simulate_path(constant_field(), 0.05, 2.5e-4, 3.0, split_seed(1, 0))
    assert s.status == "exited"
    assert abs(s.tau - 1.0) <= 5 * 0.05
    assert abs(s.x_exit[0] - 1.0) <= 1e-10


def test_capped_status():
    s = simulate_path(constant_field(sigma=ZERO), 0.1, 1e-3, 0.5, 1)
    assert s.status == "capped"
    assert math.isnan(s.tau)


def test_left_bbox_status():
    spec = constant_field(bbox={"lo": [-10, -0.01], "hi": [10, 0.01]})
    s = simulate_path(spec, 0.5, 1e-3, 3.0, 4)
    assert s.status == "left_bbox"


def test_draws_do_not_depend_on_chunking():
    spec = constant_field()
    seeds = [split_seed(3, i) for i in range(5)]
    a = simulate_batch(spec, 0.1, 1e-3, 3.0, seeds, chunk=256)
    b = simulate_batch(spec, 0.1, 1e-3, 3.0, seeds, chunk=7)
    c = simulate_batch(spec, 0.1, 1e-3, 3.0, seeds[2:3])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert a[1][2] == c[1][0]


@pytest.fixture(scope="module")
def ens1000():
    return run_ensemble(constant_field(), 0.05, 1000, 2024)


def test_all_paths_exit(ens1000):
    assert ens1000.counts == {"exited": 1000, "capped": 0, "left_bbox": 0}
    assert ens1000.t_cap == pytest.approx(3.0)
    assert ens1000.h_sde == pytest.approx(0.05 ** 2 / 10)
    assert np.all(np.abs(ens1000.x_exit[:, 0] - 1.0) <= 1e-10)


def test_repeat_is_bitwise_identical(ens1000):
    again = run_ensemble(constant_field(), 0.05, 1000, 2024)
    for k in ("path_seeds", "status", "tau", "x_exit", "x_probe"):
        np.testing.assert_array_equal(getattr(again, k), getattr(ens1000, k))


def test_serial_equals_parallel():
    kw = dict(h_sde=2.5e-3, batch_size=25)
    a = run_ensemble(constant_field(), 0.1, 100, 5, **kw)
    b = run_ensemble(constant_field(), 0.1, 100, 5, jobs=3, **kw)
    c = run_ensemble(constant_field(), 0.1, 100, 5, h_sde=2.5e-3, batch_size=100)
    for other in (b, c):
        np.testing.assert_array_equal(other.tau, a.tau)
        np.testing.assert_array_equal(other.x_exit, a.x_exit)


def test_ensemble_requires_paths():
    with pytest.raises(ValueError):
        run_ensemble(constant_field(), 0.1, 0, 1)


def _fake(tau, eps=0.1):
    n = len(tau)
    return ExitEnsemble(
        eps, 1.0, 1e-3, 3.0, n, 0, np.arange(n, dtype=np.uint64), np.full(n, EXITED), np.asarray(tau, float),
        np.tile([1.0, 0.0], (n, 1)), np.tile([1.0, 0.0], (n, 1)), 1.0, np.array([1.0, 0.0]),
    )


def _exact_flow():
    a = analyze(constant_field())
    return dataclasses.replace(a.flow, T=1.0, z=np.array([1.0, 0.0])), a.projections


def test_rescale_examples():
    flow, proj = _exact_flow()
    r = rescale(_fake([1.0, 1.0, 1.0]), flow, proj, 1.0)
    np.testing.assert_array_equal(r.u, 0.0)
    r = rescale(_fake([1.02, 1.02]), flow, proj, 1.0)
    np.testing.assert_allclose(r.u, 0.2, rtol=1e-12)


def test_rescale_skips_non_exited():
    flow, proj = _exact_flow()
    ens = _fake([1.0, 2.0, 1.5])
    ens.status[1] = 1
    r = rescale(ens, flow, proj, 1.0)
    np.testing.assert_array_equal(r.index, [0, 2])
    np.testing.assert_allclose(r.u, [0.0, 5.0])


def test_zero_noise_consistency_first_order():
    spec = curved(sigma=ZERO)
    T = analyze(spec).flow.T
    errs = []
    for h in (4e-3, 2e-3, 1e-3):
        s = simulate_path(spec, 0.1, h, 3.0, 0)
        errs.append(abs(s.tau - T))
    consts = [e / h for e, h in zip(errs, (4e-3, 2e-3, 1e-3))]
    # Euler is first order: |tau - T| / h settles to a constant
    assert max(consts) <= 1.0
    assert consts[-1] == pytest.approx(consts[-2], rel=0.2)


def test_curved_surface_exits_on_m():
    spec = curved()
    ens = run_ensemble(spec, 0.05, 300, 9)
    assert ens.counts["exited"] == 300
    r2 = np.sum(ens.x_exit ** 2, axis=1)
    assert np.max(np.abs(r2 - 1.0)) <= 1e-9


def test_csv_layout(tmp_path):
    ens = run_ensemble(constant_field(), 0.1, 4, 3, t_cap=0.9)
    path = tmp_path / "e.csv"
    write_ensemble_csv(ens, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["path_seed", "status", "tau", "x_exit_1", "x_exit_2", "u", "pib_w", "pim_w_1"]
    assert len(rows) == 5
    for row in rows[1:]:
        if row[1] != "exited":
            assert row[5:] == ["nan", "nan", "nan"]
        assert int(row[0]) in ens.path_seeds


@pytest.mark.slow
def test_probe_correlation_small_eps():
    eps = 0.02
    ens = run_ensemble(constant_field(), eps, 4000, 77)
    a = analyze(constant_field())
    proxy = -a.projections.pi_b(ens.probe_disp[ens.rescaled.index])
    assert np.corrcoef(ens.rescaled.u, proxy)[0, 1] >= 0.99


@pytest.mark.slow
def test_weak_order_sanity():
    eps, n = 0.05, 20_000
    h = eps * eps / 10
    a = summarize(run_ensemble(constant_field(), eps, n, 31, h_sde=h).rescaled.u)
    b = summarize(run_ensemble(constant_field(), eps, n, 31, h_sde=h / 2).rescaled.u)
    width = a.mean_ci[1] - a.mean_ci[0]
    assert abs(a.mean - b.mean) < width
