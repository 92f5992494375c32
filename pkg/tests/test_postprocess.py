import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etrm_wec.config import load_config, shipped_config_path
from etrm_wec.excitation import FourierForce
from etrm_wec.model import ControlSample, ModelParams
from etrm_wec.postprocess import (
    MIN_DWELL,
    ArcKind,
    Trajectory,
    classify_arcs,
    diagnostics,
    harvested_energy,
    label_samples,
    make_trajectory,
    pmp_violations,
    segments_from_labels,
)

P = ModelParams()
SILENT = FourierForce.from_terms([(0.0, 1.0, 0.0)])


def _trajectory(t, u, x2):
    z = np.zeros((6, len(t)))
    z[1] = x2
    z[2] = t
    zeros = np.zeros_like(t)
    control = ControlSample(u_trig=np.arcsin(np.clip(u / P.gamma, -1, 1)), u=u, h1=zeros, hamiltonian=zeros)
    return Trajectory(t=t, z=z, control=control, energy=zeros)


def test_constant_integrand():
    t = np.linspace(0, 50, 2001)
    traj = _trajectory(t, np.full_like(t, 1e5), np.full_like(t, 0.5))
    assert harvested_energy(traj) == pytest.approx(2.5e6, rel=1e-12)


def test_no_force_no_energy():
    t = np.linspace(0, 50, 11)
    assert harvested_energy(_trajectory(t, np.zeros_like(t), np.sin(t))) == 0.0


def test_energy_needs_three_samples():
    t = np.array([0.0, 1.0])
    with pytest.raises(ValueError):
        harvested_energy(_trajectory(t, np.ones(2), np.ones(2)))


def test_trajectory_rejects_unsorted_times():
    with pytest.raises(ValueError):
        _trajectory(np.array([0.0, 2.0, 1.0]), np.zeros(3), np.zeros(3))


def test_simpson_on_symmetric_product():
    # sin(t) cos(t) integrates to zero over [0, pi]
    for n in (11, 21, 41, 81):
        t = np.linspace(0, np.pi, n)
        h = np.pi / (n - 1)
        assert abs(harvested_energy(_trajectory(t, np.sin(t), np.cos(t)))) <= h**4


def test_simpson_is_fourth_order():
    sizes = np.array([9, 17, 33, 65])
    errors = []
    for n in sizes:
        t = np.linspace(0, np.pi / 2, n)
        errors.append(abs(harvested_energy(_trajectory(t, np.sin(t), np.cos(t))) - 0.5))
    slope = np.polyfit(np.log(1.0 / (sizes - 1)), np.log(errors), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.3)


def test_cumulative_energy_starts_at_zero():
    t = np.linspace(0, 5, 51)
    z = np.zeros((6, len(t)))
    z[1], z[2], z[4] = 0.3, t, P.m  # H1 < 0: pushes at +gamma
    traj = make_trajectory(t, z, P, SILENT)
    assert traj.energy[0] == 0.0
    assert traj.energy[-1] == pytest.approx(harvested_energy(traj), rel=1e-3)


# arcs


def test_full_bang_is_one_arc():
    t = np.linspace(0, 50, 2001)
    arcs = classify_arcs(_trajectory(t, np.full_like(t, P.gamma), np.zeros_like(t)), P)
    assert arcs.label == "B"
    assert arcs.segments[0].kind is ArcKind.BANG_PLUS
    assert (arcs.segments[0].t_start, arcs.segments[0].t_end) == (0.0, 50.0)


def test_thresholds():
    u = np.array([0.95, 0.949, 0.0, -0.949, -0.95]) * P.gamma
    np.testing.assert_array_equal(label_samples(u, P.gamma), [1, 0, 0, 0, -1])


def test_short_ramp_is_absorbed():
    t = np.linspace(0, 10, 1001)
    labels = np.where(t < 5, 0, 1)
    labels[(t > 7) & (t < 7.1)] = 0
    arcs = segments_from_labels(t, labels)
    assert arcs.label == "S-B"
    assert arcs.segments[0].t_end == pytest.approx(5.0)


def test_arc_letters_and_export():
    t = np.linspace(0, 3, 301)
    arcs = segments_from_labels(t, np.where(t < 1, -1, np.where(t < 2, 0, 1)))
    assert arcs.label == "B-S-B"
    assert [s.kind for s in arcs] == [ArcKind.BANG_MINUS, ArcKind.SINGULAR, ArcKind.BANG_PLUS]
    assert arcs.to_list()[1] == {"kind": "Singular", "t_start": 1.0, "t_end": 2.0}
    assert len(arcs.of_kind(ArcKind.SINGULAR)) == 1


@given(st.lists(st.tuples(st.sampled_from([-1, 0, 1]), st.integers(1, 80)), min_size=1, max_size=40))
def test_arc_sequence_invariants(runs):
    labels = np.concatenate([np.full(n, k) for k, n in runs])
    if len(labels) < 2:
        labels = np.repeat(labels, 2)
    t = np.linspace(0.0, 0.01 * (len(labels) - 1), len(labels))
    arcs = segments_from_labels(t, labels)
    segs = arcs.segments
    assert segs[0].t_start == t[0] and segs[-1].t_end == t[-1]
    for a, b in zip(segs, segs[1:]):
        assert a.t_end == b.t_start
        assert a.kind is not b.kind
    assert all(s.duration > 0 for s in segs)
    if len(segs) > 1:
        assert all(s.duration >= MIN_DWELL for s in segs)


# diagnostics


def test_constant_hamiltonian_has_no_drift():
    t = np.linspace(0, 10, 101)
    z = np.zeros((6, len(t)))
    z[2], z[5] = t, 7.0
    report = diagnostics(make_trajectory(t, z, P, SILENT), P, SILENT)
    assert report.hamiltonian_drift == 0.0
    assert report.relative_drift == 0.0


def test_report_serialises_missing_singular_stats_as_null():
    t = np.linspace(0, 10, 101)
    z = np.zeros((6, len(t)))
    z[2], z[4] = t, P.m
    report = diagnostics(make_trajectory(t, z, P, SILENT), P, SILENT)
    assert math.isnan(report.singular_oracle_error)
    out = report.to_dict()
    assert out["singular_oracle_error"] is None and out["singular_h1_max"] is None
    assert out["pmp_probes"] == 64 * 1024


def test_pmp_probe_flags_wrong_control():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(6, 64)) * np.array([[1], [1], [10], [1e4], [1e5], [1e3]])
    a = P.gamma * (-(z[4] + P.m * z[1]) / P.m)
    best = np.arctan2(-a, -P.epsilon * z[3])
    assert pmp_violations(z, best, P) == 0
    assert pmp_violations(z, best + np.pi, P) > 0


@pytest.mark.slow
@pytest.mark.parametrize("name", ["case1", "case2", "case3", "case3_anp4e4"])
def test_switching_function_sign_on_bang_arcs(run_case, name):
    _, traj = run_case(name)
    arcs = classify_arcs(traj, load_config(shipped_config_path(name)).case.params)
    for seg in arcs:
        inside = (traj.t >= seg.t_start) & (traj.t <= seg.t_end)
        if seg.kind is ArcKind.BANG_PLUS:
            assert traj.h1[inside].mean() < 0
        elif seg.kind is ArcKind.BANG_MINUS:
            assert traj.h1[inside].mean() > 0


@pytest.mark.slow
def test_case1_passes_pmp_probe(run_case):
    summary, _ = run_case("case1")
    assert summary.diagnostics["pmp_violations"] == 0
    assert summary.diagnostics["pmp_probes"] == 64 * 1024
