import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchgap.advisor import (
    CalibrationGrid,
    CurveRow,
    PerfCurve,
    SLOSpec,
    advise,
    build_curve,
    calibrate,
    find_bopt,
    fixture_curve_text,
    ingest_curve,
    length_percentile,
    per_instance_bytes,
    read_curve,
    recommend_memory,
    recommend_replicas,
    workspace_bytes,
    write_curve,
)
from batchgap.config import RunConfig
from batchgap.core import WorkloadSpec, derive_geometry, load_preset
from batchgap.engine import run, with_params
from batchgap.errors import (
    CurveIncompleteError,
    CurveParseError,
    InsufficientDataError,
    InvalidEpsilonError,
    InvalidSLOError,
    InvalidWorkloadError,
    MalformedCurveError,
)
from oracles import bopt_brute_force

FIXTURE = ingest_curve(fixture_curve_text())
H100 = load_preset("h100-64g")
OPT = load_preset("opt-1.3b")
OPT_GEOM = derive_geometry(OPT)


def curve_of(rows):
    return PerfCurve(tuple(CurveRow(b, t, itl, 1.0, 0.1) for b, t, itl in rows), "measured")


# ---------------------------------------------------------------------------
# B_opt selection


def test_fixture_strict_slo_picks_96():
    result = find_bopt(FIXTURE, SLOSpec(multiplier=2, base_batch=32), 0.1)
    assert result.feasible and result.b_opt == 96
    assert result.slo_bound == pytest.approx(0.015)
    rejected = {a.batch_size: a.rejected for a in result.audit}
    assert rejected == {1: (), 32: (), 96: (), 256: ("slo",), 512: ("slo", "epsilon")}


def test_fixture_relaxed_slo_picks_256():
    result = find_bopt(FIXTURE, SLOSpec(multiplier=4, base_batch=32), 0.1)
    assert result.b_opt == 256
    audit = {a.batch_size: a for a in result.audit}
    assert audit[512].rejected == ("slo", "epsilon")
    assert audit[512].efficiency == pytest.approx(10970 / (512 * 350))


def test_infeasible_is_a_result_not_an_error():
    result = find_bopt(FIXTURE, SLOSpec(bound=1e-4), 0.1)
    assert not result.feasible and result.b_opt is None
    assert all("slo" in a.rejected for a in result.audit)


def test_slo_bound_is_inclusive_and_epsilon_strict():
    curve = curve_of([(1, 100.0, 0.01), (2, 150.0, 0.02)])
    assert find_bopt(curve, SLOSpec(bound=0.02), 0.0).b_opt == 2
    assert find_bopt(curve, SLOSpec(bound=0.02), 0.75).b_opt == 1  # eff(2) == 0.75 exactly


def test_ties_go_to_smaller_batch():
    curve = curve_of([(1, 100.0, 0.01), (4, 300.0, 0.02), (8, 300.0, 0.03)])
    assert find_bopt(curve, SLOSpec(bound=1.0), 0.0).b_opt == 4


def test_single_row_curve_picks_one():
    curve = curve_of([(1, 100.0, 0.01)])
    assert find_bopt(curve, SLOSpec(bound=0.01), 0.99).b_opt == 1


@pytest.mark.parametrize("eps", [-0.1, 1.0, 2.0])
def test_epsilon_range(eps):
    with pytest.raises(InvalidEpsilonError):
        find_bopt(FIXTURE, SLOSpec(bound=1.0), eps)


def test_slo_spec_validation():
    with pytest.raises(InvalidSLOError):
        SLOSpec()
    with pytest.raises(InvalidSLOError):
        SLOSpec(bound=0.01, multiplier=2, base_batch=32)
    with pytest.raises(InvalidSLOError):
        SLOSpec(multiplier=2)
    with pytest.raises(InvalidSLOError):
        SLOSpec(bound=-1.0)
    with pytest.raises(InvalidSLOError):
        SLOSpec(multiplier=2, base_batch=64).resolve(FIXTURE)


def random_curve(rng: random.Random):
    sizes = sorted(rng.sample(range(2, 600), rng.randint(0, 7)))
    rows = [(1, rng.uniform(50, 500), rng.uniform(1e-3, 5e-3))]
    for b in [1] + sizes:
        if b == 1:
            continue
        rows.append((b, rng.choice([rows[-1][1], rng.uniform(50, 20000)]),
                     rng.uniform(1e-3, 0.1)))
    return rows


def test_matches_brute_force_oracle_on_1000_curves():
    rng = random.Random(1234)
    for _ in range(1000):
        rows = random_curve(rng)
        bound = rng.choice([rng.uniform(1e-3, 0.1), rows[rng.randrange(len(rows))][2]])
        eps = rng.choice([0.0, rng.uniform(0, 0.99)])
        result = find_bopt(curve_of(rows), SLOSpec(bound=bound), eps)
        assert result.b_opt == bopt_brute_force(rows, bound, eps)


curves = st.integers(0, 2**32 - 1).map(lambda s: random_curve(random.Random(s)))


@given(curves, st.floats(1e-3, 0.1), st.floats(1e-3, 0.1), st.floats(0, 0.99))
def test_looser_slo_never_lowers_throughput(rows, a, b, eps):
    lo, hi = sorted((a, b))
    curve = curve_of(rows)
    tight, loose = find_bopt(curve, SLOSpec(bound=lo), eps), find_bopt(curve, SLOSpec(bound=hi), eps)
    if tight.feasible:
        assert loose.feasible and loose.throughput >= tight.throughput


@given(curves, st.floats(1e-3, 0.1), st.floats(0, 0.99), st.floats(0, 0.99))
def test_lower_epsilon_never_lowers_throughput(rows, bound, a, b):
    lo, hi = sorted((a, b))
    curve = curve_of(rows)
    strict, lax = find_bopt(curve, SLOSpec(bound=bound), hi), find_bopt(curve, SLOSpec(bound=bound), lo)
    if strict.feasible:
        assert lax.feasible and lax.throughput >= strict.throughput


@given(curves, st.floats(1e-3, 0.1), st.floats(0, 0.99), st.sampled_from([0.5, 2.0, 8.0]))
def test_throughput_scale_invariance(rows, bound, eps, k):
    # powers of two keep the efficiency ratios bit-identical
    scaled = [(b, t * k, itl) for b, t, itl in rows]
    a = find_bopt(curve_of(rows), SLOSpec(bound=bound), eps)
    b = find_bopt(curve_of(scaled), SLOSpec(bound=bound), eps)
    assert a.b_opt == b.b_opt


# ---------------------------------------------------------------------------
# curve files


def test_fixture_rows():
    assert FIXTURE.batch_sizes == [1, 32, 96, 256, 512]
    assert FIXTURE.row(96).itl == pytest.approx(13.78e-3)
    assert FIXTURE.row(512).throughput == 10970.0


def test_round_trip_is_exact(small_config):
    curve = build_curve(small_config, [1, 7, 48])
    again = ingest_curve(write_curve(curve, comments=["made by a test"]), "simulated")
    assert again == curve
    assert write_curve(again) == write_curve(curve)


@given(st.lists(st.floats(1e-6, 10.0, allow_nan=False), min_size=1, max_size=6, unique=True))
def test_itl_seconds_survive_millisecond_text(itls):
    rows = tuple(CurveRow(b, 100.0 * b, itl, 1.0, 0.5) for b, itl in enumerate(itls, start=1))
    curve = PerfCurve(rows, "measured")
    assert ingest_curve(write_curve(curve)) == curve


def test_comments_and_blank_lines_ignored():
    text = "# note\n\n" + fixture_curve_text() + "\n# trailing\n"
    assert ingest_curve(text) == FIXTURE


def test_rows_are_sorted_on_ingest():
    lines = fixture_curve_text().strip().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    shuffled = "\n".join([body[0]] + body[1:][::-1]) + "\n"
    assert ingest_curve(shuffled) == FIXTURE


@pytest.mark.parametrize("bad,line", [
    ("batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac\n1,abc,3,1,0\n", 2),
    ("batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac\n1,3,3,1,0\nx,1,1,1,0\n", 3),
    ("batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac\n1,3,3,1\n", 2),
    ("batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac\n1,3,nan,1,0\n", 2),
    ("batch,thr\n1,2\n", 1),
])
def test_parse_errors_carry_line_numbers(bad, line):
    with pytest.raises(CurveParseError) as info:
        ingest_curve(bad)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_missing_batch_one_is_incomplete():
    with pytest.raises(CurveIncompleteError):
        curve_of([(2, 100.0, 0.01), (4, 150.0, 0.02)])


def test_duplicate_rows_are_malformed():
    header = "batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac\n"
    with pytest.raises(MalformedCurveError):
        ingest_curve(header + "1,3,3,1,0\n1,4,3,1,0\n")


def test_nonpositive_throughput_is_malformed():
    with pytest.raises(MalformedCurveError):
        curve_of([(1, 100.0, 0.01), (2, 0.0, 0.02)])


def test_non_monotone_curve_is_accepted():
    curve = curve_of([(1, 100.0, 0.01), (2, 90.0, 0.02), (4, 300.0, 0.015)])
    assert find_bopt(curve, SLOSpec(bound=1.0), 0.0).b_opt == 4


def test_read_curve_from_file(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text(fixture_curve_text())
    assert read_curve(path) == FIXTURE


# ---------------------------------------------------------------------------
# simulated curves


def test_build_curve_is_deterministic_and_parallel_safe(small_config):
    serial = build_curve(small_config, [1, 4, 64])
    assert build_curve(small_config, [64, 4, 1, 4]) == serial
    assert build_curve(small_config, [1, 4, 64], workers=3) == serial
    row = serial.row(64)
    m, _ = run(small_config.with_batch_size(64))
    assert (row.throughput, row.itl, row.e2e, row.kv_usage) == (m.throughput, m.itl, m.e2e,
                                                                m.kv_usage_peak)


def test_build_curve_needs_batch_one(small_config):
    with pytest.raises(CurveIncompleteError):
        build_curve(small_config, [2, 4])


# ---------------------------------------------------------------------------
# memory and replicas


def test_memory_for_opt_at_96():
    rec = recommend_memory(OPT_GEOM, H100, 96, WorkloadSpec())
    assert rec.tokens_per_request == 499
    assert rec.kv_bytes == 96 * 512 * 196_608 == 9_663_676_416
    expected = (2_630_221_824 + 9_663_676_416 + 0.1 * H100.device_memory) / H100.device_memory
    assert rec.device_fraction == pytest.approx(expected)
    assert rec.device_fraction == pytest.approx(0.2789, abs=1e-4)
    assert rec.freed_fraction == pytest.approx(0.9 - expected)
    assert not rec.capped


def test_memory_is_monotone_in_batch():
    fractions = [recommend_memory(OPT_GEOM, H100, b, WorkloadSpec()).device_fraction
                 for b in (1, 8, 64, 256, 512)]
    assert fractions == sorted(fractions)


def test_memory_caps_at_device_capacity():
    geom = derive_geometry(load_preset("llama-2-13b"))
    rec = recommend_memory(geom, H100, 512, WorkloadSpec())
    assert rec.capped
    assert rec.freed_fraction == 0.0
    # weights plus the whole KV capacity plus the executor reserve
    assert rec.device_fraction == pytest.approx(1.0)


def test_percentile_is_irrelevant_for_fixed_lengths():
    wl = WorkloadSpec()
    assert (recommend_memory(OPT_GEOM, H100, 96, wl, percentile=1.0)
            == recommend_memory(OPT_GEOM, H100, 96, wl, percentile=0.5))


def test_percentile_shrinks_reservation():
    wl = WorkloadSpec(mode="distribution", num_requests=500, seed=3)
    full = recommend_memory(OPT_GEOM, H100, 96, wl, percentile=1.0)
    median = recommend_memory(OPT_GEOM, H100, 96, wl, percentile=0.5)
    assert median.kv_bytes < full.kv_bytes
    assert median.tokens_per_request == length_percentile(wl, 0.5) < length_percentile(wl, 1.0)


@pytest.mark.parametrize("p", [0.0, -0.5, 1.01])
def test_percentile_range(p):
    with pytest.raises(InvalidWorkloadError):
        length_percentile(WorkloadSpec(), p)


def test_workspace_formula():
    assert workspace_bytes(OPT, 4096) == 4096 * (12 * 2048 + 50272) * 2 == 613_154_816


def test_replicas_for_opt_at_96():
    rec = recommend_memory(OPT_GEOM, H100, 96, WorkloadSpec())
    per = per_instance_bytes(OPT_GEOM, OPT, rec.kv_bytes, 4096)
    assert per == 2_630_221_824 + 9_663_676_416 + workspace_bytes(OPT, 4096)
    assert recommend_replicas(H100, per) == math.floor(0.9 * H100.device_memory / per) == 4


def test_replicas_never_below_one():
    assert recommend_replicas(H100, H100.device_memory) == 1
    llama = load_preset("llama-2-7b")
    geom = derive_geometry(llama)
    rec = recommend_memory(geom, H100, 96, WorkloadSpec())
    assert recommend_replicas(H100, per_instance_bytes(geom, llama, rec.kv_bytes, 4096)) == 1


def test_advise_attaches_recommendations():
    result = advise(FIXTURE, SLOSpec(multiplier=2, base_batch=32), 0.1, RunConfig())
    assert result.b_opt == 96
    assert result.memory.kv_bytes == 9_663_676_416
    assert result.replicas == 4
    d = result.to_dict()
    assert d["schema_version"] == 1 and d["memory"]["capped"] is False


def test_advise_without_config_skips_recommendations():
    result = advise(FIXTURE, SLOSpec(multiplier=2, base_batch=32), 0.1)
    assert result.memory is None and result.replicas is None


# ---------------------------------------------------------------------------
# calibration

COARSE = CalibrationGrid(np.linspace(0.2, 1.0, 17), np.linspace(0.2, 1.0, 17),
                         np.linspace(0.0, 0.004, 21), np.linspace(0.0, 0.0004, 41))
TRUTH = {"mem_efficiency": 0.7, "compute_efficiency": 0.5, "c0": 0.001, "c1": 0.0001}


@pytest.fixture(scope="module")
def synthetic(small_config):
    return build_curve(with_params(small_config, **TRUTH), [1, 8, 32, 96, 200])


def test_calibration_recovers_known_parameters(synthetic, small_config):
    fit = calibrate(synthetic, small_config, COARSE)
    steps = {"mem_efficiency": 0.05, "compute_efficiency": 0.05, "c0": 2e-4, "c1": 1e-5}
    for name, truth in TRUTH.items():
        assert abs(getattr(fit, name) - truth) <= steps[name] + 1e-12, name
    assert fit.residual < 1e-9
    assert not fit.high_residual and fit.at_bounds == ()


def test_default_grid_fit_reproduces_the_curve(synthetic, small_config):
    # on the fine grid the ridge between memory efficiency and per-request CPU
    # cost is flat enough that a neighbouring point can win; the throughputs
    # must still match
    fit = calibrate(synthetic, small_config)
    assert fit.residual < 1e-3
    refit = build_curve(fit.apply(small_config), synthetic.batch_sizes)
    for a, b in zip(refit.rows, synthetic.rows):
        assert a.throughput == pytest.approx(b.throughput, rel=5e-3)


def test_flat_curve_flags_bad_fit(small_config):
    flat = curve_of([(b, 1000.0, 0.01) for b in (1, 8, 32, 96, 200)])
    fit = calibrate(flat, small_config, COARSE)
    assert fit.high_residual
    assert fit.at_bounds


def test_calibration_needs_four_rows(small_config):
    with pytest.raises(InsufficientDataError):
        calibrate(curve_of([(1, 1.0, 0.01), (2, 2.0, 0.01), (3, 3.0, 0.01)]), small_config)


def test_calibration_result_applies(small_config):
    fit = calibrate(curve_of([(1, 300.0, 0.01), (8, 2000.0, 0.01), (32, 5000.0, 0.01),
                              (96, 8000.0, 0.01)]), small_config, COARSE)
    cfg = fit.apply(small_config)
    assert cfg.hardware.mem_efficiency == fit.mem_efficiency
    assert cfg.cpu_model.c1 == fit.c1
    assert fit.to_dict()["schema_version"] == 1
