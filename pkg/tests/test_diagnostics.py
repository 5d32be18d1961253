"""Shrink factor, posterior summaries, and their serialized forms."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featmeta import (
    ChainOutput,
    PosteriorSummary,
    gelman_rubin,
    read_chain_tsv,
    shrink_factor_trace,
    summarize,
    write_chain_tsv,
    write_rhat_trace_tsv,
    write_summary_tsv,
)
from featmeta.diagnostics import (
    SUMMARY_COLUMNS,
    effective_sample_size,
    mcse_mean,
)


def make_chain(draws, index=0, names=None):
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if names is None:
        names = tuple(f"p{j}" for j in range(draws.shape[1]))
    return ChainOutput(
        chain_index=index,
        draws=draws,
        parameter_names=tuple(names),
        accept_rate=0.25,
        seed_used=index,
        proposal_log_scale=0.0,
    )


# ---------------------------------------------------------------------------
# gelman_rubin
# ---------------------------------------------------------------------------


def test_identical_chains_match_closed_form():
    rng = np.random.default_rng(0)
    draws = rng.standard_normal(1000)
    value = gelman_rubin([draws, draws.copy()])
    # B = 0 exactly, so R-hat = sqrt((s-1)/s), just below 1.
    assert value == pytest.approx(math.sqrt(999.0 / 1000.0), rel=1e-12)
    assert 0.99 <= value <= 1.01
    assert value <= 1.0 + 1e-12


def test_disjoint_supports_blow_up():
    rng = np.random.default_rng(1)
    base = rng.standard_normal(500)
    value = gelman_rubin([base, base + 100.0])
    assert value > 2.0


def test_stationary_chains_converge():
    rng = np.random.default_rng(2)
    chains = [rng.standard_normal(5000) for _ in range(4)]
    assert gelman_rubin(chains) < 1.05


def test_single_chain_rejected():
    with pytest.raises(ValueError, match="two chains"):
        gelman_rubin([np.zeros(100)])


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError, match="equal length"):
        gelman_rubin([np.zeros(10), np.zeros(11)])
    with pytest.raises(ValueError, match="equal length"):
        gelman_rubin([np.zeros(1), np.zeros(1)])


def test_degenerate_chains():
    # Zero within-chain variance: converged if the chains agree,
    # divergent otherwise.
    assert gelman_rubin([np.ones(50), np.ones(50)]) == 1.0
    assert gelman_rubin([np.zeros(50), np.ones(50)]) == math.inf


@settings(max_examples=30, deadline=None)
@given(
    scale=st.floats(0.01, 100.0, allow_nan=False),
    shift=st.floats(-50.0, 50.0, allow_nan=False),
    seed=st.integers(0, 2**16),
)
def test_r_hat_invariant_under_common_affine_map(scale, shift, seed):
    rng = np.random.default_rng(seed)
    chains = [rng.standard_normal(200) for _ in range(3)]
    base = gelman_rubin(chains)
    mapped = gelman_rubin([scale * c + shift for c in chains])
    assert mapped == pytest.approx(base, rel=1e-9)


# ---------------------------------------------------------------------------
# shrink_factor_trace
# ---------------------------------------------------------------------------


def two_param_chains(seed=3, s=600):
    rng = np.random.default_rng(seed)
    return [
        make_chain(rng.standard_normal((s, 2)), index=k) for k in range(3)
    ]


def test_trace_final_point_is_full_r_hat():
    chains = two_param_chains()
    ends, values = shrink_factor_trace(chains, n_points=10)
    assert ends[-1] == chains[0].n_samples
    for j in range(2):
        full = gelman_rubin([c.draws[:, j] for c in chains])
        assert values[-1, j] == pytest.approx(full, rel=1e-12)


def test_trace_grid_is_increasing_and_within_range():
    chains = two_param_chains()
    ends, values = shrink_factor_trace(chains, n_points=20)
    assert np.all(np.diff(ends) > 0)
    assert ends[0] >= 2
    assert values.shape == (ends.shape[0], 2)


def test_trace_flat_for_identical_chains():
    rng = np.random.default_rng(4)
    draws = rng.standard_normal((500, 2))
    chains = [make_chain(draws, index=k) for k in range(2)]
    _, values = shrink_factor_trace(chains, n_points=12)
    assert np.all(values <= 1.0 + 1e-12)
    assert np.all(values >= 0.97)


def test_trace_needs_two_chains():
    with pytest.raises(ValueError):
        shrink_factor_trace([two_param_chains()[0]])


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------


def test_symmetric_draws_balance_tails():
    draws = np.tile([-1.0, 0.0, 1.0], 100)
    chains = [make_chain(draws, 0), make_chain(draws, 1)]
    (summary,) = summarize(chains)
    assert summary.median == 0.0
    assert summary.p_below == summary.p_above == pytest.approx(1.0 / 3.0)
    # exact zeros belong to neither tail
    assert summary.p_below + summary.p_above == pytest.approx(2.0 / 3.0)


def test_all_negative_draws():
    rng = np.random.default_rng(5)
    draws = -np.abs(rng.standard_normal(400)) - 0.01
    (summary,) = summarize([make_chain(draws, 0), make_chain(draws, 1)])
    assert summary.p_below == 1.0
    assert summary.p_above == 0.0


def test_quantiles_match_pooled_vector():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal(300), rng.standard_normal(300)
    (summary,) = summarize([make_chain(a, 0), make_chain(b, 1)])
    pooled = np.concatenate([a, b])
    low, mid, high = np.quantile(pooled, [0.025, 0.5, 0.975])
    assert summary.ci_low == pytest.approx(low, rel=1e-12)
    assert summary.median == pytest.approx(mid, rel=1e-12)
    assert summary.ci_high == pytest.approx(high, rel=1e-12)


def test_summaries_invariant_to_chain_order():
    chains = two_param_chains(seed=7)
    fwd = summarize(chains)
    rev = summarize(list(reversed(chains)))
    for a, b in zip(fwd, rev):
        assert a == b


def test_single_chain_r_hat_is_nan():
    (summary,) = summarize([make_chain(np.arange(10.0))])
    assert math.isnan(summary.r_hat)


def test_empty_chain_list_rejected():
    with pytest.raises(ValueError):
        summarize([])


@settings(max_examples=50, deadline=None)
@given(
    values=st.lists(
        st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=200
    )
)
def test_summary_ordering_and_tail_mass(values):
    draws = np.asarray(values)
    (summary,) = summarize([make_chain(draws, 0), make_chain(draws, 1)])
    assert summary.ci_low <= summary.median <= summary.ci_high
    assert 0.0 <= summary.p_below + summary.p_above <= 1.0


# ---------------------------------------------------------------------------
# Monte-Carlo error helpers
# ---------------------------------------------------------------------------


def test_mcse_scales_like_iid():
    rng = np.random.default_rng(8)
    draws = rng.standard_normal(50_000)
    expected = 1.0 / math.sqrt(draws.shape[0])
    assert 0.5 * expected < mcse_mean(draws) < 2.0 * expected


def test_effective_sample_size_near_n_for_iid():
    rng = np.random.default_rng(9)
    draws = rng.standard_normal(50_000)
    ess = effective_sample_size(draws)
    assert draws.shape[0] / 3 < ess < draws.shape[0] * 3


# ---------------------------------------------------------------------------
# serialized forms
# ---------------------------------------------------------------------------


def test_summary_columns_are_normative():
    assert SUMMARY_COLUMNS == (
        "name", "median", "ci_low", "ci_high", "p_below", "p_above", "r_hat"
    )


def test_summary_tsv_layout(tmp_path):
    summaries = [
        PosteriorSummary("alpha", -0.04, -0.08, -0.01, 0.98, 0.02, 1.003),
        PosteriorSummary("tau", 0.05, 0.01, 0.12, 0.0, 1.0, 1.01),
    ]
    dest = tmp_path / "summary.tsv"
    write_summary_tsv(summaries, dest)
    lines = dest.read_text().splitlines()
    assert lines[0] == "\t".join(SUMMARY_COLUMNS)
    assert len(lines) == 3
    fields = lines[1].split("\t")
    assert fields[0] == "alpha"
    assert float(fields[1]) == pytest.approx(-0.04)
    assert float(fields[6]) == pytest.approx(1.003)


def test_chain_tsv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(10)
    chain = make_chain(rng.standard_normal((37, 3)), names=("a", "b", "tau"))
    dest = tmp_path / "chain_1.tsv"
    write_chain_tsv(chain, dest)
    lines = dest.read_text().splitlines()
    assert lines[0] == "iteration\ta\tb\ttau"
    assert lines[1].split("\t")[0] == "1"
    assert lines[-1].split("\t")[0] == "37"
    back = read_chain_tsv(dest)
    assert back.parameter_names == ("a", "b", "tau")
    assert np.array_equal(back.draws, chain.draws)


def test_chain_tsv_requires_iteration_column():
    bad = io.StringIO("a\tb\n1.0\t2.0\n")
    with pytest.raises(ValueError, match="iteration"):
        read_chain_tsv(bad)


def test_rhat_trace_tsv_layout(tmp_path):
    chains = two_param_chains(seed=11, s=400)
    dest = tmp_path / "rhat_trace.tsv"
    write_rhat_trace_tsv(chains, dest, n_points=8)
    lines = dest.read_text().splitlines()
    assert lines[0].split("\t")[0] == "iteration"
    assert lines[0].split("\t")[1:] == ["p0", "p1"]
    assert lines[-1].split("\t")[0] == "400"
    ends, _ = shrink_factor_trace(chains, n_points=8)
    assert len(lines) - 1 == ends.shape[0]
