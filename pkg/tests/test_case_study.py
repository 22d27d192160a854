"""
Statistical checks over many simulated scenarios. Slow; deselect with -m "not slow".
"""
import pytest

from satmob.config import load_config
from satmob.services.fixtures import ScenarioParams, generate_fixture
from satmob.services.pipeline import run_stages

SEEDS = range(100)


def _flagged_hours(tmp_path, **overrides):
    params = ScenarioParams(days_after=1, long_visit_prob=0.0, outside_prob=0.0, **overrides)
    files = generate_fixture(params, tmp_path / "scenario")
    config = load_config(files.config)
    detection = run_stages(["metrics", "detect"], config, tmp_path / "out")["detect"]
    return {entry.bucket_start.hour for entry in detection.visits.flagged}


@pytest.mark.slow
def test_spike_hours_are_recovered(tmp_path_factory):
    exact = 0
    for seed in SEEDS:
        hours = _flagged_hours(tmp_path_factory.mktemp(f"spike{seed}"), seed=seed)
        exact += hours == {14, 18}
    assert exact >= 95


@pytest.mark.slow
def test_no_spike_no_flags(tmp_path_factory):
    quiet = 0
    for seed in SEEDS:
        hours = _flagged_hours(tmp_path_factory.mktemp(f"quiet{seed}"), seed=seed, spike_multiplier=1.0)
        quiet += not hours
    assert quiet >= 95
