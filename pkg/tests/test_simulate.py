import numpy as np
import pytest

from effectmod.exceptions import InputError
from effectmod.pipeline import run_simulate
from effectmod.simulate import SyntheticSpec, generate, simulate_rejections

ALPHA = 0.05


def spec(effects, n=500, gamma_true=1.0, seed=0, **kw):
    groups = [
        {"n_pairs": n, "p_control": 0.10, "p_treated": 0.10 - e, "covariates": {"site": f"s{i}"}}
        for i, e in enumerate(effects)
    ]
    return SyntheticSpec.from_dict({"groups": groups, "gamma_true": gamma_true, "seed": seed, **kw})


def mc_bound(reps):
    return ALPHA + 3 * np.sqrt(ALPHA * (1 - ALPHA) / reps)


def test_null_fwer():
    reps = 2000
    res = simulate_rejections(spec([0, 0, 0, 0, 0], seed=3), reps)
    assert res["fwer"] <= mc_bound(reps)


def test_sensitivity_bound_holds_under_worst_case_bias():
    # hidden bias of exactly Gamma = 1.5 aimed against the null; the bound at 1.5 must hold
    reps = 1000
    res = simulate_rejections(spec([0, 0, 0], gamma_true=1.5, seed=8), reps, gamma=1.5)
    assert res["fwer"] <= mc_bound(reps)


def test_bias_without_allowance_inflates_errors():
    res = simulate_rejections(spec([0, 0, 0], n=2000, gamma_true=1.5, seed=8), 200, gamma=1.0)
    assert res["fwer"] > 0.5


def test_power_ordering():
    res = simulate_rejections(spec([0, 0.04, 0, 0, 0], seed=5), 300)
    rates = res["rejection_rate"]
    assert all(rates[2] > rates[g] for g in rates if g != 2)


def test_truth_record():
    sim = generate(spec([0, 0.04]))
    assert sim.truth()["1"]["has_effect"] is False
    assert sim.truth()["2"]["has_effect"] is True


def test_no_effect_means_sharp_null():
    # with p_treated == p_control each subject's two potential outcomes agree
    s = spec([0], n=20000, gamma_true=1.0, seed=1)
    summ = generate(s).summaries()[0]
    assert abs(summ.n_control_only / summ.n_discordant - 0.5) < 0.05


def test_deterministic_files(tmp_path):
    s = spec([0, 0.03], noise_covariates=2)
    run_simulate(s, tmp_path / "a")
    run_simulate(s, tmp_path / "b")
    for name in ("pairs.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_patient_level_output(tmp_path):
    run_simulate(spec([0.02]), tmp_path, level="patients")
    lines = (tmp_path / "patients.csv").read_text().splitlines()
    assert lines[0].startswith("patient_id,treated,")
    assert len(lines) == 1 + 2 * 500


@pytest.mark.parametrize(
    "bad",
    [
        {"groups": [{"n_pairs": 5, "p_control": 1.2, "p_treated": 0.1}]},
        {"groups": [{"n_pairs": 5, "p_control": 0.2, "p_treated": 0.1}], "gamma_true": 0.5},
        {"groups": []},
    ],
)
def test_validation(bad):
    with pytest.raises(InputError):
        SyntheticSpec.from_dict(bad)
