import json
import math

import numpy as np
import pytest

import icldual


def test_dual_model_matches_kernel_attention():
    rng = np.random.default_rng(0)
    w = icldual.AttentionWeights.random(6, 6, seed=1)
    fm = icldual.FeatureMap.positive_random(6, 256, seed=2)
    demos = rng.uniform(-1, 1, (6, 8))
    query = rng.uniform(-1, 1, 6)
    report = icldual.verify_equivalence(demos, np.zeros((6, 0)), query, w, fm)
    assert report.steps == 8
    assert report.final_relative_error < 1e-12


def test_exact_attention_single_token():
    w = icldual.AttentionWeights.random(3, 4, seed=3)
    x = np.arange(4.0).reshape(4, 1)
    h = icldual.exact_attention_query(x, x[:, 0], w)
    np.testing.assert_allclose(h, w.value @ x[:, 0], rtol=0, atol=1e-15)


def test_kernel_and_errors():
    assert icldual.softmax_kernel_exact(np.array([math.log(2.0), 0.0]), np.array([1.0, 0.0])) == pytest.approx(2.0)
    with pytest.raises(icldual.RangeError):
        icldual.softmax_kernel_exact(np.full(2, 30.0), np.full(2, 30.0))
    with pytest.raises(icldual.ValidationError):
        icldual.AttentionWeights(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 3)))
    assert issubclass(icldual.SingularSystemError, icldual.NumericalError)


def test_bound_and_rank():
    assert icldual.bound_surrogate(16.0, w=2.0, rho=0.5, d_o=3, n=4, delta=0.1) == pytest.approx(
        3.0 + math.sqrt(math.log(10.0) / 4.0)
    )
    rows = icldual.rank_bound_experiment(6, [2, 12], batches=4, reps=2, force_active=True)
    assert rows == [(2, 2.0), (12, 6.0)]


def test_short_training_run():
    losses = icldual.train(tokens=6, steps=16, epochs=3, dr=32, dt=4, lr=0.01, seed=1)
    assert len(losses) == 3
    assert all(math.isfinite(v) for v in losses)


def test_run_command(tmp_path):
    out = tmp_path / "rank.csv"
    code, _, err = icldual.run_command(["rank-bound", "--d", "4", "--dh", "2,4", "--batches", "2", "--reps", "1", "--out", str(out)])
    assert code == 0, err
    assert out.read_text().startswith("dh,mean_bound\n")
    meta = json.loads((tmp_path / "rank.csv.meta.json").read_text())
    assert meta["rows"] == 2
    code, _, _ = icldual.run_command(["rank-bound", "--d", "0", "--out", str(out)])
    assert code == 1
