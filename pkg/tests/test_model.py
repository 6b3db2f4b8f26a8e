import csv
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from algodisc.model import (
    FeatureSequence,
    ModelConfig,
    NonFiniteLoss,
    Optimizer,
    Params,
    Sample,
    append_metrics,
    balance_batch,
    encode_state,
    losses_and_grads,
    make_batch,
    masked_softmax,
    predict,
    predict_batch,
    train_step,
)

SMALL = ModelConfig(width=8, heads=2, blocks=1, max_len=8, max_vocab=6, mlp_ratio=2)


def trace(losses, costs, budget=100, initial=10.0):
    remaining, left = [], budget
    for c in costs:
        left -= c + 1
        remaining.append(left)
    return SimpleNamespace(losses=list(losses), costs=list(costs), remaining=remaining,
                           initial_loss=initial, budget=budget)


def features(path, n=12, gibbs=1.0):
    losses = [10.0 - i for i in range(len(path))]
    return encode_state(path, trace(losses, [3] * len(path)), {"n": n, "gibbs_loss": gibbs})


def sample(path, target, reward, mask=None):
    return Sample(features(path), np.asarray(target, dtype=float), reward, mask)


# ---------------------------------------------------------------------------
# features


def test_encoding_has_one_row_per_action_plus_summary():
    for k in (0, 1, 5):
        f = features(list(range(k)))
        assert len(f) == k + 1 and f.numeric.shape == (k + 1, 4)
        assert f.actions[0] == -1 and list(f.actions[1:]) == list(range(k))


def test_encoding_is_deterministic():
    assert features([1, 2, 3]) == features([1, 2, 3])
    assert features([1, 2, 3]) != features([1, 2, 4])


def test_encoding_rejects_inconsistent_traces():
    with pytest.raises(ValueError):
        encode_state([1, 2], trace([1.0], [1]), {"n": 4, "gibbs_loss": 0.0})
    with pytest.raises(ValueError):
        encode_state([], trace([], []), {"n": 4, "gibbs_loss": float("inf")})


def test_hidden_loss_zeroes_loss_features():
    f = encode_state([0, 1], trace([3.0, 1.0], [1, 1]), {"n": 4, "gibbs_loss": 2.0, "hide_loss": True})
    assert f.numeric[0, 1] == 0.0 and not f.numeric[1:, 0].any()


# ---------------------------------------------------------------------------
# inference


def test_single_legal_token_gets_all_the_mass():
    params = Params.init(ModelConfig(), 10, seed=0)
    mask = np.zeros(10, dtype=bool)
    mask[4] = True
    pol, value = predict(params, features([1, 2]), mask)
    assert pol[4] == 1.0 and pol.sum() == 1.0 and -1.0 <= value <= 1.0


def test_fresh_model_gives_interior_probabilities():
    params = Params.init(ModelConfig(), 10, seed=1)
    pol, _ = predict(params, features([3]), np.ones(10, dtype=bool))
    assert pol.sum() == pytest.approx(1.0, abs=1e-12)
    assert ((pol > 0) & (pol < 1)).all()


def test_all_illegal_mask_is_an_error():
    params = Params.init(SMALL, 4)
    with pytest.raises(ValueError):
        predict(params, features([]), np.zeros(4, dtype=bool))


def test_masked_softmax_support_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = int(rng.integers(1, 20))
        mask = rng.random(v) < 0.5
        mask[rng.integers(v)] = True
        p = masked_softmax(rng.normal(scale=30, size=v), mask)
        assert abs(p.sum() - 1.0) < 1e-12
        assert (p[~mask] == 0).all() and (p >= 0).all()


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
def test_masked_softmax_is_shift_invariant(logits):
    z = np.asarray(logits)
    mask = np.ones(len(z), dtype=bool)
    np.testing.assert_allclose(masked_softmax(z, mask), masked_softmax(z + 123.0, mask), atol=1e-12)


def test_batch_and_single_prediction_agree():
    params = Params.init(ModelConfig(), 10, seed=2)
    feats = [features([]), features([1, 2, 3]), features([9])]
    masks = np.ones((3, 10), dtype=bool)
    pols, vals = predict_batch(params, feats, masks)
    for f, p, v in zip(feats, pols, vals):
        ps, vs = predict(params, f, masks[0])
        np.testing.assert_allclose(p, ps, atol=1e-12)
        assert v == pytest.approx(vs, abs=1e-12)


def test_growing_the_vocabulary_keeps_old_predictions():
    params = Params.init(ModelConfig(), 6, seed=3)
    grown = params.grow(9)
    assert grown.vocab_size == 9 and not grown.arrays["emb"][6:].any()
    f = features([0, 5, 2])
    p_old, v_old = predict(params, f, np.ones(6, dtype=bool))
    p_new, v_new = predict(grown, f, np.r_[np.ones(6, dtype=bool), np.zeros(3, dtype=bool)])
    np.testing.assert_allclose(p_new[:6], p_old, atol=1e-12)
    assert v_new == pytest.approx(v_old, abs=1e-12)
    with pytest.raises(ValueError):
        grown.grow(5)
    with pytest.raises(ValueError):
        params.grow(10 ** 6)


# ---------------------------------------------------------------------------
# batches


def test_balance_batch_resamples_to_near_half():
    rng = np.random.default_rng(0)
    samples = [sample([i % 3], [1, 0, 0], 1.0 if i < 2 else -1.0) for i in range(10)]
    for _ in range(20):
        batch = balance_batch(samples, rng)
        assert len(batch) == 10 and batch.balanced
        assert int(batch.labels.sum()) in (4, 5, 6)


def test_balance_batch_flags_single_class():
    samples = [sample([0], [1, 0], -0.5) for _ in range(6)]
    batch = balance_batch(samples, np.random.default_rng(0))
    assert not batch.balanced and len(batch) == 6


def test_balanced_input_is_kept():
    samples = [sample([0], [1, 0], r) for r in (1, 1, -1, -1, 1)]
    batch = balance_batch(samples, np.random.default_rng(0))
    assert batch.balanced and list(batch.rewards) == [1, 1, -1, -1, 1]


def test_make_batch_pads_targets_and_masks():
    batch = make_batch([sample([0], [0.5, 0.5], 1.0), sample([1], [0, 0, 1], -1.0)])
    assert batch.targets.shape == (2, 3)
    np.testing.assert_array_equal(batch.masks, [[True, True, False], [False, False, True]])
    with pytest.raises(ValueError):
        make_batch([])


# ---------------------------------------------------------------------------
# training


def small_batch():
    return make_batch([
        sample([0, 1], [0, 0, 1, 0], 1.0, np.ones(4, dtype=bool)),
        sample([2], [1, 0, 0, 0], -1.0, np.ones(4, dtype=bool)),
        sample([], [0, 0.5, 0.5, 0], 0.3, np.array([0, 1, 1, 0], dtype=bool)),
        sample([3, 3, 1], [0, 1, 0, 0], -0.2, np.ones(4, dtype=bool)),
    ])


def test_gradients_match_finite_differences():
    params = Params.init(SMALL, 4, seed=5)
    batch = small_batch()
    _, _, grads = losses_and_grads(params, batch)
    rng = np.random.default_rng(0)
    h = 1e-6
    num, ana = [], []
    for name, w in params.arrays.items():
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in w.shape)
            old = w[idx]
            w[idx] = old + h
            up = sum(losses_and_grads(params, batch, need_grad=False)[:2])
            w[idx] = old - h
            down = sum(losses_and_grads(params, batch, need_grad=False)[:2])
            w[idx] = old
            num.append((up - down) / (2 * h))
            ana.append(grads[name][idx])
    num, ana = np.array(num), np.array(ana)
    assert np.linalg.norm(num - ana) / np.linalg.norm(num) < 1e-4


def test_zero_learning_rate_changes_nothing():
    params = Params.init(SMALL, 4, seed=6)
    new, metrics = train_step(params, small_batch(), lr=0.0)
    for k in params.arrays:
        np.testing.assert_array_equal(new.arrays[k], params.arrays[k])
    assert metrics["loss"] == metrics["policy_loss"] + metrics["value_loss"]


def test_overfits_a_fixed_batch():
    params = Params.init(ModelConfig(), 4, seed=7)
    batch = make_batch([
        sample([0, 1], [0, 0, 1, 0], 1.0, np.ones(4, dtype=bool)),
        sample([2], [1, 0, 0, 0], -1.0, np.ones(4, dtype=bool)),
        sample([], [0, 1, 0, 0], 0.5, np.ones(4, dtype=bool)),
        sample([3, 3, 1], [0, 0, 0, 1], -0.5, np.ones(4, dtype=bool)),
    ])
    opt = Optimizer(lr=1e-2)
    first = None
    for _ in range(500):
        params, m = train_step(params, batch, opt=opt)
        first = m["loss"] if first is None else first
    final = sum(losses_and_grads(params, batch, need_grad=False)[:2])
    assert final <= 0.1 * first


def test_non_finite_loss_is_rejected():
    params = Params.init(SMALL, 4, seed=8)
    params.arrays["Wp"][0, 0] = np.nan
    with pytest.raises(NonFiniteLoss):
        train_step(params, small_batch(), lr=0.1)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    params = Params.init(SMALL, 5, seed=9)
    params.save(tmp_path / "m.ckpt")
    back = Params.load(tmp_path / "m.ckpt")
    assert back.config == params.config
    for k in params.arrays:
        np.testing.assert_array_equal(back.arrays[k], params.arrays[k])


@pytest.mark.parametrize("damage", ["magic", "truncate", "trailing"])
def test_corrupt_checkpoints_are_rejected(tmp_path, damage):
    path = tmp_path / "m.ckpt"
    Params.init(SMALL, 5).save(path)
    data = path.read_bytes()
    data = {"magic": b"X" + data[1:], "truncate": data[:-16], "trailing": data + b"\0"}[damage]
    path.write_bytes(data)
    with pytest.raises(ValueError):
        Params.load(path)


def test_metrics_file_appends_rows(tmp_path):
    path = tmp_path / "metrics.csv"
    append_metrics(path, [{"round": 0, "step": 1, "loss": 0.5}])
    append_metrics(path, [{"round": 0, "step": 2, "loss": 0.25}])
    rows = list(csv.DictReader(open(path)))
    assert [r["step"] for r in rows] == ["1", "2"] and rows[1]["loss"] == "0.25"


def test_feature_sequence_equality_checks_type():
    assert FeatureSequence(np.array([-1]), np.zeros((1, 4))) != "x"
