import numpy as np
import pytest
import torch

from robust_finetune.corpus import TokenizedBatch
from robust_finetune.losses import InTrustParams, batch_loss_and_grad
from robust_finetune.model import (
    EncoderConfig,
    TextClassifier,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

TOY = EncoderConfig(
    vocab_size=23,
    num_layers=2,
    num_heads=2,
    hidden_dim=8,
    ff_dim=12,
    max_positions=9,
    num_classes=5,
    dropout_rate=0.1,
    seed=7,
)


def make_batch(rng, config, batch_size=3, length=7, labeled=True):
    token_ids = rng.integers(2, config.vocab_size, size=(batch_size, length))
    mask = np.ones_like(token_ids)
    # Give rows distinct amounts of padding.
    for row in range(batch_size):
        pad_from = length - (row % 3)
        token_ids[row, pad_from:] = 0
        mask[row, pad_from:] = 0
    labels = rng.integers(0, config.num_classes, size=batch_size) if labeled else None
    return TokenizedBatch(
        ids=[str(i) for i in range(batch_size)],
        token_ids=token_ids.astype(np.int64),
        mask=mask.astype(np.int64),
        labels=labels,
    )


def eval_loss(clf, batch, loss_kind="ce", loss_params=None):
    logits = clf.forward(batch, train_mode=False).logits
    loss, _ = batch_loss_and_grad(loss_kind, logits, batch.labels, loss_params)
    return loss


class TestInitParams:
    def test_same_seed_identical(self):
        a = init_params(TOY)
        b = init_params(TOY)
        for name in a:
            assert torch.equal(a[name], b[name])

    def test_different_seed_differs(self):
        a = init_params(TOY)
        b = init_params(EncoderConfig(**{**TOY.__dict__, "seed": 8}))
        assert not torch.equal(a["embeddings.token"], b["embeddings.token"])

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(vocab_size=10, hidden_dim=6, num_heads=4)

    def test_fourteen_class_head(self):
        cfg = EncoderConfig(vocab_size=10, num_classes=14, hidden_dim=8, num_heads=2, ff_dim=8)
        params = init_params(cfg)
        assert tuple(params["classifier.weight"].shape) == (8, 14)
        assert tuple(params["classifier.bias"].shape) == (14,)

    def test_all_values_finite(self):
        for tensor in init_params(TOY).values():
            assert torch.isfinite(tensor).all()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_classes": 1},
            {"dropout_rate": 1.0},
            {"dropout_rate": -0.1},
            {"vocab_size": 1},
            {"num_layers": 0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        base = dict(TOY.__dict__)
        base.update(kwargs)
        with pytest.raises(ValueError):
            EncoderConfig(**base)


class TestForward:
    def test_eval_mode_deterministic(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(0), TOY)
        a = clf.forward(batch)
        b = clf.forward(batch)
        np.testing.assert_array_equal(a.logits, b.logits)

    def test_probability_rows_sum_to_one(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(1), TOY, batch_size=8)
        result = clf.forward(batch)
        np.testing.assert_allclose(result.probabilities.sum(axis=1), 1.0, atol=1e-6)
        assert (result.probabilities >= 0).all()
        assert np.isfinite(result.logits).all()
        assert np.isfinite(result.probabilities).all()

    def test_logit_shape(self):
        cfg = EncoderConfig(vocab_size=10, num_classes=14, hidden_dim=8, num_heads=2, ff_dim=8)
        clf = TextClassifier(cfg)
        batch = make_batch(np.random.default_rng(2), cfg, batch_size=2, length=5)
        assert clf.forward(batch).logits.shape == (2, 14)

    def test_train_mode_deterministic_given_seed(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(3), TOY)
        a = clf.forward(batch, train_mode=True, dropout_seed=11)
        b = clf.forward(batch, train_mode=True, dropout_seed=11)
        c = clf.forward(batch, train_mode=True, dropout_seed=12)
        np.testing.assert_array_equal(a.logits, b.logits)
        assert not np.array_equal(a.logits, c.logits)

    def test_permutation_equivariance(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(4), TOY, batch_size=5)
        perm = np.array([3, 0, 4, 1, 2])
        permuted = TokenizedBatch(
            ids=[batch.ids[i] for i in perm],
            token_ids=batch.token_ids[perm],
            mask=batch.mask[perm],
            labels=batch.labels[perm],
        )
        np.testing.assert_allclose(
            clf.forward(permuted).logits, clf.forward(batch).logits[perm], atol=1e-12
        )

    def test_out_of_range_token_rejected(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(5), TOY)
        batch.token_ids[0, 0] = TOY.vocab_size
        with pytest.raises(ValueError, match="out of range"):
            clf.forward(batch)

    def test_too_long_sequence_rejected(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(6), TOY, length=TOY.max_positions + 1)
        with pytest.raises(ValueError, match="max_positions"):
            clf.forward(batch)

    def test_padding_content_does_not_leak(self):
        # Changing token ids under mask=0 must not change the logits.
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(7), TOY)
        reference = clf.forward(batch).logits
        altered = TokenizedBatch(
            ids=batch.ids,
            token_ids=np.where(batch.mask == 0, 2, batch.token_ids),
            mask=batch.mask,
            labels=batch.labels,
        )
        np.testing.assert_allclose(clf.forward(altered).logits, reference, atol=1e-10)


class TestBackward:
    def test_gradients_match_finite_differences(self):
        clf = TextClassifier(TOY, dtype=torch.float64)
        batch = make_batch(np.random.default_rng(8), TOY)
        params = InTrustParams(alpha=1.0, beta=1.0, delta=0.5)
        result = clf.backward(batch, "in_trust", params, train_mode=False)
        rng = np.random.default_rng(9)
        h = 1e-4
        worst = 0.0
        for name, tensor in clf.params.items():
            flat = tensor.data.view(-1)
            n_coords = min(10, flat.numel())
            coords = rng.choice(flat.numel(), size=n_coords, replace=False)
            analytic_flat = result.grads[name].reshape(-1)
            for c in coords:
                original = flat[c].item()
                flat[c] = original + h
                plus = eval_loss(clf, batch, "in_trust", params)
                flat[c] = original - h
                minus = eval_loss(clf, batch, "in_trust", params)
                flat[c] = original
                numeric = (plus - minus) / (2 * h)
                analytic = analytic_flat[c].item()
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
                worst = max(worst, rel)
        assert worst < 1e-4

    def test_duplicated_example_contributions_identical(self):
        cfg = EncoderConfig(**{**TOY.__dict__, "dropout_rate": 0.0})
        clf = TextClassifier(cfg)
        single = make_batch(np.random.default_rng(10), cfg, batch_size=1, length=6)
        doubled = TokenizedBatch(
            ids=["0", "1"],
            token_ids=np.repeat(single.token_ids, 2, axis=0),
            mask=np.repeat(single.mask, 2, axis=0),
            labels=np.repeat(single.labels, 2),
        )
        result = clf.backward(doubled, "ce", train_mode=True, dropout_seed=0)
        np.testing.assert_array_equal(
            result.embedding_grad[0].numpy(), result.embedding_grad[1].numpy()
        )

    def test_head_bias_gradient_vanishes_at_minimum(self):
        clf = TextClassifier(TOY)
        clf.params["classifier.weight"].data.zero_()
        clf.params["classifier.bias"].data.zero_()
        clf.params["classifier.bias"].data[2] = 40.0
        batch = make_batch(np.random.default_rng(11), TOY)
        batch.labels[:] = 2
        result = clf.backward(batch, "ce", train_mode=False)
        assert result.loss < 1e-12
        assert result.grads["classifier.bias"].abs().max().item() < 1e-12

    def test_gradient_shapes_match_parameters(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(12), TOY)
        result = clf.backward(batch, "ce")
        assert set(result.grads) == set(clf.params)
        for name in clf.params:
            assert result.grads[name].shape == clf.params[name].shape
        assert result.embedding_grad.shape == (batch.size, batch.seq_length, TOY.hidden_dim)

    def test_unlabeled_batch_rejected(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(13), TOY, labeled=False)
        with pytest.raises(ValueError, match="labeled"):
            clf.backward(batch)


class TestPredict:
    def test_argmax_class(self):
        clf = TextClassifier(TOY)
        clf.params["classifier.weight"].data.zero_()
        clf.params["classifier.bias"].data = torch.tensor([0.1, 0.7, 0.2, 0.0, 0.0]).log()
        batch = make_batch(np.random.default_rng(14), TOY)
        rows = clf.predict(batch)
        assert all(r.predicted == 1 for r in rows)

    def test_tie_breaks_to_lowest_index(self):
        clf = TextClassifier(TOY)
        clf.params["classifier.weight"].data.zero_()
        clf.params["classifier.bias"].data = torch.tensor([0.0, 1.0, 0.0, 0.0, 1.0])
        batch = make_batch(np.random.default_rng(15), TOY)
        rows = clf.predict(batch)
        assert all(r.predicted == 1 for r in rows)

    def test_argmax_invariant_to_logit_shift(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(16), TOY)
        before = [r.predicted for r in clf.predict(batch)]
        clf.params["classifier.bias"].data += 3.5
        after = [r.predicted for r in clf.predict(batch)]
        assert before == after

    def test_rows_keep_probabilities(self):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(17), TOY)
        rows = clf.predict(batch)
        for row in rows:
            assert row.probs is not None
            assert row.probs.sum() == pytest.approx(1.0, abs=1e-9)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        clf = TextClassifier(TOY)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, clf.params, TOY, extra={"note": 1})
        params, config, extra = load_checkpoint(path)
        assert config == TOY
        assert extra == {"note": 1}
        assert list(params) == list(clf.params)
        for name in params:
            assert torch.equal(params[name], clf.params[name])

    def test_reload_reproduces_predictions(self, tmp_path):
        clf = TextClassifier(TOY)
        batch = make_batch(np.random.default_rng(18), TOY)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, clf.params, TOY)
        params, config, _ = load_checkpoint(path)
        reloaded = TextClassifier(config, params)
        np.testing.assert_array_equal(
            clf.forward(batch).logits, reloaded.forward(batch).logits
        )

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_float64_params_rejected(self, tmp_path):
        clf = TextClassifier(TOY, dtype=torch.float64)
        with pytest.raises(ValueError, match="float32"):
            save_checkpoint(tmp_path / "m.ckpt", clf.params, TOY)
