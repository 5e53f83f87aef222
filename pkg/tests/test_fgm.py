from collections import OrderedDict

import numpy as np
import pytest
import torch

from robust_finetune.corpus import TokenizedBatch
from robust_finetune.fgm import (
    FgmConfig,
    PerturbationBackup,
    adversarial_step,
    attack,
    restore,
)
from robust_finetune.model import EncoderConfig, TextClassifier


def toy_params(seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return OrderedDict(
        (name, torch.randn(shape, generator=gen, dtype=dtype))
        for name, shape in [
            ("embeddings.token", (6, 4)),
            ("embeddings.position", (5, 4)),
            ("classifier.weight", (4, 3)),
        ]
    )


def toy_grads(params, seed=1):
    gen = torch.Generator().manual_seed(seed)
    return OrderedDict(
        (name, torch.randn(t.shape, generator=gen, dtype=t.dtype))
        for name, t in params.items()
    )


class TestAttack:
    def test_hand_computed_direction(self):
        params = OrderedDict([("embeddings.token", torch.zeros(2, dtype=torch.float64))])
        grads = OrderedDict([("embeddings.token", torch.tensor([3.0, 4.0], dtype=torch.float64))])
        attack(params, grads, FgmConfig(epsilon=0.5))
        np.testing.assert_allclose(params["embeddings.token"].numpy(), [0.3, 0.4], atol=1e-15)

    def test_zero_epsilon_leaves_params_and_records_backup(self):
        params = toy_params()
        before = {n: t.clone() for n, t in params.items()}
        backup = attack(params, toy_grads(params), FgmConfig(epsilon=0.0))
        assert torch.equal(params["embeddings.token"], before["embeddings.token"])
        assert "embeddings.token" in backup.tensors

    def test_zero_gradient_is_a_noop(self):
        params = toy_params()
        before = params["embeddings.token"].clone()
        grads = OrderedDict([("embeddings.token", torch.zeros_like(before))])
        attack(params, grads, FgmConfig(epsilon=1.0))
        assert torch.equal(params["embeddings.token"], before)

    def test_perturbation_norm_equals_epsilon(self):
        rng = torch.Generator().manual_seed(3)
        for epsilon in (0.1, 0.5, 1.0):
            for _ in range(100):
                tensor = torch.randn((7, 5), generator=rng, dtype=torch.float64)
                params = OrderedDict([("embeddings.token", tensor.clone())])
                grads = OrderedDict(
                    [("embeddings.token", torch.randn((7, 5), generator=rng, dtype=torch.float64))]
                )
                attack(params, grads, FgmConfig(epsilon=epsilon))
                delta = params["embeddings.token"] - tensor
                assert abs(torch.linalg.vector_norm(delta).item() - epsilon) < 1e-6

    def test_direction_invariant_to_gradient_rescaling(self):
        params_a = toy_params()
        params_b = toy_params()
        grads = toy_grads(params_a)
        doubled = OrderedDict((n, 2.0 * g) for n, g in grads.items())
        attack(params_a, grads, FgmConfig(epsilon=0.7, target_names="*"))
        attack(params_b, doubled, FgmConfig(epsilon=0.7, target_names="*"))
        for name in params_a:
            assert torch.equal(params_a[name], params_b[name])

    def test_pattern_matching_nothing_rejected(self):
        params = toy_params()
        with pytest.raises(ValueError, match="matches no parameter"):
            attack(params, toy_grads(params), FgmConfig(target_names="nonexistent.*"))

    def test_missing_gradient_rejected(self):
        params = toy_params()
        with pytest.raises(ValueError, match="no gradient"):
            attack(params, OrderedDict(), FgmConfig())

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError, match="epsilon"):
            FgmConfig(epsilon=-0.1)


class TestRestore:
    def test_attack_then_restore_is_identity(self):
        params = toy_params()
        before = {n: t.clone() for n, t in params.items()}
        backup = attack(params, toy_grads(params), FgmConfig(epsilon=1.0, target_names="*"))
        restore(params, backup)
        for name in params:
            assert torch.equal(params[name], before[name])

    def test_restore_twice_is_a_noop(self):
        params = toy_params()
        backup = attack(params, toy_grads(params), FgmConfig(epsilon=1.0))
        restore(params, backup)
        after_first = {n: t.clone() for n, t in params.items()}
        restore(params, backup)
        for name in params:
            assert torch.equal(params[name], after_first[name])

    def test_unknown_name_rejected(self):
        params = toy_params()
        backup = PerturbationBackup(OrderedDict([("missing", torch.zeros(2))]))
        with pytest.raises(ValueError, match="unknown parameter"):
            restore(params, backup)

    def test_shape_mismatch_rejected(self):
        params = toy_params()
        backup = PerturbationBackup(OrderedDict([("embeddings.token", torch.zeros(2, 2))]))
        with pytest.raises(ValueError, match="shape"):
            restore(params, backup)


class TestAdversarialStep:
    CFG = EncoderConfig(
        vocab_size=17, num_layers=1, num_heads=2, hidden_dim=8, ff_dim=12,
        max_positions=8, num_classes=4, dropout_rate=0.1, seed=5,
    )

    def make_batch(self, rng, batch_size=4, length=6):
        token_ids = rng.integers(2, self.CFG.vocab_size, size=(batch_size, length))
        mask = np.ones_like(token_ids)
        labels = rng.integers(0, self.CFG.num_classes, size=batch_size)
        return TokenizedBatch(
            ids=[str(i) for i in range(batch_size)],
            token_ids=token_ids.astype(np.int64),
            mask=mask.astype(np.int64),
            labels=labels,
        )

    def test_zero_epsilon_doubles_clean_gradients(self):
        clf = TextClassifier(self.CFG)
        batch = self.make_batch(np.random.default_rng(0))
        clean = clf.backward(batch, "ce", train_mode=True, dropout_seed=9)
        result = adversarial_step(
            clf, batch, "ce", config=FgmConfig(epsilon=0.0), dropout_seed=9
        )
        for name in clean.grads:
            assert torch.equal(result.grads[name], 2.0 * clean.grads[name])

    def test_embedding_restored_after_step(self):
        clf = TextClassifier(self.CFG)
        before = clf.params["embeddings.token"].clone()
        batch = self.make_batch(np.random.default_rng(1))
        adversarial_step(clf, batch, "ce", config=FgmConfig(epsilon=1.0))
        assert torch.equal(clf.params["embeddings.token"], before)

    def test_perturbed_loss_usually_exceeds_clean_loss(self):
        # The attack ascends the linearized loss, so at small epsilon the
        # adversarial pass should be at least as lossy most of the time.
        wins = 0
        trials = 100
        for trial in range(trials):
            cfg = EncoderConfig(**{**self.CFG.__dict__, "seed": trial, "dropout_rate": 0.0})
            clf = TextClassifier(cfg)
            batch = self.make_batch(np.random.default_rng(1000 + trial))
            result = adversarial_step(
                clf, batch, "ce", config=FgmConfig(epsilon=0.05), dropout_seed=0
            )
            if result.adversarial_loss >= result.clean_loss:
                wins += 1
        assert wins >= 80
