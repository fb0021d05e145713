import math

import numpy as np
import pytest
import torch

from metaed.errors import ConfigurationError, ContractError
from metaed.losses import (
    LossConfig,
    MMDConfig,
    batched_trigger_nll,
    contrastive_loss,
    event_nll,
    mmd,
    total_loss,
    trigger_nll,
)


def scalar_mmd_oracle(X, Y, sigma):
    """Independent scalar evaluation of the V-statistic."""
    k = lambda a, b: math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * sigma**2))
    sxx = sum(k(a, b) for a in X for b in X) / (len(X) ** 2)
    syy = sum(k(a, b) for a in Y for b in Y) / (len(Y) ** 2)
    sxy = sum(k(a, b) for a in X for b in Y) / (len(X) * len(Y))
    return sxx + syy - 2 * sxy


class TestMMD:
    def test_identical_sets_zero(self):
        X = torch.tensor([[0.2, 1.0], [3.0, -1.0], [0.5, 0.5]], dtype=torch.float64)
        assert abs(float(mmd(X, X.clone()))) < 1e-9

    def test_singleton_closed_form(self):
        X = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
        Y = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        value = float(mmd(X, Y, MMDConfig(bandwidth=1.0)))
        assert value == pytest.approx(2.0 - 2.0 * math.exp(-0.5), abs=1e-9)
        assert value == pytest.approx(0.786939, abs=1e-6)

    def test_matches_scalar_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            X = rng.normal(size=(4, 3))
            Y = rng.normal(size=(6, 3))
            sigma = float(rng.uniform(0.5, 2.0))
            got = float(mmd(torch.tensor(X), torch.tensor(Y), MMDConfig(bandwidth=sigma)))
            assert got == pytest.approx(scalar_mmd_oracle(X, Y, sigma), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            X = torch.tensor(rng.normal(size=(3, 4)))
            Y = torch.tensor(rng.normal(size=(5, 4)))
            assert float(mmd(X, Y)) == pytest.approx(float(mmd(Y, X)), abs=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            X = torch.tensor(rng.normal(size=(rng.integers(1, 6), 3)))
            Y = torch.tensor(rng.normal(size=(rng.integers(1, 6), 3)))
            assert float(mmd(X, Y)) >= -1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        X = torch.tensor(rng.normal(size=(5, 2)))
        Y = torch.tensor(rng.normal(size=(4, 2)))
        perm_x = torch.tensor(rng.permutation(5))
        perm_y = torch.tensor(rng.permutation(4))
        assert float(mmd(X, Y)) == pytest.approx(float(mmd(X[perm_x], Y[perm_y])), abs=1e-12)

    def test_median_heuristic_fallback(self):
        X = torch.zeros(3, 2)
        assert abs(float(mmd(X, X))) < 1e-12  # all-equal points: sigma falls back to 1

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            mmd(torch.zeros(0, 2), torch.zeros(1, 2))
        with pytest.raises(ContractError):
            mmd(torch.zeros(1, 2), torch.zeros(1, 3))
        with pytest.raises(ConfigurationError):
            MMDConfig(bandwidth=-1.0)
        with pytest.raises(ConfigurationError):
            MMDConfig(bandwidth="geometric")

    def test_differentiable(self):
        X = torch.randn(3, 2, requires_grad=True)
        Y = torch.randn(4, 2)
        value = mmd(X, Y, MMDConfig(bandwidth=1.0))
        (g,) = torch.autograd.grad(value, X)
        assert torch.isfinite(g).all()


class TestContrastive:
    def test_identical_pair_zero(self):
        X = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        assert float(contrastive_loss([X, X.clone()])) == pytest.approx(0.0, abs=1e-7)

    def test_worked_singletons(self):
        X1 = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
        X2 = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        value = float(contrastive_loss([X1, X2], MMDConfig(bandwidth=1.0)))
        assert value == pytest.approx(-(2.0 - 2.0 * math.exp(-0.5)), abs=1e-9)
        assert value == pytest.approx(-0.786939, abs=1e-6)

    def test_third_identical_class_pulls_toward_zero(self):
        cfg = MMDConfig(bandwidth=1.0)
        X1 = torch.tensor([[0.0, 0.0], [0.1, 0.0]], dtype=torch.float64)
        X2 = torch.tensor([[5.0, 0.0], [5.1, 0.0]], dtype=torch.float64)
        base = float(contrastive_loss([X1, X2], cfg))
        with_dup = float(contrastive_loss([X1, X2, X1.clone()], cfg))
        # brute-force check of the averaged pairwise values
        d12 = float(mmd(X1, X2, cfg))
        d13 = float(mmd(X1, X1, cfg))
        d23 = float(mmd(X2, X1, cfg))
        assert with_dup == pytest.approx(-(2 * (d12 + d13 + d23)) / 6, abs=1e-9)
        assert with_dup > base

    def test_monotone_separation_sweep(self):
        cfg = MMDConfig(bandwidth=1.0)
        base = torch.tensor([[0.0], [0.1]], dtype=torch.float64)
        values = []
        for shift in np.linspace(0.0, 6.0, 25):
            shifted = base + shift
            values.append(float(contrastive_loss([base, shifted], cfg)))
        diffs = np.diff(values)
        assert np.all(diffs <= 1e-12)  # loss only decreases as clusters separate
        assert values[5] < values[1]  # strictly decreasing before saturation

    def test_requires_two_classes(self):
        with pytest.raises(ContractError):
            contrastive_loss([torch.zeros(2, 2)])


class TestEventNLL:
    def test_uniform_logits(self):
        logits = torch.zeros(3, 4)
        labels = torch.tensor([0, 1, 3])
        assert float(event_nll(logits, labels)) == pytest.approx(math.log(4), abs=1e-6)

    def test_saturated_correct(self):
        logits = torch.full((2, 3), 0.0)
        logits[0, 1] = 1e4
        logits[1, 2] = 1e4
        assert float(event_nll(logits, torch.tensor([1, 2]))) == pytest.approx(0.0, abs=1e-6)

    def test_worked_two_rows(self):
        logits = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        labels = torch.tensor([0, 1])
        sigma = math.e / (math.e + 1.0)
        assert float(event_nll(logits, labels)) == pytest.approx(-math.log(sigma), abs=1e-6)
        assert float(event_nll(logits, labels)) == pytest.approx(0.3133, abs=1e-4)

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            event_nll(torch.zeros(2, 3), torch.tensor([0, 3]))


class TestTriggerNLL:
    def test_zero_logits(self):
        assert float(trigger_nll(torch.zeros(5, 2), (1, 3))) == pytest.approx(math.log(2), abs=1e-6)

    def test_saturated(self):
        logits = torch.zeros(3, 2)
        logits[0, 0] = 1e4
        logits[1, 1] = 1e4
        logits[2, 0] = 1e4
        assert float(trigger_nll(logits, (1, 2))) == pytest.approx(0.0, abs=1e-6)

    def test_worked_three_tokens(self):
        logits = torch.tensor([[0.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
        got = float(trigger_nll(logits, (1, 2)))
        correct = math.exp(2.0) / (1.0 + math.exp(2.0))
        expected = (math.log(2) - math.log(correct) - math.log(correct)) / 3
        assert got == pytest.approx(expected, abs=1e-6)
        assert got == pytest.approx(0.3157, abs=1e-4)

    def test_invalid_span(self):
        with pytest.raises(ContractError):
            trigger_nll(torch.zeros(3, 2), (2, 5))

    def test_batched_mean_matches_per_example(self):
        rng = np.random.default_rng(0)
        logits = torch.tensor(rng.normal(size=(2, 4, 2)), dtype=torch.float32)
        targets = torch.tensor([[0, 1, 0, 0], [1, 1, 0, 0]])
        valid = torch.tensor([[True, True, True, False], [True, True, True, True]])
        got = float(batched_trigger_nll(logits, targets, valid))
        manual = (float(trigger_nll(logits[0, :3], (1, 2))) + float(trigger_nll(logits[1], (0, 2)))) / 2
        assert got == pytest.approx(manual, abs=1e-6)


def _total_inputs(lambda_c=1.0, labels=(0, 0, 1, 1)):
    torch.manual_seed(0)
    b = len(labels)
    event_logits = torch.randn(b, 2)
    labels_t = torch.tensor(labels)
    trigger_logits = torch.randn(b, 3, 2)
    targets = torch.tensor([[0, 1, 0]] * b)
    valid = torch.ones(b, 3, dtype=torch.bool)
    feats = torch.randn(b, 4, dtype=torch.float64)
    return dict(
        event_logits=event_logits,
        labels=labels_t,
        trigger_logits=trigger_logits,
        trigger_targets=targets,
        ctx_valid=valid,
        class_features=feats,
        loss_config=LossConfig(lambda_c=lambda_c),
        mmd_config=MMDConfig(bandwidth=1.0),
    )


class TestTotalLoss:
    def test_lambda_zero_is_sum_of_nlls(self):
        out = total_loss(**_total_inputs(lambda_c=0.0))
        assert float(out.total) == float(out.event_nll) + float(out.trigger_nll)
        assert not out.contrastive_skipped

    def test_single_class_skips_contrastive(self):
        out = total_loss(**_total_inputs(lambda_c=1.0, labels=(1, 1, 1, 1)))
        assert out.contrastive_skipped
        assert float(out.contrastive) == 0.0
        assert float(out.total) == pytest.approx(float(out.event_nll) + float(out.trigger_nll))

    def test_doubling_lambda_doubles_contribution(self):
        one = total_loss(**_total_inputs(lambda_c=1.0))
        two = total_loss(**_total_inputs(lambda_c=2.0))
        assert float(two.total) - float(one.total) == pytest.approx(float(one.contrastive), abs=1e-6)

    def test_breakdown_identity(self):
        out = total_loss(**_total_inputs(lambda_c=0.7)).detached()
        assert out.total == pytest.approx(out.event_nll + out.trigger_nll + 0.7 * out.contrastive, abs=1e-7)

    def test_gradient_matches_finite_differences(self):
        """Analytic gradient w.r.t. a feature vector vs central differences."""
        torch.manual_seed(1)
        b, d, n = 6, 3, 2
        labels = torch.tensor([0, 0, 0, 1, 1, 1])
        weight = torch.randn(d, n, dtype=torch.float64)
        trig_logits = torch.randn(b, 2, 2, dtype=torch.float64)
        targets = torch.tensor([[0, 1]] * b)
        valid = torch.ones(b, 2, dtype=torch.bool)
        cfg_l, cfg_m = LossConfig(lambda_c=1.3), MMDConfig(bandwidth=0.8)

        def value(feats):
            return total_loss(
                feats @ weight, labels, trig_logits, targets, valid, feats, cfg_l, cfg_m
            ).total

        feats = torch.randn(b, d, dtype=torch.float64, requires_grad=True)
        (analytic,) = torch.autograd.grad(value(feats), feats)
        eps = 1e-6
        for i in range(b):
            for j in range(d):
                plus = feats.detach().clone()
                plus[i, j] += eps
                minus = feats.detach().clone()
                minus[i, j] -= eps
                fd = (float(value(plus)) - float(value(minus))) / (2 * eps)
                assert float(analytic[i, j]) == pytest.approx(fd, rel=1e-3, abs=1e-8)
