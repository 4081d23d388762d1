import math

import numpy as np
import pytest

from steerlab import autodiff as ad
from steerlab import heads
from steerlab.actions import make_grid, one_hot_targets, soft_target_probs
from steerlab.autodiff import Tensor, zero_grads
from steerlab.backbone import BackboneConfig
from steerlab.trainer import Adam, AdamConfig

from oracles import brute_force_argmin, gradcheck

GRID9 = make_grid(-20, 20, 9)


def tiny_config(seed=0):
    return BackboneConfig(hidden=(6, 5), fusion_width=6, seed=seed)


def make_tiny(kind, seed=0, **kwargs):
    return heads.build_head(kind, obs_dim=4, config=tiny_config(seed), grid=GRID9, **kwargs)


# ---------------------------------------------------------------------------
# loss math on hand-built tensors


class TestRegressionLoss:
    def test_zero_at_match(self):
        pred = Tensor([[1.5], [-2.0]])
        assert heads.regression_mae(pred, [1.5, -2.0]).item() == 0.0

    def test_batch_mean(self):
        pred = Tensor([[1.0], [3.0]])
        assert heads.regression_mae(pred, [0.0, 0.0]).item() == pytest.approx(2.0)

    def test_gradient_is_sign_away_from_ties(self):
        pred = Tensor([[1.0], [-3.0]])
        loss = heads.regression_mae(pred, [0.0, 0.0])
        loss.backward()
        np.testing.assert_allclose(pred.grad, [[0.5], [-0.5]])  # sign / batch

    def test_rejects_non_finite_targets(self):
        with pytest.raises(ValueError):
            heads.regression_mae(Tensor([[0.0]]), [np.nan])


class TestClassificationLoss:
    def test_uniform_logits_512(self):
        logits = Tensor(np.zeros((1, 512)))
        loss = heads.classification_nll(logits, [17])
        assert loss.item() == pytest.approx(math.log(512), abs=1e-12)
        assert loss.item() == pytest.approx(6.238, abs=1e-3)

    def test_dominant_logit_drives_loss_to_zero(self):
        logits_vals = np.zeros((1, 512))
        logits_vals[0, 3] = 25.0
        loss = heads.classification_nll(Tensor(logits_vals), [3])
        assert loss.item() == pytest.approx(math.log(1 + 511 * math.exp(-25.0)),
                                            rel=1e-9)
        assert loss.item() < 1e-8

    def test_bad_bin_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            heads.classification_nll(Tensor(np.zeros((1, 4))), [4])


class TestMDNLoss:
    def test_single_standard_normal(self):
        mu = Tensor([[0.0]])
        sigma = Tensor([[1.0]])
        log_alpha = Tensor([[0.0]])
        loss = heads.mdn_nll(mu, sigma, log_alpha, [0.0])
        assert loss.item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)
        assert loss.item() == pytest.approx(0.9189, abs=1e-4)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        mu, sig = rng.normal(size=(2, 3)), rng.uniform(0.5, 2, size=(2, 3))
        la = np.log(np.full((2, 3), 1 / 3))
        perm = [2, 0, 1]
        a = heads.mdn_nll(Tensor(mu), Tensor(sig), Tensor(la), [0.3, -0.5]).item()
        b = heads.mdn_nll(Tensor(mu[:, perm]), Tensor(sig[:, perm]), Tensor(la[:, perm]),
                          [0.3, -0.5]).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_underflowing_density_stays_finite(self):
        # target 1000 sigmas away: naive density underflows, logsumexp must not
        loss = heads.mdn_nll(Tensor([[0.0]]), Tensor([[1.0]]), Tensor([[0.0]]), [1000.0])
        assert math.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.5 * math.log(2 * math.pi) + 5e5, rel=1e-9)


class TestEBMLoss:
    def test_equal_energies_one_hot(self):
        e = Tensor(np.zeros((1, 4)))
        loss = heads.ebm_nll(e, one_hot_targets(4, 2).probs)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_directly_evaluated_example(self):
        e = Tensor([[0.0, 10.0, 10.0]])
        loss = heads.ebm_nll(e, one_hot_targets(3, 0).probs)
        expected = math.log(1 + 2 * math.exp(-10))
        assert loss.item() == pytest.approx(expected, rel=1e-12)
        assert loss.item() == pytest.approx(9.08e-5, rel=1e-3)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        e_vals = rng.normal(size=(2, 8))
        targets = np.stack([soft_target_probs(np.arange(8.0), 3.0, 2.0)] * 2)
        base = heads.ebm_nll(Tensor(e_vals), targets).item()
        for c in (-100.0, 0.5, 42.0):
            shifted = heads.ebm_nll(Tensor(e_vals + c), targets).item()
            assert abs(shifted - base) < 1e-9

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            heads.ebm_nll(Tensor(np.zeros((1, 4))), np.ones((1, 5)) / 5)

    def test_matches_classification_on_negated_energies(self):
        rng = np.random.default_rng(2)
        e_vals = rng.normal(size=(5, 10))
        gt = rng.integers(0, 10, size=5)
        hot = np.zeros((5, 10))
        hot[np.arange(5), gt] = 1.0
        via_ebm = heads.ebm_nll(Tensor(e_vals), hot).item()
        via_classification = heads.classification_nll(Tensor(-e_vals), gt).item()
        assert abs(via_ebm - via_classification) <= 1e-12

    def test_soft_loss_at_least_target_entropy(self):
        # Gibbs: CE(p*, q) >= H(p*), equality iff q == p*
        rng = np.random.default_rng(3)
        cand = np.linspace(-20, 20, 21)
        for _ in range(25):
            target = soft_target_probs(cand, rng.uniform(-15, 15), rng.uniform(0.5, 20))
            e_vals = rng.normal(size=(1, 21))
            loss = heads.ebm_nll(Tensor(e_vals), target[None, :]).item()
            entropy = -float(np.sum(target * np.log(target + 1e-300)))
            assert loss >= entropy - 1e-9
        # equality case: energies = -log p* reproduce the target distribution
        target = soft_target_probs(cand, 0.0, 4.0)
        e_match = -np.log(target)
        loss = heads.ebm_nll(Tensor(e_match[None, :]), target[None, :]).item()
        entropy = -float(np.sum(target * np.log(target)))
        assert loss == pytest.approx(entropy, abs=1e-9)


class TestTemporalSmoothing:
    def test_equal_energy_vectors_give_zero(self):
        e = Tensor(np.ones((3, 5)))
        assert heads.temporal_smoothing(e, Tensor(np.ones((3, 5))), 4, 1.0).item() == 0.0

    def test_euclidean_norm_example(self):
        e_t = Tensor([[1.0, 2.0]])
        e_t1 = Tensor([[1.0, 4.0]])
        assert heads.temporal_smoothing(e_t, e_t1, 2, 1.0).item() == pytest.approx(2.0)

    def test_alpha_linearity(self):
        rng = np.random.default_rng(4)
        a, b = Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(2, 6)))
        one = heads.temporal_smoothing(a, b, 5, 1.0).item()
        two = heads.temporal_smoothing(a, b, 5, 2.0).item()
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_masked_ground_truth_column_ignored(self):
        e_t = Tensor([[1.0, 2.0, 99.0]])
        e_t1 = Tensor([[1.0, 4.0, -99.0]])
        assert heads.temporal_smoothing(e_t, e_t1, 2, 1.0).item() == pytest.approx(2.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            heads.temporal_smoothing(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 5))),
                                     3, 1.0)


class TestArgmin:
    def test_lowest_energy_chosen(self):
        grid = make_grid(-1, 1, 3)
        assert grid.values[heads.argmin_energy(np.array([3.0, 1.0, 2.0]))] == 0.0

    def test_ties_break_to_smaller_index(self):
        assert heads.argmin_energy(np.zeros(8)) == 0

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            e = rng.normal(size=64)
            assert heads.argmin_energy(e) == brute_force_argmin(e)

    def test_invariant_under_increasing_affine_transforms(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            e = rng.normal(size=32)
            base = heads.argmin_energy(e)
            for scale, shift in ((2.0, 1.0), (0.01, -5.0), (1000.0, 0.0)):
                assert heads.argmin_energy(scale * e + shift) == base


class TestNegativeSampler:
    def test_constant_mode_identical_across_calls(self):
        sampler = heads.NegativeSampler("constant", GRID9)
        a = sampler.draw(None, 3)
        b = sampler.draw(None, 3)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a[0], GRID9.values)

    def test_uniform_mode_seeded_and_in_range(self):
        s = heads.NegativeSampler("uniform", GRID9)
        a = s.draw(np.random.default_rng(0), 4)
        b = s.draw(np.random.default_rng(0), 4)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= GRID9.a_min and a.max() <= GRID9.a_max

    def test_uniform_empirical_mean_near_midpoint(self):
        s = heads.NegativeSampler("uniform", GRID9)
        draws = s.draw(np.random.default_rng(1), 100_000 // GRID9.n + 1).reshape(-1)
        draws = draws[:100_000]
        se = (GRID9.a_max - GRID9.a_min) / math.sqrt(12) / math.sqrt(len(draws))
        assert abs(draws.mean() - GRID9.mid) < 3 * se

    def test_pairs_share_one_draw(self):
        s = heads.NegativeSampler("uniform", GRID9)
        out = s.draw_pairs(np.random.default_rng(2), 3)
        assert out.shape == (6, GRID9.n)
        for k in range(3):
            np.testing.assert_array_equal(out[2 * k], out[2 * k + 1])

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            heads.NegativeSampler("gaussian", GRID9)


# ---------------------------------------------------------------------------
# heads end to end


class TestHeadsEndToEnd:
    def test_classification_infer_returns_bin_center(self):
        head = make_tiny("classification")
        out = head.infer(np.zeros(4))
        assert out.command_deg in GRID9.values

    def test_mdn_infer_picks_highest_alpha_mean(self):
        head = make_tiny("mdn", components=2)
        out = head.infer(np.ones(4) * 0.2)
        assert out.command_deg in out.diagnostics["mu"]
        best = out.diagnostics["alpha"].argmax()
        assert out.command_deg == out.diagnostics["mu"][best]

    def test_mdn_alpha_simplex_after_optimizer_steps(self):
        head = make_tiny("mdn", components=3)
        opt = Adam(head.parameters(), AdamConfig(lr=1e-2))
        rng = np.random.default_rng(0)
        for _ in range(5):
            zero_grads(head.parameters())
            head.loss(rng.normal(size=(8, 4)), rng.uniform(-15, 15, 8)).backward()
            opt.step()
        out = head.infer(np.zeros(4))
        alpha = out.diagnostics["alpha"]
        assert abs(alpha.sum() - 1.0) < 1e-9
        assert np.all(alpha >= 0)
        assert np.all(out.diagnostics["sigma"] > 0)

    def test_ebm_duplicate_candidates_equal_energies(self):
        head = make_tiny("ebm")
        e = head.energies(np.zeros((1, 4)), np.array([[5.0, 5.0, -5.0]]))
        assert abs(e.values[0, 0] - e.values[0, 1]) < 1e-12

    def test_ebm_512_candidates_one_encoder_call(self):
        grid512 = make_grid(-250, 250, 512)
        head = heads.EBMHead(4, tiny_config(), grid512)
        before = head.backbone.encode_calls
        e = head.grid_energies(np.zeros(4))
        assert e.shape == (1, 512)
        assert np.all(np.isfinite(e))
        assert head.backbone.encode_calls == before + 1

    def test_ebm_infer_matches_exhaustive_scan(self):
        head = make_tiny("ebm", seed=11)
        obs = np.random.default_rng(1).normal(size=4)
        out = head.infer(obs)
        e = out.diagnostics["energies"]
        assert out.command_deg == GRID9.values[brute_force_argmin(e)]
        assert GRID9.a_min <= out.command_deg <= GRID9.a_max

    def test_ebm_loss_candidate_width(self):
        head = make_tiny("ebm")
        obs = np.zeros((3, 4))
        loss = head.loss(obs, np.array([0.0, 5.0, -5.0]))
        assert math.isfinite(loss.item())

    def test_temporal_head_requires_even_batch(self):
        head = make_tiny("ebm", temporal_alpha=1.0)
        with pytest.raises(ValueError, match="pair"):
            head.loss(np.zeros((3, 4)), np.zeros(3))

    def test_soft_head_requires_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            make_tiny("ebm", target_mode="soft")

    def test_build_head_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="regression"):
            make_tiny("transformer")


HEAD_LOSS_CASES = {
    "regression": lambda seed: (make_tiny("regression", seed), False),
    "classification": lambda seed: (make_tiny("classification", seed), False),
    "mdn": lambda seed: (make_tiny("mdn", seed, components=3), False),
    "ebm_one_hot": lambda seed: (make_tiny("ebm", seed), False),
    "ebm_soft": lambda seed: (make_tiny("ebm", seed, target_mode="soft",
                                        soft_temperature=6.0), False),
    "ebm_temporal": lambda seed: (make_tiny("ebm", seed, temporal_alpha=1.0), True),
}


@pytest.mark.parametrize("name", sorted(HEAD_LOSS_CASES))
def test_head_loss_gradients_match_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % (2 ** 31))
    for trial in range(3):
        head, pairs = HEAD_LOSS_CASES[name](seed=trial)
        batch = 4 if pairs else 3
        obs = rng.normal(size=(batch, 4))
        labels = rng.uniform(-15, 15, size=batch)
        neg_rng_seed = int(rng.integers(2 ** 31))

        def loss_builder():
            return head.loss(obs, labels, rng=np.random.default_rng(neg_rng_seed))

        assert gradcheck(loss_builder, head.parameters()) < 1e-4


def test_set_parameters_round_trip():
    head = make_tiny("ebm", seed=1)
    snapshot = {k: v.values.copy() for k, v in head.parameters().items()}
    for p in head.parameters().values():
        p.values += 1.0
    heads.set_parameters(head, snapshot)
    for k, v in head.parameters().items():
        np.testing.assert_array_equal(v.values, snapshot[k])
    with pytest.raises(ValueError, match="missing"):
        heads.set_parameters(head, {})
