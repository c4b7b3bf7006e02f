import numpy as np
import pytest
import torch

from vpntk import data
from vpntk.backbones import ConditionalGenerator, IdentityExtractor
from vpntk.embeddings import embedding_from_inputs, synthetic_mean_embedding
from vpntk.exceptions import DivergenceError, InvalidArgumentError, InvalidStateError, PrivacyViolationError
from vpntk.losses import LossConfig, total_loss
from vpntk.ntk_features import NTKConfig, build_feature_map
from vpntk.privacy import PrivacyParams
from vpntk.training import (
    AccessGuard,
    PrivateDataset,
    TrainState,
    release_private_embedding,
    train_generator_dpntk,
    train_prompts,
)
from vpntk.vprompt import PromptBank, init_prompts, random_label_mapping


@pytest.fixture(scope="module")
def toy3():
    return data.toy3(0)


@pytest.fixture
def small_private(rng):
    images = rng.uniform(0, 1, (12, 1, 16, 16))
    return images, rng.integers(0, 3, 12)


def release(images, labels, fe, fmap, sigma=None):
    privacy = PrivacyParams.calibrate(1.0, 1e-5, len(labels), disabled=sigma is None)
    guard = AccessGuard()
    mu = release_private_embedding(PrivateDataset(images, labels, 3), fmap, fe, privacy, guard, noise_seed=1)
    return mu, guard


class TestRelease:
    def test_second_read_fails(self, small_private, micro):
        _, fe, fmap = micro
        images, labels = small_private
        ds = PrivateDataset(images, labels, 3)
        guard = AccessGuard()
        privacy = PrivacyParams.calibrate(None, None, 12, disabled=True)
        release_private_embedding(ds, fmap, fe, privacy, guard)
        assert guard.private_read_count == 1 and guard.sealed
        with pytest.raises(PrivacyViolationError):
            release_private_embedding(ds, fmap, fe, privacy, guard)
        with pytest.raises(PrivacyViolationError):
            guard.read(ds)
        assert guard.private_read_count == 1

    def test_sigma_zero_equals_clean(self, small_private, micro):
        _, fe, fmap = micro
        images, labels = small_private
        mu, guard = release(images, labels, fe, fmap)
        with torch.no_grad():
            clean = embedding_from_inputs(fmap, fe(torch.from_numpy(images)), labels, 3)
        assert mu.kind == "true_noisy"
        assert torch.equal(mu.matrix, clean.matrix)

    def test_noise_applied(self, small_private, micro):
        _, fe, fmap = micro
        images, labels = small_private
        clean, _ = release(images, labels, fe, fmap)
        noisy, _ = release(images, labels, fe, fmap, sigma=True)
        assert not torch.equal(clean.matrix, noisy.matrix)

    def test_empty_dataset(self, micro):
        _, fe, fmap = micro
        ds = PrivateDataset(np.empty((0, 1, 16, 16)), np.empty(0), 3)
        guard = AccessGuard()
        privacy = PrivacyParams(None, None, 0.0, 1, 2.0, disabled=True)
        with pytest.raises(InvalidArgumentError):
            release_private_embedding(ds, fmap, fe, privacy, guard)
        assert guard.sealed

    def test_dataset_hides_records(self, small_private):
        ds = PrivateDataset(*small_private, 3)
        assert not any(isinstance(v, np.ndarray) for k, v in vars(ds).items() if not k.startswith("_PrivateDataset"))


def test_train_state_validation():
    with pytest.raises(InvalidArgumentError):
        TrainState(eta=0.0, max_steps=1, rng_seed=0)


class TestTrainPrompts:
    def setup_pipeline(self, micro, small_private):
        gen, fe, fmap = micro
        mu, guard = release(*small_private, fe, fmap)
        mapping = random_label_mapping(3, gen.num_source_classes, 0)
        bank = init_prompts(3, 8, "feature", 16.0, 0)
        return gen, fe, fmap, mu, mapping, bank

    def test_zero_steps(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        trained, state = train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=0)
        assert torch.equal(trained.prompts, bank.prompts) and state.loss_trace == []

    def test_only_prompts_change_and_deterministic(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        sums = (gen.checksum(), fe.checksum(), fmap.checksum())
        a, sa = train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=5, n_per_class=4, seed=3)
        b, sb = train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=5, n_per_class=4, seed=3)
        assert (gen.checksum(), fe.checksum(), fmap.checksum()) == sums
        assert torch.equal(a.prompts, b.prompts) and sa.loss_trace == sb.loss_trace
        assert len(sa.loss_trace) == sa.step == 5
        assert not torch.equal(a.prompts, bank.prompts)
        assert torch.equal(bank.prompts, init_prompts(3, 8, "feature", 16.0, 0).prompts)

    def test_single_step_is_gradient_descent(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        eta = 1e-2
        trained, _ = train_prompts(mu, gen, fe, fmap, bank, mapping, eta=eta, max_steps=1, n_per_class=2, seed=4)
        cfg = LossConfig()
        plan = np.repeat(np.arange(3), 2)
        base = bank.prompts.detach()

        def loss(p):
            b = PromptBank(p, 16.0)
            q = synthetic_mean_embedding(gen, fe, b, mapping, fmap, 6, plan, rng_seed=4, step=0)
            return total_loss(cfg, mu, q, b).item()

        h = 1e-6
        fd = torch.zeros_like(base)
        for i in range(3):
            for k in range(8):
                e = torch.zeros_like(base)
                e[i, k] = h
                fd[i, k] = (loss(base + e) - loss(base - e)) / (2 * h)
        expected = base - eta * fd
        rel = (trained.prompts.detach() - expected).norm() / (base - expected).norm()
        assert rel <= 1e-3

    def test_adam_and_fixed_latents(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        a, _ = train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=3, n_per_class=2, optimizer="adam",
                             fixed_latents=True)
        assert torch.isfinite(a.prompts).all()
        with pytest.raises(InvalidArgumentError):
            train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=1, optimizer="sgd-momentum")

    def test_divergence_reported(self, micro, small_private, monkeypatch):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        import vpntk.training as training

        monkeypatch.setattr(training, "total_loss", lambda *a, **k: torch.tensor(float("nan"), requires_grad=True))
        with pytest.raises(DivergenceError) as info:
            train_prompts(mu, gen, fe, fmap, bank, mapping, eta=0.5, max_steps=3)
        assert info.value.step == 0 and info.value.eta == 0.5

    def test_refuses_trainable_backbone(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        live = ConditionalGenerator(gen.params, gen.latent_dim, gen.num_source_classes, gen.image_shape,
                                    frozen=False)
        with pytest.raises(InvalidStateError):
            train_prompts(mu, live, fe, fmap, bank, mapping, max_steps=1)

    def test_refuses_clean_target(self, micro, small_private):
        gen, fe, fmap, mu, mapping, bank = self.setup_pipeline(micro, small_private)
        mu.kind = "true_clean"
        with pytest.raises(PrivacyViolationError):
            train_prompts(mu, gen, fe, fmap, bank, mapping, max_steps=1)

    def test_loss_decreases_on_toy3(self, toy3, toy_gen, toy_fe):
        train, _, c = toy3
        fmap = build_feature_map(NTKConfig(64))
        mu, guard = release(train.images, train.labels, toy_fe, fmap)
        mapping = random_label_mapping(c, toy_gen.num_source_classes, 0)
        bank = init_prompts(c, 64, "feature", 16.0, 0)
        _, state = train_prompts(mu, toy_gen, toy_fe, fmap, bank, mapping, eta=1e-2, max_steps=200)
        assert state.loss_trace[-1] < state.loss_trace[0]
        assert guard.private_read_count == 1


class TestBaseline:
    def test_zero_steps(self, micro, small_private):
        images, labels = small_private
        fe = IdentityExtractor((1, 16, 16))
        fmap = build_feature_map(NTKConfig(256, (8,)))
        mu, _ = release(images, labels, fe, fmap)
        gen = ConditionalGenerator.toy(1, num_source_classes=3, frozen=False)
        trained, state = train_generator_dpntk(mu, gen, fmap, fe, max_steps=0)
        assert trained.checksum() == gen.checksum() and state.loss_trace == []

    def test_trace_length_and_input_untouched(self, small_private):
        images, labels = small_private
        fe = IdentityExtractor((1, 16, 16))
        fmap = build_feature_map(NTKConfig(256, (8,)))
        mu, _ = release(images, labels, fe, fmap)
        gen = ConditionalGenerator.toy(1, num_source_classes=3, frozen=False)
        before = gen.checksum()
        trained, state = train_generator_dpntk(mu, gen, fmap, fe, max_steps=4, n_per_class=2)
        assert len(state.loss_trace) == 4 and gen.checksum() == before != trained.checksum()

    @pytest.mark.slow
    def test_mmd_halves_on_toy3(self, toy3):
        train, _, c = toy3
        fe = IdentityExtractor((1, 16, 16))
        fmap = build_feature_map(NTKConfig(256))
        mu, _ = release(train.images, train.labels, fe, fmap)
        gen = ConditionalGenerator.toy(0, num_source_classes=c, frozen=False)
        _, state = train_generator_dpntk(mu, gen, fmap, fe, eta=1.0, max_steps=500)
        assert state.loss_trace[-1] < 0.5 * state.loss_trace[0]
