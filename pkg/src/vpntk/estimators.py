"""scikit-learn style synthesizers wrapping the private release and training loops.

``fit(X, y)`` performs the single private release and the post-processing
optimization; ``sample`` draws a labeled synthetic dataset; ``transform``
maps real images into the space the synthetic payloads live in, so a
downstream classifier trained on ``sample()`` can be scored on ``transform(X_test)``.
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .backbones import ConditionalGenerator, FeatureExtractor, IdentityExtractor
from .evaluation import synthesize_dataset
from .exceptions import InvalidArgumentError
from .losses import LossConfig
from .ntk_features import NTKConfig, build_feature_map
from .privacy import PrivacyParams
from .training import AccessGuard, PrivateDataset, release_private_embedding, train_generator_dpntk, train_prompts
from .vprompt import LabelMapping, init_prompts, random_label_mapping


def _as_images(X, image_shape):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if X.ndim == 2 and X.shape[1] == int(np.prod(image_shape)):
        X = X.reshape(n, *image_shape)
    if tuple(X.shape[1:]) != tuple(image_shape):
        raise InvalidArgumentError(f"expected images of shape {tuple(image_shape)}, got {X.shape[1:]}")
    return X


class _Synthesizer(BaseEstimator):
    def _privacy(self, m):
        return PrivacyParams.calibrate(self.epsilon, self.delta, m, disabled=not self.private)

    def _validate(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if self.classes_.size < 2:
            raise InvalidArgumentError("need at least two classes")
        return X, self.label_encoder_.transform(y)

    @property
    def private_read_count(self):
        check_is_fitted(self, "guard_")
        return self.guard_.private_read_count


class VPNTK(_Synthesizer):
    """Visual-prompted DP-NTK synthesizer over a frozen generator and feature extractor.

    Parameters
    ----------
    kappa : float
        Prompt scale.
    eta : float
        Step size of prompt optimization.
    alpha : float
        Weight of the squared prompt-norm penalty.
    loss : {"mixed", "mmd", "cosine"}
    prompt_space : {"feature", "pixel"}
        Add prompts to extractor features, or to generated images (in which
        case the NTK map sees pixels).
    private : bool
        ``False`` is the explicit privacy-disabled mode (no noise).
    generator, extractor : optional frozen backbones; seeded toy models by default.
    """

    def __init__(self, kappa=16.0, eta=1e-2, alpha=0.05, loss="mixed", mix_weights=(1.0, 1.0),
                 prompt_space="feature", max_steps=200, n_per_class=64, epsilon=1.0, delta=1e-5,
                 private=True, optimizer="gd", fixed_latents=False, generator=None, extractor=None,
                 ntk_hidden_widths=(512,), ntk_activation="tanh", init_seed=0, noise_seed=0,
                 latent_seed=0, mapping_seed=0):
        self.kappa = kappa
        self.eta = eta
        self.alpha = alpha
        self.loss = loss
        self.mix_weights = mix_weights
        self.prompt_space = prompt_space
        self.max_steps = max_steps
        self.n_per_class = n_per_class
        self.epsilon = epsilon
        self.delta = delta
        self.private = private
        self.optimizer = optimizer
        self.fixed_latents = fixed_latents
        self.generator = generator
        self.extractor = extractor
        self.ntk_hidden_widths = ntk_hidden_widths
        self.ntk_activation = ntk_activation
        self.init_seed = init_seed
        self.noise_seed = noise_seed
        self.latent_seed = latent_seed
        self.mapping_seed = mapping_seed

    def _backbones(self):
        gen = self.generator if self.generator is not None else ConditionalGenerator.toy(self.init_seed)
        if self.prompt_space == "pixel":
            fe = IdentityExtractor(gen.image_shape)
        elif self.extractor is not None:
            fe = self.extractor
        else:
            fe = FeatureExtractor.toy(self.init_seed, image_shape=gen.image_shape)
        if tuple(fe.image_shape) != tuple(gen.image_shape):
            raise InvalidArgumentError("generator and extractor disagree on image shape")
        return gen, fe

    def fit(self, X, y):
        X, y = self._validate(X, y)
        num_classes = self.classes_.size
        self.generator_, self.extractor_ = self._backbones()
        X = _as_images(X, self.generator_.image_shape)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        # mapping depends only on class counts and a seed, and exists before the private read
        self.mapping_ = random_label_mapping(num_classes, self.generator_.num_source_classes, self.mapping_seed)
        self.featmap_ = build_feature_map(NTKConfig(self.extractor_.feat_dim, tuple(self.ntk_hidden_widths),
                                                    init_seed=self.init_seed, activation=self.ntk_activation))
        self.privacy_ = self._privacy(X.shape[0])
        self.guard_ = AccessGuard()
        dataset = PrivateDataset(X, y, num_classes)
        del X
        self.embedding_ = release_private_embedding(dataset, self.featmap_, self.extractor_, self.privacy_,
                                                    self.guard_, noise_seed=self.noise_seed)
        del dataset
        self.guard_.require_sealed()
        prompt_dim = self.extractor_.feat_dim if self.prompt_space == "feature" else int(
            np.prod(self.generator_.image_shape))
        bank = init_prompts(num_classes, prompt_dim, self.prompt_space, self.kappa, self.init_seed)
        loss_cfg = LossConfig(self.loss, self.alpha, tuple(self.mix_weights))
        self.prompts_, self.train_state_ = train_prompts(
            self.embedding_, self.generator_, self.extractor_, self.featmap_, bank, self.mapping_,
            loss_cfg=loss_cfg, eta=self.eta, max_steps=self.max_steps, n_per_class=self.n_per_class,
            seed=self.latent_seed, optimizer=self.optimizer, fixed_latents=self.fixed_latents,
            private=self.private)
        return self

    def sample(self, n_per_class=500, seed=0):
        """Balanced synthetic ``(payloads, labels)``; payloads are flat feature or pixel rows."""
        check_is_fitted(self, "prompts_")
        data = synthesize_dataset(self.generator_, self.prompts_, self.mapping_, self.extractor_,
                                  n_per_class, seed)
        return data.flat(), self.classes_[data.labels]

    def synthesize(self, n_per_class=500, seed=0):
        check_is_fitted(self, "prompts_")
        return synthesize_dataset(self.generator_, self.prompts_, self.mapping_, self.extractor_,
                                  n_per_class, seed)

    def transform(self, X):
        """Real images in the synthetic payload space (extractor features, or flat pixels)."""
        check_is_fitted(self, "prompts_")
        X = _as_images(check_array(X, allow_nd=True, dtype=np.float64), self.generator_.image_shape)
        with torch.no_grad():
            if self.prompt_space == "feature":
                return self.extractor_(torch.from_numpy(X)).numpy()
        return X.reshape(X.shape[0], -1)


class DPNTK(_Synthesizer):
    """DP-NTK baseline: a small conditional generator trained on the noisy pixel-space embedding."""

    def __init__(self, eta=1.0, max_steps=500, n_per_class=64, epsilon=1.0, delta=1e-5, private=True,
                 loss="mmd", optimizer="gd", fixed_latents=False, latent_dim=32, ntk_hidden_widths=(512,),
                 ntk_activation="tanh", init_seed=0, noise_seed=0, latent_seed=0):
        self.eta = eta
        self.max_steps = max_steps
        self.n_per_class = n_per_class
        self.epsilon = epsilon
        self.delta = delta
        self.private = private
        self.loss = loss
        self.optimizer = optimizer
        self.fixed_latents = fixed_latents
        self.latent_dim = latent_dim
        self.ntk_hidden_widths = ntk_hidden_widths
        self.ntk_activation = ntk_activation
        self.init_seed = init_seed
        self.noise_seed = noise_seed
        self.latent_seed = latent_seed

    def fit(self, X, y):
        X, y = self._validate(X, y)
        num_classes = self.classes_.size
        if X.ndim != 4:
            raise InvalidArgumentError("DPNTK.fit expects images shaped (n, channels, height, width)")
        self.image_shape_ = tuple(X.shape[1:])
        self.n_features_in_ = int(np.prod(self.image_shape_))
        self.extractor_ = IdentityExtractor(self.image_shape_)
        initial = ConditionalGenerator.toy(self.init_seed, self.latent_dim, num_classes, self.image_shape_,
                                           frozen=False)
        self.featmap_ = build_feature_map(NTKConfig(self.n_features_in_, tuple(self.ntk_hidden_widths),
                                                    init_seed=self.init_seed, activation=self.ntk_activation))
        self.privacy_ = self._privacy(X.shape[0])
        self.guard_ = AccessGuard()
        dataset = PrivateDataset(X, y, num_classes)
        del X
        self.embedding_ = release_private_embedding(dataset, self.featmap_, self.extractor_, self.privacy_,
                                                    self.guard_, noise_seed=self.noise_seed)
        del dataset
        self.guard_.require_sealed()
        self.generator_, self.train_state_ = train_generator_dpntk(
            self.embedding_, initial, self.featmap_, self.extractor_, eta=self.eta,
            max_steps=self.max_steps, n_per_class=self.n_per_class, seed=self.latent_seed,
            loss_cfg=LossConfig(self.loss, 0.0), optimizer=self.optimizer,
            fixed_latents=self.fixed_latents, private=self.private)
        self.generator_.frozen = True
        for p in self.generator_.parameters():
            p.requires_grad_(False)
        self.mapping_ = LabelMapping(tuple(range(num_classes)), self.latent_seed, num_classes)
        return self

    def synthesize(self, n_per_class=500, seed=0):
        check_is_fitted(self, "generator_")
        return synthesize_dataset(self.generator_, None, self.mapping_, self.extractor_, n_per_class, seed)

    def sample(self, n_per_class=500, seed=0):
        data = self.synthesize(n_per_class, seed)
        return data.flat(), self.classes_[data.labels]

    def transform(self, X):
        check_is_fitted(self, "generator_")
        X = _as_images(check_array(X, allow_nd=True, dtype=np.float64), self.image_shape_)
        return X.reshape(X.shape[0], -1)
