"""Downstream utility: synthesize labeled data, fit a classifier, score it on real test data."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.neural_network import MLPClassifier

from . import _rng
from .embeddings import balanced_plan
from .exceptions import InvalidArgumentError

log = logging.getLogger(__name__)

DEFAULT_GRIDS = {
    "kappa": (2, 4, 8, 16, 32),
    "eta": (1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0),
    "alpha": (0.01, 0.05, 0.1, 1.0),
    "loss_mode": ("mmd", "mixed", "cosine"),
}


@dataclass
class SyntheticDataset:
    payloads: np.ndarray
    labels: np.ndarray
    payload_kind: str  # "feature" or "image"

    def __len__(self):
        return self.labels.shape[0]

    def flat(self):
        return self.payloads.reshape(len(self), -1)


def synthesize_dataset(gen, bank, mapping, fe, n_per_class: int, rng_seed: int = 0) -> SyntheticDataset:
    """Balanced synthetic release from the frozen generator and trained prompts.

    Feature prompts yield ``FE(G(z, map(c))) + kappa * delta_c``; pixel prompts
    yield ``clip(G(z, map(c)) + kappa * delta_c, 0, 1)`` images. ``bank=None``
    releases the generator output as is (images).
    """
    if n_per_class < 1:
        raise InvalidArgumentError("n_per_class must be at least 1")
    num_classes = len(mapping)
    plan = balanced_plan(n_per_class * num_classes, num_classes)
    labels = torch.as_tensor(plan)
    z = _rng.normal(rng_seed, "synthesis", (len(plan), gen.latent_dim))
    with torch.no_grad():
        images = gen(z, mapping(labels))
        if bank is not None and bank.space == "feature":
            payload, kind = bank.apply(fe(images), labels), "feature"
        elif bank is not None:
            payload = bank.apply(images.flatten(1), labels).reshape(images.shape).clamp(0.0, 1.0)
            kind = "image"
        else:
            payload, kind = images, "image"
    return SyntheticDataset(payload.numpy().copy(), plan.astype(np.int64), kind)


def train_downstream(data: SyntheticDataset, seed: int = 0, model: str = "logreg"):
    """Multinomial logistic regression (lbfgs, gradient tolerance 1e-5, at most 2000 iterations)."""
    if np.unique(data.labels).size < 2:
        raise InvalidArgumentError("downstream training needs at least two classes")
    if model == "logreg":
        clf = LogisticRegression(tol=1e-5, max_iter=2000, random_state=seed)
    elif model == "mlp":
        clf = MLPClassifier(hidden_layer_sizes=(128,), max_iter=2000, tol=1e-5, random_state=seed)
    else:
        raise InvalidArgumentError(f"unknown downstream model {model!r}")
    return clf.fit(data.flat(), data.labels)


def predict(classifier, payloads) -> np.ndarray:
    """Argmax prediction; ties go to the lowest class index."""
    x = np.asarray(payloads).reshape(len(payloads), -1)
    if hasattr(classifier, "predict_proba"):
        scores = np.asarray(classifier.predict_proba(x))
        classes = getattr(classifier, "classes_", np.arange(scores.shape[1]))
        return np.asarray(classes)[np.argmax(scores, axis=1)]
    return np.asarray(classifier.predict(x))


def evaluate_accuracy(classifier, payloads, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidArgumentError("empty test set")
    return float(np.mean(predict(classifier, payloads) == labels))


@dataclass
class AblationResult:
    parameter: str
    values: list
    accuracies: list  # per value, one entry per seed (None for a failed cell)
    errors: dict = field(default_factory=dict)  # (value index, seed index) -> message

    @property
    def means(self):
        return [float(np.mean([a for a in accs if a is not None])) if any(a is not None for a in accs)
                else float("nan") for accs in self.accuracies]

    @property
    def stds(self):
        return [float(np.std([a for a in accs if a is not None])) if any(a is not None for a in accs)
                else float("nan") for accs in self.accuracies]

    def rows(self):
        return [(v, m, s) for v, m, s in zip(self.values, self.means, self.stds)]

    def table(self) -> str:
        """Value and Accuracy +- Std (%) columns, one row per grid value."""
        head = (self.parameter, "Accuracy±Std(%)")
        body = [(str(v), f"{100 * m:.2f}±{100 * s:.2f}") for v, m, s in self.rows()]
        w0 = max(len(head[0]), *(len(r[0]) for r in body)) if body else len(head[0])
        lines = [f"{head[0]:<{w0}}  {head[1]}"] + [f"{a:<{w0}}  {b}" for a, b in body]
        return "\n".join(lines) + "\n"


CONFIG_FIELD = {"kappa": "kappa", "eta": "eta", "alpha": "alpha", "loss_mode": "loss"}


def _cell(args):
    runner, cfg = args
    return runner(cfg).accuracy


def ablation_sweep(base_cfg, parameter: str, grid=None, seeds=(0, 1, 2), runner=None, workers: int = 1):
    """Run the full pipeline for every (grid value, seed) cell and aggregate accuracy.

    Repeat ``r`` shifts the noise, latent, mapping and downstream seeds by
    ``seeds[r]``; the backbone initialization stays fixed, as a pretrained
    source model would. A failing cell is logged and recorded, not fatal.
    """
    if parameter not in CONFIG_FIELD:
        raise InvalidArgumentError(f"cannot sweep {parameter!r}; choose from {sorted(CONFIG_FIELD)}")
    if len(seeds) < 3:
        raise InvalidArgumentError("ablation needs at least 3 seeds")
    if runner is None:
        from .pipeline import run_experiment as runner
    grid = list(DEFAULT_GRIDS[parameter] if grid is None else grid)
    cells = []
    for value in grid:
        for s in seeds:
            cfg = replace(base_cfg, **{CONFIG_FIELD[parameter]: value}).with_repeat(s)
            cells.append((runner, cfg))
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell, c) for c in cells]
            for f in futures:
                try:
                    results.append(f.result())
                except Exception as exc:  # noqa: BLE001 - recorded per cell
                    results.append(exc)
    else:
        for c in cells:
            try:
                results.append(_cell(c))
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                results.append(exc)
    out = AblationResult(parameter, grid, [[None] * len(seeds) for _ in grid])
    for k, res in enumerate(results):
        i, j = divmod(k, len(seeds))
        if isinstance(res, Exception):
            log.warning("sweep cell %s=%s seed=%s failed: %s", parameter, grid[i], seeds[j], res)
            out.errors[(i, j)] = f"{type(res).__name__}: {res}"
        else:
            out.accuracies[i][j] = res
    return out
