"""Experiment configuration, orchestration and results persistence."""
from __future__ import annotations

import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, fields, replace


from . import backbones
from .data import ingest_dataset
from .estimators import DPNTK, VPNTK
from .evaluation import AblationResult, evaluate_accuracy, train_downstream

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("vp_ntk", "dp_ntk_baseline")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "toy3"
    generator: str = "toy"
    extractor: str = "toy"
    epsilon: float = 1.0
    delta: float = 1e-5
    privacy_disabled: bool = False
    mode: str = "vp_ntk"
    prompt_space: str = "feature"
    kappa: float = 16.0
    eta: float = 1e-2
    baseline_eta: float = 1.0
    alpha: float = 0.05
    loss: str = "mixed"
    mix_weights: tuple = (1.0, 1.0)
    optimizer: str = "gd"
    fixed_latents: bool = False
    max_steps: int = 200
    baseline_steps: int = 500
    n_per_class: int = 64
    synth_per_class: int = 500
    ntk_hidden_widths: tuple = (512,)
    ntk_activation: str = "tanh"
    classifier: str = "logreg"
    seed_data: int = 0
    seed_init: int = 0
    seed_noise: int = 0
    seed_latents: int = 0
    seed_mapping: int = 0
    seed_downstream: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "mix_weights", tuple(float(w) for w in self.mix_weights))
        object.__setattr__(self, "ntk_hidden_widths", tuple(int(w) for w in self.ntk_hidden_widths))

    def with_repeat(self, r: int) -> "ExperimentConfig":
        """Shift every training-time seed by ``r``; data and backbone seeds stay put."""
        return replace(self, seed_noise=self.seed_noise + r, seed_latents=self.seed_latents + r,
                       seed_mapping=self.seed_mapping + r, seed_downstream=self.seed_downstream + r)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix_weights"] = list(self.mix_weights)
        d["ntk_hidden_widths"] = list(self.ntk_hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _parse_value(name, text):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    text = text.strip()
    if ftype == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {text!r}")
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if ftype == "tuple":
        return tuple(float(v) if name == "mix_weights" else int(v) for v in text.replace(",", " ").split())
    if ftype == "str | None":
        return None if text.lower() in ("", "none") else text
    return text


def parse_overrides(pairs: dict) -> dict:
    """Convert ``{field: text}`` into typed config values."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, text in pairs.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, text)
    return out


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value
    return parse_overrides(pairs)


@dataclass
class RunRecord:
    config: dict
    privacy: dict
    loss_trace: list
    accuracy: float | None
    wall_clock: float
    artifacts: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in {f.name for f in fields(cls)}})


def _backbone(spec, kind, seed):
    if spec == "toy":
        if kind == "generator":
            return backbones.ConditionalGenerator.toy(seed)
        return backbones.FeatureExtractor.toy(seed)
    return backbones.load_checkpoint(spec, kind)


def build_estimator(cfg: ExperimentConfig):
    common = dict(epsilon=cfg.epsilon, delta=cfg.delta, private=not cfg.privacy_disabled,
                  n_per_class=cfg.n_per_class, optimizer=cfg.optimizer, fixed_latents=cfg.fixed_latents,
                  ntk_hidden_widths=cfg.ntk_hidden_widths, ntk_activation=cfg.ntk_activation,
                  init_seed=cfg.seed_init, noise_seed=cfg.seed_noise, latent_seed=cfg.seed_latents)
    if cfg.mode == "dp_ntk_baseline":
        return DPNTK(eta=cfg.baseline_eta, max_steps=cfg.baseline_steps, **common)
    gen = _backbone(cfg.generator, "generator", cfg.seed_init)
    fe = _backbone(cfg.extractor, "extractor", cfg.seed_init) if cfg.prompt_space == "feature" else None
    return VPNTK(kappa=cfg.kappa, eta=cfg.eta, alpha=cfg.alpha, loss=cfg.loss, mix_weights=cfg.mix_weights,
                 prompt_space=cfg.prompt_space, max_steps=cfg.max_steps, generator=gen, extractor=fe,
                 mapping_seed=cfg.seed_mapping, **common)


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Ingest, release, train, synthesize, evaluate, persist.

    The label mapping is drawn inside ``fit`` before the private read; the
    stage list records the order. On failure a partial record and a
    ``FAILED`` marker are written to the output directory and the error re-raised.
    """
    start = time.perf_counter()
    stages = []
    record = RunRecord(config=cfg.to_dict(), privacy={}, loss_trace=[], accuracy=None, wall_clock=0.0,
                       stages=stages)

    def stage(name):
        stages.append(name)
        log.info("stage %s", name)

    try:
        stage("ingest")
        image_shape = (1, 16, 16)
        if cfg.mode == "vp_ntk" and cfg.generator != "toy":
            image_shape = tuple(_backbone(cfg.generator, "generator", cfg.seed_init).image_shape)
        train, test, num_classes = ingest_dataset(cfg.dataset, image_shape, cfg.seed_data)
        stage("backbones")
        est = build_estimator(cfg)
        stage("mapping+calibrate+release+train")
        est.fit(train.images, train.labels)
        record.privacy = dict(est.privacy_.report(), private_read_count=est.guard_.private_read_count,
                              sealed=est.guard_.sealed)
        record.loss_trace = list(est.train_state_.loss_trace)
        record.checksums = {"generator": est.generator_.checksum(), "extractor": est.extractor_.checksum()}
        stage("synthesize")
        synth = est.synthesize(cfg.synth_per_class, cfg.seed_downstream)
        stage("evaluate")
        clf = train_downstream(synth, cfg.seed_downstream, cfg.classifier)
        record.accuracy = evaluate_accuracy(clf, est.transform(test.images), est.label_encoder_.transform(test.labels))
        if est.extractor_.checksum() != record.checksums["extractor"]:
            raise RuntimeError("feature extractor changed between synthesis and evaluation")
        if cfg.output_dir:
            stage("persist")
            os.makedirs(cfg.output_dir, exist_ok=True)
            if cfg.mode == "vp_ntk":
                path = os.path.join(cfg.output_dir, "prompts.ckpt")
                est.prompts_.save(path)
            else:
                path = os.path.join(cfg.output_dir, "generator.ckpt")
                backbones.save_checkpoint(est.generator_, path)
            record.artifacts["checkpoint"] = path
            record.artifacts["record"] = os.path.join(cfg.output_dir, "run.jsonl")
    except Exception as exc:
        record.status = "failed"
        record.error = f"stage {stages[-1] if stages else '?'}: {type(exc).__name__}: {exc}"
        record.wall_clock = time.perf_counter() - start
        if cfg.output_dir:
            os.makedirs(cfg.output_dir, exist_ok=True)
            with open(os.path.join(cfg.output_dir, "FAILED"), "w", encoding="utf-8") as fh:
                fh.write(record.error + "\n" + traceback.format_exc())
            write_records([record], os.path.join(cfg.output_dir, "run.jsonl"))
        raise
    record.wall_clock = time.perf_counter() - start
    if cfg.output_dir:
        write_records([record], record.artifacts["record"])
    return record


# -- results files ------------------------------------------------------------


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps({"schema_version": SCHEMA_VERSION, "kind": "runs"}) + "\n")
        for r in records:
            fh.write(_dumps(r.to_dict()) + "\n")


def read_results(path):
    """Parse a structured results file into ``(kind, rows)``.

    Run files give ``RunRecord`` objects; ablation files give dicts.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty results file")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {header.get('schema_version')}")
    rows = [json.loads(line) for line in lines[1:]]
    if header["kind"] == "runs":
        return "runs", [RunRecord.from_dict(r) for r in rows]
    return header["kind"], rows


def _run_table(records):
    head = ("mode", "space", "epsilon", "sigma", "kappa", "eta", "alpha", "loss", "reads", "accuracy", "status")
    body = []
    for r in records:
        c, p = r.config, r.privacy
        body.append((c["mode"], c["prompt_space"], str(p.get("epsilon")), f"{p.get('sigma', float('nan')):.6g}",
                     str(c["kappa"]), str(c["eta"]), str(c["alpha"]), c["loss"], str(p.get("private_read_count")),
                     "nan" if r.accuracy is None else f"{r.accuracy:.4f}", r.status))
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip()]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in body]
    return "\n".join(lines) + "\n"


def export_results(results, path):
    """Write ``<path>.txt`` (aligned table) and ``<path>.jsonl`` (versioned line records)."""
    base = str(path)
    parent = os.path.dirname(base)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if isinstance(results, AblationResult):
        text = results.table()
        header = {"schema_version": SCHEMA_VERSION, "kind": "ablation", "parameter": results.parameter}
        rows = [{"value": v, "mean": m, "std": s, "accuracies": accs,
                 "errors": [results.errors[k] for k in sorted(results.errors) if k[0] == i]}
                for i, ((v, m, s), accs) in enumerate(zip(results.rows(), results.accuracies))]
    else:
        results = list(results)
        text = _run_table(results)
        header = {"schema_version": SCHEMA_VERSION, "kind": "runs"}
        rows = [r.to_dict() for r in results]
    with open(base + ".txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(base + ".jsonl", "w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")
    return base + ".txt", base + ".jsonl"
