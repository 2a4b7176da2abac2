"""Experiment orchestration: config ingestion, sample selection, attack
dispatch, defense sweeps, and report/figure emission.

All randomness flows from the config seed; per-sample seeds are derived by
hashing (seed, sample_id) so results do not depend on worker count or file
system enumeration order. The config snapshot embedded in reports excludes
delivery-only settings (output directory, worker count), which cannot affect
results, so identical experiments re-run to byte-identical payloads.
"""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import dataset, imaging
from .attacks import AttackConfig, AttackResult, DistanceKind, cw_attack, hsja_attack, mifgsm_attack
from .classifiers import AccessTier, Classifier, default_zoo_dir, load_zoo
from .defenses import DefenseSpec, defense_sweep_specs
from .errors import SchemaError
from .evaluation import (
    ExperimentReport,
    defense_robustness,
    fooling_rate,
    persist_report,
    semantics_rate,
    transfer_matrix,
)
from .imaging import LabeledImage
from .perceptual import ChannelWeights, PerceptualNet

CW_ATTACKS = {
    "demiguise-cw": DistanceKind.PERCEPTUAL,
    "cw-l2": DistanceKind.L2,
    "cw-psnr": DistanceKind.NEG_PSNR,
    "cw-ssim": DistanceKind.ONE_MINUS_SSIM,
}
MIFGSM_ATTACKS = ("mifgsm", "demiguise-mifgsm", "di-mifgsm", "demiguise-di-mifgsm")
HSJA_ATTACKS = ("hsja", "demiguise-hsja")
ATTACK_NAMES = tuple(CW_ATTACKS) + MIFGSM_ATTACKS + HSJA_ATTACKS

PROFILES = {
    "desk": {"resize_to": 36, "crop_to": 32, "epsilon": 0.1, "max_iters_mifgsm": 40,
             "max_iters_cw": 300, "query_budget": 2000, "learning_rate": 0.05},
    "paper": {"resize_to": 256, "crop_to": 224, "epsilon": 0.4, "max_iters_mifgsm": 70,
              "max_iters_cw": 1000, "query_budget": 2000, "learning_rate": 0.2},
}

# per-attack defaults applied when the config does not pin the field
ATTACK_FIELD_DEFAULTS = {
    "demiguise-mifgsm": {"lam": 1.0},
    "demiguise-di-mifgsm": {"lam": 1.0, "di_probability": 0.5},
    "di-mifgsm": {"lam": 0.0, "di_probability": 0.5},
    "mifgsm": {"lam": 0.0},
}

# attack-section keys a config may set; per-sample seeds derive from the
# top-level experiment seed, so "seed" is deliberately not accepted here
_ATTACK_CONFIG_FIELDS = {
    "lam", "learning_rate", "max_iters", "epsilon", "mu", "query_budget",
    "targeted", "target", "di_probability", "kappa", "lambda_search",
    "early_stop_tol", "early_stop_patience",
}


@dataclass
class ExperimentConfig:
    """Validated experiment description (see configs/ for examples)."""

    experiment_id: str
    sample_count: int
    models: list[str]
    attacks: list[str]
    attack_fields: dict
    output_dir: str
    seed: int = 0
    profile: str = "desk"
    dataset_dir: str | None = None
    zoo_manifest: str | None = None
    perceptual_manifest: str | None = None
    channel_weights: str | None = None
    defense: dict | None = None
    workers: int = 1
    raw: dict = field(default_factory=dict)

    _KNOWN_KEYS = {
        "experiment_id", "sample_count", "models", "attack", "attacks",
        "output_dir", "seed", "profile", "dataset_dir", "zoo_manifest",
        "perceptual_manifest", "channel_weights", "defense", "workers",
    }

    @classmethod
    def from_file(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise SchemaError(f"cannot read config: {path} ({exc})") from exc
        except yaml.YAMLError as exc:
            raise SchemaError(f"config parse error in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError(f"{path}: config must be a key-value mapping")
        data.update(overrides or {})
        return cls.from_dict(data, origin=path)

    @classmethod
    def from_dict(cls, data: dict, origin: str = "<config>") -> "ExperimentConfig":
        unknown = set(data) - cls._KNOWN_KEYS
        if unknown:
            raise SchemaError(f"{origin}: unknown config fields {sorted(unknown)}")

        def need(key, kind):
            if key not in data:
                raise SchemaError(f"{origin}: missing required field '{key}'")
            value = data[key]
            if not isinstance(value, kind):
                raise SchemaError(f"{origin}: field '{key}' must be {kind.__name__}")
            return value

        profile = data.get("profile", "desk")
        if profile not in PROFILES:
            raise SchemaError(f"{origin}: field 'profile' must be one of {sorted(PROFILES)}")

        attack_section = data.get("attack", data.get("attacks"))
        if attack_section is None:
            raise SchemaError(f"{origin}: missing required field 'attack'")
        if isinstance(attack_section, dict):
            attack_fields = dict(attack_section)
            names = attack_fields.pop("name", None)
        else:
            attack_fields, names = {}, attack_section
        if isinstance(names, str):
            names = [names]
        if not names or not isinstance(names, list):
            raise SchemaError(f"{origin}: field 'attack.name' is required")
        for name in names:
            if name not in ATTACK_NAMES:
                raise SchemaError(
                    f"{origin}: field 'attack.name': unknown attack {name!r}; "
                    f"expected one of {sorted(ATTACK_NAMES)}"
                )
        bad = set(attack_fields) - _ATTACK_CONFIG_FIELDS
        if bad:
            raise SchemaError(f"{origin}: unknown attack fields {sorted(bad)}")

        sample_count = need("sample_count", int)
        if sample_count < 1:
            raise SchemaError(f"{origin}: field 'sample_count' must be >= 1")
        models = need("models", list)
        if not models:
            raise SchemaError(f"{origin}: field 'models' must list at least one model")

        defense = data.get("defense")
        if defense is not None:
            if not isinstance(defense, dict):
                raise SchemaError(f"{origin}: field 'defense' must be a mapping")
            try:
                DefenseSpec(**defense)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{origin}: field 'defense': {exc}") from exc

        return cls(
            experiment_id=str(data.get("experiment_id", "experiment")),
            sample_count=sample_count,
            models=[str(m) for m in models],
            attacks=[str(n) for n in names],
            attack_fields=attack_fields,
            output_dir=str(data.get("output_dir", "out")),
            seed=int(data.get("seed", 0)),
            profile=profile,
            dataset_dir=data.get("dataset_dir"),
            zoo_manifest=data.get("zoo_manifest"),
            perceptual_manifest=data.get("perceptual_manifest"),
            channel_weights=data.get("channel_weights"),
            defense=defense,
            workers=max(1, int(data.get("workers", 1))),
            raw=dict(data),
        )

    def attack_config(self, attack_name: str, seed: int) -> AttackConfig:
        profile = PROFILES[self.profile]
        fields = {
            "epsilon": profile["epsilon"],
            "query_budget": profile["query_budget"],
            "learning_rate": profile["learning_rate"],
            "max_iters": profile["max_iters_mifgsm"]
            if attack_name in MIFGSM_ATTACKS
            else profile["max_iters_cw"],
        }
        fields.update(ATTACK_FIELD_DEFAULTS.get(attack_name, {}))
        fields.update(self.attack_fields)
        fields["seed"] = seed
        cfg = AttackConfig(**fields)
        cfg.validate()
        return cfg

    def snapshot(self) -> dict:
        """Config snapshot embedded in reports; excludes delivery-only fields."""
        snap = {k: v for k, v in self.raw.items() if k not in ("output_dir", "workers")}
        snap["profile"] = self.profile
        snap["seed"] = self.seed
        return snap


def sample_seed(seed: int, sample_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


class Workbench:
    """Loaded models, perceptual net, and selected samples for one experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        zoo_manifest = config.zoo_manifest or os.path.join(default_zoo_dir(), "zoo.txt")
        zoo = {c.name: c for c in load_zoo(zoo_manifest)}
        for name in config.models:
            if name not in zoo:
                raise SchemaError(
                    f"field 'models': unknown model {name!r}; zoo has {sorted(zoo)}"
                )
        self.models: list[Classifier] = [zoo[name] for name in config.models]
        perceptual_manifest = config.perceptual_manifest or os.path.join(
            os.path.dirname(zoo_manifest), "perceptual.manifest"
        )
        self.net = PerceptualNet.load(perceptual_manifest)
        if config.channel_weights:
            self.weights = ChannelWeights.load(config.channel_weights)
        else:
            self.weights = ChannelWeights.ones_for(self.net)
        self.samples = self._select_samples()

    def _dataset_dir(self) -> str:
        config = self.config
        directory = config.dataset_dir or os.environ.get("DEMIGUISE_DATA_DIR")
        if directory is None:
            raise SchemaError(
                "no dataset: set 'dataset_dir' in the config or DEMIGUISE_DATA_DIR"
            )
        if not os.path.isdir(directory):
            raise SchemaError(f"dataset directory not found: {directory}")
        return directory

    def _select_samples(self) -> list[LabeledImage]:
        profile = PROFILES[self.config.profile]
        pool = dataset.load_labeled(
            self._dataset_dir(), profile["resize_to"], profile["crop_to"]
        )
        pool.sort(key=lambda s: s.sample_id)
        correct = [
            s for s in pool
            if all(m.predict(s.image) == s.label for m in self.models)
        ]
        if len(correct) < self.config.sample_count:
            raise SchemaError(
                f"insufficient correctly-classified samples: need "
                f"{self.config.sample_count}, found {len(correct)}"
            )
        rng = np.random.default_rng(self.config.seed)
        chosen = rng.choice(len(correct), size=self.config.sample_count, replace=False)
        picked = [correct[i] for i in sorted(chosen)]
        return picked

    def run_attack(self, attack_name: str, model: Classifier,
                   sample: LabeledImage) -> AttackResult:
        cfg = self.config.attack_config(
            attack_name, sample_seed(self.config.seed, sample.sample_id)
        )
        # private counter view so parallel attacks record exact query counts
        model = model.with_tier(model.access_tier)
        if attack_name in CW_ATTACKS:
            return cw_attack(model, self.net, sample, CW_ATTACKS[attack_name], cfg,
                             weights=self.weights)
        if attack_name in MIFGSM_ATTACKS:
            return mifgsm_attack(model, self.net, sample, cfg, weights=self.weights)
        if attack_name in HSJA_ATTACKS:
            # decision attacks get a decision-only handle: black-box by construction
            model = model.with_tier(AccessTier.DECISION_ONLY)
            use_perceptual = attack_name == "demiguise-hsja"
            return hsja_attack(model, self.net, sample, use_perceptual, cfg,
                               weights=self.weights)
        raise SchemaError(f"unknown attack {attack_name!r}")

    def run_attack_batch(self, attack_name: str, model: Classifier,
                         samples: list[LabeledImage]) -> list[AttackResult]:
        if self.config.workers == 1:
            return [self.run_attack(attack_name, model, s) for s in samples]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            futures = [pool.submit(self.run_attack, attack_name, model, s)
                       for s in samples]
            return [f.result() for f in futures]


def _record(sample: LabeledImage, result: AttackResult, source: str,
            extra: dict | None = None) -> dict:
    rec = {
        "sample_id": sample.sample_id,
        "source_model": source,
        "attack": result.attack_name,
        "success": bool(result.success),
        "original_label": result.original_label,
        "adversarial_label": result.adversarial_label,
        "distance_perceptual": result.final_distance_perceptual,
        "distance_kind": result.final_distance_kind,
        "l2": result.final_l2,
        "linf": result.final_linf,
        "iterations": result.iterations_used,
        "queries": result.queries_used,
    }
    rec.update(extra or {})
    return rec


def _write_images(out_dir: str, sample: LabeledImage, result: AttackResult) -> dict:
    orig_png = f"{sample.sample_id}_original.png"
    adv_png = f"{sample.sample_id}_adversarial.png"
    imaging.save_image(sample.image, os.path.join(out_dir, orig_png))
    imaging.save_image(result.adversarial, os.path.join(out_dir, adv_png))
    return {"original_png": orig_png, "adversarial_png": adv_png}


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _finish(report: ExperimentReport, out_dir: str, plots: list[str]) -> str:
    from . import plotting  # deferred: pulls in matplotlib

    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, f"{report.experiment_id}_report.json")
    persist_report(report, report_path)
    for kind in plots:
        plotting.plot(report_path, kind)
    return report_path


def run_attack_experiment(config: ExperimentConfig) -> str:
    """Attack sample_count images with one attack on the first listed model."""
    bench = Workbench(config)
    os.makedirs(config.output_dir, exist_ok=True)
    attack_name = config.attacks[0]
    model = bench.models[0]
    results = bench.run_attack_batch(attack_name, model, bench.samples)
    records = []
    for sample, result in zip(bench.samples, results):
        extra = _write_images(config.output_dir, sample, result)
        records.append(_record(sample, result, model.name, extra))
    report = ExperimentReport(
        experiment_id=config.experiment_id,
        attack_name=attack_name,
        source_models=[model.name],
        target_models=[model.name],
        defense=config.defense,
        records=records,
        fooling_rate=fooling_rate([r["success"] for r in records]),
        config=config.snapshot(),
        seed=config.seed,
    )
    _write_csv(
        os.path.join(config.output_dir, f"{config.experiment_id}_records.csv"),
        ["sample_id", "success", "original_label", "adversarial_label",
         "distance_perceptual", "l2", "linf", "iterations", "queries"],
        [[r["sample_id"], r["success"], r["original_label"], r["adversarial_label"],
          r["distance_perceptual"], r["l2"], r["linf"], r["iterations"], r["queries"]]
         for r in records],
    )
    return _finish(report, config.output_dir, ["image_grid"])


def run_transfer_experiment(config: ExperimentConfig) -> str:
    """Attack every listed model and evaluate the cross-model fooling matrix."""
    bench = Workbench(config)
    os.makedirs(config.output_dir, exist_ok=True)
    records = []
    section: dict = {"attacks": {}}
    for attack_name in config.attacks:
        adv_sets: dict[str, list[tuple[np.ndarray, int]]] = {}
        for model in bench.models:
            results = bench.run_attack_batch(attack_name, model, bench.samples)
            adv_sets[model.name] = [(r.adversarial, r.original_label) for r in results]
            for sample, result in zip(bench.samples, results):
                records.append(_record(sample, result, model.name))
        matrix, sources, targets = transfer_matrix(adv_sets, bench.models)
        section["attacks"][attack_name] = {
            "matrix": matrix.tolist(), "sources": sources, "targets": targets,
        }
        _write_csv(
            os.path.join(config.output_dir,
                         f"{config.experiment_id}_{attack_name}_matrix.csv"),
            ["source\\target", *targets],
            [[source, *row] for source, row in zip(sources, matrix.tolist())],
        )
    report = ExperimentReport(
        experiment_id=config.experiment_id,
        attack_name="+".join(config.attacks),
        source_models=[m.name for m in bench.models],
        target_models=[m.name for m in bench.models],
        defense=None,
        records=records,
        fooling_rate=fooling_rate([r["success"] for r in records]),
        config=config.snapshot(),
        seed=config.seed,
        sections={"transfer": section},
    )
    return _finish(report, config.output_dir, ["bars"])


def run_defense_sweep(config: ExperimentConfig) -> str:
    """Attack once per listed attack, then sweep every defense setting."""
    bench = Workbench(config)
    os.makedirs(config.output_dir, exist_ok=True)
    model = bench.models[0]
    specs = defense_sweep_specs()
    records = []
    sweep_section: dict = {}
    for attack_name in config.attacks:
        results = bench.run_attack_batch(attack_name, model, bench.samples)
        for sample, result in zip(bench.samples, results):
            records.append(_record(sample, result, model.name))
        outputs = [(r.adversarial, r.original_label) for r in results]
        curve = defense_robustness(outputs, specs, model)
        sweep_section[attack_name] = [
            {"kind": spec.kind, "quality": spec.quality, "bits": spec.bits,
             "fooling_rate": rate}
            for spec, rate in curve
        ]
        _write_csv(
            os.path.join(config.output_dir,
                         f"{config.experiment_id}_{attack_name}_sweep.csv"),
            ["defense", "fooling_rate"],
            [[spec.describe(), rate] for spec, rate in curve],
        )
    report = ExperimentReport(
        experiment_id=config.experiment_id,
        attack_name="+".join(config.attacks),
        source_models=[model.name],
        target_models=[model.name],
        defense={"sweep": True},
        records=records,
        fooling_rate=fooling_rate([r["success"] for r in records]),
        config=config.snapshot(),
        seed=config.seed,
        sections={"sweep": sweep_section},
    )
    return _finish(report, config.output_dir, ["sweep_lines"])


def run_semantics_test(config: ExperimentConfig) -> str:
    """Compare how often rescaled perturbations classify as a related label."""
    bench = Workbench(config)
    os.makedirs(config.output_dir, exist_ok=True)
    model = bench.models[0]
    attacks = config.attacks if len(config.attacks) > 1 else ["demiguise-cw", "cw-l2"]
    records = []
    rates = {}
    for attack_name in attacks:
        results = bench.run_attack_batch(attack_name, model, bench.samples)
        for sample, result in zip(bench.samples, results):
            records.append(_record(sample, result, model.name))
        triples = [
            (s.image, r.adversarial, r.original_label, r.adversarial_label)
            for s, r in zip(bench.samples, results)
        ]
        rates[attack_name] = semantics_rate(triples, model)
    report = ExperimentReport(
        experiment_id=config.experiment_id,
        attack_name="+".join(attacks),
        source_models=[model.name],
        target_models=[model.name],
        defense=None,
        records=records,
        fooling_rate=fooling_rate([r["success"] for r in records]),
        config=config.snapshot(),
        seed=config.seed,
        sections={"semantics": rates},
    )
    _write_csv(
        os.path.join(config.output_dir, f"{config.experiment_id}_semantics.csv"),
        ["attack", "semantics_rate"],
        [[name, rate] for name, rate in rates.items()],
    )
    return _finish(report, config.output_dir, [])
