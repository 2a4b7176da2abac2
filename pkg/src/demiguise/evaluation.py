"""Measurement protocols: fooling rates, transfer matrices, defense sweeps,
perturbation-semantics rate, and experiment-report persistence.

Reports are JSON files with a schema version and a deterministic ``payload``
section; the creation timestamp lives outside the payload so identical re-runs
produce byte-identical payloads. Reports are append-only: persisting onto an
existing report is an error.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .classifiers import Classifier
from .defenses import DefenseSpec, apply_defense
from .errors import SchemaError

SCHEMA_VERSION = 1


def fooling_rate(successes: Sequence[bool]) -> float:
    """Percentage of records whose attack goal was met."""
    if len(successes) == 0:
        raise ValueError("fooling_rate needs at least one record")
    return 100.0 * sum(bool(s) for s in successes) / len(successes)


def transfer_matrix(
    adversarials: Mapping[str, Sequence[tuple[np.ndarray, int]]],
    targets: Sequence[Classifier],
) -> tuple[np.ndarray, list[str], list[str]]:
    """Fooling rate of each source's adversarials on each target model.

    ``adversarials`` maps source-model name to (adversarial image, original
    ground-truth label) pairs; success is misclassification relative to that
    label. Returns (matrix %, source names, target names).
    """
    label_sets = {t.num_classes for t in targets}
    if len(label_sets) > 1:
        raise ValueError(f"targets disagree on label set: {label_sets}")
    sources = list(adversarials)
    matrix = np.zeros((len(sources), len(targets)))
    for i, source in enumerate(sources):
        pairs = adversarials[source]
        flags_by_target = {
            t.name: [t.predict(adv) != label for adv, label in pairs] for t in targets
        }
        for j, t in enumerate(targets):
            matrix[i, j] = fooling_rate(flags_by_target[t.name])
    return matrix, sources, [t.name for t in targets]


def rescale_delta(x: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    """Min-max rescale the perturbation to [0, 1]; a constant delta maps to 0.5."""
    delta = np.asarray(x_adv, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    lo, hi = float(delta.min()), float(delta.max())
    if hi - lo == 0.0:
        return np.full_like(delta, 0.5, dtype=np.float32)
    return ((delta - lo) / (hi - lo)).astype(np.float32)


def semantics_rate(
    perturbations: Sequence[tuple[np.ndarray, np.ndarray, int, int]],
    c: Classifier,
) -> float:
    """Share of rescaled perturbations classified as either related label.

    Each record is (original, adversarial, original label, adversarial label);
    the perturbation alone is min-max rescaled and classified, counting hits on
    either the original image's label or the adversarial example's label.
    """
    if len(perturbations) == 0:
        raise ValueError("semantics_rate needs at least one record")
    hits = 0
    for x, x_adv, y, y_adv in perturbations:
        pred = c.predict(rescale_delta(x, x_adv))
        hits += pred in (int(y), int(y_adv))
    return 100.0 * hits / len(perturbations)


def defense_robustness(
    attack_outputs: Sequence[tuple[np.ndarray, int]],
    specs: Sequence[DefenseSpec],
    c: Classifier,
) -> list[tuple[DefenseSpec, float]]:
    """Fooling rate after each defense, anchored by the undefended rate.

    ``attack_outputs`` are (adversarial, original label) pairs crafted against
    ``c`` without any defense.
    """
    curve = []
    anchor = DefenseSpec(kind="none")
    for spec in [anchor, *specs]:
        flags = [c.predict(apply_defense(spec, adv)) != label
                 for adv, label in attack_outputs]
        curve.append((spec, fooling_rate(flags)))
    return curve


# -- reports -------------------------------------------------------------------


@dataclass
class ExperimentReport:
    """Everything needed to audit and re-run one experiment."""

    experiment_id: str
    attack_name: str
    source_models: list[str]
    target_models: list[str]
    defense: dict | None
    records: list[dict]
    fooling_rate: float
    config: dict
    seed: int
    toolkit_version: str = field(default=__version__)
    sections: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.records:
            raise ValueError("report has no per-sample records")
        recomputed = fooling_rate([r["success"] for r in self.records])
        if recomputed != self.fooling_rate:
            raise ValueError(
                f"aggregate fooling rate {self.fooling_rate} != recomputed {recomputed}"
            )

    def payload(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "attack_name": self.attack_name,
            "source_models": self.source_models,
            "target_models": self.target_models,
            "defense": self.defense,
            "records": self.records,
            "fooling_rate": self.fooling_rate,
            "config": self.config,
            "seed": self.seed,
            "toolkit_version": self.toolkit_version,
            "sections": self.sections,
        }

    def payload_bytes(self) -> bytes:
        return json.dumps(self.payload(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")


def persist_report(report: ExperimentReport, path: str) -> None:
    report.validate()
    if os.path.exists(path):
        raise ValueError(
            f"report file exists (reports are append-only per experiment id "
            f"{report.experiment_id!r}): {path}"
        )
    payload = report.payload_bytes()
    document = {
        "schema_version": SCHEMA_VERSION,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "payload": report.payload(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report(path: str) -> ExperimentReport:
    with open(path, "r", encoding="utf-8") as fh:
        document = json.load(fh)
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported report schema version {version!r}")
    p = document["payload"]
    report = ExperimentReport(
        experiment_id=p["experiment_id"],
        attack_name=p["attack_name"],
        source_models=p["source_models"],
        target_models=p["target_models"],
        defense=p["defense"],
        records=p["records"],
        fooling_rate=p["fooling_rate"],
        config=p["config"],
        seed=p["seed"],
        toolkit_version=p["toolkit_version"],
        sections=p.get("sections", {}),
    )
    report.validate()
    return report
