"""Decision-based boundary attack, optionally steered by perceptual distance.

Uses only a classifier's predicted labels: a misclassified uniform-noise start
is binary-search projected toward the original along their segment, then the
attack alternates Monte-Carlo gradient-direction estimation at the boundary,
a geometric step-size search, and re-projection. With ``use_perceptual`` the
retained-iterate objective and reported progress metric become the deep
perceptual distance, and the sampling radius is scheduled from its current
value. The decision-query budget is a hard cap.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..classifiers import Classifier
from ..imaging import LabeledImage
from ..perceptual import ChannelWeights, PerceptualNet, perceptual_distance
from .base import AttackConfig, AttackResult, finalize_result

INIT_TRIALS = 1000          # uniform-noise attempts to find any misclassified start
BOUNDARY_TOL = 1e-3         # binary-search interval width at the decision boundary
MC_BASE_EVALS = 16          # Monte-Carlo probes at iteration 1 (grows as sqrt(j))
MC_MAX_EVALS = 256
RADIUS_CLIP = (1e-4, 0.5)   # sampling-radius clamp, pixel units
STEP_FLOOR = 1e-9           # give up halving the step below this


class _BudgetExhausted(Exception):
    pass


class _Oracle:
    """Decision oracle that hard-caps the number of queries."""

    def __init__(self, c: Classifier, label: int, targeted: bool, target: int | None,
                 budget: int):
        self.c = c
        self.label = label
        self.targeted = targeted
        self.target = target
        self.budget = budget
        self.used = 0

    def __call__(self, img: np.ndarray) -> tuple[bool, int]:
        if self.used >= self.budget:
            raise _BudgetExhausted
        self.used += 1
        pred = self.c.predict(img.astype(np.float32))
        ok = (pred == self.target) if self.targeted else (pred != self.label)
        return ok, pred


def _project_to_boundary(
    x: np.ndarray, far: np.ndarray, far_label: int, oracle: _Oracle
) -> tuple[np.ndarray, int]:
    """Binary search along the segment x -> far for the closest adversarial blend."""
    low, high = 0.0, 1.0
    high_label = far_label
    while high - low > BOUNDARY_TOL:
        mid = (high + low) / 2.0
        ok, pred = oracle((1.0 - mid) * x + mid * far)
        if ok:
            high, high_label = mid, pred
        else:
            low = mid
    return (1.0 - high) * x + high * far, high_label


def hsja_attack(
    c: Classifier,
    net: PerceptualNet,
    x: LabeledImage,
    use_perceptual: bool,
    cfg: AttackConfig,
    weights: ChannelWeights | None = None,
    on_iterate: Callable[[int, float], None] | None = None,
) -> AttackResult:
    """Run the boundary attack; works at any access tier (predictions only)."""
    cfg.validate(original_label=x.label)
    w = weights if weights is not None else ChannelWeights.ones_for(net)
    orig = np.asarray(x.image, dtype=np.float64)
    shape = orig.shape
    n_pix = orig.size
    rng = np.random.default_rng(cfg.seed)
    oracle = _Oracle(c, x.label, cfg.targeted, cfg.target, cfg.query_budget)

    def metric(candidate: np.ndarray) -> float:
        if use_perceptual:
            return perceptual_distance(net, w, orig, candidate)
        return float(np.linalg.norm(candidate - orig))

    name = "demiguise-hsja" if use_perceptual else "hsja"
    best: tuple[float, np.ndarray, int] | None = None  # (metric, image, label)

    def consider(candidate: np.ndarray, label: int) -> None:
        nonlocal best
        m = metric(candidate)
        if best is None or m < best[0]:
            best = (m, candidate, label)

    iterations = 0
    try:
        start = None
        for _ in range(INIT_TRIALS):
            noise = rng.uniform(0.0, 1.0, size=shape)
            ok, pred = oracle(noise)
            if ok:
                start = (noise, pred)
                break
        if start is not None:
            cur, cur_label = _project_to_boundary(orig, start[0], start[1], oracle)
            consider(cur, cur_label)
            j = 0
            while True:
                j += 1
                cur_l2 = float(np.linalg.norm(cur - orig))
                if use_perceptual:
                    radius = np.sqrt(max(metric(cur), 0.0)) / np.sqrt(n_pix)
                else:
                    radius = cur_l2 / n_pix
                if j == 1:
                    radius = 0.1
                radius = float(np.clip(radius, *RADIUS_CLIP))

                # Monte-Carlo gradient-direction estimate from decision probes
                n_evals = min(int(MC_BASE_EVALS * np.sqrt(j)), MC_MAX_EVALS,
                              max(oracle.budget - oracle.used, 1))
                signs = np.empty(n_evals)
                directions = np.empty((n_evals,) + shape)
                for b in range(n_evals):
                    u = rng.normal(size=shape)
                    u /= np.linalg.norm(u)
                    probe = np.clip(cur + radius * u, 0.0, 1.0)
                    directions[b] = (probe - cur) / radius
                    ok, _ = oracle(probe)
                    signs[b] = 1.0 if ok else -1.0
                if np.all(signs == 1.0):
                    grad = directions.mean(axis=0)
                elif np.all(signs == -1.0):
                    grad = -directions.mean(axis=0)
                else:
                    signs -= signs.mean()
                    grad = np.tensordot(signs, directions, axes=1) / n_evals
                norm = np.linalg.norm(grad)
                if norm > 0:
                    grad /= norm

                    # geometric search: halve the step until it stays adversarial
                    step = cur_l2 / np.sqrt(j)
                    moved = None
                    while step > STEP_FLOOR:
                        candidate = np.clip(cur + step * grad, 0.0, 1.0)
                        ok, pred = oracle(candidate)
                        if ok:
                            moved = (candidate, pred)
                            break
                        step /= 2.0
                    if moved is not None:
                        cur, cur_label = _project_to_boundary(
                            orig, moved[0], moved[1], oracle
                        )
                        consider(cur, cur_label)
                iterations = j
                if on_iterate is not None and best is not None:
                    on_iterate(j, best[0])
    except _BudgetExhausted:
        pass

    if best is None:
        adv, adv_label = orig, x.label
    else:
        _, adv, adv_label = best
    return finalize_result(
        adversarial=adv,
        adversarial_label=adv_label,
        original_label=x.label,
        iterations_used=iterations,
        queries_used=oracle.used,
        original=x.image,
        net=net,
        weights=w,
        attack_name=name,
        targeted=cfg.targeted,
        target=cfg.target,
    )
