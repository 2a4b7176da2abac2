"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The heavy attack campaigns are shared session fixtures so the suite stays
within a desk-machine budget. Soft checks print FLAG lines instead of failing.
"""

import time

import numpy as np
import pytest
import yaml

from demiguise import dataset, imaging
from demiguise.attacks import (
    AttackConfig,
    DistanceKind,
    cw_attack,
    hsja_attack,
    mifgsm_attack,
    scalar_distance,
)
from demiguise.classifiers import AccessTier
from demiguise.defenses import defense_sweep_specs
from demiguise.errors import TierViolationError
from demiguise.evaluation import defense_robustness, fooling_rate, semantics_rate, transfer_matrix
from demiguise.perceptual import (
    ChannelWeights,
    FeatureStack,
    distance_from_stacks,
    perceptual_distance,
    perceptual_gradient,
)
from demiguise.runner import sample_seed

from conftest import SpyHandle, labeled_for, make_linear_classifier, stub_perceptual_net
from oracles import psnr_scalar, ssim_loop


def check(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def flag(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FLAG'}] {criterion} (soft): {detail}")


@pytest.fixture(scope="session")
def pool100(desk_pool):
    return desk_pool[:100]


@pytest.fixture(scope="session")
def cw_campaign(zoo, pnet, pweights, pool100):
    """Demiguise-C&W and C&W-l2 on 100 desk images against the first model."""
    model = zoo[0]
    t0 = time.time()
    demi = [
        cw_attack(model, pnet, s, DistanceKind.PERCEPTUAL,
                  AttackConfig(seed=sample_seed(0, s.sample_id)), weights=pweights)
        for s in pool100
    ]
    demi_elapsed = time.time() - t0
    l2 = [
        cw_attack(model, pnet, s, DistanceKind.L2,
                  AttackConfig(seed=sample_seed(0, s.sample_id)), weights=pweights)
        for s in pool100
    ]
    return {"model": model, "demi": demi, "l2": l2, "demi_elapsed": demi_elapsed}


@pytest.fixture(scope="session")
def transfer_campaign(zoo, pnet, pweights, desk_pool):
    """Four sign-attack variants from every zoo model on 30 shared samples."""
    pool = desk_pool[100:120] + desk_pool[:10]
    variants = {
        "mifgsm": dict(lam=0.0, di_probability=0.0),
        "demiguise-mifgsm": dict(lam=1.0, di_probability=0.0),
        "di-mifgsm": dict(lam=0.0, di_probability=0.5),
        "demiguise-di-mifgsm": dict(lam=1.0, di_probability=0.5),
    }
    runs: dict[str, dict] = {}
    for name, fields in variants.items():
        adv_sets = {}
        results = []
        for model in zoo:
            rs = [
                mifgsm_attack(
                    model, pnet, s,
                    AttackConfig(epsilon=0.1, max_iters=40, mu=1.0,
                                 seed=sample_seed(1, s.sample_id), **fields),
                    weights=pweights,
                )
                for s in pool
            ]
            adv_sets[model.name] = [(r.adversarial, r.original_label) for r in rs]
            results.extend((s, r) for s, r in zip(pool, rs))
        matrix, _, _ = transfer_matrix(adv_sets, zoo)
        runs[name] = {"matrix": matrix, "results": results}
    return runs


@pytest.fixture(scope="session")
def hsja_campaign(zoo, pnet, pweights, pool100):
    model = zoo[0].with_tier(AccessTier.DECISION_ONLY)
    results = [
        hsja_attack(model, pnet, s, use_perceptual=True,
                    cfg=AttackConfig(query_budget=2000,
                                     seed=sample_seed(2, s.sample_id)),
                    weights=pweights)
        for s in pool100
    ]
    return results


class TestCriterion01PerceptualDistance:
    def test_perceptual_distance_correctness(self, pnet, pweights):
        t0 = time.time()
        rng = np.random.default_rng(101)
        images = [rng.random((3, 32, 32)).astype(np.float32) for _ in range(6)]

        self_ok = all(perceptual_distance(pnet, pweights, x, x) == 0.0 for x in images)
        sym_gap = max(
            abs(perceptual_distance(pnet, pweights, a, b)
                - perceptual_distance(pnet, pweights, b, a))
            for a, b in zip(images[:3], images[3:])
        )

        worst_rel = 0.0
        for pair in range(3):
            x_ref, x_var = images[pair], images[pair + 3]
            grad = perceptual_gradient(pnet, pweights, x_ref, x_var)
            coords = [(rng.integers(0, 3), rng.integers(0, 32), rng.integers(0, 32))
                      for _ in range(10)]
            h = 1e-4
            fd = []
            for c, i, j in coords:
                xp = x_var.astype(np.float64).copy()
                xm = xp.copy()
                xp[c, i, j] += h
                xm[c, i, j] -= h
                fd.append((perceptual_distance(pnet, pweights, x_ref, xp)
                           - perceptual_distance(pnet, pweights, x_ref, xm)) / (2 * h))
            fd = np.array(fd)
            auto = np.array([grad[c, i, j] for c, i, j in coords])
            worst_rel = max(worst_rel,
                            np.linalg.norm(fd - auto) / max(np.linalg.norm(fd), 1e-12))

        stub = abs(
            distance_from_stacks(
                FeatureStack([np.array([[[3.0]], [[0.0]]])]),
                FeatureStack([np.array([[[0.0]], [[4.0]]])]),
                ChannelWeights([np.ones(2)]),
            )
            - 2.0
        )
        elapsed = time.time() - t0
        check(
            "criterion 1 perceptual distance",
            self_ok and sym_gap < 1e-9 and worst_rel < 1e-3 and stub < 1e-6
            and elapsed < 60,
            f"self-zero={self_ok} symmetry={sym_gap:.2e} fd-rel={worst_rel:.2e} "
            f"stub-gap={stub:.2e} runtime={elapsed:.1f}s",
        )


class TestCriterion02WhiteBoxEffectiveness:
    def test_demiguise_cw_fooling_rate(self, cw_campaign):
        results = cw_campaign["demi"]
        rate = fooling_rate([r.success for r in results])
        in_range = all(
            r.adversarial.min() >= 0.0 and r.adversarial.max() <= 1.0
            for r in results
        )
        elapsed = cw_campaign["demi_elapsed"]
        check(
            "criterion 2 white-box effectiveness",
            rate >= 95.0 and in_range and elapsed < 1800,
            f"fooling={rate:.1f}% (>=95) range-ok={in_range} "
            f"runtime={elapsed / 60:.1f}min (<30)",
        )


class TestCriterion03MetricVariants:
    def test_all_four_distance_kinds(self, zoo, pnet, pweights, desk_pool):
        model = zoo[0]
        samples = desk_pool[:20]
        worst = 0.0
        completed = 0
        for kind in DistanceKind:
            for s in samples:
                r = cw_attack(model, pnet, s, kind,
                              AttackConfig(seed=sample_seed(3, s.sample_id)),
                              weights=pweights)
                completed += 1
                if r.success:
                    recomputed = scalar_distance(kind, pnet, pweights,
                                                 s.image, r.adversarial)
                    worst = max(worst, abs(r.final_distance_kind - recomputed))
        check(
            "criterion 3 metric-variant harness",
            completed == 80 and worst < 1e-5,
            f"runs={completed}/80 worst bookkeeping gap={worst:.2e} (<1e-5)",
        )


class TestCriterion04SemanticsRate:
    def test_demi_delta_more_semantic_than_l2(self, cw_campaign, pool100):
        model = cw_campaign["model"]
        demi = semantics_rate(
            [(s.image, r.adversarial, r.original_label, r.adversarial_label)
             for s, r in zip(pool100, cw_campaign["demi"])],
            model,
        )
        l2 = semantics_rate(
            [(s.image, r.adversarial, r.original_label, r.adversarial_label)
             for s, r in zip(pool100, cw_campaign["l2"])],
            model,
        )
        check(
            "criterion 4 semantics-rate direction",
            demi > l2,
            f"demiguise-cw={demi:.1f}% vs cw-l2={l2:.1f}% (strict >), n=100",
        )


class TestCriterion05Transferability:
    def test_transfer_directions(self, transfer_campaign):
        def offdiag(m):
            return float(m[~np.eye(m.shape[0], dtype=bool)].mean())

        base = offdiag(transfer_campaign["mifgsm"]["matrix"])
        demi = offdiag(transfer_campaign["demiguise-mifgsm"]["matrix"])
        demi_di = offdiag(transfer_campaign["demiguise-di-mifgsm"]["matrix"])
        check(
            "criterion 5 transferability direction",
            demi >= base and demi_di >= demi - 2.0,
            f"demi={demi:.1f}% >= base={base:.1f}%; "
            f"demi-di={demi_di:.1f}% >= demi-2pp",
        )


class TestCriterion06MifgsmContracts:
    def test_linf_bound_every_pixel_every_sample(self, transfer_campaign):
        worst = 0.0
        count = 0
        for run in transfer_campaign.values():
            for sample, result in run["results"]:
                gap = np.abs(result.adversarial.astype(np.float64)
                             - sample.image.astype(np.float64)).max()
                worst = max(worst, gap)
                count += 1
        check(
            "criterion 6a sign-attack linf bound",
            worst <= 0.1 + 1e-6,
            f"worst |delta|_inf={worst:.8f} over {count} runs (<=0.1+1e-6)",
        )

    def test_bit_identical_to_independent_ifgsm(self):
        from oracles import ifgsm_loop

        c = make_linear_classifier(seed=61, size=16)
        net = stub_perceptual_net(seed=62, size=16)
        rng = np.random.default_rng(63)
        identical = True
        for trial in range(3):
            sample = labeled_for(c, rng, sample_id=f"eq{trial}")
            r = mifgsm_attack(
                c, net, sample,
                AttackConfig(lam=0.0, mu=0.0, epsilon=0.07, max_iters=11, seed=trial),
            )
            oracle = ifgsm_loop(
                lambda img, label: c.loss_gradient(img.astype(np.float32), label),
                sample.image, sample.label, epsilon=0.07, steps=11,
            )
            identical &= np.array_equal(r.adversarial, oracle.astype(np.float32))
        check("criterion 6b ifgsm equivalence", identical,
              "lam=0, mu=0 run bit-identical to the independent oracle (3 trials)")


class TestCriterion07DefenseRobustness:
    def test_sweeps_and_directions(self, cw_campaign):
        model = cw_campaign["model"]
        specs = defense_sweep_specs()
        curves = {}
        for name in ("demi", "l2"):
            outputs = [(r.adversarial, r.original_label)
                       for r in cw_campaign[name]]
            curves[name] = defense_robustness(outputs, specs, model)

        lengths_ok = all(len(c) == 15 for c in curves.values())
        anchors_ok = all(
            curves[name][0][1] == fooling_rate([r.success for r in cw_campaign[name]])
            for name in curves
        )

        def rate_at(curve, kind, **param):
            for spec, rate in curve:
                if spec.kind == kind and all(
                    getattr(spec, k) == v for k, v in param.items()
                ):
                    return rate
            raise KeyError((kind, param))

        bits_ok = all(
            rate_at(curves[name], "bit_depth", bits=1)
            <= rate_at(curves[name], "bit_depth", bits=7)
            for name in curves
        )
        check(
            "criterion 7 defense robustness",
            lengths_ok and anchors_ok and bits_ok,
            f"curves 7+7+anchor={lengths_ok} anchor==white-box={anchors_ok} "
            f"bit1<=bit7={bits_ok}",
        )
        for quality in (100, 85, 70, 55, 40, 25, 10):
            demi_rate = rate_at(curves["demi"], "jpeg", quality=quality)
            l2_rate = rate_at(curves["l2"], "jpeg", quality=quality)
            flag(
                "criterion 7 demi-over-baseline",
                demi_rate >= l2_rate - 2.0,
                f"jpeg q={quality}: demi={demi_rate:.1f}% vs l2={l2_rate:.1f}%",
            )


class TestCriterion08HsjaDecisionOnly:
    def test_stub_guarantee(self):
        c = make_linear_classifier(seed=81, size=16)
        net = stub_perceptual_net(seed=82, size=16)
        spy = SpyHandle(c.with_tier(AccessTier.DECISION_ONLY))
        sample = labeled_for(c, np.random.default_rng(83))
        r = hsja_attack(spy, net, sample, use_perceptual=True,
                        cfg=AttackConfig(query_budget=2000, seed=84))
        with pytest.raises(TierViolationError):
            spy.inner.logits(sample.image)
        check(
            "criterion 8a decision-only guarantee",
            spy.logits_calls == 0 and spy.gradient_calls == 0
            and spy.predict_calls == r.queries_used and r.queries_used <= 2000,
            f"logits={spy.logits_calls} grads={spy.gradient_calls} "
            f"predicts={spy.predict_calls}=queries_used<=2000",
        )

    def test_desk_fooling_rate(self, hsja_campaign):
        rate = fooling_rate([r.success for r in hsja_campaign])
        budget_ok = all(r.queries_used <= 2000 for r in hsja_campaign)
        check(
            "criterion 8b hsja effectiveness",
            rate >= 80.0 and budget_ok,
            f"fooling={rate:.1f}% (>=80) over 100 images, budget-ok={budget_ok}",
        )
        flag("criterion 8b full-scale reference range", 89.0 <= rate <= 100.0,
             f"reference range 89-99%; desk={rate:.1f}%")


class TestCriterion09Determinism:
    def test_identical_rerun_payload(self, tmp_path, zoo):
        data_dir = dataset.materialize(str(tmp_path / "data"), 30, seed=505)
        payloads = []
        for tag in ("one", "two"):
            config = {
                "experiment_id": "det",
                "sample_count": 3,
                "models": ["plainnet"],
                "attack": {"name": "demiguise-mifgsm", "max_iters": 8},
                "dataset_dir": data_dir,
                "output_dir": str(tmp_path / tag),
                "seed": 99,
            }
            cfg_path = tmp_path / f"{tag}.yaml"
            cfg_path.write_text(yaml.safe_dump(config))
            from demiguise.cli import main

            assert main(["attack", "--config", str(cfg_path)]) == 0
            from demiguise.evaluation import load_report

            report = load_report(str(tmp_path / tag / "det_report.json"))
            payloads.append(report.payload_bytes())
        check("criterion 9 determinism", payloads[0] == payloads[1],
              f"re-run payload bytes identical ({len(payloads[0])} bytes)")


class TestCriterion10ClassicalMetrics:
    def test_psnr_and_ssim_against_references(self):
        rng = np.random.default_rng(110)
        worst_psnr = 0.0
        worst_ssim = 0.0
        for _ in range(50):
            a = rng.random((3, 16, 16))
            b = rng.random((3, 16, 16))
            worst_psnr = max(worst_psnr, abs(imaging.psnr(a, b) - psnr_scalar(a, b)))
            worst_ssim = max(worst_ssim, abs(imaging.ssim(a, b) - ssim_loop(a, b)))
        check(
            "criterion 10 classical metrics",
            worst_psnr < 1e-6 and worst_ssim < 1e-4,
            f"psnr gap={worst_psnr:.2e} (<1e-6) ssim gap={worst_ssim:.2e} (<1e-4), "
            f"50 pairs",
        )
