"""Experiment orchestration: ACC/ASR tables, per-round BPDA curves,
the distortion comparison table, and the coefficient sweep.

Protocol notes baked in here:

  * The evaluation set is curated to samples the model classifies
    correctly on clean inputs, so undefended clean accuracy is 1.0.
  * Standard attacks (fgsm / ifgsm / cw) craft examples against the
    bare model; the defense is then applied to the finished example
    before classification. BPDA alone attacks through the defense.
  * ACC counts predictions equal to the true label, ASR predictions
    equal to the adversary's target; the remainder is "wrong but not
    target", so acc + asr + other == 1 for every record.
  * Per-sample RNG streams make every record independent of evaluation
    order and worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from .attacks import AttackConfig, bpda, describe_attack, run_attack
from .imagecore import Dataset, Image
from .model import Classifier, predict, predict_batch
from .rng import (
    DOMAIN_ATTACK,
    DOMAIN_CURATE,
    DOMAIN_DEFENSE,
    DOMAIN_ROUNDS,
    DOMAIN_SWEEP,
    DOMAIN_TABLE,
    DOMAIN_TARGETS,
    substream,
)
from .transform import DefenseKind, Sat, SatParams, defend, describe

ACC_FLOOR_DEFAULT = 0.95


@dataclass(frozen=True)
class EvalConfig:
    samples: int = 100
    repeats: int = 1  # defended classifications per image (majority vote)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeat count must be >= 1")


@dataclass(frozen=True)
class EvalRecord:
    defense_id: str
    attack_id: str
    acc: float
    asr: float
    # BPDA only: (round, acc, asr) after each attack round, 1-based, plus the
    # round-zero baseline (no perturbation) kept outside the series.
    series: tuple[tuple[int, float, float], ...] | None = None
    baseline: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.acc <= 1.0 and 0.0 <= self.asr <= 1.0):
            raise ValueError("acc and asr must lie in [0, 1]")


@dataclass(frozen=True)
class SweepGrid:
    t_values: tuple[float, ...]
    s_values: tuple[float, ...]
    r_values: tuple[float, ...]

    @staticmethod
    def full() -> "SweepGrid":
        return SweepGrid(
            t_values=tuple(np.linspace(0.01, 0.5, 11)),
            s_values=tuple(np.linspace(0.01, 0.5, 11)),
            r_values=tuple(np.linspace(0.0, 40.0, 11)),
        )

    @staticmethod
    def coarse() -> "SweepGrid":
        return SweepGrid(
            t_values=tuple(np.linspace(0.01, 0.5, 5)),
            s_values=tuple(np.linspace(0.01, 0.5, 5)),
            r_values=tuple(np.linspace(0.0, 40.0, 5)),
        )

    def cells(self) -> list[tuple[float, float, float]]:
        return list(itertools.product(self.t_values, self.s_values, self.r_values))


@dataclass(frozen=True)
class SweepCell:
    t: float
    s: float
    r: float
    acc: float
    l2: float
    ssim: float
    psnr: float


@dataclass(frozen=True)
class TableRow:
    defense_id: str
    l2: float
    ssim: float
    psnr: float
    acc: float


def curate(
    model: Classifier, dataset: Dataset, n: int, seed: int
) -> Dataset:
    """Pick n correctly-classified samples, in seeded random order."""
    images = np.stack([s.image.data for s in dataset])
    labels = np.array([s.label for s in dataset])
    preds = predict_batch(model, images)
    correct = np.flatnonzero(preds == labels)
    if len(correct) < n:
        raise ValueError(
            f"dataset has only {len(correct)} correctly-classified samples, need {n}"
        )
    order = substream(seed, DOMAIN_CURATE).permutation(len(correct))
    picked = correct[order][:n]
    return dataset.subset(int(i) for i in picked)


def _defended_prediction(
    model: Classifier,
    image: Image,
    defense: DefenseKind,
    seed: int,
    sample_idx: int,
    repeats: int,
) -> int:
    """Classify through the defense; majority vote over `repeats` draws."""
    votes = np.zeros(model.num_classes, dtype=np.int64)
    for rep in range(repeats):
        rng = substream(seed, DOMAIN_DEFENSE, sample_idx, rep)
        votes[predict(model, defend(image, defense, rng))] += 1
    return int(np.argmax(votes))  # ties break toward the lowest label


def draw_target(num_classes: int, true_label: int, seed: int, sample_idx: int) -> int:
    """Random target label different from the true one."""
    rng = substream(seed, DOMAIN_TARGETS, sample_idx)
    offset = int(rng.integers(1, num_classes))
    return (true_label + offset) % num_classes


def eval_clean(
    model: Classifier, dataset: Dataset, defense: DefenseKind, config: EvalConfig
) -> EvalRecord:
    """Defended accuracy on clean images; ASR is zero by definition."""
    hits = 0
    for i, sample in enumerate(dataset):
        pred = _defended_prediction(
            model, sample.image, defense, config.seed, i, config.repeats
        )
        hits += int(pred == sample.label)
    return EvalRecord(
        defense_id=describe(defense),
        attack_id="none",
        acc=hits / len(dataset),
        asr=0.0,
    )


def eval_attack(
    model: Classifier,
    dataset: Dataset,
    defense: DefenseKind,
    attack_config: AttackConfig,
    config: EvalConfig,
) -> EvalRecord:
    """Craft one targeted example per sample, then classify it defended."""
    n_true = 0
    n_target = 0
    for i, sample in enumerate(dataset):
        target = draw_target(model.num_classes, sample.label, config.seed, i)
        attack_rng = substream(config.seed, DOMAIN_ATTACK, i)
        ex = run_attack(
            model,
            sample.image,
            target,
            attack_config,
            defense=defense if attack_config.family == "bpda" else None,
            rng=attack_rng,
            true_label=sample.label,
        )
        pred = _defended_prediction(
            model, ex.perturbed, defense, config.seed, i, config.repeats
        )
        n_true += int(pred == sample.label)
        n_target += int(pred == target)
    n = len(dataset)
    return EvalRecord(
        defense_id=describe(defense),
        attack_id=describe_attack(attack_config),
        acc=n_true / n,
        asr=n_target / n,
    )


def eval_bpda_rounds(
    model: Classifier,
    dataset: Dataset,
    defense: DefenseKind,
    attack_config: AttackConfig,
    config: EvalConfig,
) -> EvalRecord:
    """BPDA with per-round ACC/ASR, each measured through a fresh defended pass."""
    if attack_config.family != "bpda":
        raise ValueError("eval_bpda_rounds requires a bpda attack config")
    rounds = attack_config.steps
    n = len(dataset)
    true_hits = np.zeros(rounds + 1, dtype=np.int64)  # index 0 = unperturbed
    target_hits = np.zeros(rounds + 1, dtype=np.int64)
    for i, sample in enumerate(dataset):
        target = draw_target(model.num_classes, sample.label, config.seed, i)
        attack_rng = substream(config.seed, DOMAIN_ATTACK, i)
        _, trace = bpda(
            model,
            defense,
            sample.image,
            target,
            attack_config.budget,
            rounds=rounds,
            learning_rate=attack_config.learning_rate,
            rng=attack_rng,
            eot_samples=attack_config.eot_samples,
            grad_mode=attack_config.grad_mode,
            loss_kind=attack_config.loss_kind,
            true_label=sample.label,
        )
        candidates = [sample.image] + [img for _, img in trace]
        for rnd, candidate in enumerate(candidates):
            rng = substream(config.seed, DOMAIN_ROUNDS, i, rnd)
            pred = predict(model, defend(candidate, defense, rng))
            true_hits[rnd] += int(pred == sample.label)
            target_hits[rnd] += int(pred == target)
    series = tuple(
        (rnd, float(true_hits[rnd] / n), float(target_hits[rnd] / n))
        for rnd in range(1, rounds + 1)
    )
    return EvalRecord(
        defense_id=describe(defense),
        attack_id=describe_attack(attack_config),
        acc=series[-1][1],
        asr=series[-1][2],
        series=series,
        baseline=(float(true_hits[0] / n), float(target_hits[0] / n)),
    )


# ---------------------------------------------------------------------------
# coefficient sweep


def _sweep_cell(args) -> SweepCell:
    model, images, labels, t, s, r, seed, cell_idx = args
    params = SatParams(t=t, s=s, r=r)
    n = len(images)
    hits = 0
    l2_sum = 0.0
    ssim_sum = 0.0
    psnr_sum = 0.0
    for i in range(n):
        rng = substream(seed, DOMAIN_SWEEP, cell_idx, i)
        original = Image(images[i])
        defended = defend(original, Sat(params), rng)
        hits += int(predict(model, defended) == labels[i])
        rep = metrics.report(original, defended)
        l2_sum += rep.l2
        ssim_sum += rep.ssim
        psnr_sum += rep.psnr
    return SweepCell(
        t=t,
        s=s,
        r=r,
        acc=hits / n,
        l2=l2_sum / n,
        ssim=ssim_sum / n,
        psnr=psnr_sum / n,
    )


def sweep(
    model: Classifier,
    dataset: Dataset,
    grid: SweepGrid,
    config: EvalConfig,
    workers: int = 1,
) -> list[SweepCell]:
    """Mean ACC and distortion per (T, S, R) cell, fresh draws per image."""
    images = [s.image.data for s in dataset]
    labels = [s.label for s in dataset]
    jobs = [
        (model, images, labels, t, s, r, config.seed, idx)
        for idx, (t, s, r) in enumerate(grid.cells())
    ]
    if workers <= 1:
        return [_sweep_cell(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_cell, jobs, chunksize=8))


def pareto_subset(cells: list[SweepCell], acc_floor: float = ACC_FLOOR_DEFAULT) -> list[SweepCell]:
    """Cells meeting the accuracy floor, strongest distortion first."""
    kept = [c for c in cells if c.acc >= acc_floor]
    return sorted(kept, key=lambda c: (-c.l2, c.t, c.s, c.r))


def table_analogue(
    model: Classifier,
    dataset: Dataset,
    defenses: list[DefenseKind],
    config: EvalConfig,
) -> list[TableRow]:
    """Mean distortion plus defended clean accuracy for each defense."""
    rows = []
    for d_idx, kind in enumerate(defenses):
        n = len(dataset)
        hits = 0
        l2_sum = 0.0
        ssim_sum = 0.0
        psnr_sum = 0.0
        for i, sample in enumerate(dataset):
            rng = substream(config.seed, DOMAIN_TABLE, d_idx, i)
            defended = defend(sample.image, kind, rng)
            hits += int(predict(model, defended) == sample.label)
            rep = metrics.report(sample.image, defended)
            l2_sum += rep.l2
            ssim_sum += rep.ssim
            psnr_sum += rep.psnr
        rows.append(
            TableRow(
                defense_id=describe(kind),
                l2=l2_sum / n,
                ssim=ssim_sum / n,
                psnr=psnr_sum / n,
                acc=hits / n,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV rendering (column order is part of the interface)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"  # serializes +inf as 'inf'
    return str(v)


def render_eval_csv(records: list[EvalRecord]) -> str:
    lines = ["defense,attack,acc,asr"]
    for r in records:
        lines.append(f"{r.defense_id},{r.attack_id},{_fmt(r.acc)},{_fmt(r.asr)}")
    return "\n".join(lines) + "\n"


def render_bpda_rounds_csv(record: EvalRecord) -> str:
    if record.series is None:
        raise ValueError("record has no per-round series")
    lines = ["round,acc,asr"]
    for rnd, acc, asr in record.series:
        lines.append(f"{rnd},{_fmt(acc)},{_fmt(asr)}")
    return "\n".join(lines) + "\n"


def render_sweep_csv(cells: list[SweepCell]) -> str:
    lines = ["T,S,R,acc,l2,ssim,psnr"]
    for c in cells:
        lines.append(
            f"{_fmt(c.t)},{_fmt(c.s)},{_fmt(c.r)},{_fmt(c.acc)},"
            f"{_fmt(c.l2)},{_fmt(c.ssim)},{_fmt(c.psnr)}"
        )
    return "\n".join(lines) + "\n"


def render_table_csv(rows: list[TableRow]) -> str:
    lines = ["defense,l2,ssim,psnr,acc"]
    for r in rows:
        lines.append(
            f"{r.defense_id},{_fmt(r.l2)},{_fmt(r.ssim)},{_fmt(r.psnr)},{_fmt(r.acc)}"
        )
    return "\n".join(lines) + "\n"
