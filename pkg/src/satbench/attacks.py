"""Targeted white-box attacks: FGSM, iterated FGSM, CW, and BPDA.

All attacks descend the loss of the adversary's target label, keep the
perturbation inside its declared norm budget, and clip candidates to
[0, 1]. Budgets: the l-inf bound is per-pixel on the [0, 1] scale; the
l2 bound uses the same normalized 0-255 convention as the metrics
module (sqrt of summed squares over 255-scale intensities, divided by
the pixel-channel count), so reported distortions and budgets share one
ruler.

BPDA attacks through a (possibly randomized, non-differentiable)
defense g by evaluating gradients at g(x) on the forward pass while
treating g as the identity on the backward pass; the defense is
re-sampled fresh every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Image
from .model import Classifier, cw_margin, forward, loss_and_input_grad, predict
from .transform import DefenseKind, Identity, defend

LINF_DEFAULT = 8.0 / 255.0
L2_DEFAULT = 0.05


@dataclass(frozen=True)
class AttackBudget:
    linf_eps: float = LINF_DEFAULT
    l2_eps: float = L2_DEFAULT
    active_norm: str = "linf"  # "linf" | "l2"
    # Scale convention for the l2 bound ("0.05" is quoted without one):
    #   eq2  sqrt(sum of squared 0-255 differences) / pixel-channel count,
    #        the same normalization the distortion metrics use;
    #   rms  root-mean-square perturbation on the [0,1] scale.
    l2_scale: str = "eq2"

    def __post_init__(self) -> None:
        if self.active_norm not in ("linf", "l2"):
            raise ValueError(f"active_norm must be 'linf' or 'l2', got {self.active_norm!r}")
        if self.l2_scale not in ("eq2", "rms"):
            raise ValueError(f"l2_scale must be 'eq2' or 'rms', got {self.l2_scale!r}")
        if self.eps <= 0:
            raise ValueError("budget for the active norm must be positive")

    @property
    def eps(self) -> float:
        return self.linf_eps if self.active_norm == "linf" else self.l2_eps


@dataclass(frozen=True)
class AttackConfig:
    family: str  # "fgsm" | "ifgsm" | "cw" | "bpda"
    budget: AttackBudget
    steps: int = 10
    step_size: float = LINF_DEFAULT / 4
    learning_rate: float = 0.1
    eot_samples: int = 1
    grad_mode: str = "raw"  # "raw" | "sign"
    loss_kind: str = "cw_margin"  # bpda round loss: "cw_margin" | "cross_entropy"

    def __post_init__(self) -> None:
        if self.family not in ("fgsm", "ifgsm", "cw", "bpda"):
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.family == "fgsm" and self.steps != 1:
            raise ValueError("fgsm is single-step; steps must be 1")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")
        if self.grad_mode not in ("sign", "raw"):
            raise ValueError(f"grad_mode must be 'sign' or 'raw', got {self.grad_mode!r}")
        if self.loss_kind not in ("cw_margin", "cross_entropy"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


def describe_attack(config: AttackConfig) -> str:
    b = config.budget
    if config.family == "fgsm":
        return f"fgsm(eps={b.linf_eps:g})"
    if config.family == "ifgsm":
        return f"ifgsm(eps={b.linf_eps:g},steps={config.steps})"
    if config.family == "cw":
        return f"cw(l2={b.l2_eps:g}@{b.l2_scale},steps={config.steps})"
    return f"bpda(eps={b.linf_eps:g},rounds={config.steps})"


@dataclass(frozen=True, eq=False)
class AdversarialExample:
    original: Image
    perturbed: Image
    true_label: int
    target_label: int
    rounds_used: int
    success: bool

    def __post_init__(self) -> None:
        if self.target_label == self.true_label:
            raise ValueError("target label must differ from the true label")


def l2_metric_norm(delta: np.ndarray) -> float:
    """Normalized l2 of a [0,1]-scale perturbation (0-255 metric convention)."""
    return float(255.0 * np.sqrt(np.sum(delta**2)) / delta.size)


def l2_rms_norm(delta: np.ndarray) -> float:
    """Root-mean-square perturbation on the [0,1] scale."""
    return float(np.sqrt(np.mean(delta**2)))


def budget_norm(delta: np.ndarray, budget: AttackBudget) -> float:
    if budget.active_norm == "linf":
        return float(np.abs(delta).max()) if delta.size else 0.0
    if budget.l2_scale == "eq2":
        return l2_metric_norm(delta)
    return l2_rms_norm(delta)


def _project(delta: np.ndarray, budget: AttackBudget) -> np.ndarray:
    if budget.active_norm == "linf":
        return np.clip(delta, -budget.linf_eps, budget.linf_eps)
    norm = budget_norm(delta, budget)
    if norm > budget.l2_eps:
        delta = delta * (budget.l2_eps / norm) * (1.0 - 1e-12)
    return delta


def _apply_delta(original: Image, delta: np.ndarray, budget: AttackBudget) -> Image:
    """Project, clip to [0,1], and wrap. Clipping only shrinks the norm."""
    delta = _project(delta, budget)
    return Image(np.clip(original.data + delta, 0.0, 1.0))


def _assert_budget(example: AdversarialExample, budget: AttackBudget) -> None:
    delta = example.perturbed.data - example.original.data
    actual = budget_norm(delta, budget)
    if actual > budget.eps * (1.0 + 1e-9):
        raise AssertionError(
            f"attack emitted example outside its {budget.active_norm} budget: "
            f"{actual} > {budget.eps}"
        )


def fgsm(
    model: Classifier,
    image: Image,
    target_label: int,
    budget: AttackBudget,
    true_label: int | None = None,
) -> AdversarialExample:
    """Single signed-gradient step of size eps toward the target label.

    `true_label` defaults to the model's clean prediction; callers that know
    the dataset label should pass it (the two differ on misclassified inputs).
    """
    if budget.active_norm != "linf":
        raise ValueError("fgsm requires an l-inf budget")
    if true_label is None:
        true_label = predict(model, image)
    _, grad = loss_and_input_grad(model, image, target_label, "cross_entropy")
    perturbed = _apply_delta(image, -budget.linf_eps * np.sign(grad), budget)
    ex = AdversarialExample(
        original=image,
        perturbed=perturbed,
        true_label=true_label,
        target_label=target_label,
        rounds_used=1,
        success=predict(model, perturbed) == target_label,
    )
    _assert_budget(ex, budget)
    return ex


def ifgsm(
    model: Classifier,
    image: Image,
    target_label: int,
    budget: AttackBudget,
    steps: int = 10,
    step_size: float = LINF_DEFAULT / 4,
    true_label: int | None = None,
) -> AdversarialExample:
    """Iterated signed steps, re-projected onto the eps-ball after each one."""
    if budget.active_norm != "linf":
        raise ValueError("ifgsm requires an l-inf budget")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if true_label is None:
        true_label = predict(model, image)
    x = image
    for _ in range(steps):
        _, grad = loss_and_input_grad(model, x, target_label, "cross_entropy")
        delta = (x.data - step_size * np.sign(grad)) - image.data
        x = _apply_delta(image, delta, budget)
    ex = AdversarialExample(
        original=image,
        perturbed=x,
        true_label=true_label,
        target_label=target_label,
        rounds_used=steps,
        success=predict(model, x) == target_label,
    )
    _assert_budget(ex, budget)
    return ex


def cw(
    model: Classifier,
    image: Image,
    target_label: int,
    budget: AttackBudget,
    steps: int = 100,
    learning_rate: float = 0.1,
    c: float = 1.0,
    true_label: int | None = None,
) -> AdversarialExample:
    """Gradient descent on c*||delta||^2 + margin(target), fixed trade-off c.

    Stops early once the target class is strictly maximal; the final
    perturbation is projected to the l2 budget, so a success flag of True
    means the example still attacks after projection.
    """
    if budget.active_norm != "l2":
        raise ValueError("cw requires an l2 budget")
    if true_label is None:
        true_label = predict(model, image)

    def raw_margin(logits: np.ndarray) -> float:
        # unfloored: negative iff the target is strictly maximal
        others = np.delete(logits, target_label)
        return float(others.max() - logits[target_label])

    x = image
    rounds_used = 0
    if raw_margin(forward(model, x)) < 0.0:
        # already classified as the target with positive margin
        perturbed = x
    else:
        for step in range(steps):
            if raw_margin(forward(model, x)) < 0.0:
                break
            _, grad = loss_and_input_grad(model, x, target_label, "cw_margin")
            delta = x.data - image.data
            grad_total = 2.0 * c * delta + grad
            delta = delta - learning_rate * grad_total
            x = Image(np.clip(image.data + delta, 0.0, 1.0))
            rounds_used = step + 1
        perturbed = _apply_delta(image, x.data - image.data, budget)
    ex = AdversarialExample(
        original=image,
        perturbed=perturbed,
        true_label=true_label,
        target_label=target_label,
        rounds_used=rounds_used,
        success=predict(model, perturbed) == target_label,
    )
    _assert_budget(ex, budget)
    return ex


def bpda(
    model: Classifier,
    defense: DefenseKind,
    image: Image,
    target_label: int,
    budget: AttackBudget,
    rounds: int = 50,
    learning_rate: float = 0.1,
    rng: np.random.Generator | None = None,
    eot_samples: int = 1,
    grad_mode: str = "raw",
    loss_kind: str = "cw_margin",
    true_label: int | None = None,
) -> tuple[AdversarialExample, list[tuple[int, Image]]]:
    """Attack through a defense with identity backward substitution.

    Each round samples a fresh defense application g(x), takes the loss
    gradient at g(x), and applies it as if it were the gradient at x.
    With the identity defense this is plain iterated targeted gradient
    descent. grad_mode "raw" scales the gradient by learning_rate;
    "sign" uses signed steps. The default margin loss keeps gradients
    alive where softmax saturates; "cross_entropy" is available.
    Returns the example plus the candidate image after every round.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if loss_kind not in ("cw_margin", "cross_entropy"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if rng is None and not isinstance(defense, Identity):
        raise ValueError("a randomized defense needs an explicit rng")
    if rng is None:
        rng = np.random.default_rng(0)  # identity defense never draws
    if true_label is None:
        true_label = predict(model, image)
    x = image
    trace: list[tuple[int, Image]] = []
    for rnd in range(1, rounds + 1):
        grad = np.zeros_like(image.data)
        for _ in range(eot_samples):
            defended = defend(x, defense, rng)
            _, g = loss_and_input_grad(model, defended, target_label, loss_kind)
            grad += g
        grad /= eot_samples
        step = np.sign(grad) if grad_mode == "sign" else grad
        delta = (x.data - learning_rate * step) - image.data
        x = _apply_delta(image, delta, budget)
        trace.append((rnd, x))
    final_defended = defend(x, defense, rng)
    ex = AdversarialExample(
        original=image,
        perturbed=x,
        true_label=true_label,
        target_label=target_label,
        rounds_used=rounds,
        success=predict(model, final_defended) == target_label,
    )
    _assert_budget(ex, budget)
    return ex, trace


def run_attack(
    model: Classifier,
    image: Image,
    target_label: int,
    config: AttackConfig,
    defense: DefenseKind | None = None,
    rng: np.random.Generator | None = None,
    true_label: int | None = None,
) -> AdversarialExample:
    """Dispatch one attack per its config; BPDA goes through `defense`."""
    if config.family == "fgsm":
        return fgsm(model, image, target_label, config.budget, true_label=true_label)
    if config.family == "ifgsm":
        return ifgsm(
            model, image, target_label, config.budget, config.steps, config.step_size,
            true_label=true_label,
        )
    if config.family == "cw":
        return cw(
            model, image, target_label, config.budget, config.steps, config.learning_rate,
            true_label=true_label,
        )
    ex, _ = bpda(
        model,
        defense if defense is not None else Identity(),
        image,
        target_label,
        config.budget,
        rounds=config.steps,
        learning_rate=config.learning_rate,
        rng=rng,
        eot_samples=config.eot_samples,
        grad_mode=config.grad_mode,
        loss_kind=config.loss_kind,
        true_label=true_label,
    )
    return ex
