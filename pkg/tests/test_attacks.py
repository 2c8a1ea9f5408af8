import numpy as np
import pytest

from satbench import (
    AttackBudget,
    AttackConfig,
    Identity,
    Image,
    Sat,
    SatParams,
    bpda,
    cw,
    fgsm,
    ifgsm,
    init_classifier,
    predict,
)
from satbench.attacks import budget_norm, l2_metric_norm, run_attack
from satbench.model import forward, loss_and_input_grad
from satbench.rng import substream

LINF = AttackBudget(linf_eps=0.03, active_norm="linf")
L2 = AttackBudget(l2_eps=0.05, active_norm="l2")


def toy_model(seed=0, h=8, w=8, c=3, k=4):
    m = init_classifier(h, w, c, k, substream(seed, 1))
    rng = np.random.default_rng(seed + 1)
    m.conv1_b = rng.uniform(0.05, 0.3, 8).astype(np.float32)
    m.conv2_b = rng.uniform(0.05, 0.3, 16).astype(np.float32)
    return m


def toy_image(seed=3, h=8, w=8, c=3):
    return Image(np.random.default_rng(seed).uniform(0.1, 0.9, (h, w, c)))


def pick_target(model, image, offset=1):
    return (predict(model, image) + offset) % model.num_classes


class TestBudgetTypes:
    def test_invalid_norms_rejected(self):
        with pytest.raises(ValueError):
            AttackBudget(active_norm="l1")
        with pytest.raises(ValueError):
            AttackBudget(linf_eps=0.0, active_norm="linf")
        with pytest.raises(ValueError):
            AttackBudget(l2_scale="other")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(family="unknown", budget=LINF)
        with pytest.raises(ValueError):
            AttackConfig(family="fgsm", budget=LINF, steps=3)
        with pytest.raises(ValueError):
            AttackConfig(family="ifgsm", budget=LINF, steps=0)

    def test_l2_norm_conventions(self):
        delta = np.full((2, 2, 3), 0.1)
        # eq2: 255 * sqrt(12 * 0.01) / 12
        assert l2_metric_norm(delta) == pytest.approx(255 * np.sqrt(0.12) / 12)
        rms = budget_norm(delta, AttackBudget(active_norm="l2", l2_scale="rms"))
        assert rms == pytest.approx(0.1)


class TestFgsm:
    def test_requires_linf(self):
        with pytest.raises(ValueError):
            fgsm(toy_model(), toy_image(), 1, L2)

    def test_zero_eps_rejected_by_budget(self):
        with pytest.raises(ValueError):
            AttackBudget(linf_eps=0.0)

    def test_sign_structure(self):
        m = toy_model()
        img = Image(np.random.default_rng(0).uniform(0.2, 0.8, (8, 8, 3)))
        target = pick_target(m, img)
        ex = fgsm(m, img, target, LINF)
        delta = ex.perturbed.data - img.data
        # away from the clip boundary every step is exactly 0 or +-eps
        steps = np.unique(np.round(np.abs(delta), 12))
        assert set(steps).issubset({0.0, round(LINF.linf_eps, 12)})

    def test_direction_matches_finite_difference_sign(self):
        m = toy_model()
        img = toy_image()
        target = pick_target(m, img)
        _, grad = loss_and_input_grad(m, img, target, "cross_entropy")
        iy, ix, ic = np.unravel_index(np.abs(grad).argmax(), grad.shape)
        h = 1e-4
        up = img.data.copy()
        up[iy, ix, ic] += h
        dn = img.data.copy()
        dn[iy, ix, ic] -= h
        from satbench.model import cross_entropy

        fd = (
            cross_entropy(forward(m, Image(up)), target)
            - cross_entropy(forward(m, Image(dn)), target)
        ) / (2 * h)
        # attack moves against the loss gradient
        ex = fgsm(m, img, target, LINF)
        moved = ex.perturbed.data[iy, ix, ic] - img.data[iy, ix, ic]
        assert np.sign(moved) == -np.sign(fd)

    def test_target_must_differ(self):
        m = toy_model()
        img = toy_image()
        true = predict(m, img)
        with pytest.raises(ValueError):
            fgsm(m, img, true, LINF)


class TestIfgsm:
    def test_single_full_step_equals_fgsm(self):
        m = toy_model()
        img = toy_image()
        target = pick_target(m, img)
        a = fgsm(m, img, target, LINF)
        b = ifgsm(m, img, target, LINF, steps=1, step_size=LINF.linf_eps)
        assert np.array_equal(a.perturbed.data, b.perturbed.data)

    def test_projection_keeps_linf_bound(self):
        m = toy_model()
        img = toy_image()
        target = pick_target(m, img)
        ex = ifgsm(m, img, target, LINF, steps=25, step_size=0.02)
        delta = np.abs(ex.perturbed.data - img.data)
        assert delta.max() <= LINF.linf_eps + 1e-12

    def test_rounds_recorded(self):
        m = toy_model()
        img = toy_image()
        ex = ifgsm(m, img, pick_target(m, img), LINF, steps=7, step_size=0.01)
        assert ex.rounds_used == 7


class TestCw:
    def test_requires_l2(self):
        with pytest.raises(ValueError):
            cw(toy_model(), toy_image(), 1, LINF)

    def test_already_target_is_zero_step(self):
        # a misclassified sample whose prediction happens to equal the target
        m = toy_model()
        img = toy_image()
        predicted = predict(m, img)
        dataset_label = (predicted + 1) % m.num_classes
        ex = cw(m, img, predicted, L2, true_label=dataset_label)
        assert ex.rounds_used == 0
        assert np.array_equal(ex.perturbed.data, img.data)
        assert ex.success

    def test_budget_respected(self):
        m = toy_model()
        img = toy_image()
        ex = cw(m, img, pick_target(m, img), L2, steps=50)
        delta = ex.perturbed.data - img.data
        assert l2_metric_norm(delta) <= L2.l2_eps * (1 + 1e-9)


class TestBpda:
    def test_zero_rounds_rejected(self):
        with pytest.raises(ValueError):
            bpda(toy_model(), Identity(), toy_image(), 1, LINF, rounds=0)

    @pytest.mark.parametrize("grad_mode", ["raw", "sign"])
    @pytest.mark.parametrize("loss_kind", ["cw_margin", "cross_entropy"])
    def test_identity_defense_equals_plain_iteration(self, grad_mode, loss_kind):
        # with g = id the BPDA gradient is the true gradient, so the attack
        # reduces to iterated targeted gradient descent with projection
        m = toy_model()
        img = toy_image()
        target = pick_target(m, img)
        ex, trace = bpda(
            m, Identity(), img, target, LINF, rounds=5, learning_rate=0.01,
            rng=substream(0, 0), grad_mode=grad_mode, loss_kind=loss_kind,
        )
        x = img
        for _ in range(5):
            _, g = loss_and_input_grad(m, x, target, loss_kind)
            step = np.sign(g) if grad_mode == "sign" else g
            delta = np.clip((x.data - 0.01 * step) - img.data, -0.03, 0.03)
            x = Image(np.clip(img.data + delta, 0, 1))
        assert np.array_equal(ex.perturbed.data, x.data)
        assert len(trace) == 5
        assert [r for r, _ in trace] == [1, 2, 3, 4, 5]

    def test_randomized_defense_requires_rng(self):
        with pytest.raises(ValueError):
            bpda(toy_model(), Sat(SatParams(0.1, 0.1, 5)), toy_image(), 1, LINF, rounds=2)

    def test_deterministic_given_stream(self):
        m = toy_model()
        img = toy_image()
        target = pick_target(m, img)
        kind = Sat(SatParams(0.2, 0.2, 10))
        a, _ = bpda(m, kind, img, target, LINF, rounds=4, rng=substream(3, 1))
        b, _ = bpda(m, kind, img, target, LINF, rounds=4, rng=substream(3, 1))
        assert np.array_equal(a.perturbed.data, b.perturbed.data)


class TestBudgetSoundness:
    @pytest.mark.parametrize("family", ["fgsm", "ifgsm", "cw", "bpda"])
    def test_many_random_invocations_stay_inside_budget(self, family):
        # 50 random invocations per family here; the acceptance suite scales
        # this property to 1000 total
        rng = np.random.default_rng(99)
        m = toy_model(seed=1)
        for trial in range(50):
            img = Image(rng.uniform(0, 1, (8, 8, 3)))
            true = predict(m, img)
            target = (true + 1 + int(rng.integers(m.num_classes - 1))) % m.num_classes
            if target == true:
                target = (true + 1) % m.num_classes
            if family == "cw":
                budget = AttackBudget(
                    l2_eps=float(rng.uniform(0.005, 0.1)), active_norm="l2"
                )
                config = AttackConfig(family="cw", budget=budget, steps=8)
            else:
                budget = AttackBudget(
                    linf_eps=float(rng.uniform(0.005, 0.1)), active_norm="linf"
                )
                config = AttackConfig(
                    family=family,
                    budget=budget,
                    steps=1 if family == "fgsm" else 5,
                    step_size=float(rng.uniform(0.002, 0.05)),
                )
            ex = run_attack(
                m,
                img,
                target,
                config,
                defense=Sat(SatParams(0.1, 0.1, 5)) if family == "bpda" else None,
                rng=substream(1000, trial),
            )
            delta = ex.perturbed.data - img.data
            assert budget_norm(delta, budget) <= budget.eps * (1 + 1e-9)
            assert np.all((ex.perturbed.data >= 0) & (ex.perturbed.data <= 1))
            assert ex.target_label != ex.true_label
