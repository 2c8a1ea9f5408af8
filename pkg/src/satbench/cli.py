"""Command-line entry point.

Runs are driven by a flat `key = value` config file (`#` starts a
comment); any flag given as `--set key=value` overrides the file. The
default config path comes from $SATBENCH_CONFIG when -c is omitted.

Subcommands: train, evaluate, sweep, metrics, attack. Every report is
written atomically (temp file, then rename) after all computation has
finished, so failed runs leave no partial outputs. A manifest.json
recording the config hash, master seed, and tool version accompanies
each report; two runs from one manifest produce byte-identical files.

Exit codes: 0 success, 1 internal error, 2 input/config error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

from . import __version__
from .attacks import AttackBudget, AttackConfig, run_attack
from .errors import ConfigError, FormatError, SatbenchError, ShapeError, TrainingError
from .evaluation import (
    EvalConfig,
    SweepGrid,
    curate,
    draw_target,
    eval_attack,
    eval_bpda_rounds,
    eval_clean,
    pareto_subset,
    render_bpda_rounds_csv,
    render_eval_csv,
    render_sweep_csv,
    sweep,
)
from .imagecore import Dataset, load_cifar10, load_image, load_mnist_idx, save_image, synth_dataset
from .metrics import report
from .model import (
    TrainConfig,
    init_classifier,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .rng import DOMAIN_ATTACK, DOMAIN_INIT, substream
from .transform import BitDepth, DefenseKind, Identity, Sat, SatParams

ENV_CONFIG = "SATBENCH_CONFIG"

# key -> (caster, default). Every key a config file may contain.
_SCHEMA: dict[str, tuple] = {
    "dataset_kind": (str, "synth"),
    "dataset_path": (str, ""),
    "dataset_images": (str, ""),
    "dataset_labels": (str, ""),
    "dataset_max_samples": (int, 0),  # 0 = no limit
    "synth_n": (int, 1024),
    "synth_side": (int, 32),
    "synth_channels": (int, 3),
    "synth_classes": (int, 8),
    "checkpoint": (str, ""),
    "train_epochs": (int, 20),
    "train_batch": (int, 32),
    "train_lr": (float, 0.05),
    "train_augment_t": (float, 0.0),
    "train_augment_s": (float, 0.0),
    "train_augment_r": (float, 0.0),
    "train_augment_prob": (float, 0.5),
    "defense": (str, "identity"),
    "sat_t": (float, 0.16),
    "sat_s": (float, 0.16),
    "sat_r": (float, 4.0),
    "bitdepth_bits": (int, 5),
    "attack": (str, "none"),
    "attack_linf_eps": (float, 8.0 / 255.0),
    "attack_l2_eps": (float, 0.05),
    "attack_l2_scale": (str, "eq2"),
    "attack_steps": (int, 10),
    "attack_step_size": (float, (8.0 / 255.0) / 4.0),
    "attack_lr": (float, 0.1),
    "attack_rounds": (int, 50),
    "attack_eot": (int, 1),
    "attack_grad_mode": (str, "raw"),
    "attack_loss": (str, "cw_margin"),
    "eval_samples": (int, 100),
    "eval_repeats": (int, 1),
    "sweep_grid": (str, "coarse"),
    "sweep_acc_floor": (float, 0.95),
    "seed": (int, 0),
    "output_dir": (str, "out"),
    "workers": (int, 1),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; unknown keys are rejected."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        raw[key] = value
    return raw


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    raw: dict[str, str] = {}
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        raw[key] = value
    values = {}
    for key, (caster, default) in _SCHEMA.items():
        if key in raw:
            try:
                values[key] = caster(raw[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            values[key] = default
    return RunConfig(values)


def config_hash(config: RunConfig) -> str:
    """Hash over the resolved configuration, excluding the output location."""
    lines = [
        f"{key} = {config.values[key]!r}"
        for key in sorted(_SCHEMA)
        if key != "output_dir"
    ]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _atomic_write(path: str, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(config: RunConfig, command: str) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "version": __version__,
    }
    path = os.path.join(config.output_dir, "manifest.json")
    _atomic_write(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# builders


def build_dataset(config: RunConfig) -> Dataset:
    cap = config.dataset_max_samples or None
    kind = config.dataset_kind
    if kind == "synth":
        return synth_dataset(
            seed=config.seed,
            n=config.synth_n,
            side=config.synth_side,
            channels=config.synth_channels,
            num_classes=config.synth_classes,
        )
    if kind == "cifar10":
        if not config.dataset_path:
            raise ConfigError("dataset_kind=cifar10 requires dataset_path")
        if not os.path.isfile(config.dataset_path):
            raise ConfigError(f"dataset file not found: {config.dataset_path}")
        return load_cifar10(config.dataset_path, cap)
    if kind == "mnist":
        for key in ("dataset_images", "dataset_labels"):
            if not config.values[key]:
                raise ConfigError(f"dataset_kind=mnist requires {key}")
            if not os.path.isfile(config.values[key]):
                raise ConfigError(f"dataset file not found: {config.values[key]}")
        return load_mnist_idx(config.dataset_images, config.dataset_labels, cap)
    raise ConfigError(f"unknown dataset_kind {kind!r}")


def build_defense(config: RunConfig) -> DefenseKind:
    kind = config.defense
    try:
        if kind == "identity":
            return Identity()
        if kind == "sat":
            return Sat(SatParams(t=config.sat_t, s=config.sat_s, r=config.sat_r))
        if kind == "bitdepth":
            return BitDepth(bits=config.bitdepth_bits)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown defense {kind!r}")


def build_attacks(config: RunConfig) -> list[AttackConfig]:
    families = [f.strip() for f in config.attack.split(",") if f.strip()]
    if families == ["none"] or not families:
        return []
    configs = []
    for family in families:
        if family == "none":
            raise ConfigError("'none' cannot be combined with attack families")
        try:
            if family in ("fgsm", "ifgsm"):
                budget = AttackBudget(
                    linf_eps=config.attack_linf_eps, active_norm="linf"
                )
                configs.append(
                    AttackConfig(
                        family=family,
                        budget=budget,
                        steps=1 if family == "fgsm" else config.attack_steps,
                        step_size=config.attack_step_size,
                    )
                )
            elif family == "cw":
                budget = AttackBudget(
                    l2_eps=config.attack_l2_eps,
                    active_norm="l2",
                    l2_scale=config.attack_l2_scale,
                )
                configs.append(
                    AttackConfig(
                        family="cw",
                        budget=budget,
                        steps=config.attack_steps,
                        learning_rate=config.attack_lr,
                    )
                )
            elif family == "bpda":
                budget = AttackBudget(
                    linf_eps=config.attack_linf_eps, active_norm="linf"
                )
                configs.append(
                    AttackConfig(
                        family="bpda",
                        budget=budget,
                        steps=config.attack_rounds,
                        learning_rate=config.attack_lr,
                        eot_samples=config.attack_eot,
                        grad_mode=config.attack_grad_mode,
                        loss_kind=config.attack_loss,
                    )
                )
            else:
                raise ConfigError(f"unknown attack family {family!r}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if sum(1 for c in configs if c.family == "bpda") > 1:
        raise ConfigError("at most one bpda attack per run")
    return configs


def _augment_params(config: RunConfig) -> SatParams | None:
    t, s, r = config.train_augment_t, config.train_augment_s, config.train_augment_r
    if t == 0.0 and s == 0.0 and r == 0.0:
        return None
    return SatParams(t=t, s=s, r=r)


def _checkpoint_path(config: RunConfig) -> str:
    return config.checkpoint or os.path.join(config.output_dir, "model.ckpt")


def _require_checkpoint(config: RunConfig) -> str:
    path = _checkpoint_path(config)
    if not os.path.isfile(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(config: RunConfig) -> int:
    dataset = build_dataset(config)
    shape = dataset.image_shape
    model = init_classifier(
        shape[0], shape[1], shape[2], dataset.num_classes, substream(config.seed, DOMAIN_INIT)
    )
    train_config = TrainConfig(
        epochs=config.train_epochs,
        batch_size=config.train_batch,
        learning_rate=config.train_lr,
        seed=config.seed,
        augment=_augment_params(config),
        augment_prob=config.train_augment_prob,
    )
    history = train(model, dataset, train_config)
    for stats in history:
        print(f"epoch {stats.epoch} loss {stats.loss:.6f} acc {stats.accuracy:.4f}")
    os.makedirs(config.output_dir, exist_ok=True)
    save_checkpoint(model, _checkpoint_path(config))
    log_lines = ["epoch,loss,acc"] + [
        f"{s.epoch},{s.loss:.10g},{s.accuracy:.10g}" for s in history
    ]
    _atomic_write(os.path.join(config.output_dir, "train_log.csv"), "\n".join(log_lines) + "\n")
    _write_manifest(config, "train")
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    model = load_checkpoint(_require_checkpoint(config))
    dataset = build_dataset(config)
    eval_config = EvalConfig(
        samples=config.eval_samples, repeats=config.eval_repeats, seed=config.seed
    )
    curated = curate(model, dataset, eval_config.samples, config.seed)
    defense = build_defense(config)
    attack_configs = build_attacks(config)

    records = []
    bpda_record = None
    if not attack_configs:
        records.append(eval_clean(model, curated, defense, eval_config))
    for attack_config in attack_configs:
        if attack_config.family == "bpda":
            rec = eval_bpda_rounds(model, curated, defense, attack_config, eval_config)
            bpda_record = rec
        else:
            rec = eval_attack(model, curated, defense, attack_config, eval_config)
        records.append(rec)

    os.makedirs(config.output_dir, exist_ok=True)
    _atomic_write(os.path.join(config.output_dir, "eval.csv"), render_eval_csv(records))
    if bpda_record is not None:
        _atomic_write(
            os.path.join(config.output_dir, "bpda_rounds.csv"),
            render_bpda_rounds_csv(bpda_record),
        )
    _write_manifest(config, "evaluate")
    return 0


def cmd_sweep(config: RunConfig, full_grid: bool = False) -> int:
    model = load_checkpoint(_require_checkpoint(config))
    dataset = build_dataset(config)
    eval_config = EvalConfig(samples=config.eval_samples, seed=config.seed)
    curated = curate(model, dataset, eval_config.samples, config.seed)
    grid_name = "full" if full_grid else config.sweep_grid
    if grid_name == "full":
        grid = SweepGrid.full()
    elif grid_name == "coarse":
        grid = SweepGrid.coarse()
    else:
        raise ConfigError(f"unknown sweep_grid {grid_name!r}")
    cells = sweep(model, curated, grid, eval_config, workers=config.workers)
    kept = pareto_subset(cells, config.sweep_acc_floor)
    os.makedirs(config.output_dir, exist_ok=True)
    _atomic_write(os.path.join(config.output_dir, "sweep.csv"), render_sweep_csv(cells))
    _atomic_write(os.path.join(config.output_dir, "pareto.csv"), render_sweep_csv(kept))
    _write_manifest(config, "sweep")
    return 0


def cmd_metrics(path_a: str, path_b: str) -> int:
    for path in (path_a, path_b):
        if not os.path.isfile(path):
            raise ConfigError(f"image file not found: {path}")
    a = load_image(path_a)
    b = load_image(path_b)
    if not a.same_shape(b):
        raise ShapeError(
            f"image dimensions differ: {a.data.shape} vs {b.data.shape}"
        )
    rep = report(a, b)
    print(f"l2 {rep.l2:.6f}")
    print(f"ssim {rep.ssim:.6f}")
    print(f"psnr {rep.psnr:.6f}" if math.isfinite(rep.psnr) else "psnr inf")
    print(f"mse {rep.mse:.6f}")
    return 0


def cmd_attack(config: RunConfig) -> int:
    model = load_checkpoint(_require_checkpoint(config))
    dataset = build_dataset(config)
    eval_config = EvalConfig(samples=config.eval_samples, seed=config.seed)
    curated = curate(model, dataset, eval_config.samples, config.seed)
    attack_configs = build_attacks(config)
    if len(attack_configs) != 1:
        raise ConfigError("the attack command needs exactly one attack family")
    attack_config = attack_configs[0]
    defense = build_defense(config)

    examples = []
    for i, sample in enumerate(curated):
        target = draw_target(model.num_classes, sample.label, config.seed, i)
        rng = substream(config.seed, DOMAIN_ATTACK, i)
        ex = run_attack(
            model,
            sample.image,
            target,
            attack_config,
            defense=defense if attack_config.family == "bpda" else None,
            rng=rng,
            true_label=sample.label,
        )
        examples.append(ex)

    os.makedirs(config.output_dir, exist_ok=True)
    index_lines = ["sample,true_label,target_label,success,file"]
    for i, ex in enumerate(examples):
        name = f"ae_{i:05d}.img"
        save_image(ex.perturbed, os.path.join(config.output_dir, name))
        index_lines.append(
            f"{i},{ex.true_label},{ex.target_label},{int(ex.success)},{name}"
        )
    _atomic_write(
        os.path.join(config.output_dir, "index.csv"), "\n".join(index_lines) + "\n"
    )
    _write_manifest(config, "attack")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-c",
        "--config",
        default=os.environ.get(ENV_CONFIG),
        help=f"config file path (default: ${ENV_CONFIG})",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satbench",
        description="Adversarial-robustness workbench: affine-transform defense, attacks, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the classifier and write a checkpoint")
    _add_config_args(p_train)

    p_eval = sub.add_parser("evaluate", help="ACC/ASR evaluation (eval.csv, bpda_rounds.csv)")
    _add_config_args(p_eval)

    p_sweep = sub.add_parser("sweep", help="coefficient grid sweep (sweep.csv, pareto.csv)")
    _add_config_args(p_sweep)
    p_sweep.add_argument(
        "--full-grid", action="store_true", help="use the 11x11x11 grid instead of 5x5x5"
    )

    p_metrics = sub.add_parser("metrics", help="print distortion metrics for an image pair")
    p_metrics.add_argument("image_a")
    p_metrics.add_argument("image_b")

    p_attack = sub.add_parser("attack", help="emit adversarial examples as raw image files")
    _add_config_args(p_attack)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "metrics":
            return cmd_metrics(args.image_a, args.image_b)
        config = load_config(args.config, args.overrides)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "sweep":
            return cmd_sweep(config, full_grid=args.full_grid)
        if args.command == "attack":
            return cmd_attack(config)
        raise RuntimeError(f"unhandled command {args.command}")
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FormatError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SatbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
