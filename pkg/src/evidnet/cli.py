"""Command-line entry point: gen, train, eval and ood subcommands.

Every command resolves its configuration from built-in defaults, an
optional ``key = value`` config file, and command-line flags (flags
win), then echoes the fully resolved configuration into the output
directory as ``resolved_config.txt``.  Exit codes: 0 success, 2 argument
error, 3 data error, 4 numerical/divergence error.
"""

from __future__ import annotations

import os
import sys

import click
import numpy as np

from . import metrics as met
from . import synthetic
from .convnet import load_checkpoint, save_checkpoint
from .estimator import EvidentialCNNClassifier
from .evidential import belief, evidence_from_logits
from .exceptions import (
    ArgumentError,
    CalibrationDegenerateError,
    CheckpointError,
    DataError,
    DimensionError,
    EvidnetError,
    TrainingDivergedError,
)
from .convnet import grad_cam_batch
from .fileio import fmt, write_csv, write_text_atomic
from .ood import (
    MIN_CALIBRATION_IMAGES,
    OcclusionSpec,
    calibrate_from_scores,
    ood_scores,
    report_from_scores,
)

RULE_FLAGS = {"at_sens0.5": met.AT_SENSITIVITY, "youden": met.YOUDEN}


# ----------------------------------------------------------------------
# config resolution
# ----------------------------------------------------------------------


def _parse_value(raw, like):
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ArgumentError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def read_config_file(path, defaults):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ArgumentError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in defaults:
                raise ArgumentError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(raw, defaults[key])
            except ValueError as exc:
                raise ArgumentError(f"{path}:{lineno}: {exc}") from exc
    return values


def resolve_config(defaults, config_path, flags):
    resolved = dict(defaults)
    if config_path:
        resolved.update(read_config_file(config_path, defaults))
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def write_resolved(out_dir, command, resolved):
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        lines.append(f"{key} = {fmt(resolved[key])}")
    write_text_atomic(os.path.join(out_dir, "resolved_config.txt"), "\n".join(lines) + "\n")


def _prepare_out_dir(out_dir, force=True):
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ArgumentError(
            f"output directory {out_dir!r} is not empty (use --force to overwrite)"
        )
    os.makedirs(out_dir, exist_ok=True)


def _load_images(data_dir):
    samples = synthetic.read_dataset(data_dir)
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples])
    names = [s.filename for s in samples]
    return images, labels, names


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


@click.group()
def cli():
    """Evidential CNN screening toolkit."""


@cli.command("gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--n", type=int, default=None)
@click.option("--balance", type=float, default=None)
@click.option("--size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--force", is_flag=True, default=False)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_gen(out, n, balance, size, seed, force, config_path):
    """Write a synthetic dataset (P6 images plus manifest.csv)."""
    defaults = {"n": 2000, "balance": 0.5, "size": 64, "seed": 0}
    resolved = resolve_config(
        defaults, config_path, {"n": n, "balance": balance, "size": size, "seed": seed}
    )
    _prepare_out_dir(out, force=force)
    samples = synthetic.generate(
        resolved["n"], resolved["balance"], resolved["seed"], resolved["size"]
    )
    synthetic.write_dataset(samples, out)
    write_resolved(out, "gen", resolved)
    n_pos = sum(s.label for s in samples)
    click.echo(f"wrote {len(samples)} samples ({n_pos} referable, {len(samples) - n_pos} not)")


TRAIN_DEFAULTS = {
    "epochs": 12,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "optimizer": "adam",
    "anneal_step": 10,
    "alpha_max": 201.0,
    "augment": True,
    "validation_fraction": 0.2,
    "checkpoint_every": 0,
    "dense_width": 64,
    "conv_filters": "16,32,64",
    "seed": 0,
}


@cli.command("train")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", "batch_size", type=int, default=None)
@click.option("--learning-rate", "learning_rate", type=float, default=None)
@click.option("--optimizer", type=str, default=None)
@click.option("--anneal-step", "anneal_step", type=int, default=None)
@click.option("--alpha-max", "alpha_max", type=float, default=None)
@click.option("--augment/--no-augment", "augment", default=None)
@click.option("--validation-fraction", "validation_fraction", type=float, default=None)
@click.option("--checkpoint-every", "checkpoint_every", type=int, default=None)
@click.option("--dense-width", "dense_width", type=int, default=None)
@click.option("--conv-filters", "conv_filters", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_train(data, out, config_path, **flags):
    """Train on a dataset directory; writes checkpoint.edlc and train_log.csv."""
    resolved = resolve_config(TRAIN_DEFAULTS, config_path, flags)
    os.makedirs(out, exist_ok=True)
    images, labels, _ = _load_images(data)
    try:
        filters = tuple(int(v) for v in str(resolved["conv_filters"]).split(","))
    except ValueError as exc:
        raise ArgumentError(f"bad conv_filters value {resolved['conv_filters']!r}") from exc
    clf = EvidentialCNNClassifier(
        input_size=images.shape[2],
        conv_filters=filters,
        dense_width=resolved["dense_width"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        learning_rate=resolved["learning_rate"],
        optimizer=resolved["optimizer"],
        anneal_step=resolved["anneal_step"],
        alpha_max=resolved["alpha_max"],
        augment=resolved["augment"],
        validation_fraction=resolved["validation_fraction"],
        checkpoint_every=resolved["checkpoint_every"],
        seed=resolved["seed"],
    )
    clf.fit(images, labels, checkpoint_dir=out)
    save_checkpoint(clf.model_, os.path.join(out, "checkpoint.edlc"))
    write_text_atomic(os.path.join(out, "train_log.csv"), clf.train_log_.to_csv_text())
    write_resolved(out, "train", resolved)
    if clf.train_log_.rows:
        last = clf.train_log_.rows[-1]
        click.echo(
            f"trained {resolved['epochs']} epochs; final val AUC {last['val_auc']:.4f}"
        )
    else:
        click.echo("trained 0 epochs; checkpoint equals initialization")


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_eval(model_path, data, out, config_path):
    """Evaluate referable-glaucoma screening metrics on a dataset."""
    resolved = resolve_config({}, config_path, {})
    os.makedirs(out, exist_ok=True)
    model = load_checkpoint(model_path)
    images, labels, names = _load_images(data)
    bel = belief(evidence_from_logits(model.forward(images)))
    scores = bel.p_hat[:, 1]
    analysis = met.roc(scores[labels == 1], scores[labels == 0])
    rows = [
        ("pAUC", met.partial_auc(analysis)),
        ("TPR@95", met.tpr_at_specificity(analysis)),
        ("AUC", analysis.auc),
        ("mean_u", float(bel.uncertainty.mean())),
    ]
    write_csv(os.path.join(out, "metrics.csv"), ("metric", "value"), rows)
    write_csv(
        os.path.join(out, "predictions.csv"),
        ("filename", "p_referable", "u"),
        [
            (names[i], float(scores[i]), float(bel.uncertainty[i]))
            for i in range(len(names))
        ],
    )
    write_resolved(out, "eval", resolved)
    click.echo("; ".join(f"{k}={fmt(float(v))}" for k, v in rows))


@cli.command("ood")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--rule", type=str, default=None)
@click.option("--cam-threshold", "cam_threshold", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_ood(model_path, data, out, rule, cam_threshold, config_path):
    """Calibrate the ungradability threshold and report the OOD metrics."""
    defaults = {"rule": "at_sens0.5", "cam_threshold": 0.5}
    resolved = resolve_config(
        defaults, config_path, {"rule": rule, "cam_threshold": cam_threshold}
    )
    if resolved["rule"] not in RULE_FLAGS:
        raise ArgumentError(
            f"rule must be one of {sorted(RULE_FLAGS)}, got {resolved['rule']!r}"
        )
    spec = OcclusionSpec(threshold=resolved["cam_threshold"])
    os.makedirs(out, exist_ok=True)
    model = load_checkpoint(model_path)
    images, _, names = _load_images(data)
    if images.shape[0] < MIN_CALIBRATION_IMAGES:
        raise ArgumentError(
            f"calibration needs >= {MIN_CALIBRATION_IMAGES} images, got {images.shape[0]}"
        )
    saliency = grad_cam_batch(model, images)
    u_id, u_occ, u_flip = ood_scores(model, images, spec=spec, saliency=saliency)
    cal = calibrate_from_scores(u_id, u_occ, rule=RULE_FLAGS[resolved["rule"]])
    report = report_from_scores(u_id, u_occ, u_flip, cal.u_star)

    write_csv(
        os.path.join(out, "roc_points.csv"),
        ("threshold", "tpr", "fpr"),
        [(p.threshold, p.sensitivity, p.fpr) for p in cal.roc.points],
    )
    write_csv(
        os.path.join(out, "uncertainty_histogram.csv"),
        ("bin_lo", "bin_hi", "count_id", "count_ood"),
        [(row[0], row[1], int(row[2]), int(row[3])) for row in report.histogram],
    )
    grad_rows = [
        (names[i], float(report.u_id[i]), int(report.u_id[i] > report.u_star))
        for i in range(len(names))
    ] + [
        (f"{names[i]}#occluded", float(report.u_occluded[i]), int(report.u_occluded[i] > report.u_star))
        for i in range(len(names))
    ]
    write_csv(os.path.join(out, "gradability.csv"), ("filename", "u", "ungradable"), grad_rows)
    summary = [
        ("gAUC_occluded", report.g_auc_occluded),
        ("gAUC_flipped", report.g_auc_flipped),
        ("kappa", report.kappa),
        ("u_star", report.u_star),
        ("rule", resolved["rule"]),
        ("threshold_at_sens0.5", cal.point_at_sensitivity.threshold),
        ("sens_at_sens0.5", cal.point_at_sensitivity.sensitivity),
        ("spec_at_sens0.5", cal.point_at_sensitivity.specificity),
        ("threshold_youden", cal.point_youden.threshold),
        ("sens_youden", cal.point_youden.sensitivity),
        ("spec_youden", cal.point_youden.specificity),
        ("median_u_id", float(np.median(report.u_id))),
        ("median_u_ood", float(np.median(report.u_occluded))),
    ]
    write_csv(os.path.join(out, "ood_summary.csv"), ("key", "value"), summary)
    write_resolved(out, "ood", resolved)
    click.echo(
        f"gAUC_occluded={report.g_auc_occluded:.4f} "
        f"gAUC_flipped={report.g_auc_flipped:.4f} kappa={report.kappa:.4f} "
        f"u_star={report.u_star:.4f}"
    )


# ----------------------------------------------------------------------
# entry point with exit-code mapping
# ----------------------------------------------------------------------


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except (ArgumentError, DimensionError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (DataError, CheckpointError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except (TrainingDivergedError, CalibrationDegenerateError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(4)
    except EvidnetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
