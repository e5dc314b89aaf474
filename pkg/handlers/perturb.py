import dataclasses
import logging
from pathlib import Path

import numpy as np

from attack.storage import load_perturbation, save_perturbation
from attack.universal import build_universal
from dataio.images import export_image
from dataio.reports import render_table, write_json, write_text
from entities import RunConfig
from handlers.common import load_model, load_split, output_dir, provenance, require, resolve_workers, with_provenance, write_run_config

logger = logging.getLogger(__name__)

EXPORT_SUFFIX = {"raw": "sfp1", "pgm": "pgm", "ppm": "ppm"}


def _image_ids(run: RunConfig, size: int) -> list[int] | None:
    if run.image_id is None:
        return None
    if run.batch_size != 1:
        raise ValueError(f"--image-id selects a single image and needs --batch 1, got --batch {run.batch_size}")
    if not 0 <= run.image_id < size:
        raise ValueError(f"--image-id {run.image_id} out of range [0, {size})")
    return [run.image_id]


def cmd_perturb(run: RunConfig) -> dict:
    workers = resolve_workers(run)
    train_set = load_split(run, "train")
    net = load_model(require(run.model, "--model", run.command), train_set.image_shape)
    out = output_dir(run)

    spec = run.perturb_spec()
    perturbation, report = build_universal(net, train_set, spec, workers=workers, image_ids=_image_ids(run, len(train_set)))
    perturbation = dataclasses.replace(perturbation, meta=perturbation.meta.model_copy(update={"provenance": provenance(run)}))

    path = save_perturbation(perturbation, Path(run.out) if run.out else out / "perturbation.sfp1")
    payload = with_provenance(run, {"perturbation": str(path), "power": report.summary(), "meta": perturbation.meta})
    write_json(out / "power_report.json", payload)
    export_image(perturbation.epsilon, out / "perturbation.pgm", mode="pgm", transform="minmax", extra={"source": str(path)})
    write_run_config(run)

    table = render_table(
        f"{spec.pair.label()}-singular vector on tap {spec.tap}",
        ["singular value", "iterations", "converged", "norm", "images"],
        [(report.singular_value, report.iterations, report.converged, perturbation.norm, len(perturbation.meta.image_ids))],
    )
    write_text(out / "power_report.txt", table)
    print(table)
    return payload


def cmd_export(run: RunConfig) -> dict:
    source = require(run.perturbation, "--perturbation", run.command)
    perturbation = load_perturbation(source)
    if run.mode not in EXPORT_SUFFIX:
        raise ValueError(f"unknown export mode {run.mode!r}, expected one of {sorted(EXPORT_SUFFIX)}")

    epsilon = perturbation.epsilon
    if run.mode == "ppm" and epsilon.ndim == 3 and epsilon.shape[2] == 1:
        epsilon = np.repeat(epsilon, 3, axis=2)
    path = Path(run.out) if run.out else output_dir(run) / f"{Path(source).stem}.{EXPORT_SUFFIX[run.mode]}"
    sidecar = export_image(
        epsilon,
        path,
        mode=run.mode,
        transform=run.transform,
        extra={"source": str(source), "version": run.version, "norm": perturbation.norm, "p": perturbation.p},
    )
    print(f"exported {path}")
    return sidecar
