import logging
from pathlib import Path

import numpy as np

from attack.storage import load_perturbation
from attack.universal import rescale
from dataio.reports import render_table, write_csv, write_json, write_text
from entities import RunConfig
from evaluation.fooling import cross_model_matrix, fooling_rate, prediction_flips, random_baseline, top_k_vs_norm
from handlers.common import load_model, load_split, output_dir, require, resolve_workers, with_provenance, write_run_config

logger = logging.getLogger(__name__)


def _top_k_csv(out: Path, curve) -> Path:
    headers = ["norm"]
    for rank in range(1, curve.k + 1):
        headers += [f"class_{rank}", f"probability_{rank}"]
    headers.append("total")
    rows = []
    for row in curve.rows:
        cells: list = [row.norm]
        for c, prob in zip(row.classes, row.probabilities):
            cells += [c, prob]
        cells.append(row.total)
        rows.append(cells)
    return write_csv(out / f"topk_image_{curve.image_id}.csv", headers, rows)


def cmd_eval(run: RunConfig) -> dict:
    workers = resolve_workers(run)
    eval_set = load_split(run, "eval")
    net = load_model(require(run.model, "--model", run.command), eval_set.image_shape)
    perturbation = load_perturbation(require(run.perturbation, "--perturbation", run.command))
    out = output_dir(run)

    report = fooling_rate(net, eval_set, perturbation, workers=workers)
    rows: list[tuple] = [("perturbation", report.fooled_count, report.dataset_size, report.fooling_rate)]

    baselines = []
    for seed in range(run.baseline_seeds):
        control = random_baseline(net.input_shape, perturbation.norm, perturbation.p, seed)
        baseline = fooling_rate(net, eval_set, control, workers=workers)
        baselines.append(baseline)
        rows.append((f"random seed {seed}", baseline.fooled_count, baseline.dataset_size, baseline.fooling_rate))
    baseline_mean = float(np.mean([b.fooling_rate for b in baselines])) if baselines else None

    payload = with_provenance(run, {"fooling": report, "baselines": baselines, "baseline_mean": baseline_mean})

    if run.topk_image is not None:
        if not 0 <= run.topk_image < len(eval_set):
            raise ValueError(f"--topk-image {run.topk_image} out of range [0, {len(eval_set)})")
        norms = require(run.norms, "--norms", run.command)
        curve = top_k_vs_norm(net, eval_set.images[run.topk_image], rescale(perturbation, 1.0), norms, run.top_k, run.topk_image)
        payload["top_k"] = curve
        _top_k_csv(out, curve)

    if run.show_images:
        for image_id in run.show_images:
            if not 0 <= image_id < len(eval_set):
                raise ValueError(f"--show-images id {image_id} out of range [0, {len(eval_set)})")
        payload["flips"] = prediction_flips(net, eval_set, perturbation, run.show_images)

    write_json(out / "fooling_report.json", payload)
    write_run_config(run)

    text = render_table(f"fooling rate at ||eps||_p = {perturbation.norm:.6g}", ["source", "fooled", "images", "rate"], rows)
    if baseline_mean is not None:
        text += f"baseline mean: {baseline_mean:.6g}\n"
    if "flips" in payload:
        text += render_table(
            "prediction flips",
            ["image", "clean class", "clean prob", "perturbed class", "perturbed prob"],
            [
                (f.image_id, f.clean_class, f.clean_probability, f.adversarial_class, f.adversarial_probability)
                for f in payload["flips"]
            ],
        )
    write_text(out / "fooling_report.txt", text)
    print(text)
    return payload


def cmd_transfer(run: RunConfig) -> dict:
    workers = resolve_workers(run)
    model_paths = require(run.models, "--models", run.command)
    perturbation_paths = require(run.perturbations, "--perturbations", run.command)
    eval_set = load_split(run, "eval")
    out = output_dir(run)

    nets = [load_model(path, eval_set.image_shape) for path in model_paths]
    perturbations = [load_perturbation(path) for path in perturbation_paths]
    matrix = cross_model_matrix(nets, perturbations, eval_set, model_paths, perturbation_paths, workers=workers)

    payload = with_provenance(run, {"transfer": matrix})
    write_json(out / "transfer.json", payload)
    headers = ["model", *matrix.perturbations]
    rows = [[model, *rates] for model, rates in zip(matrix.models, matrix.rates)]
    write_csv(out / "transfer.csv", headers, rows)
    write_run_config(run)

    text = render_table("fooling rate (model x perturbation)", headers, rows)
    write_text(out / "transfer.txt", text)
    print(text)
    return payload
