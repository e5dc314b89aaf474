import logging

from attack.universal import select_batch
from dataio.reports import render_table, write_csv, write_json, write_text
from entities import RunConfig
from evaluation.sweeps import singular_value_profile, sweep_batch_size, sweep_q, tap_table
from handlers.common import load_model, load_split, output_dir, require, resolve_workers, with_provenance, write_run_config

logger = logging.getLogger(__name__)

SWEEPS = ("q", "batch")
SWEEP_HEADERS = ["value", "fooling_rate", "singular_value", "iterations", "converged", "error"]


def cmd_sweep(run: RunConfig) -> dict:
    if run.sweep not in SWEEPS:
        raise ValueError(f"--sweep must be one of {SWEEPS}, got {run.sweep!r}")
    values = require(run.values, "a non-empty --values grid", run.command)
    workers = resolve_workers(run)
    train_set = load_split(run, "train")
    eval_set = load_split(run, "eval")
    net = load_model(require(run.model, "--model", run.command), train_set.image_shape)
    out = output_dir(run)

    spec = run.perturb_spec()
    if run.sweep == "q":
        report = sweep_q(net, train_set, eval_set, spec, values, workers=workers)
    else:
        if any(v != int(v) for v in values):
            raise ValueError(f"batch sizes must be integers, got {values}")
        report = sweep_batch_size(net, train_set, eval_set, spec, [int(v) for v in values], workers=workers)

    rows = [(p.value, p.fooling_rate, p.singular_value, p.iterations, p.converged, p.error) for p in report.points]
    payload = with_provenance(run, {"sweep": report})
    write_json(out / f"sweep_{run.sweep}.json", payload)
    write_csv(out / f"sweep_{run.sweep}.csv", SWEEP_HEADERS, rows)
    write_run_config(run)

    text = render_table(f"sweep over {report.parameter}", SWEEP_HEADERS, rows)
    write_text(out / f"sweep_{run.sweep}.txt", text)
    print(text)
    return payload


def cmd_profile(run: RunConfig) -> dict:
    workers = resolve_workers(run)
    train_set = load_split(run, "train")
    net = load_model(require(run.model, "--model", run.command), train_set.image_shape)
    out = output_dir(run)

    taps = run.taps or net.layer_names[:-1]
    for name in taps:
        net.tap(name)
    spec = run.perturb_spec()
    ids = select_batch(train_set, spec.batch_size, spec.batch_seed)
    entries = singular_value_profile(net, train_set.subset(ids), taps, spec.pair, spec.power, workers=workers)
    payload = with_provenance(run, {"image_ids": ids, "profile": entries})

    headers = ["tap", "singular value", "iterations", "converged", "error"]
    rows = [(e.tap, e.singular_value, e.iterations, e.converged, e.error) for e in entries]
    text = render_table(f"{spec.pair.label()}-singular values, batch {spec.batch_size}", headers, rows)

    if run.with_fooling:
        eval_set = load_split(run, "eval")
        tap_rows = tap_table(net, train_set, eval_set, spec, taps, workers=workers)
        payload["taps"] = tap_rows
        text += render_table(
            f"singular value vs fooling rate at L = {spec.norm_budget:g}",
            ["tap", "singular value", "fooling rate", "error"],
            [(r.tap, r.singular_value, r.fooling_rate, r.error) for r in tap_rows],
        )

    write_json(out / "profile.json", payload)
    write_csv(out / "profile.csv", headers, rows)
    write_run_config(run)
    write_text(out / "profile.txt", text)
    print(text)
    return payload
