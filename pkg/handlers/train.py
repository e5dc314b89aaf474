import logging
from pathlib import Path

from dataio.reports import render_table, write_json, write_text
from entities import RunConfig
from handlers.common import load_split, output_dir, with_provenance, write_run_config
from network.model import reference_network
from network.storage import save_network
from network.training import train_toy

logger = logging.getLogger(__name__)


def cmd_train(run: RunConfig) -> dict:
    train_set = load_split(run, "train")
    eval_set = load_split(run, "eval")
    out = output_dir(run)

    net = reference_network(seed=run.train_seed, input_shape=train_set.image_shape, class_count=train_set.class_count)
    trained, report = train_toy(
        net,
        train_set.images,
        train_set.labels,
        run.train_settings(),
        eval_images=eval_set.images,
        eval_labels=eval_set.labels,
    )

    model_path = save_network(trained, Path(run.out) if run.out else out / "model.sfn1")
    payload = with_provenance(run, {"model": str(model_path), "training": report})
    write_json(out / "train_report.json", payload)
    write_run_config(run)

    rows = [(epoch, loss) for epoch, loss in enumerate(report.epoch_losses, start=1)]
    table = render_table(
        f"train accuracy {report.train_accuracy:.4f}, test accuracy {report.test_accuracy:.4f}",
        ["epoch", "mean loss"],
        rows,
    )
    write_text(out / "train_report.txt", table)
    print(table)
    return payload
