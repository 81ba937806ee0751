"""Shared helpers for the experiment scripts."""

import math
import tempfile
from pathlib import Path

from steerlearn import augment
from steerlearn.cli import GEOMETRY, build_model, make_pipeline, split_samples
from steerlearn.config import parse_config
from steerlearn.synthetic import write_dataset
from steerlearn.train_eval import TrainConfig, evaluate, train


def dataset_root(path: str | None) -> str:
    """The given dataset, or a small synthetic one written to a temporary directory."""
    if path:
        return path
    root = Path(tempfile.mkdtemp(prefix="steerlearn_")) / "data"
    write_dataset(root, videos=3, frames=40, seed=0)
    print(f"no --dataset given; using synthetic roads at {root}")
    return str(root)


def run(settings: dict[str, str], out_dir: Path) -> dict[str, float]:
    """Train one configuration and return its final train, best validation and held-out RMSE.

    Validation figures are NaN when the split holds no samples, e.g. a clip model
    on videos too short to leave a full window in the validation split.
    """
    cfg = parse_config("\n".join(f"{k} = {v}" for k, v in settings.items()))
    tr, va = split_samples(cfg.model, cfg.dataset_root, cfg)
    g = build_model(cfg)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed, precision=cfg.precision,
                       lr=cfg.lr, decay_mode=cfg.decay_mode, timing=cfg.timing)
    if len(va) == 0:
        hist = train(g, tr, tcfg, None, make_pipeline(cfg), out_dir)
        return {"train": hist.train_rmse[-1], "val_best": math.nan, "val_final": math.nan}
    hist = train(g, tr, tcfg, va, make_pipeline(cfg), out_dir)
    view = augment.preset("none", 0, GEOMETRY[cfg.model])
    return {"train": hist.train_rmse[-1], "val_best": min(hist.val_rmse), "val_final": evaluate(g, va, view)}
