"""Experiment dispatch and on-disk artifacts.

Every run writes into its own output directory:

* ``config.resolved.yaml``: the validated config with all defaults filled in.
* ``metrics_<name>.csv``: ``step,metric,value`` rows (toy pipeline).
* a table CSV for the studies (``spectral_study.csv``, ``perturb_eval.csv``,
  ``mask_overlap.csv``).
* ``summary.json``: final/best numbers plus run metadata. Wall-clock time
  appears only here, so every CSV is a pure function of config and seed.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..analysis import PerturbationSpec, perturbation_eval_toy, spectral_delta_study
from ..exceptions import ConfigError
from ..masking import BudgetSpec, overlap_ratio, resolve_budget, select_mask
from ..optimizer import SparseAdamState
from ..rng import derive_seed
from ..toymodel import fit, init_toynet, make_pretrain_dataset, run_pipeline
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    config_hash,
    dump_config,
    pipeline_config,
    strategy_from,
)

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "LIFT_OUTPUT_ROOT"


@dataclass
class RunOutcome:
    output_dir: Path
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    exit_code: int = 0


def resolve_output_dir(config: ExperimentConfig, override: str | os.PathLike | None = None) -> Path:
    if override is not None:
        return Path(override)
    out = Path(config.output_dir)
    if out.is_absolute():
        return out
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / out if root else out


def _write_table(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run(config: ExperimentConfig, output_dir: str | os.PathLike | None = None) -> RunOutcome:
    out = resolve_output_dir(config, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcome = RunOutcome(out)
    resolved = out / "config.resolved.yaml"
    resolved.write_text(dump_config(config))
    outcome.files.append(resolved)

    started = time.perf_counter()
    handler = _HANDLERS[config.experiment]
    results = handler(config, out, outcome)
    outcome.summary = {
        "experiment": config.experiment,
        "seed": config.seed,
        "config_hash": config_hash(config),
        "wall_clock_seconds": time.perf_counter() - started,
        "results": results,
    }
    summary = out / "summary.json"
    _write_json(summary, outcome.summary)
    outcome.files.append(summary)
    return outcome


def _toy_pipeline(config: ExperimentConfig, out: Path, outcome: RunOutcome) -> dict:
    result = run_pipeline(pipeline_config(config))
    ckpt = Checkpoint()
    ckpt.matrices["pretrained/W"] = result.pretrained.W
    ckpt.matrices["pretrained/a"] = result.pretrained.a

    path = out / "metrics_pretrain.csv"
    path.write_text(result.pretrain.log.to_csv())
    outcome.files.append(path)
    for name, run in result.runs.items():
        path = out / f"metrics_{name}.csv"
        path.write_text(run.log.to_csv())
        outcome.files.append(path)
        ckpt.matrices[f"{name}/W"] = run.net.W
        ckpt.matrices[f"{name}/a"] = run.net.a
        state = run.states[0] if run.states else None
        if isinstance(state, SparseAdamState):
            ckpt.states[f"{name}/W"] = state
            ckpt.masks[f"{name}/W"] = state.mask
        log.info("%s: best val loss %.6g at epoch %d", name, run.best_val_loss, run.best_step)

    path = out / "checkpoint.lift"
    save_checkpoint(path, ckpt)
    outcome.files.append(path)
    return {
        "pretrain": {"best_val_loss": result.pretrain.best_val_loss, "steps": result.pretrain.steps},
        "methods": result.summary(),
    }


def _spectral_study(config: ExperimentConfig, out: Path, outcome: RunOutcome) -> dict:
    sc = config.spectral_study
    budget = BudgetSpec(lora_rank=sc.lora_rank)
    specs = [
        PerturbationSpec(strategy_from(kind, sc.lift_rank or sc.lora_rank), sc.noise_std, budget=budget)
        for kind in sc.strategies
    ]
    rows = spectral_delta_study([tuple(d) for d in sc.dims], specs, sc.trials, config.seed, sc.antithetic)
    table = [row.as_dict() for row in rows]
    path = out / "spectral_study.csv"
    _write_table(path, table)
    outcome.files.append(path)
    return {"rows": table}


def _perturb_eval(config: ExperimentConfig, out: Path, outcome: RunOutcome) -> dict:
    pc = pipeline_config(config)
    pe = config.perturb_eval
    data = make_pretrain_dataset(pc.n_pre, pc.d, derive_seed(pc.seed, "pretrain-data"), pc.val_fraction)
    net = init_toynet(pc.d, pc.h, derive_seed(pc.seed, "init"), pc.activation)
    trained = fit(net, data, pc.pretrain, pc.early_stop, track_spectral=False).net

    budget = BudgetSpec(lora_rank=pe.lora_rank)
    rows = []
    for i in range(pe.seeds):
        noise_seed = derive_seed(config.seed, "perturb-noise", i)
        specs = [
            PerturbationSpec(
                strategy_from(kind, pe.lift_rank or pe.lora_rank, seed=derive_seed(config.seed, "perturb-mask", i)),
                pe.noise_std,
                budget=budget,
                seed=noise_seed,
            )
            for kind in pe.strategies
        ]
        for row in perturbation_eval_toy(trained, data, specs):
            rows.append({"trial": i, **row.as_dict()})
    path = out / "perturb_eval.csv"
    _write_table(path, rows)
    outcome.files.append(path)
    return {"rows": rows}


def mask_overlaps(
    ckpt: Checkpoint,
    reference: str,
    against: list[str],
    rank: int | None,
    k: int | None,
    lora_rank: int | None,
) -> list[dict]:
    """Overlap of the reference strategy's mask with each other strategy's, per checkpoint matrix.

    Matrices the budget would cover entirely are skipped.
    """
    rows = []
    for name, w in ckpt.matrices.items():
        if k is not None:
            if k >= w.size:
                continue
            kk = k
        else:
            kk = resolve_budget(BudgetSpec(lora_rank=lora_rank), *w.shape)
            if kk >= w.size:
                continue
        r = min(rank or lora_rank or 1, min(w.shape))
        ref_mask = select_mask(w, strategy_from(reference, r), kk)
        for other in against:
            mask = select_mask(w, strategy_from(other, r), kk)
            rows.append(
                {"matrix": name, "reference": reference, "other": other, "k": kk, "rank": r,
                 "overlap": overlap_ratio(ref_mask, mask)}
            )
    return rows


def _mask_inspect(config: ExperimentConfig, out: Path, outcome: RunOutcome) -> dict:
    mc = config.mask_inspect
    if mc.checkpoint is None:
        raise ConfigError("mask_inspect.checkpoint: required for a mask-inspect run", key="mask_inspect.checkpoint")
    rows = mask_overlaps(load_checkpoint(mc.checkpoint), mc.reference, mc.against, mc.rank, mc.k, mc.lora_rank)
    path = out / "mask_overlap.csv"
    _write_table(path, rows)
    outcome.files.append(path)
    return {"rows": rows}


def format_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)"
    cols = list(rows[0].keys())
    cells = [[f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


_HANDLERS = {
    "toy-pipeline": _toy_pipeline,
    "spectral-study": _spectral_study,
    "perturb-eval": _perturb_eval,
    "mask-inspect": _mask_inspect,
}
