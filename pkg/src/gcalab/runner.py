"""Experiment orchestration: single runs, sweeps, scaling curves, analysis.

Results layout under a run's output directory:

    cells/<config_id>/seed<k>.json   one cell per config x seed, atomic rename
    checkpoints/<config_id>-seed<k>.ckpt
    results.csv                      roll-up of all successful cells
    aggregates.csv                   per-config mean/sd over seeds

A cell file embeds the fully resolved model/data/training configuration, so
any recorded run can be reproduced bit for bit from the file alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import os
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backbone import DualDomainModel, ModelConfig, build, count_parameters
from .checkpoint import save_checkpoint
from .data import (
    DOMAIN_A,
    DOMAIN_B,
    SplitDataset,
    SynthSpec,
    build_inputs,
    generate_synthetic,
    load_log,
    sample_negatives,
    split_leave_one_out,
    stage_targets,
)
from .errors import (
    ConfigError,
    ContractError,
    GcalabError,
    InfeasibleMatchError,
    UndefinedCorrelationError,
)
from .gca import GcaConfig, GcaProbe
from .metrics import (
    METRIC_FIELDS,
    RECORD_COLUMNS,
    AggregateSummary,
    MetricsRecord,
    aggregate_over_seeds,
    auc,
    five_number_summary,
    ndcg_at_k,
    pearson_r,
)
from .optim import Adam
from .rng import derive_rng
from .svg import box_svg, scatter_svg, write_svg

OUTPUT_ROOT_ENV = "GCALAB_OUT"
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
EVAL_CHUNK = 256


def default_output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


@dataclass
class TrainingParams:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    negatives_per_pos: int = 1
    eval_negatives: int = 99
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.negatives_per_pos < 1:
            raise ConfigError(f"negatives_per_pos must be >= 1, got {self.negatives_per_pos}")
        if self.eval_negatives < 1:
            raise ConfigError(f"eval_negatives must be >= 1, got {self.eval_negatives}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass
class RunSpec:
    """One experiment: a model family, a data source, a training recipe, seeds.

    ``model`` stays a plain mapping (without vocabulary sizes) until a dataset
    is loaded; vocabularies come from the data unless explicitly overridden.
    """

    model: dict
    data: SynthSpec | str
    training: TrainingParams = field(default_factory=TrainingParams)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    output_dir: str = ""

    def __post_init__(self):
        if isinstance(self.training, dict):
            self.training = TrainingParams(**self.training)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if not self.output_dir:
            self.output_dir = default_output_root()

    @classmethod
    def from_dict(cls, payload: dict) -> "RunSpec":
        if "data" not in payload or "model" not in payload:
            raise ConfigError("run spec needs 'data' and 'model' sections")
        data = payload["data"]
        if isinstance(data, str):
            source: SynthSpec | str = data
        elif isinstance(data, dict) and "path" in data:
            source = str(data["path"])
        elif isinstance(data, dict):
            source = SynthSpec(
                users=data["users"],
                items_per_domain=data["items_per_domain"],
                cross_corr=data["cross_corr"],
                seq_len_range=tuple(data["seq_len_range"]),
                seed=data.get("seed", 0),
            )
        else:
            raise ConfigError(f"unsupported data section: {data!r}")
        return cls(
            model=dict(payload["model"]),
            data=source,
            training=TrainingParams(**payload.get("training", {})),
            seeds=tuple(payload.get("seeds", DEFAULT_SEEDS)),
            output_dir=str(payload.get("output_dir", "")),
        )

    def to_dict(self) -> dict:
        data = (
            {"path": self.data}
            if isinstance(self.data, str)
            else dataclasses.asdict(self.data)
        )
        return {
            "model": _jsonable(self.model),
            "data": _jsonable(data),
            "training": dataclasses.asdict(self.training),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


@dataclass
class SweepSpec:
    """A Cartesian grid of config edits over a base run."""

    base: RunSpec
    axes: dict[str, list]

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("sweep needs at least one axis")
        for path, values in self.axes.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"axis {path!r} needs a non-empty value list")

    @classmethod
    def from_dict(cls, payload: dict) -> "SweepSpec":
        if "axes" not in payload:
            raise ConfigError("sweep spec needs an 'axes' section")
        return cls(base=RunSpec.from_dict(payload), axes=dict(payload["axes"]))


@dataclass
class ScalingCurveSpec:
    """Plain baselines over a width grid versus one GCA variant at base width."""

    base: RunSpec
    gca_variant: GcaConfig
    width_grid: list[int]

    def __post_init__(self):
        if isinstance(self.gca_variant, dict):
            self.gca_variant = GcaConfig(**self.gca_variant)
        self.width_grid = [int(w) for w in self.width_grid]
        if not self.width_grid:
            raise ConfigError("width_grid must be non-empty")
        if any(b <= a for a, b in zip(self.width_grid, self.width_grid[1:])):
            raise ConfigError(f"width_grid must be strictly increasing, got {self.width_grid}")
        if not self.gca_variant.placements:
            raise ConfigError("gca_variant needs at least one placement")

    @classmethod
    def from_dict(cls, payload: dict) -> "ScalingCurveSpec":
        for key in ("gca_variant", "width_grid"):
            if key not in payload:
                raise ConfigError(f"scaling spec needs {key!r}")
        return cls(
            base=RunSpec.from_dict(payload),
            gca_variant=GcaConfig(**payload["gca_variant"]),
            width_grid=list(payload["width_grid"]),
        )


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


# -- dataset and config resolution ----------------------------------------------


def load_dataset(spec: RunSpec) -> SplitDataset:
    if isinstance(spec.data, SynthSpec):
        log = generate_synthetic(spec.data)
    else:
        log = load_log(spec.data)
    return split_leave_one_out(log)


def data_descriptor(spec: RunSpec) -> dict:
    if isinstance(spec.data, SynthSpec):
        return {"kind": "synthetic", **dataclasses.asdict(spec.data)}
    return {"kind": "file", "path": str(spec.data)}


def _data_key(spec: RunSpec) -> int:
    """Seed root for evaluation candidate draws, shared by every config on
    the same data so ranking lists are comparable across models."""
    if isinstance(spec.data, SynthSpec):
        return spec.data.seed
    return zlib.crc32(str(spec.data).encode("utf-8"))


def resolve_model_config(spec: RunSpec, dataset: SplitDataset) -> ModelConfig:
    kwargs = dict(spec.model)
    for key, available in (("vocab_a", dataset.vocab_a), ("vocab_b", dataset.vocab_b)):
        supplied = kwargs.get(key)
        if supplied is None:
            kwargs[key] = available
        elif supplied < available:
            raise ConfigError(f"{key}={supplied} smaller than dataset vocabulary {available}")
    gca = kwargs.get("gca")
    if isinstance(gca, dict) and "placements" in gca:
        gca = dict(gca)
        gca["placements"] = tuple(gca["placements"])
        kwargs["gca"] = gca
    return ModelConfig(**kwargs)


def config_id(cfg: ModelConfig, data: dict, training: TrainingParams) -> str:
    payload = {
        "model": dataclasses.asdict(cfg),
        "data": data,
        "training": dataclasses.asdict(training),
    }
    canonical = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


# -- evaluation ---------------------------------------------------------------------


def _candidate_matrix(
    dataset: SplitDataset, domain: int, stage: str, negatives: int, key: int
) -> np.ndarray:
    """Per-user candidate lists: the stage positive at index 0, then sampled
    negatives excluding the user's full history. Drawn from a data-derived
    stream so every model ranks the same lists."""
    name = "a" if domain == DOMAIN_A else "b"
    rng = derive_rng(key, "eval", stage, name)
    users = np.arange(len(dataset))
    positives = stage_targets(dataset, users, domain, stage)
    rows = np.empty((len(dataset), negatives + 1), dtype=np.int64)
    rows[:, 0] = positives
    for index in range(len(dataset)):
        rows[index, 1:] = sample_negatives(dataset, index, domain, negatives, rng)
    return rows


def evaluate(
    model: DualDomainModel,
    dataset: SplitDataset,
    stage: str,
    params: TrainingParams,
    data_key: int,
    probes: dict[str, GcaProbe] | None = None,
) -> dict[str, float]:
    """Ranking metrics over all users at ``stage``, eval mode, chunked."""
    candidates = {
        DOMAIN_A: _candidate_matrix(dataset, DOMAIN_A, stage, params.eval_negatives, data_key),
        DOMAIN_B: _candidate_matrix(dataset, DOMAIN_B, stage, params.eval_negatives, data_key),
    }
    include_combined = model.combined_required()
    sums = {name: 0.0 for name in ("ndcg1_a", "ndcg1_b", "ndcg10_a", "ndcg10_b", "auc_a", "auc_b")}
    total = len(dataset)
    for start in range(0, total, EVAL_CHUNK):
        chunk = np.arange(start, min(start + EVAL_CHUNK, total))
        inputs = build_inputs(dataset, chunk, stage, model.cfg.max_len, include_combined)
        repr_a, repr_b = model.forward(
            inputs.batch_a, inputs.batch_b, inputs.batch_combined, probes=probes
        )
        for suffix, domain, repr_, mask in (
            ("a", DOMAIN_A, repr_a, inputs.batch_a.mask),
            ("b", DOMAIN_B, repr_b, inputs.batch_b.mask),
        ):
            rows = candidates[domain][chunk]
            scores = model.score_next_item(repr_, mask, rows, suffix).data
            for row in scores:
                sums[f"ndcg1_{suffix}"] += ndcg_at_k(row, 0, 1)
                sums[f"ndcg10_{suffix}"] += ndcg_at_k(row, 0, 10)
                sums[f"auc_{suffix}"] += auc(row, 0)
    return {name: value / total for name, value in sums.items()}


# -- single run -------------------------------------------------------------------------


def run_train(spec: RunSpec, seed: int, checkpoint_path: str | Path | None = None) -> MetricsRecord:
    """Train one seed with early stopping on mean validation NDCG@10.

    Epoch 0 (the untrained model) participates in best-epoch selection, so a
    zero-epoch budget degenerates to evaluating the fresh model. Test metrics
    and orthogonality probes are taken once, from the restored best state.
    """
    dataset = load_dataset(spec)
    cfg = resolve_model_config(spec, dataset)
    params = spec.training
    cid = config_id(cfg, data_descriptor(spec), params)
    key = _data_key(spec)

    model = build(cfg, seed)
    optimizer = Adam(model.store.trainable_parameters(), lr=params.lr)
    shuffle_rng = derive_rng(seed, "train", "shuffle")
    negative_rng = derive_rng(seed, "train", "negatives")
    dropout_rng = derive_rng(seed, "train", "dropout")
    include_combined = model.combined_required()
    users = np.arange(len(dataset))

    def validation_score() -> float:
        scores = evaluate(model, dataset, "val", params, key)
        return (scores["ndcg10_a"] + scores["ndcg10_b"]) / 2.0

    best_score = validation_score()
    best_state = model.store.state()
    best_epoch = 0
    for epoch in range(1, params.epochs + 1):
        order = shuffle_rng.permutation(users)
        for start in range(0, len(order), params.batch_size):
            batch_users = order[start : start + params.batch_size]
            inputs = build_inputs(dataset, batch_users, "train", cfg.max_len, include_combined)
            positives_a = stage_targets(dataset, batch_users, DOMAIN_A, "train")
            positives_b = stage_targets(dataset, batch_users, DOMAIN_B, "train")
            optimizer.zero_grad()
            loss = model.training_loss(
                inputs.batch_a,
                inputs.batch_b,
                positives_a,
                positives_b,
                params.negatives_per_pos,
                negative_rng,
                batch_combined=inputs.batch_combined,
                train_rng=dropout_rng if cfg.dropout_p > 0 else None,
            )
            loss.backward()
            optimizer.step()
        score = validation_score()
        if score > best_score:
            best_score = score
            best_state = model.store.state()
            best_epoch = epoch
        elif epoch - best_epoch >= params.patience:
            break

    model.store.load_state(best_state)
    if checkpoint_path is not None:
        Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model.store, str(checkpoint_path))

    probes = {"a": GcaProbe(), "b": GcaProbe()}
    test_scores = evaluate(model, dataset, "test", params, key, probes=probes)
    return MetricsRecord(
        config_id=cid,
        seed=seed,
        cos_xxprime_a=probes["a"].cos_xxprime,
        cos_xxprime_b=probes["b"].cos_xxprime,
        cos_xy_a=probes["a"].cos_xy,
        cos_xy_b=probes["b"].cos_xy,
        param_count=model.param_count,
        epoch_of_best=best_epoch,
        **test_scores,
    )


# -- persistence ---------------------------------------------------------------------------


def _write_json_atomic(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    tmp.write_text(json.dumps(payload, indent=2, default=list) + "\n")
    os.replace(tmp, path)


def cell_path(output_dir: str | Path, cid: str, seed: int) -> Path:
    return Path(output_dir) / "cells" / cid / f"seed{seed}.json"


def run_cell(spec: RunSpec, seed: int, resume: bool = False) -> MetricsRecord | None:
    """Run one config x seed cell, persisting success or failure.

    With ``resume`` a completed cell is loaded instead of re-run; failed
    cells stay skipped until their file is removed. Failures are recorded and
    swallowed so a sweep continues past them.
    """
    dataset = load_dataset(spec)
    cfg = resolve_model_config(spec, dataset)
    cid = config_id(cfg, data_descriptor(spec), spec.training)
    path = cell_path(spec.output_dir, cid, seed)
    if resume and path.exists():
        payload = json.loads(path.read_text())
        if payload.get("failed"):
            return None
        return MetricsRecord.from_dict(payload["record"])

    resolved = {
        "model": dataclasses.asdict(cfg),
        "data": data_descriptor(spec),
        "training": dataclasses.asdict(spec.training),
        "seed": seed,
        "config_id": cid,
    }
    checkpoint = Path(spec.output_dir) / "checkpoints" / f"{cid}-seed{seed}.ckpt"
    started = time.monotonic()
    try:
        record = run_train(spec, seed, checkpoint_path=checkpoint)
    except GcalabError as exc:
        _write_json_atomic(
            path,
            {
                "failed": True,
                "error": f"{type(exc).__name__}: {exc}",
                "resolved": _jsonable(resolved),
                "runtime_s": time.monotonic() - started,
            },
        )
        return None
    _write_json_atomic(
        path,
        {
            "failed": False,
            "record": record.to_dict(),
            "resolved": _jsonable(resolved),
            "runtime_s": time.monotonic() - started,
        },
    )
    return record


def load_records(output_dir: str | Path) -> list[MetricsRecord]:
    """All successful cell records under ``output_dir``, sorted for stability."""
    records = []
    root = Path(output_dir) / "cells"
    for path in sorted(root.glob("*/seed*.json")):
        payload = json.loads(path.read_text())
        if not payload.get("failed"):
            records.append(MetricsRecord.from_dict(payload["record"]))
    return records


def rebuild_rollup(output_dir: str | Path) -> list[MetricsRecord]:
    """Regenerate results.csv and aggregates.csv from the cell files."""
    records = load_records(output_dir)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(RECORD_COLUMNS)]
    lines += [",".join(record.csv_row()) for record in records]
    (out / "results.csv").write_text("\n".join(lines) + "\n")

    by_config: dict[str, list[MetricsRecord]] = {}
    for record in records:
        by_config.setdefault(record.config_id, []).append(record)
    aggregates = [aggregate_over_seeds(group) for group in by_config.values()]
    aggregates.sort(key=lambda s: s.config_id)
    best_id = None
    if aggregates:
        best_id = max(
            aggregates, key=lambda s: (s.mean["ndcg10_a"] + s.mean["ndcg10_b"]) / 2.0
        ).config_id
    tracked = METRIC_FIELDS + ("param_count", "epoch_of_best")
    header = ["config_id", "count"]
    header += [f"mean_{name}" for name in tracked]
    header += [f"sd_{name}" for name in tracked]
    header.append("is_best")
    rows = [",".join(header)]
    for summary in aggregates:
        row = [summary.config_id, str(summary.count)]
        row += [repr(summary.mean[name]) for name in tracked]
        row += [repr(summary.sd[name]) for name in tracked]
        row.append("1" if summary.config_id == best_id else "0")
        rows.append(",".join(row))
    (out / "aggregates.csv").write_text("\n".join(rows) + "\n")
    return records


# -- sweeps -----------------------------------------------------------------------------------


def _set_path(tree: dict, parts: list[str], value) -> None:
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"axis path {'.'.join(parts)} crosses non-mapping node {part!r}")
    node[parts[-1]] = value


def apply_axis(spec: RunSpec, path: str, value) -> RunSpec:
    """Return a copy of ``spec`` with one config path overridden.

    Paths starting with model/training/data address those sections; anything
    else (e.g. ``gca.placements``) addresses the model section directly.
    """
    parts = path.split(".")
    if parts[0] == "training":
        if len(parts) != 2:
            raise ConfigError(f"training axis must be training.<field>, got {path!r}")
        training = replace(spec.training, **{parts[1]: value})
        return replace(spec, training=training)
    if parts[0] == "data":
        if not isinstance(spec.data, SynthSpec):
            raise ConfigError("data axes require a synthetic data source")
        if len(parts) != 2:
            raise ConfigError(f"data axis must be data.<field>, got {path!r}")
        kwargs = dataclasses.asdict(spec.data)
        kwargs[parts[1]] = value
        kwargs["seq_len_range"] = tuple(kwargs["seq_len_range"])
        return replace(spec, data=SynthSpec(**kwargs))
    if parts[0] == "model":
        parts = parts[1:]
        if not parts:
            raise ConfigError("model axis needs a field path")
    model = json.loads(json.dumps(_jsonable(spec.model)))
    _set_path(model, parts, value)
    return replace(spec, model=model)


def enumerate_sweep(spec: SweepSpec) -> list[tuple[dict, RunSpec]]:
    """The grid as (axis assignment, concrete run spec) pairs, in document order."""
    paths = list(spec.axes)
    combos = itertools.product(*(spec.axes[path] for path in paths))
    cells = []
    for combo in combos:
        assignment = dict(zip(paths, combo))
        run = spec.base
        for path, value in assignment.items():
            run = apply_axis(run, path, value)
        cells.append((assignment, run))
    return cells


def run_sweep(spec: SweepSpec, resume: bool = False) -> list[MetricsRecord]:
    """Execute the grid x seeds; failures are isolated, roll-ups rebuilt at the end."""
    cells = enumerate_sweep(spec)
    manifest = []
    records: list[MetricsRecord] = []
    for assignment, run in cells:
        dataset = load_dataset(run)
        cfg = resolve_model_config(run, dataset)
        cid = config_id(cfg, data_descriptor(run), run.training)
        manifest.append({"axes": _jsonable(assignment), "config_id": cid})
        for seed in run.seeds:
            record = run_cell(run, seed, resume=resume)
            if record is not None:
                records.append(record)
    _write_json_atomic(
        Path(spec.base.output_dir) / "sweep_manifest.json",
        {"axes": _jsonable(spec.axes), "cells": manifest},
    )
    rebuild_rollup(spec.base.output_dir)
    return records


# -- parameter matching and scaling curves ----------------------------------------------------


def match_parameters(
    baseline: ModelConfig, target_params: int, tolerance: float = 0.02
) -> tuple[ModelConfig, int]:
    """Search the hidden width (in steps of the head count) for a parameter
    count within ``tolerance`` of the target; counts grow monotonically in d."""
    if tolerance <= 0:
        raise ConfigError(f"tolerance must be positive, got {tolerance}")
    if target_params < 1:
        raise ConfigError(f"target_params must be positive, got {target_params}")
    step = baseline.heads
    if baseline.gca.placements:
        gca_heads = baseline.gca.heads
        step = step * gca_heads // np.gcd(step, gca_heads)
    floor = max(2, (baseline.adapter_rank or 0) + 1)
    d_min = step * ((floor + step - 1) // step)

    def count_at(d: int) -> int:
        return count_parameters(replace(baseline, d=d))

    def width(index: int) -> int:
        return d_min + index * step

    # Bisect over the width lattice for the first count >= target.
    hi = 1
    while count_at(width(hi)) < target_params and width(hi) < (1 << 16):
        hi *= 2
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if count_at(width(mid)) < target_params:
            lo = mid + 1
        else:
            hi = mid
    candidates = {width(lo)}
    if lo > 0:
        candidates.add(width(lo - 1))
    best = min(sorted(candidates), key=lambda d: (abs(count_at(d) - target_params), d))
    achieved = count_at(best)
    error = abs(achieved - target_params) / target_params
    if error > tolerance:
        raise InfeasibleMatchError(
            f"no width within {tolerance:.1%} of {target_params}; nearest is "
            f"{achieved} at d={best} (off by {error:.2%})"
        )
    return replace(baseline, d=best), achieved


@dataclass
class ScalingPoint:
    kind: str
    d: int
    config_id: str
    param_count: int
    mean_ndcg10_a: float
    mean_ndcg10_b: float

    @property
    def mean_ndcg10(self) -> float:
        return (self.mean_ndcg10_a + self.mean_ndcg10_b) / 2.0


@dataclass
class ScalingReport:
    points: list[ScalingPoint]
    target_params: int
    matched_width: int
    achieved_params: int
    relative_error: float

    def to_dict(self) -> dict:
        return {
            "points": [
                {**dataclasses.asdict(p), "mean_ndcg10": p.mean_ndcg10} for p in self.points
            ],
            "target_params": self.target_params,
            "matched_width": self.matched_width,
            "achieved_params": self.achieved_params,
            "relative_error": self.relative_error,
        }


def run_scaling_curve(spec: ScalingCurveSpec, resume: bool = False) -> ScalingReport:
    """Accuracy-versus-parameters protocol: plain baselines across widths
    (always including the parameter-matched one) against the GCA variant."""
    base = spec.base
    dataset = load_dataset(base)

    def spec_for(model_kwargs: dict) -> RunSpec:
        return replace(base, model=model_kwargs)

    baseline_kwargs = dict(base.model)
    baseline_kwargs["gca"] = {"placements": ()}
    gca_kwargs = dict(base.model)
    gca_kwargs["gca"] = dataclasses.asdict(spec.gca_variant)

    gca_cfg = resolve_model_config(spec_for(gca_kwargs), dataset)
    target = count_parameters(gca_cfg)
    baseline_cfg = resolve_model_config(spec_for(baseline_kwargs), dataset)
    matched_cfg, achieved = match_parameters(baseline_cfg, target)
    relative_error = abs(achieved - target) / target

    widths = sorted(set(spec.width_grid) | {matched_cfg.d})
    runs: list[tuple[str, int, RunSpec]] = []
    for width in widths:
        kwargs = dict(baseline_kwargs)
        kwargs["d"] = width
        runs.append(("baseline", width, spec_for(kwargs)))
    runs.append(("gca", gca_cfg.d, spec_for(gca_kwargs)))

    points = []
    for kind, width, run in runs:
        cfg = resolve_model_config(run, dataset)
        cid = config_id(cfg, data_descriptor(run), run.training)
        group = []
        for seed in run.seeds:
            record = run_cell(run, seed, resume=resume)
            if record is not None:
                group.append(record)
        if not group:
            raise ContractError(f"every seed failed for scaling point {kind} d={width}")
        summary = aggregate_over_seeds(group)
        points.append(
            ScalingPoint(
                kind=kind,
                d=width,
                config_id=cid,
                param_count=int(summary.mean["param_count"]),
                mean_ndcg10_a=summary.mean["ndcg10_a"],
                mean_ndcg10_b=summary.mean["ndcg10_b"],
            )
        )
    rebuild_rollup(base.output_dir)

    report = ScalingReport(
        points=points,
        target_params=target,
        matched_width=matched_cfg.d,
        achieved_params=achieved,
        relative_error=relative_error,
    )
    out = Path(base.output_dir)
    _write_json_atomic(out / "scaling_report.json", report.to_dict())
    lines = ["kind,d,config_id,param_count,mean_ndcg10_a,mean_ndcg10_b,mean_ndcg10"]
    for p in report.points:
        lines.append(
            f"{p.kind},{p.d},{p.config_id},{p.param_count},"
            f"{p.mean_ndcg10_a!r},{p.mean_ndcg10_b!r},{p.mean_ndcg10!r}"
        )
    (out / "scaling.csv").write_text("\n".join(lines) + "\n")
    series = {
        kind: [(float(p.param_count), p.mean_ndcg10) for p in report.points if p.kind == kind]
        for kind in ("baseline", "gca")
    }
    write_svg(
        out / "scaling.svg",
        scatter_svg(series, "parameters", "mean test NDCG@10", "Accuracy versus parameters"),
    )
    return report


# -- analysis -----------------------------------------------------------------------------------


CORRELATION_PAIRS = (
    ("cos_xxprime", "ndcg10"),
    ("ndcg1", "auc"),
    ("ndcg10", "auc"),
)


@dataclass
class CorrelationResult:
    domain: str
    x_field: str
    y_field: str
    n: int
    r: float | None
    note: str = ""


@dataclass
class AnalysisReport:
    correlations: list[CorrelationResult]
    summaries: dict[str, dict[str, float]]
    aggregates: list[AggregateSummary]
    record_count: int
    output_dir: str

    def correlation(self, domain: str, x_field: str, y_field: str) -> CorrelationResult:
        for result in self.correlations:
            if (result.domain, result.x_field, result.y_field) == (domain, x_field, y_field):
                return result
        raise KeyError((domain, x_field, y_field))


def analyze(output_dir: str | Path) -> AnalysisReport:
    """Correlations and cosine distributions over all recorded cells.

    Writes analysis.csv (correlations), cosine_summary.csv (five-number
    summaries), one scatter SVG per domain for the orthogonality/accuracy
    relation, and a box plot of the cosine channels.
    """
    records = load_records(output_dir)
    if len(records) < 3:
        raise ContractError(f"analysis needs at least 3 records, found {len(records)}")
    out = Path(output_dir)

    correlations = []
    for domain in ("a", "b"):
        for x_field, y_field in CORRELATION_PAIRS:
            xs = [getattr(r, f"{x_field}_{domain}") for r in records]
            ys = [getattr(r, f"{y_field}_{domain}") for r in records]
            try:
                result = CorrelationResult(
                    domain, x_field, y_field, len(records), pearson_r(xs, ys)
                )
            except UndefinedCorrelationError as exc:
                result = CorrelationResult(
                    domain, x_field, y_field, len(records), None, note=str(exc)
                )
            correlations.append(result)

    summaries = {}
    for channel in ("cos_xxprime", "cos_xy"):
        for domain in ("a", "b"):
            name = f"{channel}_{domain}"
            summaries[name] = five_number_summary([getattr(r, name) for r in records])

    lines = ["domain,x,y,n,r,note"]
    for c in correlations:
        r_text = "" if c.r is None else repr(c.r)
        lines.append(f"{c.domain},{c.x_field},{c.y_field},{c.n},{r_text},{c.note}")
    (out / "analysis.csv").write_text("\n".join(lines) + "\n")

    lines = ["field,min,q1,median,q3,max"]
    for name, summary in summaries.items():
        lines.append(
            f"{name},{summary['min']!r},{summary['q1']!r},{summary['median']!r},"
            f"{summary['q3']!r},{summary['max']!r}"
        )
    (out / "cosine_summary.csv").write_text("\n".join(lines) + "\n")

    for domain in ("a", "b"):
        points = [
            (getattr(r, f"cos_xxprime_{domain}"), getattr(r, f"ndcg10_{domain}"))
            for r in records
        ]
        write_svg(
            out / f"orthogonality_{domain}.svg",
            scatter_svg(
                {f"domain {domain.upper()}": points},
                "|cos(query, crossed)|",
                "test NDCG@10",
                f"Orthogonality versus accuracy, domain {domain.upper()}",
            ),
        )
    write_svg(
        out / "cosine_box.svg",
        box_svg(summaries, "|cosine|", "Cosine channels across runs"),
    )

    by_config: dict[str, list[MetricsRecord]] = {}
    for record in records:
        by_config.setdefault(record.config_id, []).append(record)
    aggregates = sorted(
        (aggregate_over_seeds(group) for group in by_config.values()),
        key=lambda s: s.config_id,
    )
    return AnalysisReport(
        correlations=correlations,
        summaries=summaries,
        aggregates=aggregates,
        record_count=len(records),
        output_dir=str(output_dir),
    )


# -- report ---------------------------------------------------------------------------------------


def write_report(output_dir: str | Path) -> Path:
    """Render report.md: aggregates, correlations, plot links, resolved configs."""
    report = analyze(output_dir)
    out = Path(output_dir)
    resolved: dict[str, dict] = {}
    for path in sorted((out / "cells").glob("*/seed*.json")):
        payload = json.loads(path.read_text())
        info = payload.get("resolved", {})
        cid = info.get("config_id")
        if not cid:
            continue
        entry = resolved.setdefault(cid, {**info, "seeds": []})
        entry["seeds"].append(info.get("seed"))
        entry.pop("seed", None)

    lines = ["# Experiment report", ""]
    lines.append(f"Records: {report.record_count} across {len(report.aggregates)} configs.")
    lines.append("")
    lines.append("## Per-config means over seeds")
    lines.append("")
    lines.append("| config | seeds | ndcg10_a | ndcg10_b | auc_a | auc_b | cos_xxprime_a | params |")
    lines.append("|---|---|---|---|---|---|---|---|")
    for agg in report.aggregates:
        lines.append(
            f"| {agg.config_id} | {agg.count} | {agg.mean['ndcg10_a']:.4f} "
            f"| {agg.mean['ndcg10_b']:.4f} | {agg.mean['auc_a']:.4f} | {agg.mean['auc_b']:.4f} "
            f"| {agg.mean['cos_xxprime_a']:.4f} | {int(agg.mean['param_count'])} |"
        )
    lines.append("")
    lines.append("## Correlations across runs")
    lines.append("")
    lines.append("| domain | pair | n | r |")
    lines.append("|---|---|---|---|")
    for c in report.correlations:
        value = "omitted (zero variance)" if c.r is None else f"{c.r:.4f}"
        lines.append(f"| {c.domain} | {c.x_field} vs {c.y_field} | {c.n} | {value} |")
    lines.append("")
    lines.append("## Cosine channel distributions")
    lines.append("")
    lines.append("| field | min | q1 | median | q3 | max |")
    lines.append("|---|---|---|---|---|---|")
    for name, s in report.summaries.items():
        lines.append(
            f"| {name} | {s['min']:.4f} | {s['q1']:.4f} | {s['median']:.4f} "
            f"| {s['q3']:.4f} | {s['max']:.4f} |"
        )
    lines.append("")
    lines.append("## Artifacts")
    lines.append("")
    for artifact in (
        "results.csv",
        "aggregates.csv",
        "analysis.csv",
        "cosine_summary.csv",
        "orthogonality_a.svg",
        "orthogonality_b.svg",
        "cosine_box.svg",
    ):
        if (out / artifact).exists():
            lines.append(f"- {artifact}")
    lines.append("")
    lines.append("## Resolved configurations")
    lines.append("")
    for cid, info in resolved.items():
        lines.append(f"### {cid}")
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(info, indent=2, default=list))
        lines.append("```")
        lines.append("")
    path = out / "report.md"
    path.write_text("\n".join(lines))
    return path
