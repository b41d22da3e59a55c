"""Experiment runner and dataset utilities.

Consumers are scripts and CI: every subcommand reads flags or a JSON
experiment spec, writes machine-readable outputs (per-run JSON, CSV
tables, embedding CSV), and prints a compact summary.  Results are a pure
function of (spec, dataset files, seeds): rerunning a spec reproduces the
table byte for byte.

Subcommands: run, propagate, export-embeddings, validate-dataset,
make-splits.  The ``GSSL_DATA_DIR`` environment variable provides the
default directory against which relative dataset paths are resolved.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (LabeledDataset, Split, load_dataset, make_splits,
                   row_normalize_features, save_splits)
from .diffusion import DiffusionConfig, label_matrix, propagate_labels
from .errors import GsslError, InputError
from .losses import LossConfig
from .models import KINDS, Model, ModelConfig, hidden_embedding, load_checkpoint, save_checkpoint
from .trainer import DataContext, TrainConfig, train

__all__ = [
    "ModelSpec",
    "ExperimentSpec",
    "CellResult",
    "ResultsTable",
    "run_experiment",
    "aggregate_runs",
    "cmd_propagate",
    "cmd_export_embeddings",
    "cmd_validate_dataset",
    "main",
]

DATA_DIR_ENV = "GSSL_DATA_DIR"

# (nodes, undirected edges, classes, features) for the common benchmarks.
KNOWN_DATASETS = {
    "cora": (2708, 5429, 7, 1433),
    "citeseer": (3327, 4732, 6, 3703),
    "pubmed": (19717, 44338, 3, 500),
}


def resolve_dataset_dir(path) -> Path:
    p = Path(path)
    if p.is_dir():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / p).is_dir():
        return Path(base) / p
    raise InputError(f"dataset directory {path!r} not found"
                     + (f" (also tried under {base})" if base else ""))


@dataclass
class ModelSpec:
    kind: str
    regularized: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown model kind {self.kind!r}")

    @property
    def label(self) -> str:
        return ("R-" if self.regularized else "") + self.kind.upper()


@dataclass
class ExperimentSpec:
    dataset: str
    models: list[ModelSpec]
    ell: list[int] = field(default_factory=lambda: [20])
    n_splits: int = 10
    layer_counts: list[int] = field(default_factory=lambda: [2])
    mu_grid: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    base_seed: int = 0
    output_dir: str = "results"
    hidden_dim: int = 64
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 1000
    patience: int = 100
    loss_variant: str = "cross_entropy"
    include_self_loops: bool = True
    appnp_alpha: float = 0.1
    appnp_k: int = 10
    normalize_features: bool = True
    val_size: int = 500
    test_size: int = 1000
    workers: int = 1
    save_checkpoints: bool = False

    def __post_init__(self):
        if self.n_splits < 1:
            raise InputError("n_splits must be >= 1")
        if not self.models:
            raise InputError("experiment needs at least one model")
        if not self.mu_grid:
            raise InputError("mu_grid must not be empty")

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        models = [ModelSpec(**m) for m in raw.pop("models")]
        return cls(models=models, **raw)


@dataclass
class CellResult:
    dataset: str
    model: str
    regularized: bool
    ell: int
    n_layers: int
    mu: float
    n_splits: int
    mean_acc: float
    std_acc: float
    status: str = "ok"

    @property
    def label(self) -> str:
        return ("R-" if self.regularized else "") + self.model.upper()

    def sort_key(self):
        return (self.dataset, self.model, self.regularized, self.ell, self.n_layers)


class ResultsTable:
    """Aggregate accuracy rows keyed by (dataset, model, regularized, ell, layers)."""

    CSV_HEADER = "dataset,model,regularized,ell,n_layers,mu,n_splits,mean_acc,std_acc,status"

    def __init__(self, rows: list[CellResult]):
        self.rows = sorted(rows, key=CellResult.sort_key)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.dataset},{r.model},{str(r.regularized).lower()},{r.ell},"
                f"{r.n_layers},{r.mu:g},{r.n_splits},{r.mean_acc:.4f},{r.std_acc:.4f},"
                f"{r.status}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = f"{'model':<10} {'ell':>4} {'layers':>6} {'mu':>5} {'accuracy':>16}  status"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            acc = f"{r.mean_acc:.1f} +- {r.std_acc:.1f}"
            lines.append(f"{r.label:<10} {r.ell:>4} {r.n_layers:>6} {r.mu:>5g} {acc:>16}  {r.status}")
        return "\n".join(lines) + "\n"

    def lookup(self, model: str, regularized: bool, ell: int, n_layers: int) -> CellResult:
        for r in self.rows:
            if (r.model, r.regularized, r.ell, r.n_layers) == (model, regularized, ell, n_layers):
                return r
        raise KeyError((model, regularized, ell, n_layers))


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _run_one(ctx: DataContext, spec: ExperimentSpec, mspec: ModelSpec, ell: int,
             n_layers: int, mu: float, split: Split) -> tuple[dict, Model]:
    model_cfg = ModelConfig(
        kind=mspec.kind, n_layers=n_layers, hidden_dim=spec.hidden_dim,
        dropout=spec.dropout, appnp_alpha=spec.appnp_alpha, appnp_k=spec.appnp_k,
    )
    loss_cfg = LossConfig(mu=mu if mspec.regularized else 0.0,
                          variant=spec.loss_variant,
                          include_self_loops=spec.include_self_loops)
    train_cfg = TrainConfig(lr=spec.lr, weight_decay=spec.weight_decay,
                            max_epochs=spec.max_epochs, patience=spec.patience,
                            loss=loss_cfg, seed=split.seed)
    model = Model.init(model_cfg, ctx.x.shape[1], ctx.n_classes, seed=split.seed)
    report = train(model, ctx, split, train_cfg)
    record = {
        "model": mspec.label,
        "kind": mspec.kind,
        "regularized": mspec.regularized,
        "dataset": Path(spec.dataset).name,
        "seed": split.seed,
        "ell": ell,
        "n_layers": n_layers,
        "mu": mu if mspec.regularized else 0.0,
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
        "test_acc": report.test_acc,
        "val_acc_best": report.history[report.best_epoch - 1][2],
        "history": [list(h) for h in report.history],
    }
    return record, model


_POOL_STATE: dict = {}


def _pool_init(spec_dict: dict):
    spec = ExperimentSpec(models=[ModelSpec(**m) for m in spec_dict.pop("models")], **spec_dict)
    _POOL_STATE["spec"] = spec
    _POOL_STATE["ctx"] = _load_dataset_and_context(spec)[1]


def _pool_run(task: dict) -> dict:
    spec: ExperimentSpec = _POOL_STATE["spec"]
    record, _ = _run_one(_POOL_STATE["ctx"], spec, ModelSpec(**task["model"]),
                         task["ell"], task["n_layers"], task["mu"],
                         Split.from_dict(task["split"]))
    return record


def _load_dataset_and_context(spec: ExperimentSpec) -> tuple[LabeledDataset, DataContext]:
    ds = load_dataset(resolve_dataset_dir(spec.dataset))
    if spec.normalize_features:
        ds = row_normalize_features(ds)
    return ds, DataContext.from_dataset(ds)


def _select_mu(by_mu: dict[float, list[dict]]) -> float:
    """Grid selection: highest mean validation accuracy, ties to lower mu."""
    best_mu, best_score = None, -math.inf
    for mu in sorted(by_mu):
        score = float(np.mean([r["val_acc_best"] for r in by_mu[mu]]))
        if score > best_score + 1e-12:
            best_mu, best_score = mu, score
    return best_mu


def run_experiment(spec: ExperimentSpec, log=print) -> ResultsTable:
    """Run every (model, ell, n_layers) cell over n_splits splits.

    Regularized cells run the whole mu grid and report the grid value
    with the best mean validation accuracy.  Per-run JSON records are
    written under ``<output_dir>/runs`` and are sufficient to regenerate
    the table exactly (see :func:`aggregate_runs`).  A run that raises
    marks its cell failed and the remaining cells proceed.
    """
    out_dir = Path(spec.output_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    ds, ctx = _load_dataset_and_context(spec)
    ds_name = ds.name
    splits_by_ell = {
        ell: make_splits(ds, ell, spec.n_splits, spec.base_seed,
                         val_size=spec.val_size, test_size=spec.test_size)
        for ell in spec.ell
    }
    pool = None
    if spec.workers > 1:
        if spec.save_checkpoints:
            raise InputError("save_checkpoints needs workers=1")
        spec_dict = json.loads(json.dumps(_spec_to_dict(spec)))
        pool = ProcessPoolExecutor(max_workers=spec.workers,
                                   initializer=_pool_init, initargs=(spec_dict,))
    rows: list[CellResult] = []
    checkpoints: dict[tuple, Model] = {}
    try:
        for mspec in spec.models:
            for ell in spec.ell:
                for n_layers in spec.layer_counts:
                    mu_candidates = list(spec.mu_grid) if mspec.regularized else [0.0]
                    try:
                        by_mu: dict[float, list[dict]] = {}
                        for mu in mu_candidates:
                            records = []
                            if pool is not None:
                                tasks = [
                                    {"model": {"kind": mspec.kind, "regularized": mspec.regularized},
                                     "ell": ell, "n_layers": n_layers, "mu": mu,
                                     "split": split.to_dict()}
                                    for split in splits_by_ell[ell]
                                ]
                                records = list(pool.map(_pool_run, tasks))
                            else:
                                for split in splits_by_ell[ell]:
                                    record, model = _run_one(ctx, spec, mspec, ell,
                                                             n_layers, mu, split)
                                    records.append(record)
                                    if split.seed == spec.base_seed:
                                        checkpoints[(mspec.label, ell, n_layers, mu)] = model
                            for record in records:
                                name = (f"{record['model']}_ell{ell}_L{n_layers}"
                                        f"_mu{record['mu']:g}_seed{record['seed']}.json")
                                with open(runs_dir / name, "w", encoding="utf-8") as fh:
                                    json.dump(record, fh)
                            by_mu[mu] = records
                        mu = _select_mu(by_mu)
                        accs = [r["test_acc"] * 100.0 for r in by_mu[mu]]
                        mean, std = _mean_std(accs)
                        rows.append(CellResult(ds_name, mspec.kind, mspec.regularized,
                                               ell, n_layers, mu, len(accs), mean, std))
                        if spec.save_checkpoints and (mspec.label, ell, n_layers, mu) in checkpoints:
                            ckpt = out_dir / f"{mspec.label}_ell{ell}_L{n_layers}.npz"
                            save_checkpoint(checkpoints[(mspec.label, ell, n_layers, mu)], ckpt)
                        log(f"{mspec.label} ell={ell} L={n_layers}: "
                            f"{mean:.1f} +- {std:.1f} (mu={mu:g})")
                    except Exception as err:  # cell isolation: others proceed
                        rows.append(CellResult(ds_name, mspec.kind, mspec.regularized,
                                               ell, n_layers, 0.0, 0, float("nan"),
                                               float("nan"),
                                               status=f"failed: {type(err).__name__}: {err}"))
                        log(f"{mspec.label} ell={ell} L={n_layers}: FAILED ({err})")
    finally:
        if pool is not None:
            pool.shutdown()
    table = ResultsTable(rows)
    (out_dir / "results.csv").write_text(table.to_csv(), encoding="ascii")
    (out_dir / "results.txt").write_text(table.to_text(), encoding="ascii")
    return table


def _spec_to_dict(spec: ExperimentSpec) -> dict:
    d = dict(spec.__dict__)
    d["models"] = [{"kind": m.kind, "regularized": m.regularized} for m in spec.models]
    d["workers"] = 1
    return d


def aggregate_runs(runs_dir) -> ResultsTable:
    """Regenerate the results table from per-run JSON records alone."""
    groups: dict[tuple, dict[float, list[dict]]] = {}
    for path in sorted(Path(runs_dir).glob("*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            r = json.load(fh)
        key = (r["dataset"], r["kind"], r["regularized"], r["ell"], r["n_layers"])
        groups.setdefault(key, {}).setdefault(float(r["mu"]), []).append(r)
    rows = []
    for (ds_name, kind, reg, ell, n_layers), by_mu in groups.items():
        mu = _select_mu(by_mu)
        accs = [r["test_acc"] * 100.0 for r in by_mu[mu]]
        mean, std = _mean_std(accs)
        rows.append(CellResult(ds_name, kind, reg, ell, n_layers, mu, len(accs), mean, std))
    return ResultsTable(rows)


def cmd_propagate(dataset, ell: int, gamma: float, seed: int = 0,
                  solver: str = "iterative", tol: float = 1e-8,
                  val_size: int = 500, test_size: int = 1000, log=print) -> float:
    """Label propagation on one split; returns and prints the accuracy.

    Accuracy is measured on the split's test set when it is non-empty,
    otherwise on all unlabeled nodes.
    """
    ds = load_dataset(resolve_dataset_dir(dataset))
    ctx = DataContext.from_dataset(ds)
    split = make_splits(ds, ell, 1, seed, val_size=val_size, test_size=test_size)[0]
    y = label_matrix(ds.labels, split.train, ds.n_classes)
    cfg = DiffusionConfig(gamma=gamma, tol=tol, solver=solver)
    pred = propagate_labels(ctx.a_hat, y, cfg)
    if split.test.size:
        eval_idx, which = split.test, "test"
    else:
        eval_idx = np.setdiff1d(np.arange(ds.n_nodes), split.train)
        which = "unlabeled"
    acc = float(np.mean(pred[eval_idx] == ds.labels[eval_idx]))
    log(f"propagate {ds.name} ell={ell} gamma={gamma:g} seed={seed}: "
        f"{which} accuracy {acc * 100.0:.2f}% (n={eval_idx.size})")
    return acc


def cmd_export_embeddings(checkpoint, dataset, out_path, log=print) -> None:
    """Write the penultimate-layer activations of a trained model as CSV."""
    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise InputError(f"checkpoint {checkpoint!r} not found")
    model = load_checkpoint(ckpt)
    ds = row_normalize_features(load_dataset(resolve_dataset_dir(dataset)))
    ctx = DataContext.from_dataset(ds)
    emb = hidden_embedding(model, ctx.x, graph=ctx.graph_sl, a_hat=ctx.a_hat).values
    header = "node," + ",".join(f"dim{i}" for i in range(emb.shape[1]))
    with open(out_path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for i, row in enumerate(emb):
            fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    log(f"wrote {emb.shape[0]} x {emb.shape[1]} embedding to {out_path}")


def cmd_validate_dataset(directory, log=print) -> bool:
    """Run the data-module invariants; print counts and OK/violations."""
    try:
        ds = load_dataset(resolve_dataset_dir(directory))
    except (GsslError, OSError) as err:
        log(f"INVALID: {err}")
        return False
    problems = []
    dense = ds.graph.to_dense()
    if not np.array_equal(dense, dense.T):
        problems.append("adjacency not symmetric")
    if not np.all((ds.graph.values == 1.0)):
        problems.append("edge values not binary")
    if not np.isfinite(ds.features).all():
        problems.append("non-finite feature values")
    name = ds.name.lower()
    counts = (ds.n_nodes, ds.graph.n_undirected_edges, ds.n_classes, ds.n_features)
    if name in KNOWN_DATASETS and counts != KNOWN_DATASETS[name]:
        problems.append(f"counts {counts} != expected {KNOWN_DATASETS[name]} for {name}")
    line = (f"{counts[0]} nodes, {counts[1]} edges, {counts[2]} classes, "
            f"{counts[3]} features")
    if problems:
        log(f"{line}: INVALID")
        for p in problems:
            log(f"  - {p}")
        return False
    log(f"{line}: OK")
    return True


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gssl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("--spec", required=True, help="experiment spec JSON file")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--workers", type=int, default=None)

    p_prop = sub.add_parser("propagate", help="label propagation baseline")
    p_prop.add_argument("--dataset", required=True)
    p_prop.add_argument("--ell", type=int, default=20)
    p_prop.add_argument("--gamma", type=float, default=0.2)
    p_prop.add_argument("--seed", type=int, default=0)
    p_prop.add_argument("--solver", choices=("iterative", "direct"), default="iterative")
    p_prop.add_argument("--val-size", type=int, default=500)
    p_prop.add_argument("--test-size", type=int, default=1000)

    p_exp = sub.add_parser("export-embeddings", help="export hidden activations")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--dataset", required=True)
    p_exp.add_argument("--out", required=True)

    p_val = sub.add_parser("validate-dataset", help="check a dataset directory")
    p_val.add_argument("directory")

    p_mk = sub.add_parser("make-splits", help="write split JSON for a dataset")
    p_mk.add_argument("--dataset", required=True)
    p_mk.add_argument("--ell", type=int, required=True)
    p_mk.add_argument("--n-splits", type=int, default=10)
    p_mk.add_argument("--seed", type=int, default=0)
    p_mk.add_argument("--val-size", type=int, default=500)
    p_mk.add_argument("--test-size", type=int, default=1000)
    p_mk.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            spec = ExperimentSpec.from_json(args.spec)
            if args.output_dir is not None:
                spec.output_dir = args.output_dir
            if args.workers is not None:
                spec.workers = args.workers
            table = run_experiment(spec)
            print(table.to_text(), end="")
            return 0
        if args.command == "propagate":
            cmd_propagate(args.dataset, args.ell, args.gamma, args.seed,
                          solver=args.solver, val_size=args.val_size,
                          test_size=args.test_size)
            return 0
        if args.command == "export-embeddings":
            cmd_export_embeddings(args.checkpoint, args.dataset, args.out)
            return 0
        if args.command == "validate-dataset":
            return 0 if cmd_validate_dataset(args.directory) else 1
        if args.command == "make-splits":
            ds = load_dataset(resolve_dataset_dir(args.dataset))
            splits = make_splits(ds, args.ell, args.n_splits, args.seed,
                                 val_size=args.val_size, test_size=args.test_size)
            save_splits(splits, args.out)
            print(f"wrote {len(splits)} splits to {args.out}")
            return 0
    except GsslError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
