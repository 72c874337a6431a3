"""Experiment orchestration: multi-trial runs, sweeps, and CSV artifacts.

Every run is driven by a JSON config with a versioned schema; trial
randomness enters only through model initialization (the data split and
partition seeds stay fixed per experiment), so re-running a config
reproduces every CSV byte for byte.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import (FineTuneConfig, draw_public_sample, ensemble_accuracy,
                        fine_tune, naive_average, tuning_sweep)
from .data import (Dataset, PartitionSpec, generate_synthetic, load_idx,
                   partition, split)
from .geometry import (BallSearchConfig, FisherScales, InfeasibleCenterError,
                       IntersectConfig, axis_scales, construct_space,
                       fisher_diagonal, intersect)
from .models import (LogisticModel, TrainConfig, accuracy, accuracy_gate,
                     train_logistic, train_mlp)
from .network import ClusterConfig, Message, aggregate_mlp

SCHEMA_VERSION = 1

METHODS = ("global", "local", "averaged", "aggregate", "aggregate-tuned")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str  # "mnist" or "synthetic"
    mnist_dir: str = "data/mnist"
    n_classes: int = 10
    n_features: int = 16
    per_class: int = 300
    spread: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class SplitSpec:
    train_n: int
    val_n: int
    test_n: int
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetSpec
    split: SplitSpec
    model: str  # "logistic" or "mlp"
    hidden_size: int
    k: int
    partition: PartitionSpec
    epsilon: tuple  # per-node acceptance thresholds
    epsilon_hidden: float
    clusters: ClusterConfig
    search: BallSearchConfig
    fisher_enabled: bool
    fisher_floor: float
    finetune: FineTuneConfig
    train: TrainConfig
    dropout_rate: float = 0.5
    trials: int = 5
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.model not in ("logistic", "mlp"):
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.model == "mlp" and self.k < 2:
            raise ConfigError("mlp aggregation needs k >= 2")
        eps = tuple(float(e) for e in self.epsilon)
        if len(eps) != self.k:
            raise ConfigError(f"need one epsilon per node, got {len(eps)} for k={self.k}")
        if any(not 0 <= e <= 1 for e in eps):
            raise ConfigError("epsilon values must lie in [0, 1]")
        object.__setattr__(self, "epsilon", eps)


def default_label_partition(n_classes: int, k: int, seed: int = 0) -> PartitionSpec:
    """Contiguous label chunks, one per node (the heterogeneous regime).

    Remainder classes go to the trailing nodes, e.g. 10 classes over 3 nodes
    gives sizes (3, 3, 4).
    """
    base, rem = divmod(n_classes, k)
    sizes = [base] * (k - rem) + [base + 1] * rem
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    assignment = [set(range(bounds[i], bounds[i + 1])) for i in range(k)]
    return PartitionSpec(k=k, assignment=tuple(assignment), seed=seed)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Parse and validate a config dict (the JSON file schema)."""
    try:
        version = raw.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        ds = raw.get("dataset", {})
        dataset = DatasetSpec(
            kind=ds.get("kind", "synthetic"),
            mnist_dir=ds.get("dir", "data/mnist"),
            n_classes=ds.get("n_classes", 10),
            n_features=ds.get("n_features", 16),
            per_class=ds.get("per_class", 300),
            spread=ds.get("spread", 0.8),
            seed=ds.get("seed", 0),
        )
        if dataset.kind not in ("mnist", "synthetic"):
            raise ConfigError(f"unknown dataset kind {dataset.kind!r}")
        sp = raw.get("split", {})
        split_spec = SplitSpec(
            train_n=sp.get("train", 8000), val_n=sp.get("val", 1000),
            test_n=sp.get("test", 1000), seed=sp.get("seed", 0),
        )
        k = raw.get("k", 5)
        part_raw = raw.get("partition")
        if part_raw is None:
            part = default_label_partition(dataset.n_classes, k)
        else:
            part = PartitionSpec(
                k=k,
                assignment=tuple(set(a) for a in part_raw.get("assignment", [])),
                shared_labels=frozenset(part_raw.get("shared_labels", [])),
                seed=part_raw.get("seed", 0),
            )
        eps = raw.get("epsilon", 0.4)
        eps = tuple(eps) if isinstance(eps, (list, tuple)) else (float(eps),) * k
        search_raw = raw.get("search", {})
        train_raw = raw.get("train", {})
        ft_raw = raw.get("finetune", {})
        model = raw.get("model", {"kind": "logistic"})
        fisher = raw.get("fisher", {})
        cluster_raw = raw.get("clusters", {})
        return ExperimentConfig(
            name=raw.get("name", "experiment"),
            dataset=dataset,
            split=split_spec,
            model=model.get("kind", "logistic"),
            hidden_size=model.get("hidden", 50),
            k=k,
            partition=part,
            epsilon=eps,
            epsilon_hidden=raw.get("epsilon_hidden", 1.0),
            clusters=ClusterConfig(
                m_eps=cluster_raw.get("m_eps", 100),
                kmeans_iters=cluster_raw.get("iters", 100),
                seed=cluster_raw.get("seed", 0),
            ),
            search=BallSearchConfig(
                r_max=search_raw.get("r_max", 16.0),
                delta=search_raw.get("delta", 0.01),
                surface_samples=search_raw.get("surface_samples", 20),
                seed=search_raw.get("seed", 0),
            ),
            fisher_enabled=fisher.get("enabled", False),
            fisher_floor=fisher.get("floor", 0.1),
            finetune=FineTuneConfig(
                epochs=ft_raw.get("epochs", 5),
                scope=ft_raw.get("scope",
                                 "whole" if model.get("kind", "logistic") == "logistic"
                                 else "last-layer"),
                sample_size=ft_raw.get("sample_size", 1000),
                learning_rate=ft_raw.get("learning_rate"),
            ),
            train=TrainConfig(
                learning_rate=train_raw.get("learning_rate", 1e-3),
                batch_size=train_raw.get("batch_size", 32),
                patience_epochs=train_raw.get("patience_epochs", 3),
                min_accuracy_delta=train_raw.get("min_accuracy_delta", 1e-3),
                max_epochs=train_raw.get("max_epochs", 100),
            ),
            dropout_rate=raw.get("dropout_rate", 0.5),
            trials=raw.get("trials", 5),
            base_seed=raw.get("base_seed", 0),
            workers=raw.get("workers", 1),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def load_pool(config: ExperimentConfig) -> Dataset:
    ds = config.dataset
    if ds.kind == "mnist":
        base = Path(ds.mnist_dir)
        images = base / "images-idx3-ubyte"
        labels = base / "labels-idx1-ubyte"
        if not images.exists() or not labels.exists():
            raise ConfigError(
                f"MNIST corpus not found under {base}; run scripts/fetch_mnist.py"
            )
        return load_idx(images, labels)
    return generate_synthetic(ds.n_classes, ds.n_features, ds.per_class,
                              ds.spread, ds.seed)


def prepare_data(config: ExperimentConfig):
    """Pool -> (train, val, test, nodes) with all seeds from the config."""
    pool = load_pool(config)
    tr, va, te = split(pool, config.split.train_n, config.split.val_n,
                       config.split.test_n, config.split.seed)
    covered = config.partition.covered_labels
    present = set(np.unique(tr.labels).tolist()) | set(np.unique(va.labels).tolist())
    if not present <= covered:
        # Deliberate sub-experiments (e.g. the two-node grid) may cover only
        # part of the label set; nodes then see only the covered labels while
        # the test split stays global.
        keep_tr = np.isin(tr.labels, sorted(covered))
        keep_va = np.isin(va.labels, sorted(covered))
        tr_nodes = tr.subset(np.flatnonzero(keep_tr))
        va_nodes = va.subset(np.flatnonzero(keep_va))
    else:
        tr_nodes, va_nodes = tr, va
    nodes = partition(tr_nodes, va_nodes, config.partition)
    return tr, va, te, nodes


@dataclass
class TrialReport:
    trial: int
    accuracies: dict = field(default_factory=dict)
    n_hidden: int = 0
    found: bool = False
    wall_time: float = 0.0
    messages: list = field(default_factory=list)
    error: str | None = None


def _trial_seed(base_seed: int, trial: int) -> int:
    return base_seed + trial


def _convex_aggregate(nodes, local_models, epsilon, search: BallSearchConfig,
                      fisher_enabled: bool, fisher_floor: float,
                      intersect_opts: IntersectConfig | None = None):
    """Per-node spaces from local optima plus the intersection point."""
    spaces, messages = [], []
    for node, model, eps in zip(nodes, local_models, epsilon):
        scales = None
        if fisher_enabled:
            fisher = fisher_diagonal(model, node.train)
            scales = axis_scales(FisherScales(fisher, fisher_floor))
        n_feat, n_cls = model.n_features, model.n_classes

        def evalfn(w, _node=node, _eps=eps, _f=n_feat, _c=n_cls):
            return accuracy_gate(LogisticModel.from_flat(w, _f, _c),
                                 _node.validation, _eps)

        seed = int(np.random.SeedSequence(
            [search.seed, max(node.node_id, 0)]).generate_state(1)[0])
        flat = model.to_weight_vector().values
        space = construct_space(flat, evalfn, scales,
                                replace(search, seed=seed),
                                node_id=node.node_id)
        spaces.append(space)
        messages.append(Message("spaces", f"node{node.node_id}",
                                "coordinator", len(space.to_bytes())))
    w, found = intersect(spaces, intersect_opts)
    return w, found, spaces, messages


def run_trial(config: ExperimentConfig, nodes, test: Dataset,
              global_train: Dataset, trial: int,
              checkpoint_dir=None) -> TrialReport:
    """One trial: global/local/averaged baselines plus the aggregate model."""
    report = TrialReport(trial=trial)
    t0 = time.perf_counter()
    seed = _trial_seed(config.base_seed, trial)
    tcfg = replace(config.train, seed=seed)
    local_cfg = replace(config.train, seed=seed + 1)

    if config.model == "logistic":
        global_model = train_logistic(global_train, tcfg)
        local_models = [
            train_logistic(n.train, replace(local_cfg, seed=local_cfg.seed + n.node_id))
            for n in nodes
        ]
    else:
        global_model = train_mlp(global_train, config.hidden_size, tcfg,
                                 dropout_rate=config.dropout_rate)
        local_models = [
            train_mlp(n.train, config.hidden_size,
                      replace(local_cfg, seed=local_cfg.seed + n.node_id),
                      dropout_rate=config.dropout_rate)
            for n in nodes
        ]

    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir)
        ckpt.mkdir(parents=True, exist_ok=True)
        for node, model in zip(nodes, local_models):
            path = ckpt / f"trial{trial}-node{node.node_id}.weights"
            path.write_bytes(model.to_weight_vector().to_bytes())

    report.accuracies["global"] = accuracy(global_model, test)
    report.accuracies["local"] = float(np.mean(
        [accuracy(m, test) for m in local_models]))
    report.accuracies["averaged"] = accuracy(naive_average(local_models), test)

    search = replace(config.search, seed=seed)
    if config.model == "logistic":
        w, found, _, messages = _convex_aggregate(
            nodes, local_models, config.epsilon, search,
            config.fisher_enabled, config.fisher_floor)
        agg_model = LogisticModel.from_flat(
            w, local_models[0].n_features, local_models[0].n_classes)
        report.n_hidden = 0
    else:
        result = aggregate_mlp(
            nodes, config.hidden_size, local_cfg, config.epsilon_hidden,
            config.epsilon, replace(config.clusters, seed=seed), search,
            dropout_rate=config.dropout_rate, local_models=local_models)
        agg_model, found, messages = result.model, result.found_output, result.messages
        report.n_hidden = result.layer.width
    report.found = found
    report.messages = messages
    report.accuracies["aggregate"] = accuracy(agg_model, test)

    sample = draw_public_sample(nodes, config.finetune.sample_size, seed)
    tuned = fine_tune(agg_model, sample, config.finetune, tcfg)
    report.accuracies["aggregate-tuned"] = accuracy(tuned, test)
    report.wall_time = time.perf_counter() - t0
    return report


def _fmt(x) -> str:
    return f"{x:.10g}"


def _results_rows(config: ExperimentConfig, reports: list) -> list:
    eps_repr = ";".join(_fmt(e) for e in config.epsilon)
    rows = []
    for rep in reports:
        if rep.error is not None:
            continue
        for method in METHODS:
            rows.append({
                "experiment_id": config.name,
                "method": method,
                "k": str(config.k),
                "epsilon": eps_repr,
                "sample_size": str(config.finetune.sample_size),
                "trial": str(rep.trial),
                "accuracy": _fmt(rep.accuracies[method]),
                "n_hidden": str(rep.n_hidden),
            })
    return rows


def write_csv(path, fieldnames, rows) -> None:
    lines = [",".join(fieldnames)]
    lines += [",".join(str(row[f]) for f in fieldnames) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RunSummary:
    config: ExperimentConfig
    reports: list
    table: dict  # method -> (mean, std)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.reports if r.error is not None)


def summarize(config: ExperimentConfig, reports: list) -> RunSummary:
    ok = [r for r in reports if r.error is None]
    table = {}
    for method in METHODS:
        vals = np.array([r.accuracies[method] for r in ok]) if ok else np.array([])
        table[method] = (float(vals.mean()), float(vals.std(ddof=0))) if len(vals) else (
            float("nan"), float("nan"))
    return RunSummary(config, reports, table)


def _worker(payload):
    config, nodes, test, global_train, trial, checkpoint_dir = payload
    try:
        return run_trial(config, nodes, test, global_train, trial,
                         checkpoint_dir=checkpoint_dir)
    except Exception as exc:  # recorded, not fatal to the run
        return TrialReport(trial=trial, error=f"{type(exc).__name__}: {exc}")


def run(config: ExperimentConfig, out_dir=None) -> RunSummary:
    """Execute all trials of a config and write the CSV/Markdown artifacts."""
    global_train, _, test, nodes = prepare_data(config)
    checkpoint_dir = None if out_dir is None else Path(out_dir) / "checkpoints"
    payloads = [(config, nodes, test, global_train, t, checkpoint_dir)
                for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            reports = list(pool.map(_worker, payloads))
    else:
        reports = [_worker(p) for p in payloads]
    summary = summarize(config, reports)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "results.csv",
                  ["experiment_id", "method", "k", "epsilon", "sample_size",
                   "trial", "accuracy", "n_hidden"],
                  _results_rows(config, reports))
        summary_rows = [
            {"experiment_id": config.name, "method": m,
             "mean": _fmt(summary.table[m][0]), "std": _fmt(summary.table[m][1])}
            for m in METHODS
        ]
        write_csv(out / "summary.csv",
                  ["experiment_id", "method", "mean", "std"], summary_rows)
        _write_markdown(out / "summary.md", config, summary)
        _write_messages(out / "messages.json", reports)
        _write_meta(out / "run_meta.json", config, reports)
    return summary


def _write_markdown(path, config, summary: RunSummary) -> None:
    lines = [f"# {config.name}", "",
             "| method | mean | std |", "| --- | --- | --- |"]
    for m in METHODS:
        mean, std = summary.table[m]
        lines.append(f"| {m} | {mean:.3f} | {std:.3f} |")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_messages(path, reports) -> None:
    ok = [r for r in reports if r.error is None]
    record = []
    if ok:
        record = [asdict(m) for m in ok[0].messages]
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def _write_meta(path, config, reports) -> None:
    meta = {
        "experiment_id": config.name,
        "trials": len(reports),
        "failures": [{"trial": r.trial, "error": r.error}
                     for r in reports if r.error is not None],
        "found": [r.found for r in reports if r.error is None],
        "n_hidden": [r.n_hidden for r in reports if r.error is None],
        "wall_time_s": [round(r.wall_time, 3) for r in reports if r.error is None],
    }
    Path(path).write_text(json.dumps(meta, indent=2) + "\n")


def epsilon_grid(config: ExperimentConfig, eps_values: list, out_dir=None) -> list:
    """Intersection outcome and accuracy over a per-node threshold grid (k=2)."""
    if config.k != 2:
        raise ConfigError("epsilon-grid analysis requires k=2")
    if config.model != "logistic":
        raise ConfigError("epsilon-grid analysis requires the convex model")
    global_train, _, test, nodes = prepare_data(config)
    tcfg = replace(config.train, seed=config.base_seed)
    local_models = [
        train_logistic(n.train, replace(tcfg, seed=tcfg.seed + 1 + n.node_id))
        for n in nodes
    ]
    centers = [m.to_weight_vector().values for m in local_models]

    rows = []
    for i, e1 in enumerate(eps_values):
        for j, e2 in enumerate(eps_values):
            search = replace(config.search,
                             seed=int(np.random.SeedSequence(
                                 [config.search.seed, i, j]).generate_state(1)[0]))
            try:
                w, found, _, _ = _convex_aggregate(
                    nodes, local_models, (e1, e2), search,
                    config.fisher_enabled, config.fisher_floor)
            except InfeasibleCenterError:
                w, found = None, False
            if w is None:
                acc, d0, d1 = float("nan"), float("nan"), float("nan")
            else:
                model = LogisticModel.from_flat(
                    w, local_models[0].n_features, local_models[0].n_classes)
                acc = accuracy(model, test) if found else float("nan")
                d0 = float(np.linalg.norm(w - centers[0]))
                d1 = float(np.linalg.norm(w - centers[1]))
            rows.append({"eps_node0": _fmt(e1), "eps_node1": _fmt(e2),
                         "found": str(found).lower(),
                         "accuracy": _fmt(acc) if np.isfinite(acc) else "",
                         "dist_node0": _fmt(d0) if np.isfinite(d0) else "",
                         "dist_node1": _fmt(d1) if np.isfinite(d1) else ""})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "epsilon_grid.csv",
                  ["eps_node0", "eps_node1", "found", "accuracy",
                   "dist_node0", "dist_node1"], rows)
    return rows


def size_sweep(config: ExperimentConfig, settings: list, out_dir=None) -> list:
    """Tuned accuracy and hidden-width tradeoff across (m_eps, eps_hidden) settings."""
    if config.model != "mlp":
        raise ConfigError("size-sweep requires an mlp model")
    global_train, _, test, nodes = prepare_data(config)
    rows = []
    ens_accs = []
    for t in range(config.trials):
        seed = _trial_seed(config.base_seed, t)
        local_cfg = replace(config.train, seed=seed + 1)
        local_models = [
            train_mlp(n.train, config.hidden_size,
                      replace(local_cfg, seed=local_cfg.seed + n.node_id),
                      dropout_rate=config.dropout_rate)
            for n in nodes
        ]
        rng = np.random.default_rng(seed)
        ens_accs.append(ensemble_accuracy(local_models, test, rng))
        for m_eps, eps_hidden in settings:
            result = aggregate_mlp(
                nodes, config.hidden_size, local_cfg, eps_hidden, config.epsilon,
                replace(config.clusters, m_eps=m_eps, seed=seed),
                replace(config.search, seed=seed),
                dropout_rate=config.dropout_rate, local_models=local_models)
            sample = draw_public_sample(nodes, config.finetune.sample_size, seed)
            tuned = fine_tune(result.model, sample, config.finetune,
                              replace(config.train, seed=seed))
            rows.append({"m_eps": m_eps, "eps_hidden": eps_hidden, "trial": t,
                         "accuracy": accuracy(tuned, test),
                         "n_hidden": result.layer.width})

    out_rows = []
    for m_eps, eps_hidden in settings:
        sub = [r for r in rows if r["m_eps"] == m_eps
               and r["eps_hidden"] == eps_hidden]
        accs = np.array([r["accuracy"] for r in sub])
        widths = np.array([r["n_hidden"] for r in sub], dtype=float)
        out_rows.append({
            "method": f"aggregate-tuned(m_eps={m_eps},eps_hidden={_fmt(eps_hidden)})",
            "accuracy_mean": _fmt(accs.mean()), "accuracy_std": _fmt(accs.std(ddof=0)),
            "n_hidden_mean": _fmt(widths.mean()), "n_hidden_std": _fmt(widths.std(ddof=0)),
        })
    ens = np.array(ens_accs)
    out_rows.append({
        "method": "ensemble",
        "accuracy_mean": _fmt(ens.mean()), "accuracy_std": _fmt(ens.std(ddof=0)),
        "n_hidden_mean": _fmt(config.k * config.hidden_size), "n_hidden_std": _fmt(0.0),
    })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "size_sweep.csv",
                  ["method", "accuracy_mean", "accuracy_std",
                   "n_hidden_mean", "n_hidden_std"], out_rows)
    return out_rows


def run_tuning_sweep(config: ExperimentConfig, sizes: list, out_dir=None) -> list:
    """Fine-tuning comparators over growing public-sample sizes."""
    global_train, _, test, nodes = prepare_data(config)
    seed = config.base_seed
    local_cfg = replace(config.train, seed=seed + 1)
    if config.model == "logistic":
        local_models = [
            train_logistic(n.train, replace(local_cfg, seed=local_cfg.seed + n.node_id))
            for n in nodes
        ]
        w, found, _, _ = _convex_aggregate(
            nodes, local_models, config.epsilon,
            replace(config.search, seed=seed),
            config.fisher_enabled, config.fisher_floor)
        agg_model = LogisticModel.from_flat(
            w, local_models[0].n_features, local_models[0].n_classes)
    else:
        result = aggregate_mlp(
            nodes, config.hidden_size, local_cfg, config.epsilon_hidden,
            config.epsilon, replace(config.clusters, seed=seed),
            replace(config.search, seed=seed),
            dropout_rate=config.dropout_rate)
        agg_model, local_models = result.model, result.local_models

    rows = tuning_sweep(
        config.model, nodes, test, agg_model, local_models, sizes,
        ["raw", "tuned-local", "tuned-average", "tuned-aggregate"],
        config.finetune, config.train, hidden_size=config.hidden_size,
        trials=config.trials, base_seed=config.base_seed)
    csv_rows = [{"size": str(r["size"]), "method": r["method"],
                 "mean": _fmt(r["mean"]), "std": _fmt(r["std"])} for r in rows]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "tuning_sweep.csv", ["size", "method", "mean", "std"],
                  csv_rows)
    return rows


def comm_audit(messages: list) -> dict:
    """Round/message/byte accounting per phase from a trial's message log.

    Upstream rounds are phases whose receiver is the coordinator; the
    broadcast count covers coordinator-to-all phases.
    """
    phases = {}
    for m in messages:
        rec = phases.setdefault(m["phase"] if isinstance(m, dict) else m.phase,
                                {"messages": 0, "bytes": 0, "upstream": False})
        rec["messages"] += 1
        rec["bytes"] += m["n_bytes"] if isinstance(m, dict) else m.n_bytes
        receiver = m["receiver"] if isinstance(m, dict) else m.receiver
        rec["upstream"] = receiver == "coordinator"
    upstream_rounds = sum(1 for rec in phases.values() if rec["upstream"])
    broadcasts = sum(1 for rec in phases.values() if not rec["upstream"])
    return {"phases": phases, "upstream_rounds": upstream_rounds,
            "broadcasts": broadcasts}


def comm_audit_from_dir(out_dir) -> dict:
    path = Path(out_dir) / "messages.json"
    if not path.exists():
        raise ConfigError(f"no messages.json under {out_dir}; run an experiment first")
    return comm_audit(json.loads(path.read_text()))
