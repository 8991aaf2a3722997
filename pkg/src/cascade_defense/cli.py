"""Experiment driver.

``cascade-defense gen`` writes a graph and its node features;
``cascade-defense pipeline`` runs data generation, counterfactual
augmentation, predictor training, baselines and evaluation, and leaves
everything needed to regenerate the results in one run directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
import typing
import warnings
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .cascade import SHORTEST_PATH, CascadeModel
from .cfda import MODES as CFDA_MODES, REPLAY, counterfactual_growth, generate_counterfactual_dataset
from .datagen import TrialSet, deduplicate, generate_factual_dataset, partition_subaction_spaces, \
    sample_uniform_dataset, save_dataset
from .errors import CascadeDefenseError, ConfigError
from .evaluation import ExploiterConfig, append_metrics, exploitability, kl_to_ne, save_report
from .game import ActionSpace, CascadeSizeCache, build_payoff_matrix, solve_zero_sum_ne
from .graph import GRAPH_MODELS, LOAD_MODES, SINGLE_PATH, THRESHOLD, Graph, capacities_from_loads, \
    generate_graph, load_edge_list, load_features, random_thresholds, save_edge_list, save_features
from .predictor import ACTIVATIONS, OPTIMIZERS, PredictorModel, TrainConfig, save_checkpoint, train, \
    validation_error
from .strategy import SynthesizedStrategy, save_strategy, strategy_restricted_baseline, synthesize_from_predictor

CASCADES = (THRESHOLD, SHORTEST_PATH)
EXACT_NE_MAX_NODES = 25
EXIT_CONFIG = 2
EXIT_STAGE = 3
# pairs tried per growth-curve point before the count is extrapolated
GROWTH_MAX_PAIRS = 10_000_000

# metric row labels
EXACT = "exact-NE"
BASE = "baseline"
NN = "NN"
SUBACT = "NN+Subact"
CFDA = "NN+Subact+CfDA"


@dataclass
class GraphSpec:
    model: str = "erdos-renyi"
    n: int = 25
    params: dict = field(default_factory=dict)


@dataclass
class FeatureSpec:
    alpha: float = 0.25
    c0: float = 1.0
    load_mode: str = SINGLE_PATH


@dataclass
class DataSpec:
    pool_size: int = 5
    subspaces: int | None = None
    trials: int = 100
    cap_factor: float = 10.0
    cfda_mode: str = REPLAY
    validation_trials: int = 2000
    validation_sampling: str = "subaction"
    growth_fractions: list = field(default_factory=lambda: [0.25, 0.5, 1.0])


@dataclass
class PredictorSpec:
    embedding_dim: int = 64
    hidden: int = 256
    depth: int = 3
    activation: str = "relu"


@dataclass
class TrainSpec:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    cfda_weight: float = 1.0
    max_steps: int | None = None
    grad_shards: int = 1


@dataclass
class EvalSpec:
    baseline_samples: int = 2000
    k_candidates: int | None = None
    arm_pool_size: int = 1000
    pulls_budget: int | None = None
    eval_plays: int = 5000
    self_play: int = 10_000
    exact_ne_max_nodes: int = EXACT_NE_MAX_NODES


@dataclass
class Seeds:
    graph: int = 0
    features: int = 1
    subspaces: int = 2
    factual: int = 3
    cfda: int = 4
    uniform: int = 5
    validation: int = 6
    init: int = 7
    training: int = 8
    synthesis: int = 9
    baseline: int = 10
    exploiter: int = 11

    @classmethod
    def derived(cls, master: int) -> "Seeds":
        return cls(**{f.name: 1000 * master + i for i, f in enumerate(dataclasses.fields(cls))})


@dataclass
class ExperimentConfig:
    run_id: str = "run"
    seed: int = 0
    cascade: str = THRESHOLD
    graph: GraphSpec = field(default_factory=GraphSpec)
    features: FeatureSpec = field(default_factory=FeatureSpec)
    data: DataSpec = field(default_factory=DataSpec)
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    seeds: Seeds | None = None
    threads: int | None = None
    out: str = "runs/run"
    record_times: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def resolved(self) -> "ExperimentConfig":
        """Copy with every seed, thread count and size-dependent default filled in."""
        cfg = _build(ExperimentConfig, self.to_dict(), "")
        n = cfg.graph.n
        if cfg.seeds is None:
            cfg.seeds = Seeds.derived(cfg.seed)
        if cfg.threads is None:
            cfg.threads = os.cpu_count() or 1
        if cfg.data.subspaces is None:
            cfg.data.subspaces = 3 * n
        if cfg.evaluation.k_candidates is None:
            cfg.evaluation.k_candidates = comb(n, 2) if n <= 25 else (200 if n <= 100 else 400)
        if cfg.evaluation.pulls_budget is None:
            cfg.evaluation.pulls_budget = 50_000 if n <= 25 else (200_000 if n <= 100 else 500_000)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        checks = [
            ("cascade", self.cascade in CASCADES, f"must be one of {CASCADES}"),
            ("graph.model", self.graph.model in GRAPH_MODELS, f"must be one of {GRAPH_MODELS}"),
            ("graph.n", self.graph.n >= 4, "must be at least 4"),
            ("features.alpha", self.features.alpha >= 0, "must be non-negative"),
            ("features.c0", self.features.c0 > 0, "must be positive"),
            ("features.load_mode", self.features.load_mode in LOAD_MODES, f"must be one of {LOAD_MODES}"),
            ("data.pool_size", 2 <= self.data.pool_size <= self.graph.n, "must lie in [2, graph.n]"),
            ("data.subspaces", self.data.subspaces is None or self.data.subspaces >= 2, "must be at least 2"),
            ("data.trials", 1 <= self.data.trials <= comb(self.data.pool_size, 2) ** 2,
             "must lie in [1, (pool_size choose 2)^2]"),
            ("data.cap_factor", self.data.cap_factor >= 0, "must be non-negative"),
            ("data.cfda_mode", self.data.cfda_mode in CFDA_MODES, f"must be one of {CFDA_MODES}"),
            ("data.validation_trials", self.data.validation_trials >= 1, "must be positive"),
            ("data.validation_sampling", self.data.validation_sampling in ("subaction", "uniform"),
             "must be subaction or uniform"),
            ("data.growth_fractions", all(0 < f <= 1 for f in self.data.growth_fractions),
             "entries must lie in (0, 1]"),
            ("predictor.activation", self.predictor.activation in ACTIVATIONS, f"must be one of {ACTIVATIONS}"),
            ("predictor.depth", self.predictor.depth >= 1, "must be positive"),
            ("train.optimizer", self.train.optimizer in OPTIMIZERS, f"must be one of {OPTIMIZERS}"),
            ("train.epochs", self.train.epochs >= 1, "must be positive"),
            ("train.cfda_weight", 0 <= self.train.cfda_weight <= 1, "must lie in [0, 1]"),
            ("evaluation.baseline_samples", self.evaluation.baseline_samples >= 1, "must be positive"),
            ("evaluation.k_candidates", self.evaluation.k_candidates is None
             or 1 <= self.evaluation.k_candidates <= comb(self.graph.n, 2), "must lie in [1, |A|]"),
            ("threads", self.threads is None or self.threads >= 1, "must be positive"),
        ]
        for path, ok, why in checks:
            if not ok:
                raise ConfigError(f"{path}: {why}")

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.optimizer, self.seeds.training,
                           t.cfda_weight, t.max_steps, t.grad_shards, self.threads)

    def exploiter_config(self) -> ExploiterConfig:
        e = self.evaluation
        return ExploiterConfig(e.arm_pool_size, e.pulls_budget, seed=self.seeds.exploiter,
                               eval_plays=e.eval_plays, self_play=e.self_play)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}" if path else name
        sub = _dataclass_in(hints[name])
        if sub is not None and value is not None:
            value = _build(sub, value, where)
        elif value is not None:
            value = _coerce(hints[name], value, where)
        kwargs[name] = value
    return cls(**kwargs)


def _dataclass_in(hint):
    for arg in typing.get_args(hint) or (hint,):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def _coerce(hint, value, where):
    kinds = [a for a in (typing.get_args(hint) or (hint,)) if a is not type(None)]
    base = typing.get_origin(kinds[0]) or kinds[0]
    if base is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if base is bool and isinstance(value, bool):
        return value
    if base is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if base in (str, dict, list) and isinstance(value, base):
        return value
    raise ConfigError(f"{where}: expected {base.__name__}, got {type(value).__name__}")


# -- stages --------------------------------------------------------------------


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Stages:
    def __init__(self):
        self.times = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except (CascadeDefenseError, ValueError, OSError, ArithmeticError) as exc:
            raise StageFailure(name, exc) from exc
        self.times[name] = time.perf_counter() - t0
        return out


def build_model(cfg: ExperimentConfig) -> CascadeModel:
    g = generate_graph(cfg.graph.model, cfg.graph.n, cfg.seeds.graph, **dict(cfg.graph.params))
    if cfg.cascade == THRESHOLD:
        feats = random_thresholds(g.n, cfg.seeds.features)
    else:
        feats = capacities_from_loads(g, cfg.features.alpha, cfg.features.c0, cfg.features.load_mode)
    return CascadeModel(cfg.cascade, g, feats)


def cmd_gen(cfg: ExperimentConfig) -> tuple:
    """Write ``graph.edges`` and ``features.txt`` into the output directory."""
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    save_edge_list(model.graph, out / "graph.edges")
    save_features(model.features, out / "features.txt")
    return out / "graph.edges", out / "features.txt"


def load_model(out: Path, cfg: ExperimentConfig) -> CascadeModel:
    g = load_edge_list(out / "graph.edges")
    return CascadeModel(cfg.cascade, g, load_features(out / "features.txt", g, cfg.features.load_mode))


# settings that decide where and how fast a run goes, not what it produces
EXECUTION_FIELDS = ("out", "threads", "record_times")


def input_hash(cfg: ExperimentConfig, out: Path) -> str:
    """Digest of the result-determining config fields and the generated inputs."""
    h = hashlib.sha256()
    spec = {k: v for k, v in cfg.to_dict().items() if k not in EXECUTION_FIELDS}
    for blob in (json.dumps(spec, sort_keys=True).encode(), (out / "graph.edges").read_bytes(), (out / "features.txt").read_bytes()):
        h.update(hashlib.sha256(blob).digest())
    return h.hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def matrix_size_curve(max_n: int) -> list:
    sizes = sorted({5, 10, 25, 50, 100, 250, 500, 1000, max_n})
    return [(n, comb(n, 2), comb(n, 2) ** 2) for n in sizes]


def _factual_stage(model, cfg):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spaces = partition_subaction_spaces(model.n, cfg.data.pool_size, cfg.data.subspaces, cfg.seeds.subspaces)
    fac = generate_factual_dataset(model, spaces, cfg.data.trials, cfg.seeds.factual, cfg.threads)
    fac, removed = deduplicate(fac)
    return spaces, fac, removed, [str(w.message) for w in caught]


def _uniform_stage(model, cfg, count):
    # the unpartitioned ablation gets as many distinct trials as the partitioned data kept
    return sample_uniform_dataset(model, count, cfg.seeds.uniform, None, cfg.threads)


def _validation_stage(model, cfg, exclude):
    want = cfg.data.validation_trials
    if cfg.data.validation_sampling == "uniform":
        room = comb(model.n, 2) ** 2 - len(exclude)
        return sample_uniform_dataset(model, min(want, room), cfg.seeds.validation, exclude, cfg.threads)
    # fresh subaction pools drawn like the training data, minus every joint action seen in training
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spaces = partition_subaction_spaces(model.n, cfg.data.pool_size, cfg.data.subspaces, cfg.seeds.validation)
    per_space = min(cfg.data.trials, -(-2 * want // len(spaces)))
    trials, _ = deduplicate(generate_factual_dataset(model, spaces, per_space, cfg.seeds.validation, cfg.threads))
    fresh = np.flatnonzero(~np.isin(trials.keys(), exclude))
    pick = np.random.default_rng(cfg.seeds.validation).permutation(fresh)[:want]
    return trials.take(np.sort(pick))


def _train_stage(model, data, cfg, x):
    p = cfg.predictor
    net = PredictorModel.for_features(x, b=p.embedding_dim, h=p.hidden, depth=p.depth, activation=p.activation,
                                      seed=cfg.seeds.init)
    return train(net, data, x, cfg.train_config())


def run_pipeline(cfg: ExperimentConfig, log=print) -> dict:
    """Run every stage; returns the metric rows plus in-memory artifacts."""
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("data", "models", "strategies", "reports", "plots"):
        (out / sub).mkdir(exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    stages = _Stages()
    log = log or (lambda *a: None)

    stages.run("gen", cmd_gen, cfg)
    model = stages.run("gen", load_model, out, cfg)
    (out / "inputs.sha256").write_text(input_hash(cfg, out) + "\n")
    _json(out / "seeds.json", dataclasses.asdict(cfg.seeds))
    x = model.features.values
    space = ActionSpace.full(model.n)
    cache = CascadeSizeCache(model)
    log(f"[gen] {model.graph.n} nodes, {model.graph.n_edges} edges, {cfg.cascade}")

    spaces, fac, removed, notes = stages.run("factual", _factual_stage, model, cfg)
    save_dataset(fac, out / "data" / "factual.jsonl",
                 {"M": cfg.data.pool_size, "p": cfg.data.subspaces, "q": cfg.data.trials,
                  "graph_seed": cfg.seeds.graph, "cascade": cfg.cascade, "duplicates_removed": removed,
                  "warnings": notes})
    log(f"[factual] {len(fac)} trials ({removed} duplicates removed)")

    cf, cf_stats = stages.run("cfda", generate_counterfactual_dataset, fac, model, cfg.data.cap_factor,
                              cfg.seeds.cfda, cfg.data.cfda_mode)
    save_dataset(cf, out / "data" / "counterfactual.jsonl", {"cap_factor": cfg.data.cap_factor,
                                                              "mode": cfg.data.cfda_mode})
    stats = cf_stats.to_dict()
    timing = {k: stats.pop(k) for k in ("ms_per_fac", "ms_per_cfac")}
    _json(out / "reports" / "cfda_stats.json", stats)
    sizes = sorted({max(1, int(round(f * len(fac)))) for f in cfg.data.growth_fractions})
    growth = stages.run("cfda", counterfactual_growth, fac, model, sizes, cfg.seeds.cfda, GROWTH_MAX_PAIRS)
    _write_csv(out / "plots" / "counterfactual_growth.csv", ["n_factual", "n_counterfactual", "estimated"],
               [(f, c, int(e)) for f, c, e in growth])
    _write_csv(out / "plots" / "payoff_matrix_size.csv", ["n_nodes", "n_actions", "n_entries"],
               matrix_size_curve(model.n))
    log(f"[cfda] {len(cf)} counterfactual trials accepted")

    uni = stages.run("uniform", _uniform_stage, model, cfg, len(fac))
    save_dataset(uni, out / "data" / "uniform.jsonl", {"count": len(uni), "seed": cfg.seeds.uniform})
    seen = np.unique(np.concatenate([fac.keys(), cf.keys(), uni.keys()]))
    val = stages.run("validation", _validation_stage, model, cfg, seen)
    save_dataset(val, out / "data" / "validation.jsonl", {"count": len(val), "seed": cfg.seeds.validation,
                                                           "sampling": cfg.data.validation_sampling})

    variants = {NN: uni, SUBACT: fac, CFDA: TrialSet.concat([fac, cf])}
    nets, history_rows = {}, []
    for name, data in variants.items():
        net, hist = stages.run(f"train:{name}", _train_stage, model, data, cfg, x)
        nets[name] = net
        save_checkpoint(net, out / "models" / f"{_slug(name)}.bin", cfg.train_config())
        history_rows += [(name, e, f"{v:.9g}") for e, v in enumerate(hist)]
        log(f"[train] {name}: {len(data)} trials, final loss {hist[-1]:.4f}")
    _write_csv(out / "reports" / "train_history.csv", ["method", "epoch", "loss"], history_rows)

    base = stages.run("baseline", strategy_restricted_baseline, model, space, cfg.evaluation.baseline_samples,
                      cfg.seeds.baseline, cache)
    _json(out / "reports" / "baseline_meta_game.json",
          {"attacker_meta_actions": [n for n, _ in base.attacker_meta_actions],
           "defender_meta_actions": [n for n, _ in base.defender_meta_actions],
           "payoff": base.payoff.tolist(), "ne_attacker": base.ne_attacker.tolist(),
           "ne_defender": base.ne_defender.tolist(), "value": base.value})
    strategies = {BASE: (base.attacker_strategy(), base.defender_strategy())}
    for name, net in nets.items():
        strategies[name] = stages.run(f"synthesize:{name}", synthesize_from_predictor, net, space, x,
                                      cfg.evaluation.k_candidates, cfg.seeds.synthesis)

    P = ne = None
    if model.n <= cfg.evaluation.exact_ne_max_nodes:
        P = stages.run("exact-ne", build_payoff_matrix, model, space, space, threads=cfg.threads, cache=cache)
        a, d, value = stages.run("exact-ne", solve_zero_sum_ne, P.astype(np.float64))
        ne = (SynthesizedStrategy.from_dense(space, a, EXACT), SynthesizedStrategy.from_dense(space, d, EXACT))
        strategies = {EXACT: ne, **strategies}
        _json(out / "reports" / "exact_ne.json", {"status": "solved", "value": value})
        log(f"[exact-ne] value {value:.6f}")
    else:
        _json(out / "reports" / "exact_ne.json",
              {"status": "infeasible", "reason": f"{model.n} nodes exceeds {cfg.evaluation.exact_ne_max_nodes}"})
        log("[exact-ne] infeasible at this size, KL column left empty")

    rows, reports = [], {}
    xcfg = cfg.exploiter_config()
    for name, (sa, sd) in strategies.items():
        save_strategy(sa, out / "strategies" / f"{_slug(name)}_attacker.json")
        save_strategy(sd, out / "strategies" / f"{_slug(name)}_defender.json")
        rep = stages.run(f"eval:{name}", exploitability, model, sa, sd, xcfg, P, cache)
        save_report(rep, out / "reports" / f"{_slug(name)}_exploitability.json")
        reports[name] = rep
        row = {"run_id": cfg.run_id, "method": name, "n_nodes": model.n, "cascade": cfg.cascade,
               "kl": kl_to_ne(sa, sd, *ne) if ne else "", "exploitability": rep.delta,
               "val_err": validation_error(nets[name], val, x) if name in nets else "",
               "wall_time_s": _method_time(stages.times, name) if cfg.record_times else ""}
        rows.append(row)
        log(f"[eval] {name}: kl={_show(row['kl'])} exploitability={rep.delta:.4f} val_err={_show(row['val_err'])}")
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()
    append_metrics(metrics, rows)
    # wall-clock numbers are the only run-to-run variation, so they live apart from the other outputs
    if cfg.record_times:
        _json(out / "reports" / "timings.json", {"stages": stages.times, "cfda": timing})
    return {"config": cfg, "model": model, "rows": rows, "reports": reports, "strategies": strategies,
            "predictors": nets, "datasets": {**variants, "validation": val}, "cfda_stats": cf_stats,
            "payoff": P, "growth": growth, "out": out}


def _method_time(times, name):
    return sum(v for k, v in times.items() if k.endswith(":" + name) or (name == EXACT and k == "exact-ne")
               or (name == BASE and k == "baseline"))


def _slug(name: str) -> str:
    return name.lower().replace("+", "_").replace("-", "_")


def _show(v):
    return f"{v:.4f}" if isinstance(v, float) else "-"


# -- command line ---------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--nodes", type=int)
    common.add_argument("--graph-model", choices=GRAPH_MODELS)
    common.add_argument("--cascade", choices=CASCADES)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--threads", type=int)
    common.add_argument("--subspaces", type=int, help="number of subaction spaces (p)")
    common.add_argument("--pool-size", type=int, help="nodes per subaction space (M)")
    common.add_argument("--trials", type=int, help="trials per subaction space (q)")
    common.add_argument("--cap-factor", type=float)
    common.add_argument("--cfda-mode", choices=CFDA_MODES, help="counterfactual validation (default replay)")
    common.add_argument("--load-mode", choices=LOAD_MODES, help="shortest-path load counting")
    common.add_argument("--epochs", type=int)
    common.add_argument("--record-times", action="store_true", help="fill wall_time_s (breaks byte-identity)")
    p = argparse.ArgumentParser(prog="cascade-defense", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write graph and feature files")
    sub.add_parser("pipeline", parents=[common], help="run the full experiment")
    sub.add_parser("config", parents=[common], help="print the resolved config")
    return p


def config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        data = ExperimentConfig.from_json(text).to_dict()
    overrides = {
        ("graph", "n"): args.nodes, ("graph", "model"): args.graph_model, ("cascade",): args.cascade,
        ("out",): args.out, ("threads",): args.threads, ("data", "subspaces"): args.subspaces,
        ("data", "pool_size"): args.pool_size, ("data", "trials"): args.trials,
        ("data", "cap_factor"): args.cap_factor, ("train", "epochs"): args.epochs,
        ("data", "cfda_mode"): args.cfda_mode, ("features", "load_mode"): args.load_mode,
    }
    for keys, value in overrides.items():
        if value is not None:
            node = data
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
    if args.seed is not None:
        data["seed"] = args.seed
        data["seeds"] = None
    if args.record_times:
        data["record_times"] = True
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_from_args(args).resolved()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "config":
            sys.stdout.write(cfg.to_json())
        elif args.command == "gen":
            for path in cmd_gen(cfg):
                print(path)
        else:
            run_pipeline(cfg)
            print(Path(cfg.out) / "metrics.csv")
    except StageFailure as exc:
        print(f"error: {exc} (partial artifacts kept in {cfg.out})", file=sys.stderr)
        return EXIT_STAGE
    except CascadeDefenseError as exc:
        print(f"error: stage 'gen' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
