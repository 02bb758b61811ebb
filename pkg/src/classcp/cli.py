"""Command line entry point: ``classcp {ingest,fit,evaluate,synth}``.

Settings are resolved in increasing order of precedence: built-in defaults,
``CLASSCP_<NAME>`` environment variables (e.g. ``CLASSCP_RANK=3``), command
line flags, then the JSON document given with ``--config``. The resolved
settings can be saved with ``--write-config`` and fed back unchanged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import artifacts
from .evaluation import METHODS, learning_curve, run_experiment, table_rows
from .factorization import FitConfig, LabelBlock, fit_class_cp
from .ingestion import UNLABELED, build_tensor, filter_min_degree, parse_bundle, write_bundle
from .synthgen import SynthSpec, generate_planted, planted_bundle
from .tensor import SingularMatrixError

ENV_PREFIX = "CLASSCP_"
SWEEP_RANKS = (2, 3, 5, 10, 15, 20)


@dataclass
class RunConfig:
    # factorization
    rank: int = 5
    lambda_g: float = 1.0
    tol: float = 1e-4
    max_iters: int = 100
    restarts: int = 5
    ridge: float = 1e-9
    seed: int = 0
    jobs: int = 1
    ranks: list[int] | None = None
    # ingestion / evaluation
    min_degree: int = 3
    single_pass: bool = False
    train_fraction: float = 0.8
    repeats: int = 10
    learning_curve: bool = False
    fractions: list[float] = field(
        default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    # synthetic data
    synthetic: bool = False
    p: int = 60
    u: int = 40
    classes: int = 2
    synth_rank: int = 2
    noise_flip_prob: float = 0.0
    community_count: int = 2
    # paths
    engagements: str | None = None
    links: str | None = None
    labels: str | None = None
    data: str | None = None
    out: str | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(base or cls(), **{k: _coerce(k, v) for k, v in d.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def fit_config(self, rank: int | None = None) -> FitConfig:
        return FitConfig(rank=rank or self.rank, lambda_g=self.lambda_g, max_iters=self.max_iters,
                         tol=self.tol, seed=self.seed, restarts=self.restarts, ridge=self.ridge)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(p=self.p, u=self.u, rank=self.synth_rank, classes=self.classes,
                         noise_flip_prob=self.noise_flip_prob,
                         community_count=self.community_count, seed=self.seed)


_INT = {"rank", "max_iters", "restarts", "seed", "jobs", "min_degree", "repeats",
        "p", "u", "classes", "synth_rank", "community_count"}
_FLOAT = {"lambda_g", "tol", "ridge", "train_fraction", "noise_flip_prob"}
_BOOL = {"single_pass", "learning_curve", "synthetic"}


def _coerce(name: str, value):
    """Convert config or environment values (possibly strings) to the field's type."""
    if value is None:
        return None
    if name in _INT:
        return int(value)
    if name in _FLOAT:
        return float(value)
    if name in _BOOL:
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(f"cannot read {value!r} as a boolean for {name}")
            return lowered in ("1", "true", "yes")
        return bool(value)
    if name == "ranks":
        items = value.split(",") if isinstance(value, str) else value
        return [int(x) for x in items]
    if name == "fractions":
        items = value.split(",") if isinstance(value, str) else value
        return [float(x) for x in items]
    if name == "methods":
        items = value.split(",") if isinstance(value, str) else value
        return [str(x) for x in items]
    return str(value)


def _env_overrides(environ) -> dict:
    names = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = value
    return out


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON settings document; overrides flags")
    parser.add_argument("--write-config", metavar="PATH",
                        help="write the resolved settings as JSON")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="parallel restarts / repeats")
    parser.add_argument("--out", help="output directory")


def _add_fit_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--rank", type=int)
    parser.add_argument("--lambda-g", dest="lambda_g", type=float)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iters", dest="max_iters", type=int)
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--ridge", type=float)


def _add_raw_inputs(parser: argparse.ArgumentParser):
    parser.add_argument("--engagements", help="post_id<TAB>user_id file")
    parser.add_argument("--links", help="follower_id<TAB>followee_id file")
    parser.add_argument("--labels", help="post_id<TAB>real|fake file")
    parser.add_argument("--min-degree", dest="min_degree", type=int)
    parser.add_argument("--single-pass", dest="single_pass", action="store_const", const=True,
                        help="remove low-degree users once instead of to a fixpoint")


def _add_synth_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--p", type=int, help="number of posts")
    parser.add_argument("--u", type=int, help="number of users")
    parser.add_argument("--classes", type=int)
    parser.add_argument("--synth-rank", dest="synth_rank", type=int)
    parser.add_argument("--noise-flip-prob", dest="noise_flip_prob", type=float)
    parser.add_argument("--community-count", dest="community_count", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse input files and write the tensor")
    _add_common(p)
    _add_raw_inputs(p)

    p = sub.add_parser("fit", help="fit CLASS-CP on an ingested dataset")
    _add_common(p)
    _add_fit_flags(p)
    p.add_argument("--data", help="directory written by 'ingest' or 'synth'")
    p.add_argument("--ranks", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated rank sweep, one report per rank")
    p.add_argument("--rank-sweep", dest="rank_sweep", action="store_true",
                   help=f"sweep ranks {','.join(map(str, SWEEP_RANKS))}")

    p = sub.add_parser("evaluate", help="repeated-split evaluation of CLASS-CP and baselines")
    _add_common(p)
    _add_fit_flags(p)
    _add_raw_inputs(p)
    _add_synth_flags(p)
    p.add_argument("--data", help="directory written by 'ingest' or 'synth'")
    p.add_argument("--synthetic", action="store_const", const=True,
                   help="generate planted data instead of reading files")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--learning-curve", dest="learning_curve", action="store_const", const=True,
                   help="sweep the labeled fraction instead of a single evaluation")
    p.add_argument("--fractions", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--methods", type=lambda s: s.split(","))

    p = sub.add_parser("synth", help="write a planted synthetic dataset")
    _add_common(p)
    _add_synth_flags(p)
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cfg = RunConfig.from_dict(_env_overrides(environ))
    names = {f.name for f in fields(RunConfig)}
    flags = {k: v for k, v in vars(args).items() if k in names and v is not None}
    if getattr(args, "rank_sweep", False):
        flags["ranks"] = list(SWEEP_RANKS)
    cfg = RunConfig.from_dict(flags, base=cfg)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = RunConfig.from_dict(json.load(fh), base=cfg)
    return cfg


def _require_out(cfg: RunConfig) -> str:
    if not cfg.out:
        raise ValueError("--out is required")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _load_raw(cfg: RunConfig):
    missing = [n for n in ("engagements", "links", "labels") if not getattr(cfg, n)]
    if missing:
        raise ValueError("missing input file flags: " + ", ".join(f"--{m}" for m in missing))
    bundle = parse_bundle(cfg.engagements, cfg.links, cfg.labels)
    return filter_min_degree(bundle, cfg.min_degree, single_pass=cfg.single_pass)


def _load_data_dir(path: str):
    t = artifacts.read_tensor(os.path.join(path, "tensor.coo"))
    labels = artifacts.read_index_labels(os.path.join(path, "labels_index.tsv"), t.shape[0])
    return t, labels


def cmd_ingest(cfg: RunConfig) -> int:
    bundle = _load_raw(cfg)
    t = build_tensor(bundle)
    out = _require_out(cfg)
    artifacts.write_tensor(t, os.path.join(out, "tensor.coo"))
    artifacts.write_index_labels(bundle.labels, os.path.join(out, "labels_index.tsv"))
    artifacts.write_id_map(bundle.post_ids, os.path.join(out, "posts.tsv"))
    artifacts.write_id_map(bundle.user_ids, os.path.join(out, "users.tsv"))
    summary = {
        "posts": bundle.post_count,
        "users": bundle.user_count,
        "entries": t.nnz,
        "social_links": int(len(bundle.graph.edges)),
        "engagements": int(len(bundle.engagements.pairs)),
        "real": int(np.sum(bundle.labels == 0)),
        "fake": int(np.sum(bundle.labels == 1)),
        "min_degree": cfg.min_degree,
    }
    artifacts.write_json(summary, os.path.join(out, "summary.json"))
    print(f"posts={summary['posts']} users={summary['users']} entries={summary['entries']}")
    return 0


def _fit_one(t, labels, cfg: RunConfig, rank: int, out: str):
    labeled = np.flatnonzero(labels != UNLABELED)
    lb = LabelBlock.from_classes(labeled, labels[labeled])
    fs, w, report = fit_class_cp(t, lb, cfg.fit_config(rank), jobs=cfg.jobs)
    os.makedirs(out, exist_ok=True)
    for name, m in (("A", fs.a), ("B", fs.b), ("C", fs.c), ("W", w.w)):
        artifacts.write_matrix(m, os.path.join(out, f"{name}.txt"))
    doc = report.to_dict()
    doc["rank"] = rank
    artifacts.write_json(doc, os.path.join(out, "report.json"))
    with artifacts.open_text(os.path.join(out, "iterations.tsv")) as fh:
        fh.write("iteration\tf\tg\trelative_change\n")
        for n, rec in enumerate(report.records, start=1):
            fh.write(f"{n}\t{rec.f!r}\t{rec.g!r}\t{rec.relative_change!r}\n")
    print(f"rank={rank} iterations={report.iterations_run} converged={report.converged} "
          f"objective={report.final_objective:.6g} relative_error={report.relative_error:.3e}")
    return report


def cmd_fit(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ValueError("--data is required")
    t, labels = _load_data_dir(cfg.data)
    out = _require_out(cfg)
    if cfg.ranks:
        for rank in cfg.ranks:
            _fit_one(t, labels, cfg, rank, os.path.join(out, f"rank_{rank}"))
    else:
        _fit_one(t, labels, cfg, cfg.rank, out)
    return 0


def _evaluation_inputs(cfg: RunConfig):
    if cfg.synthetic:
        t, labels, _ = generate_planted(cfg.synth_spec())
        return t, labels
    if cfg.data:
        return _load_data_dir(cfg.data)
    bundle = _load_raw(cfg)
    return build_tensor(bundle), bundle.labels


def _write_table(table, path_stem: str, extra=None) -> dict:
    doc = {method: record.to_dict() for method, record in table.items()}
    with artifacts.open_text(path_stem + ".tsv") as fh:
        prefix = "" if extra is None else "train_fraction\t"
        fh.write(prefix + "method\tmetric\tmean\tstd\tvalues\n")
        for method, name, mean, std, values in table_rows(table):
            lead = "" if extra is None else f"{extra!r}\t"
            fh.write(f"{lead}{method}\t{name}\t{mean!r}\t{std!r}\t"
                     + ",".join(repr(float(v)) for v in values) + "\n")
    return doc


def cmd_evaluate(cfg: RunConfig) -> int:
    t, labels = _evaluation_inputs(cfg)
    out = _require_out(cfg)
    seeds = [cfg.seed + n for n in range(cfg.repeats)]
    fit_cfg = cfg.fit_config()
    if cfg.learning_curve:
        curve = learning_curve(t, labels, fit_cfg, cfg.fractions, seeds,
                               methods=tuple(cfg.methods), jobs=cfg.jobs)
        doc = {}
        with artifacts.open_text(os.path.join(out, "learning_curve.tsv")) as fh:
            fh.write("train_fraction\tmethod\tmean_f1\tstd_f1\n")
            for frac, table in curve.items():
                doc[repr(frac)] = {m: r.to_dict() for m, r in table.items()}
                for method, record in table.items():
                    fh.write(f"{frac!r}\t{method}\t{record.mean('f1')!r}\t"
                             f"{record.std('f1')!r}\n")
                    print(f"fraction={frac:g} {method} f1={record.mean('f1'):.3f}")
        artifacts.write_json(doc, os.path.join(out, "learning_curve.json"))
        return 0

    table = run_experiment(t, labels, fit_cfg, seeds, repeats=cfg.repeats,
                           train_fraction=cfg.train_fraction, methods=tuple(cfg.methods),
                           jobs=cfg.jobs)
    doc = _write_table(table, os.path.join(out, "metrics"))
    artifacts.write_json(doc, os.path.join(out, "metrics.json"))
    for method, record in table.items():
        print(f"{method}: " + " ".join(
            f"{n}={record.mean(n):.3f}+-{record.std(n):.3f}"
            for n in ("accuracy", "precision", "recall", "f1")))
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.synth_spec()
    out = _require_out(cfg)
    bundle = planted_bundle(spec)
    write_bundle(bundle, out)
    t, labels, truth = generate_planted(spec)
    artifacts.write_tensor(t, os.path.join(out, "tensor.coo"))
    artifacts.write_index_labels(labels, os.path.join(out, "labels_index.tsv"))
    for name, m in (("A", truth.a), ("B", truth.b), ("C", truth.c)):
        artifacts.write_matrix(m, os.path.join(out, f"truth_{name}.txt"))
    print(f"posts={spec.p} users={spec.u} entries={t.nnz}")
    return 0


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "evaluate": cmd_evaluate, "synth": cmd_synth}


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
        if args.write_config:
            with artifacts.open_text(args.write_config) as fh:
                fh.write(cfg.to_json() + "\n")
        return COMMANDS[args.command](cfg)
    except SingularMatrixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
