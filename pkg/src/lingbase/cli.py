"""Command-line front end.

Every command works inside one ``--workdir``. Outputs land in fixed
subdirectories and ``manifest.json`` at the top lists every file with its
sha256, together with the seed and configuration of each command run.
Exit codes: 0 success, 1 invariant failure, 2 input error.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .analytics import (
    ALL_LEVELS,
    coverage,
    format_table,
    sparsity,
    sparsity_reduction,
    write_rows,
)
from .completion import CompletionConfig
from .distances import distance_matrix, read_distance_matrix, write_distance_matrix
from .fixtures import FixtureSpec, write_bundle
from .ingest import read_features, write_catalog, write_features
from .model import validate_matrix
from .phylogeny import lineage_impute
from . import pipeline

MANIFEST = "manifest.json"
DATASET = "dataset"
DISTANCE_CATEGORIES = ("script", "syntactic", "phonological", "inventory", "morphological", "typological")
INPUTS = ("dataset", *pipeline.METHODS)


class InputError(Exception):
    """Missing or unusable input; maps to exit code 2."""


class InvariantError(Exception):
    """An output failed its own invariants; maps to exit code 1."""


@dataclasses.dataclass
class RunConfig:
    command: str
    workdir: str
    seed: int
    options: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --- manifest ------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def update_manifest(workdir: Path, config: RunConfig) -> None:
    path = workdir / MANIFEST
    manifest = {"version": __version__, "runs": [], "files": {}}
    if path.exists():
        manifest = json.loads(path.read_text("utf-8"))
    entry = config.to_dict()
    entry["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    manifest["runs"].append(entry)
    manifest["seed"] = config.seed
    manifest["files"] = {
        p.relative_to(workdir).as_posix(): _sha256(p)
        for p in sorted(workdir.rglob("*")) if p.is_file() and p.name != MANIFEST
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", "utf-8")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise InputError(f"missing {path}; run `lingbase {producer}` first")
    return path


def _completion_config(args) -> CompletionConfig:
    return CompletionConfig(
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        validation_fraction=args.validation_fraction,
        seed=args.seed,
    )


def _load_dataset(workdir: Path) -> pipeline.Dataset:
    _require(workdir / DATASET / "languages.csv", "ingest")
    return pipeline.load_dataset(workdir / DATASET)


def _check(m, what: str) -> None:
    problems = validate_matrix(m)
    if problems:
        raise InvariantError(f"{what}: {problems[0]}")


# --- commands --------------------------------------------------------------------

def cmd_make_fixture(args) -> dict:
    spec = FixtureSpec(n_languages=args.languages, n_features=args.features, seed=args.seed)
    paths = write_bundle(args.out, spec)
    print(f"wrote {len(paths)} files to {args.out}")
    return dataclasses.asdict(spec)


def cmd_ingest(args) -> dict:
    ds = pipeline.ingest_sources(
        args.catalog, args.features or (), args.scripts, args.lang_scripts, args.schema,
    )
    out = args.workdir / DATASET
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("features_*.csv"):
        stale.unlink()
    write_catalog(ds.catalog, out / "languages.csv")
    for name, m in sorted(ds.layers.items()):
        _check(m, f"source {name}")
        write_features(m, out / f"features_{name}.csv")
    report = pipeline.validation_report(ds)
    (out / "validation.txt").write_text(report, "utf-8")
    sys.stdout.write(report)
    return {
        "catalog": str(args.catalog), "features": [str(p) for p in args.features or ()],
        "scripts": str(args.scripts) if args.scripts else None,
        "lang_scripts": str(args.lang_scripts) if args.lang_scripts else None,
        "schema": str(args.schema) if args.schema else None,
    }


def cmd_impute(args) -> dict:
    ds = _load_dataset(args.workdir)
    config = _completion_config(args)
    result = pipeline.impute(ds, args.method, config)
    out = args.workdir / "imputed" / args.method
    out.mkdir(parents=True, exist_ok=True)
    steps = []
    if result.trace is not None:
        result.trace.write_csv(out / "trace_languages.csv", out / "trace_features.csv")
        steps.append({"step": "lineage", "filled": result.trace.filled})
        print(f"lineage imputation filled {result.trace.filled} cells")
    for agg, m in result.matrices.items():
        _check(m, f"{agg} output")
        write_features(m, out / f"features_{agg}.csv")
    if result.completion:
        steps.append({"step": "softimpute", "groups": result.completion})
        _write_json(out / "completion.json", {
            "completed": True, "method": args.method, "seed": args.seed,
            "config": config.to_dict(), "steps": steps,
        })
        print("softimpute: " + ", ".join(
            f"{agg}/{g}: lambda={info['lambda']:.4g}"
            for agg, groups in result.completion.items() for g, info in groups.items()))
    return {"method": args.method, "completion": config.to_dict(), "steps": [s["step"] for s in steps]}


def _input_matrix(workdir: Path, source: str, agg: str):
    if source == "dataset":
        return _load_dataset(workdir).aggregate(agg)
    path = _require(workdir / "imputed" / source / f"features_{agg}.csv", f"impute --method {source}")
    return read_features(path, mode="binary" if agg == "union" else "continuous")


def _distance_path(workdir: Path, source: str, agg: str, category: str) -> Path:
    return workdir / "distances" / f"{source}_{agg}_{category}.csv"


def cmd_distance(args) -> dict:
    m = _input_matrix(args.workdir, args.input, args.agg)
    d = distance_matrix(m, args.category)
    path = _distance_path(args.workdir, args.input, args.agg, args.category)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_distance_matrix(d, path)
    meta = dict(d.metadata, input=args.input, aggregation=args.agg, n_languages=len(d.languages))
    _write_json(path.with_suffix(".meta.json"), meta)
    print(f"{path.name}: {len(d.languages)} languages, {meta['n_undefined_pairs']} undefined pairs")
    return {"category": args.category, "input": args.input, "agg": args.agg}


def cmd_stats(args) -> dict:
    ds = _load_dataset(args.workdir)
    before = ds.aggregate("union")
    after, _ = lineage_impute(before, ds.phylogeny())
    reports = args.workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    if args.kind == "coverage":
        b, a = coverage(before, ds.catalog), coverage(after, ds.catalog)
        header = ["category", "resource_level", "before", "after", "added"]
        rows = [(c, lvl, n, a.counts[(c, lvl)], a.counts[(c, lvl)] - n) for c, lvl, n in b.rows()]
    else:
        b = sparsity(before, ds.catalog, scope=args.scope)
        a = sparsity(after, ds.catalog, scope=args.scope)
        red = sparsity_reduction(b, a)
        header = ["category", "resource_level", "before", "after", "relative_decrease"]
        rows = [(c, lvl, v, a.fractions[(c, lvl)], red[(c, lvl)]) for c, lvl, v in b.rows()]
    write_rows(reports / f"{args.kind}.csv", header, rows)
    text = format_table(header, rows)
    (reports / f"{args.kind}.txt").write_text(text, "utf-8")
    sys.stdout.write(text)
    return {"kind": args.kind, "scope": args.scope, "levels": ALL_LEVELS}


def cmd_correlate(args) -> dict:
    ds = _load_dataset(args.workdir)
    if args.matrix is not None:
        mpath = _require(Path(args.matrix), "distance")
    else:
        mpath = _require(_distance_path(args.workdir, args.input, args.agg, args.category),
                         f"distance --category {args.category} --input {args.input} --agg {args.agg}")
    against_path = Path(args.against)
    if not against_path.exists():
        raise InputError(f"missing comparison matrix {against_path}")
    res = pipeline.correlate(read_distance_matrix(mpath), read_distance_matrix(against_path),
                             ds.families(), args.n_perm, args.seed, args.alpha, args.m_tests)
    reports = args.workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    stem = against_path.stem
    header = ["matrix", "against", "rho", "p_value", "significant", "alpha_corrected",
              "n_permutations", "n_pairs", "blocks", "singleton_blocks", "seed"]
    row = [mpath.name, against_path.name, res.rho_obs, res.p_value, res.significant,
           res.alpha_corrected, res.n_permutations, res.n_pairs, res.blocks_used,
           res.singleton_blocks, res.seed]
    write_rows(reports / f"correlation_{stem}.csv", header, [row])
    text = format_table(header[2:7], [row[2:7]]) + res.census() + "\n"
    (reports / f"correlation_{stem}.txt").write_text(text, "utf-8")
    sys.stdout.write(text)
    return {"matrix": mpath.name, "against": against_path.name, "n_perm": args.n_perm,
            "alpha": args.alpha, "m_tests": args.m_tests}


def cmd_eval(args) -> dict:
    ds = _load_dataset(args.workdir)
    config = _completion_config(args)
    stages = {"both": ("-lineage", "+lineage"), "softimpute": ("-lineage",),
              "lineage+softimpute": ("+lineage",)}[args.method]
    rows = pipeline.evaluate(ds, args.agg, args.holdout, args.seed, config, stages)
    header = pipeline.eval_header(args.agg)
    body = [pipeline.metrics_row(r) for r in rows]
    reports = args.workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    write_rows(reports / f"eval_{args.agg}.csv", header, body)
    text = format_table(header, body)
    (reports / f"eval_{args.agg}.txt").write_text(text, "utf-8")
    sys.stdout.write(text)
    return {"holdout": args.holdout, "agg": args.agg, "method": args.method,
            "completion": config.to_dict()}


# --- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lingbase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", type=Path, required=True)
    common.add_argument("--seed", type=int, default=0)

    completion = argparse.ArgumentParser(add_help=False)
    defaults = CompletionConfig()
    completion.add_argument("--tolerance", type=float, default=defaults.tolerance)
    completion.add_argument("--max-iterations", type=int, default=defaults.max_iterations)
    completion.add_argument("--validation-fraction", type=float, default=defaults.validation_fraction)

    p = sub.add_parser("make-fixture", help="write the synthetic genealogical input bundle")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--languages", type=int, default=500)
    p.add_argument("--features", type=int, default=40)
    p.set_defaults(func=cmd_make_fixture, manifest_dir="out")

    p = sub.add_parser("ingest", parents=[common], help="parse inputs into the canonical dataset")
    p.add_argument("--catalog", type=Path, required=True)
    p.add_argument("--features", type=Path, nargs="*")
    p.add_argument("--scripts", type=Path)
    p.add_argument("--lang-scripts", type=Path)
    p.add_argument("--schema", type=Path)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("impute", parents=[common, completion], help="lineage and/or SoftImpute imputation")
    p.add_argument("--method", choices=pipeline.METHODS, required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("distance", parents=[common], help="angular distance matrix for a category")
    p.add_argument("--category", choices=DISTANCE_CATEGORIES, required=True)
    p.add_argument("--input", choices=INPUTS, default="dataset")
    p.add_argument("--agg", choices=pipeline.AGGREGATIONS, default="union")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("stats", parents=[common], help="coverage or sparsity before/after lineage imputation")
    p.add_argument("kind", choices=("coverage", "sparsity"))
    p.add_argument("--scope", choices=("covered", "all"), default="covered")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("correlate", parents=[common], help="Spearman + block-permutation Mantel test")
    p.add_argument("--against", required=True)
    p.add_argument("--matrix")
    p.add_argument("--category", choices=DISTANCE_CATEGORIES, default="script")
    p.add_argument("--input", choices=INPUTS, default="dataset")
    p.add_argument("--agg", choices=pipeline.AGGREGATIONS, default="union")
    p.add_argument("--n-perm", type=int, default=999)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--m-tests", type=int, default=7)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("eval", parents=[common, completion], help="holdout imputation-quality test")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--agg", choices=pipeline.AGGREGATIONS, default="union")
    p.add_argument("--method", choices=("both", "softimpute", "lineage+softimpute"), default="both")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        options = args.func(args)
        workdir = args.out if getattr(args, "manifest_dir", None) == "out" else args.workdir
        update_manifest(Path(workdir), RunConfig(args.command, str(workdir), args.seed, options))
    except (InvariantError, AssertionError) as exc:
        print(f"lingbase: invariant failure: {exc}", file=sys.stderr)
        return 1
    except (InputError, ValueError, OSError) as exc:
        print(f"lingbase: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
