"""gridmine command line: dataset generation, job runs, KM administration, reports."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import km
from .data import DataError, Dataset, generate_from_spec, load_generator_spec, write_csv, write_transactions
from .kmd import KMSystem
from .sim import REPORT_COLUMNS, JobError, JobSpec, report_row, run_job

DEFAULT_SEED = 42


class CLIError(Exception):
    pass


def resolve_seed(flag: int | None, file_value: int | None = None) -> int:
    """Flag, then the file's own value, then GRIDMINE_SEED, then 42."""
    if flag is not None:
        return flag
    if file_value is not None:
        return int(file_value)
    env = os.environ.get("GRIDMINE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CLIError(f"GRIDMINE_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# --------------------------------------------------------------------- gen

def cmd_gen(args) -> dict:
    spec = load_generator_spec(args.spec)
    seed = resolve_seed(args.seed, spec.get("seed"))
    out = generate_from_spec(spec, seed)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(out, Dataset):
        write_csv(out, path)
        return {"out": str(path), "kind": "points", "rows": len(out), "dim": out.dim, "seed": seed}
    write_transactions(out, path)
    return {"out": str(path), "kind": "transactions", "rows": len(out), "seed": seed}


# --------------------------------------------------------------------- run

def append_report(path: Path, row: dict) -> None:
    """Add one row; the whole file is rewritten and renamed so no row is ever partial."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    if path.exists():
        existing = read_report(path)
        writer.writeheader()
        writer.writerows(existing)
    else:
        writer.writeheader()
    writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def read_report(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise CLIError(f"{path}: columns {reader.fieldnames} do not match the report schema")
        return list(reader)


def cmd_run(args) -> dict:
    path = Path(args.job)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise JobError(f"{path}: {exc}") from None
    doc["seed"] = resolve_seed(args.seed, doc.get("seed"))
    if args.oracle:
        if doc.get("algorithm") != "ddbc":
            raise JobError("--oracle applies to ddbc jobs only")
        doc.setdefault("config", {})["oracle"] = True
    spec = JobSpec.from_dict(doc, path.parent)
    stem = spec.experiment_id or path.stem
    out_dir = Path(args.out_dir) if args.out_dir else path.parent
    outputs = {"result": out_dir / f"{stem}.result.json",
               "trace": out_dir / f"{stem}.trace.json",
               "report": out_dir / "report.csv"}
    for key, value in spec.outputs.items():
        if key not in outputs:
            raise JobError(f"unknown output {key!r}")
        outputs[key] = spec.resolve(value)
    if args.report:
        outputs["report"] = Path(args.report)
    if not spec.experiment_id:
        spec.experiment_id = stem

    res = run_job(spec, workers=args.workers)
    row = report_row(spec, res)
    _atomic_write(outputs["result"], _dump(res.result))
    _atomic_write(outputs["trace"], _dump(res.trace.to_json()))
    append_report(outputs["report"], row)
    return {"experiment_id": spec.experiment_id, "outputs": {k: str(v) for k, v in outputs.items()},
            "metrics": res.metrics}


# ---------------------------------------------------------------------- km

def _concept(system: KMSystem, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        hits = system.core.concepts.find_by_name(value)
        if len(hits) != 1:
            raise km.KMError(f"concept name {value!r} matches {len(hits)} concepts; use an id") from None
        return hits[0]


def _load_entry(path: str, site: str) -> km.KnowledgeEntry:
    doc = json.loads(Path(path).read_text())
    doc.setdefault("meta", {}).setdefault("knowledge_id", -1)
    doc["meta"].setdefault("site", site)
    try:
        return km.KnowledgeEntry.from_json(doc)
    except (KeyError, TypeError) as exc:
        raise km.KMError(f"{path}: malformed knowledge entry ({exc})") from None


def cmd_km(args) -> object:
    state = Path(args.state)
    if args.km_cmd == "init":
        names = args.site_names.split(",") if args.site_names else [f"site{i}" for i in range(args.sites)]
        system = KMSystem(names, args.host)
        out = system.init()
        system.save(state)
        return out
    system = KMSystem.load(state)
    client = getattr(args, "client", None) or system.host
    if args.km_cmd == "stop":
        out = system.stop()
    elif args.km_cmd == "add-concept":
        parent = None if args.parent is None else _concept(system, args.parent)
        out = {"concept_id": system.add_concept(client, parent, args.name)}
    elif args.km_cmd == "register":
        out = {"site": args.site, "knowledge_id": system.register(args.site, _load_entry(args.entry, args.site))}
    elif args.km_cmd == "find":
        system._check(client)
        concept = _concept(system, args.concept) if args.concept is not None else None
        if concept is None:
            roots = [c.id for c in system.core.concepts.nodes.values() if c.parent is None]
            hits = [m for r in roots for m in system.find(client, r, args.task, args.data_type)]
            out = [m.to_json() for m in sorted(hits, key=lambda m: m.key)]
        else:
            out = [m.to_json() for m in system.find(client, concept, args.task, args.data_type)]
    elif args.km_cmd == "retrieve":
        out = system.retrieve(client, args.site, args.id).to_json()
    else:  # pragma: no cover - argparse restricts choices
        raise CLIError(f"unknown km command {args.km_cmd}")
    system.save(state)
    return out


# ------------------------------------------------------------------ report

def cmd_report(args) -> object:
    rows = read_report(Path(args.csv))
    if args.algorithm:
        rows = [r for r in rows if r["algorithm"] == args.algorithm]
    return rows


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridmine", description="Distributed data mining simulator.")
    sub = p.add_subparsers(dest="cmd", required=True, metavar="{gen,run,km,report}")

    g = sub.add_parser("gen", help="generate a dataset from a JSON generator spec")
    g.add_argument("spec", help="generator spec (gaussian components or basket)")
    g.add_argument("--out", required=True, help="output CSV or transaction file")
    g.add_argument("--seed", type=int, help="random seed (default: spec value, GRIDMINE_SEED, or 42)")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run a job spec and append a report row")
    r.add_argument("job", help="job spec JSON")
    r.add_argument("--oracle", action="store_true", help="also run centralized DBSCAN and report quality_P")
    r.add_argument("--seed", type=int, help="random seed (default: job value, GRIDMINE_SEED, or 42)")
    r.add_argument("--out-dir", help="directory for result/trace/report (default: the job's directory)")
    r.add_argument("--report", help="report CSV path (overrides the job's outputs.report)")
    r.add_argument("--workers", type=int, default=1, help="threads for the per-site local phase")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("km", help="knowledge map administration")
    k.add_argument("--state", default="km_state", help="KM state directory (default: ./km_state)")
    ks = k.add_subparsers(dest="km_cmd", required=True,
                          metavar="{init,stop,find,retrieve,register,add-concept}")
    ki = ks.add_parser("init", help="start the KM daemons with a fresh repository")
    ki.add_argument("--sites", type=int, default=3, help="number of sites named site0.. (default 3)")
    ki.add_argument("--site-names", help="comma-separated site names (overrides --sites)")
    ki.add_argument("--host", help="site holding the core (default: first site)")
    ks.add_parser("stop", help="terminate all KM daemons")
    kf = ks.add_parser("find", help="meta-knowledge under a concept subtree")
    kf.add_argument("--concept", help="concept id or unique name (default: every tree)")
    kf.add_argument("--task", help="filter by mining task")
    kf.add_argument("--data-type", help="filter by data type")
    kf.add_argument("--client", help="requesting site (default: host)")
    kr = ks.add_parser("retrieve", help="fetch a full knowledge entry from its site")
    kr.add_argument("--site", required=True, help="site holding the entry")
    kr.add_argument("--id", type=int, required=True, help="knowledge id at that site")
    kr.add_argument("--client", help="requesting site (default: host)")
    kg = ks.add_parser("register", help="store a knowledge entry at a site")
    kg.add_argument("--site", required=True, help="site that stores the entry")
    kg.add_argument("--entry", required=True, help="knowledge entry JSON file")
    ka = ks.add_parser("add-concept", help="add a concept node")
    ka.add_argument("--name", required=True, help="concept name")
    ka.add_argument("--parent", help="parent concept id or unique name (omit for a new tree)")
    ka.add_argument("--client", help="requesting site (default: host)")
    k.set_defaults(func=cmd_km)

    rp = sub.add_parser("report", help="print report rows as JSON")
    rp.add_argument("csv", help="report CSV")
    rp.add_argument("--algorithm", help="only rows for this algorithm")
    rp.set_defaults(func=cmd_report)
    return p


ERRORS = (CLIError, JobError, DataError, km.KMError, ValueError, OSError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = args.func(args)
    except ERRORS as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc).strip("'\"")}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(out, sys.stdout, indent=1, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
