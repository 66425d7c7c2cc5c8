"""Command-line pipeline: generate, embed, debias, audit, report.

Every command reads an optional INI file (``--config``) whose section is named
after the command, plus a ``[run]`` section holding the global ``seed``. All
outputs go under ``--out`` with the fixed names below, and each command
records a section in ``manifest.ini`` with its settings and output checksums.

Stage seeds are ``SeedSequence([seed, stage_code]).generate_state(1)[0]`` with
stage codes generate=1, embed=2, audit=3, debias=4, report=5.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import SyntheticKgSpec, SyntheticNetSpec, gen_kg, gen_network
from .embeddings import EmbeddingTable, load_embeddings, save_embeddings
from .fan import FanDivergenceError, FanTrainConfig, save_fan
from .graph import (
    GraphFormatError,
    Network,
    RelationFilter,
    load_edge_list,
    load_labels,
    load_triples,
    remove_relation,
    save_edge_list,
    save_labels,
    save_triples,
    split_edges,
    SplitSpec,
)
from .kge import KINDS, KgeTrainConfig, save_model, train_kge
from .pipeline import ATTR_BINNING, ATTR_PROBE, LINK_BINNING, attribute_audit, debias, embed_network, link_popularity_report
from .probe import Binning, ProbeConfig, read_meta
from .walks import SgnsConfig, WalkConfig

log = logging.getLogger("kgdebias")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

STAGE_CODES = {"generate": 1, "embed": 2, "audit": 3, "debias": 4, "report": 5}

TRIPLES = "triples.tsv"
EDGES = "edges.tsv"
GRAPH = "graph.tsv"
HELDOUT = "heldout_edges.tsv"
EMBEDDINGS = "embeddings.txt"
MODEL = "model.txt"
CONTEXT = "context.txt"
LOSS = "loss.csv"
MANIFEST = "manifest.ini"
AUDITS = "audits"
REPORT_CSV = "report.csv"
REPORT_TXT = "report.txt"
ABSENT = "NA"


class ConfigError(ValueError):
    pass


def stage_seed(seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([seed, STAGE_CODES[stage]]).generate_state(1)[0])


def labels_file(attribute: str) -> str:
    return f"labels_{attribute}.tsv"


def lam_tag(lam: float) -> str:
    return format(lam, "g")


# --------------------------------------------------------------------------
# Config handling
# --------------------------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _coerce(name: str, text: str, default):
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if text.strip().lower() == "none":
                return None
            if name == "hidden_dims":
                return tuple(int(t) for t in parse_list(text))
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build(template, section: dict, **overrides):
    """Copy of the config dataclass ``template`` with the matching keys of ``section`` applied."""
    kwargs = {}
    for f in dataclasses.fields(template):
        if f.name in section:
            kwargs[f.name] = _coerce(f.name, section[f.name], getattr(template, f.name))
    kwargs.update(overrides)
    try:
        return dataclasses.replace(template, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_keys(section: dict, allowed: set, name: str):
    if "seed" in section:
        raise ConfigError(f"[{name}] seed: set the seed under [run] or with --seed")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s): {', '.join(unknown)}")


def _fields(*classes) -> set:
    return {f.name for c in classes for f in dataclasses.fields(c)}


def read_config(path, command: str, cli_seed: int | None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} does not exist")
        parser.read(path, encoding="utf-8")
    section = dict(parser[command]) if parser.has_section(command) else {}
    run = dict(parser["run"]) if parser.has_section("run") else {}
    unknown = sorted(set(run) - {"seed"})
    if unknown:
        raise ConfigError(f"[run] unknown key(s): {', '.join(unknown)}")
    seed = cli_seed if cli_seed is not None else _coerce("seed", run.get("seed", "0"), 0)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    return section, seed


# --------------------------------------------------------------------------
# Files, checksums, manifest
# --------------------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_meta(path, meta: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(meta):
            fh.write(f"{k}={meta[k]}\n")


def write_manifest(out: Path, command: str, seed: int, section: dict, outputs, started: float) -> None:
    """Replace this command's sections of ``manifest.ini``; checksums are over ``outputs``."""
    path = out / MANIFEST
    man = configparser.ConfigParser(interpolation=None)
    man.optionxform = str
    if path.exists():
        man.read(path, encoding="utf-8")
    for suffix in ("", ".config", ".checksums"):
        if man.has_section(command + suffix):
            man.remove_section(command + suffix)
    man[command] = {
        "library_version": __version__,
        "seed": str(seed),
        "stage_seed": str(stage_seed(seed, command)),
        "wall_clock_seconds": f"{time.perf_counter() - started:.3f}",
    }
    man[command + ".config"] = {k: section[k] for k in sorted(section)}
    man[command + ".checksums"] = {str(p.relative_to(out)): sha256(p) for p in sorted(outputs)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        man.write(fh)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path}")
    return path


def _write_rows(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_generate(out: Path, section: dict, seed: int) -> list[Path]:
    """``kind = kg`` writes triples.tsv and labels_<attribute>.tsv; ``kind = network`` writes edges.tsv."""
    kind = section.get("kind", "kg")
    s = stage_seed(seed, "generate")
    if kind == "kg":
        _check_keys(section, _fields(SyntheticKgSpec) | {"kind"}, "generate")
        kg, gender, occupation = gen_kg(build(SyntheticKgSpec(), section, seed=s))
        save_triples(kg, out / TRIPLES)
        files = [out / TRIPLES]
        for labels in (gender, occupation):
            save_labels(labels, kg, out / labels_file(labels.attribute_name))
            files.append(out / labels_file(labels.attribute_name))
        log.info("generated %d triples over %d entities", len(kg.triples), kg.n_entities)
        return files
    if kind == "network":
        _check_keys(section, _fields(SyntheticNetSpec) | {"kind"}, "generate")
        net = gen_network(build(SyntheticNetSpec(), section, seed=s))
        save_edge_list(net, out / EDGES)
        log.info("generated %d nodes, %d edges", net.node_count, net.edge_count)
        return [out / EDGES]
    raise ConfigError(f"kind: expected kg or network, got {kind!r}")


def _save_loss(path, trace) -> None:
    _write_rows(path, ["epoch", "loss"], [(i, repr(float(v))) for i, v in enumerate(trace)])


def cmd_embed(out: Path, section: dict, seed: int) -> list[Path]:
    method = section.get("method", "transH")
    s = stage_seed(seed, "embed")
    if method in KINDS:
        allowed = _fields(KgeTrainConfig) | {"method", "min_relation_count", "blacklist", "remove_relations"}
        _check_keys(section, allowed, "embed")
        cfg = build(KgeTrainConfig(), section, seed=s)
        filters = RelationFilter(
            _coerce("min_relation_count", section.get("min_relation_count", "11"), 0),
            frozenset(parse_list(section.get("blacklist", ""))),
        )
        kg = load_triples(_require(out / TRIPLES, "triples (run generate first)"), filters)
        for rel in parse_list(section.get("remove_relations", "")):
            kg = remove_relation(kg, rel)
        log.info("training %s on %d triples", method, len(kg.triples))
        model, trace = train_kge(kg, method, cfg)
        save_triples(kg, out / GRAPH)
        save_model(model, out / MODEL)
        save_embeddings(model.entity_table(), out / EMBEDDINGS)
        meta = {"method": method, "filtered": "false"}
        files = [out / GRAPH, out / MODEL, out / EMBEDDINGS]
    elif method in ("node2vec", "deepwalk"):
        allowed = _fields(WalkConfig, SgnsConfig) | {"method", "holdout"}
        _check_keys(section, allowed, "embed")
        walk_cfg = build(WalkConfig(), section, seed=s)
        if method == "deepwalk" and not walk_cfg.is_deepwalk:
            raise ConfigError("method deepwalk requires p = q = 1")
        sgns_cfg = build(SgnsConfig(), section, seed=s)
        net = load_edge_list(_require(out / EDGES, "edge list (run generate first)"))
        holdout = _coerce("holdout", section.get("holdout", "0.2"), 0.0)
        try:
            train, heldout, _ = split_edges(net, SplitSpec(holdout, s))
        except ValueError as exc:
            raise ConfigError(f"holdout: {exc}") from None
        log.info("walks on %d training edges, %d held out", train.edge_count, len(heldout))
        emb = embed_network(train, walk_cfg, sgns_cfg)
        save_edge_list(train, out / GRAPH)
        with open(out / HELDOUT, "w", encoding="utf-8", newline="\n") as fh:
            for u, v in heldout:
                fh.write(f"{u}\t{v}\n")
        save_embeddings(emb.table(), out / EMBEDDINGS)
        save_embeddings(EmbeddingTable(emb.table().keys, emb.context_vectors), out / CONTEXT)
        trace = emb.loss_trace
        meta = {"method": method, "filtered": "false", "deepwalk_equivalent": str(walk_cfg.is_deepwalk).lower()}
        files = [out / GRAPH, out / HELDOUT, out / EMBEDDINGS, out / CONTEXT]
    else:
        raise ConfigError(f"method: expected one of {', '.join(KINDS)}, node2vec, deepwalk; got {method!r}")
    _save_loss(out / LOSS, trace)
    write_meta(out / (EMBEDDINGS + ".meta"), meta)
    return files + [out / LOSS, out / (EMBEDDINGS + ".meta")]


def _load_kg_graph(out: Path):
    return load_triples(_require(out / GRAPH, "training graph (run embed first)"), RelationFilter(1))


def _aligned(table: EmbeddingTable, names) -> np.ndarray:
    index = table.index()
    missing = [n for n in names if n not in index]
    if missing:
        raise ConfigError(f"no embedding for {missing[0]!r}")
    return table.vectors[[index[n] for n in names]]


def cmd_debias(out: Path, section: dict, seed: int) -> list[Path]:
    """Writes filtered_lam<L>.txt (+ .meta), fan_lam<L>.txt and fan_trace_lam<L>.csv per lambda."""
    _check_keys(section, _fields(FanTrainConfig) | {"attribute", "lambdas", "embeddings"}, "debias")
    cfg = build(FanTrainConfig(), section, seed=stage_seed(seed, "debias"))
    attribute = section.get("attribute", "gender")
    lambdas = [_coerce("lambdas", t, 0.0) for t in parse_list(section.get("lambdas", "0.5"))]
    if not lambdas or any(lam < 0 for lam in lambdas):
        raise ConfigError("lambdas: need one or more non-negative values")
    source = section.get("embeddings", EMBEDDINGS)
    table = load_embeddings(_require(out / source, "embeddings (run embed first)"))
    kg = _load_kg_graph(out)
    labels = load_labels(_require(out / labels_file(attribute), f"{attribute} labels"), kg, attribute)
    emb = _aligned(table, kg.entities.names)
    files = []
    for lam in lambdas:
        tag = lam_tag(lam)
        log.info("FAN lambda=%s on %d labelled entities", tag, len(labels))
        try:
            filtered, model, trace = debias(emb, labels, lam, cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        index = table.index()
        vectors = table.vectors.copy()
        vectors[[index[n] for n in kg.entities.names]] = filtered
        name = f"filtered_lam{tag}.txt"
        save_embeddings(table.replace_vectors(vectors), out / name)
        write_meta(out / (name + ".meta"), {"filtered": "true", "lambda": tag, "attribute": attribute, "source": source})
        save_fan(model, out / f"fan_lam{tag}.txt", cfg)
        _write_rows(
            out / f"fan_trace_lam{tag}.csv",
            ["step", "recon", "ce", "disc_accuracy"],
            [(i, repr(r), repr(c), repr(a)) for i, r, c, a in trace.rows()],
        )
        files += [out / name, out / (name + ".meta"), out / f"fan_lam{tag}.txt", out / f"fan_trace_lam{tag}.csv"]
    return files


def _variant(meta: dict) -> str:
    return f"lambda_{meta['lambda']}" if meta.get("filtered") == "true" else "unfiltered"


def cmd_audit(out: Path, section: dict, seed: int) -> list[Path]:
    """Writes audits/<variant>/summary.csv and one <task>_by_degree.csv per probe."""
    allowed = _fields(ProbeConfig, Binning) | {"task", "embeddings", "attributes", "degree_attribute", "network"}
    _check_keys(section, allowed, "audit")
    s = stage_seed(seed, "audit")
    task = section.get("task", "attribute")
    if "embeddings" in section:
        sources = parse_list(section["embeddings"])
    else:
        sources = [EMBEDDINGS] + sorted(p.name for p in out.glob("filtered_lam*.txt"))
    files = []
    for source in sources:
        table = load_embeddings(_require(out / source, "embeddings"))
        meta_path = out / (source + ".meta")
        meta = read_meta(meta_path) if meta_path.exists() else {"filtered": "false"}
        variant = _variant(meta)
        dest = out / AUDITS / variant
        dest.mkdir(parents=True, exist_ok=True)
        report_meta = {"embeddings": source, "filtered": meta.get("filtered", "false"), "variant": variant}
        if "lambda" in meta:
            report_meta["lambda"] = meta["lambda"]
        summary = {}
        if task == "attribute":
            probe_cfg = build(ATTR_PROBE, section, seed=s)
            binning = build(ATTR_BINNING, section)
            kg = _load_kg_graph(out)
            emb = _aligned(table, kg.entities.names)
            attributes = parse_list(section.get("attributes", "gender, occupation"))
            for attribute in attributes:
                lf = out / labels_file(attribute)
                if not lf.exists():
                    raise ConfigError(f"missing labels for attribute {attribute!r}: {lf}")
                labels = load_labels(lf, kg, attribute)
                result, report = attribute_audit(emb, labels, probe_cfg, kg.entity_degree, binning, report_meta)
                summary[attribute] = repr(result.accuracy)
                summary[attribute + "_baseline"] = repr(result.baseline)
                report.save(dest / f"{attribute}_by_degree.csv")
                files += [dest / f"{attribute}_by_degree.csv", dest / f"{attribute}_by_degree.csv.meta"]
        elif task == "link":
            probe_cfg = build(ProbeConfig(), section, seed=s)
            binning = build(LINK_BINNING, section)
            full = load_edge_list(_require(out / section.get("network", EDGES), "full edge list"))
            train = load_edge_list(_require(out / GRAPH, "training edges (run embed first)"))
            train = Network(full.node_count, train.edges)
            heldout = np.loadtxt(_require(out / HELDOUT, "held-out edges"), dtype=np.int64, ndmin=2)
            emb = table.vectors[np.argsort([int(k) for k in table.keys])]
            report = link_popularity_report(full, train, heldout, emb, probe_cfg, binning, s, report_meta)
            summary["link"] = repr(report.overall_accuracy)
            summary["link_spearman"] = repr(report.spearman())
            report.save(dest / "link_by_degree.csv")
            files += [dest / "link_by_degree.csv", dest / "link_by_degree.csv.meta"]
        else:
            raise ConfigError(f"task: expected attribute or link, got {task!r}")
        header = ["variant", "embeddings", "filtered", "lambda"] + list(summary)
        row = [variant, source, report_meta["filtered"], meta.get("lambda", "")] + list(summary.values())
        _write_rows(dest / "summary.csv", header, [row])
        files.append(dest / "summary.csv")
        log.info("audited %s: %s", source, ", ".join(f"{k}={float(v):.3f}" for k, v in summary.items()))
    return files


def _variant_order(name: str):
    if name == "unfiltered":
        return (0, 0.0)
    return (1, -float(name.split("_", 1)[1]))


def cmd_report(out: Path, section: dict, seed: int) -> list[Path]:
    """Consolidate audits into report.csv and an aligned report.txt (rows: variants)."""
    _check_keys(section, {"columns"}, "report")
    summaries = sorted((out / AUDITS).glob("*/summary.csv")) if (out / AUDITS).is_dir() else []
    if not summaries:
        raise ConfigError(f"no audits under {out / AUDITS}; run audit first")
    rows = {}
    for path in summaries:
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.setdefault(rec["variant"], {}).update(rec)
    default_cols = sorted(
        {k for r in rows.values() for k in r if k not in ("variant", "embeddings", "filtered", "lambda") and not k.endswith("_baseline") and not k.endswith("_spearman")}
    )
    columns = parse_list(section["columns"]) if "columns" in section else default_cols
    order = sorted(rows, key=_variant_order)
    table = [[v] + [_fmt(rows[v].get(c)) for c in columns] for v in order]
    _write_rows(out / REPORT_CSV, ["variant"] + columns, table)
    widths = [max(len(r[i]) for r in table + [["variant"] + columns]) for i in range(len(columns) + 1)]
    with open(out / REPORT_TXT, "w", encoding="utf-8", newline="\n") as fh:
        for r in [["variant"] + columns] + table:
            fh.write("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip() + "\n")
    return [out / REPORT_CSV, out / REPORT_TXT]


def _fmt(value) -> str:
    if value is None or value == "":
        return ABSENT
    return f"{float(value):.4f}"


COMMANDS = {
    "generate": cmd_generate,
    "embed": cmd_embed,
    "audit": cmd_audit,
    "debias": cmd_debias,
    "report": cmd_report,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgdebias", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).split("\n")[0])
        p.add_argument("--config", type=Path, help="INI file with a [%s] section and optional [run] seed" % name)
        p.add_argument("--seed", type=int, help="global seed; overrides [run] seed")
        p.add_argument("--out", type=Path, required=True, help="run directory")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    started = time.perf_counter()
    try:
        section, seed = read_config(args.config, args.command, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args.out, section, seed)
        write_manifest(args.out, args.command, seed, section, outputs, started)
    except (FanDivergenceError, FloatingPointError) as exc:
        log.error("%s diverged: %s", args.command, exc)
        return EXIT_DIVERGED
    except (ConfigError, GraphFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
