"""Pipeline orchestration as subcommands over stage files.

Stages communicate only through their output files, so any stage can be
rerun in isolation. Every artifact is written atomically and paired with
a manifest (config hash, input digests, package version, RNG seed);
rerunning a stage with identical inputs reproduces identical bytes.

Exit codes: 0 success, 2 configuration/validation failure (nothing
written), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import artifacts, corpus as corpus_mod, emb_io, figures, glmm as glmm_mod
from . import report as report_mod, stacking, thread_graph
from .gat import GatConfig, GatParams, gat_forward

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

DEFAULT_CONFIG = {
    "comments": None,
    "covariates": None,
    "coordinates": None,
    "embeddings": None,
    "gat_params": None,
    "stack_model": None,
    "upstream_probs": None,
    "out": "out",
    "years": [2019, 2020, 2021, 2022],
    "months": [8, 9, 10, 11],
    "cap": 30000,
    "seed_batch": 50,
    "rng_seed": 1,
    "jobs": 1,
    "exclude_tombstones": False,
    "gat": {"heads": [8, 1], "head_dim": [8, 2], "negative_slope": 0.2,
            "direction": "successors"},
    "stack": {"transform": "logit", "threshold": 0.5},
    "glmm": {"method": "laplace", "nodes": 25, "reference_levels": {}},
}


class ValidationFailure(Exception):
    pass


def load_config(args) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValidationFailure(f"config file not found: {path}")
        try:
            overrides = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"config file is not valid JSON: {exc}")
        for key, value in overrides.items():
            if key in ("gat", "stack", "glmm") and isinstance(value, dict):
                config[key].update(value)
            else:
                config[key] = value
    # flags win over the file
    for flag in ("comments", "covariates", "coordinates", "embeddings",
                 "gat_params", "stack_model", "upstream_probs", "out", "cap",
                 "seed_batch", "rng_seed", "jobs"):
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    if getattr(args, "years", None):
        config["years"] = [int(y) for y in args.years.split(",")]
    if getattr(args, "months", None):
        config["months"] = [int(m) for m in args.months.split(",")]
    if config["cap"] < config["seed_batch"]:
        raise ValidationFailure(
            f"cap ({config['cap']}) must be >= seed_batch ({config['seed_batch']})")
    if not config["months"] or any(not 1 <= m <= 12 for m in config["months"]):
        raise ValidationFailure(f"months must be a non-empty subset of 1..12: "
                                f"{config['months']}")
    return config


def _require(config, key, stage):
    value = config.get(key)
    if not value:
        raise ValidationFailure(f"stage {stage!r} needs config key {key!r}")
    path = Path(value)
    if not path.exists():
        raise ValidationFailure(f"stage {stage!r} input missing: {path}")
    return path


def _out_dir(config) -> Path:
    return Path(config["out"])


def _emit(path, data, config, inputs, rng_seed=None):
    artifacts.atomic_write(path, data)
    artifacts.write_manifest(path, config, inputs, rng_seed=rng_seed)


def _read_corpus(path, config):
    with open(path, "r", encoding="utf-8") as fh:
        comments = corpus_mod.parse_comments(fh)
    return corpus_mod.filter_window(comments, years=config["years"],
                                    months=config["months"])


def stage_ingest(config) -> int:
    comments_path = _require(config, "comments", "ingest")
    covariates_path = _require(config, "covariates", "ingest")
    out = _out_dir(config)
    corpus = _read_corpus(comments_path, config)
    covariates = corpus_mod.load_covariates(str(covariates_path))
    stats = corpus_mod.descriptive_stats(covariates)

    inputs = {"comments": comments_path, "covariates": covariates_path}
    _emit(out / "corpus.jsonl", corpus_mod.serialize_comments(corpus.messages),
          config, inputs)
    stats_obj = {}
    for var, summary in stats.items():
        if hasattr(summary, "levels"):
            stats_obj[var] = {"levels": [
                {"level": lv, "count": n, "percent": pct} for lv, n, pct in summary.levels
            ]}
        else:
            stats_obj[var] = {"n": summary.n, "mean": summary.mean, "sd": summary.sd,
                              "min": summary.minimum, "max": summary.maximum}
    _emit(out / "descriptive.json", json.dumps(stats_obj, sort_keys=True, indent=1) + "\n",
          config, inputs)
    print(f"ingest: {len(corpus)} messages in window, {len(covariates)} schools")
    return EXIT_OK


def stage_graph(config) -> int:
    out = _out_dir(config)
    corpus_path = _require_artifact(out / "corpus.jsonl", "graph")
    corpus = _read_corpus(corpus_path, config)
    graph_dir = out / "graphs"
    graph_dir.mkdir(parents=True, exist_ok=True)
    inputs = {"corpus": corpus_path}
    schools = sorted(corpus.by_school)

    def build(school):
        return thread_graph.build_graph(corpus, school)

    for school, graph in _per_school(schools, build, config["jobs"]):
        _emit(graph_dir / f"{school}.edges.tsv", thread_graph.export_edges(graph),
              config, inputs)
        _emit(graph_dir / f"{school}.nodes.txt", thread_graph.export_nodes(graph),
              config, inputs)
    print(f"graph: {len(schools)} school graph(s)")
    return EXIT_OK


def _require_artifact(path, stage):
    if not Path(path).exists():
        raise ValidationFailure(f"stage {stage!r} input missing: {path} "
                                f"(run the preceding stage first)")
    return Path(path)


def _per_school(schools, fn, jobs):
    """Apply fn per school with bounded parallelism; yield in sorted order."""
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, schools))
        yield from zip(schools, results)
    else:
        for school in schools:
            yield school, fn(school)


def _load_graph_files(graph_dir, school):
    nodes_text = (graph_dir / f"{school}.nodes.txt").read_text(encoding="utf-8")
    msg_ids = [line for line in nodes_text.splitlines() if line]
    index = {m: i for i, m in enumerate(msg_ids)}
    edges = []
    edges_text = (graph_dir / f"{school}.edges.tsv").read_text(encoding="utf-8")
    for line in edges_text.splitlines():
        if not line:
            continue
        child, parent = line.split("\t")
        edges.append((index[child], index[parent]))
    return thread_graph.graph_from_edges(school, msg_ids, edges)


def _graph_schools(graph_dir):
    return sorted(p.name[:-len(".nodes.txt")] for p in graph_dir.glob("*.nodes.txt"))


def stage_sample(config) -> int:
    out = _out_dir(config)
    graph_dir = _require_artifact(out / "graphs", "sample")
    sample_dir = out / "samples"
    sample_dir.mkdir(parents=True, exist_ok=True)
    cap, seed_batch, rng_seed = config["cap"], config["seed_batch"], config["rng_seed"]
    schools = _graph_schools(graph_dir)

    def run(school):
        graph = _load_graph_files(graph_dir, school)
        return thread_graph.sample_capped(graph, cap=cap, seed_batch=seed_batch,
                                          rng_seed=rng_seed)

    for school, sub in _per_school(schools, run, config["jobs"]):
        inputs = {
            "nodes": graph_dir / f"{school}.nodes.txt",
            "edges": graph_dir / f"{school}.edges.tsv",
        }
        node_lines = "\n".join(sub.node_msg_ids())
        _emit(sample_dir / f"{school}.nodes.txt",
              node_lines + ("\n" if node_lines else ""), config, inputs, rng_seed)
        child, parent = sub.induced_edges()
        edge_lines = "\n".join(
            f"{sub.graph.msg_ids[c]}\t{sub.graph.msg_ids[p]}"
            for c, p in zip(child, parent)
        )
        _emit(sample_dir / f"{school}.edges.tsv",
              edge_lines + ("\n" if edge_lines else ""), config, inputs, rng_seed)
        _emit(sample_dir / f"{school}.trace.json",
              json.dumps(thread_graph.subgraph_trace_json(sub), sort_keys=True) + "\n",
              config, inputs, rng_seed)
    print(f"sample: {len(schools)} school sample(s) at cap {cap}")
    return EXIT_OK


def stage_score(config) -> int:
    out = _out_dir(config)
    sample_dir = _require_artifact(out / "samples", "score")
    emb_path = _require(config, "embeddings", "score")
    params_path = _require(config, "gat_params", "score")
    gat_config = GatConfig(
        heads=tuple(config["gat"]["heads"]),
        head_dim=tuple(config["gat"]["head_dim"]),
        negative_slope=config["gat"]["negative_slope"],
        direction=config["gat"]["direction"],
    )
    params = GatParams.from_json(Path(params_path).read_text(encoding="utf-8"))
    embeddings = emb_io.read_embeddings(emb_path)
    exclude = set()
    if config["exclude_tombstones"]:
        corpus_path = _require_artifact(out / "corpus.jsonl", "score")
        corpus = _read_corpus(corpus_path, config)
        exclude = {m.msg_id for m in corpus.messages if m.is_tombstone}

    schools = _graph_schools(sample_dir)

    def run(school):
        graph = _load_graph_files(sample_dir, school)
        aligned = emb_io.align_to_nodes(embeddings, graph.msg_ids)
        return gat_forward(params, graph, aligned, gat_config)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["msg_id", "p_negative", "source"])
    n_rows = 0
    for school, probs in _per_school(schools, run, config["jobs"]):
        for msg_id, p in zip(probs.msg_ids, probs.p_negative):
            if msg_id in exclude:
                continue
            writer.writerow([msg_id, repr(float(p)), probs.source])
            n_rows += 1
    inputs = {"embeddings": emb_path, "gat_params": params_path}
    _emit(out / "scores.csv", buf.getvalue(), config, inputs)
    print(f"score: {n_rows} messages scored")
    return EXIT_OK


def _read_probs_csv(path):
    rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    if not rows:
        raise ValidationFailure(f"empty probability file: {path}")
    header = rows[0]
    if "msg_id" not in header or len(header) < 2:
        raise ValidationFailure(f"bad probability header in {path}: {header}")
    id_col = header.index("msg_id")
    p_col = 1 if id_col == 0 else 0
    if "p_negative" in header:
        p_col = header.index("p_negative")
    return {r[id_col]: float(r[p_col]) for r in rows[1:] if r}


def stage_stack(config) -> int:
    out = _out_dir(config)
    scores_path = _require_artifact(out / "scores.csv", "stack")
    corpus_path = _require_artifact(out / "corpus.jsonl", "stack")
    upstream_path = _require(config, "upstream_probs", "stack")
    model_path = _require(config, "stack_model", "stack")
    model = stacking.StackModel.from_json(Path(model_path).read_text(encoding="utf-8"))
    p_gat = _read_probs_csv(scores_path)
    p_upstream = _read_probs_csv(upstream_path)
    corpus = _read_corpus(corpus_path, config)
    year_of = {m.msg_id: y for m, y in zip(corpus.messages, corpus.years)}
    school_of = {m.msg_id: m.school_id for m in corpus.messages}

    rows = []
    missing_upstream = 0
    for msg_id in p_gat:
        if msg_id not in p_upstream:
            missing_upstream += 1
            continue
        p, is_neg = stacking.predict_stack(model, p_gat[msg_id], p_upstream[msg_id])
        rows.append(stacking.Prediction(
            msg_id=msg_id, school_id=school_of[msg_id], year=year_of[msg_id],
            p_gat=p_gat[msg_id], p_upstream=p_upstream[msg_id],
            p_stacked=p, is_negative=is_neg,
        ))
    rows.sort(key=lambda r: (r.school_id, r.msg_id))
    if missing_upstream:
        print(f"stack: warning: {missing_upstream} scored message(s) missing "
              f"upstream probabilities; skipped", file=sys.stderr)
    inputs = {"scores": scores_path, "upstream": upstream_path, "model": model_path}
    _emit(out / "predictions.csv", stacking.write_predictions(rows), config, inputs)
    print(f"stack: {len(rows)} messages classified")
    return EXIT_OK


def stage_glmm(config) -> int:
    out = _out_dir(config)
    predictions_path = _require_artifact(out / "predictions.csv", "glmm")
    covariates_path = _require(config, "covariates", "glmm")
    predictions = stacking.read_predictions(
        predictions_path.read_text(encoding="utf-8"))
    inputs = {"predictions": predictions_path, "covariates": covariates_path}
    if not predictions:
        _emit(out / "glmm_fit.json", json.dumps({"empty": True}) + "\n", config, inputs)
        _emit(out / "wald.json", json.dumps({"empty": True, "rows": []}) + "\n",
              config, inputs)
        print("glmm: no classified messages; wrote empty fit")
        return EXIT_OK
    covariates = corpus_mod.load_covariates(str(covariates_path))
    design = glmm_mod.build_design(predictions, covariates,
                                   reference_levels=config["glmm"].get("reference_levels"))
    fit = glmm_mod.fit_glmm(design, method=config["glmm"].get("method", "laplace"),
                            nodes=config["glmm"].get("nodes", 25))
    table = glmm_mod.wald_table(fit, design)
    _emit(out / "design.bin", glmm_mod.design_to_bytes(design), config, inputs)
    _emit(out / "glmm_fit.json", fit.to_json() + "\n", config, inputs)
    wald_obj = {"empty": False, "rows": [
        {"name": r.name, "beta": r.beta, "se": r.se, "or": r.odds_ratio,
         "lo": r.ci_low, "hi": r.ci_high, "p_raw": r.p_raw, "flagged": r.flagged}
        for r in table.rows
    ]}
    _emit(out / "wald.json", json.dumps(wald_obj, sort_keys=True, indent=1) + "\n",
          config, inputs)
    print(f"glmm: fit {design.n} messages across {design.n_clusters} schools, "
          f"sigma={fit.sigma:.4f}, converged={fit.converged}")
    return EXIT_OK


def stage_report(config) -> int:
    out = _out_dir(config)
    predictions_path = _require_artifact(out / "predictions.csv", "report")
    wald_path = _require_artifact(out / "wald.json", "report")
    predictions = stacking.read_predictions(predictions_path.read_text(encoding="utf-8"))
    share_table = report_mod.negative_share(predictions)
    inputs = {"predictions": predictions_path, "wald": wald_path}

    _emit(out / "shares.csv", report_mod.shares_csv(share_table), config, inputs)
    _emit(out / "diffs.csv", report_mod.diffs_csv(share_table), config, inputs)

    wald_obj = json.loads(wald_path.read_text(encoding="utf-8"))
    rows = [
        glmm_mod.OddsRatioRow(name=r["name"], beta=r["beta"], se=r["se"],
                              odds_ratio=r["or"], ci_low=r["lo"], ci_high=r["hi"],
                              p_raw=r["p_raw"], flagged=r["flagged"])
        for r in wald_obj.get("rows", [])
    ]
    or_table = glmm_mod.OddsRatioTable(rows=rows)
    testable = [(r.name, r.p_raw) for r in rows if r.p_raw is not None]
    adjusted = None
    if testable:
        raw = report_mod.PValueSet(names=[n for n, _ in testable],
                                   values=[max(p, 1e-300) for _, p in testable])
        adjusted = report_mod.bh_adjust(raw)
    _emit(out / "odds_ratios.csv",
          report_mod.odds_ratio_csv(or_table, adjusted or report_mod.PValueSet([], [])),
          config, inputs)

    coords = []
    if config.get("coordinates"):
        coords_path = _require(config, "coordinates", "report")
        coords = figures.read_coordinates(coords_path.read_text(encoding="utf-8"))
        inputs["coordinates"] = coords_path
    written = figures.emit_figures(share_table, or_table if rows else None,
                                   adjusted, coords, out / "figures")
    for path in written:
        artifacts.write_manifest(path, config, inputs)
    print(f"report: {len(share_table.cells)} school-year cells, "
          f"{len(written)} figure file(s)")
    return EXIT_OK


STAGES = {
    "ingest": stage_ingest,
    "graph": stage_graph,
    "sample": stage_sample,
    "score": stage_score,
    "stack": stage_stack,
    "glmm": stage_glmm,
    "report": stage_report,
}


def stage_all(config) -> int:
    for name in ("ingest", "graph", "sample", "score", "stack", "glmm", "report"):
        code = STAGES[name](config)
        if code != EXIT_OK:
            return code
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentitrend",
        description="Sentiment trend pipeline over threaded forum data",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in list(STAGES) + ["all"]:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--years", help="comma-separated years")
        p.add_argument("--months", help="comma-separated months (1..12)")
        p.add_argument("--cap", type=int, help="subgraph node budget")
        p.add_argument("--seed-batch", dest="seed_batch", type=int,
                       help="random seed-node batch size")
        p.add_argument("--rng-seed", dest="rng_seed", type=int, help="sampler RNG seed")
        p.add_argument("--jobs", type=int, help="per-school parallelism bound")
        p.add_argument("--out", help="output directory")
        p.add_argument("--comments", help="comments JSONL path")
        p.add_argument("--covariates", help="covariates CSV path")
        p.add_argument("--coordinates", help="school coordinates CSV path")
        p.add_argument("--embeddings", help="EMB1 embeddings path")
        p.add_argument("--gat-params", dest="gat_params", help="attention weights JSON")
        p.add_argument("--stack-model", dest="stack_model", help="stacking model JSON")
        p.add_argument("--upstream-probs", dest="upstream_probs",
                       help="upstream probabilities CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.subcommand == "all":
            return stage_all(config)
        return STAGES[args.subcommand](config)
    except ValidationFailure as exc:
        print(f"error [{args.subcommand}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError, OSError) as exc:
        print(f"error [{args.subcommand}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
