"""``irlab`` command line.

Every option can also come from a JSON file given with ``--config``; keys are
the long option names with dashes or underscores. Precedence: command-line
flag > config file > ``IRLAB_SEED`` (seed only) > built-in default. Unknown
config keys are rejected. Exit codes: 0 success, 1 configuration error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .rng import SEED_ENV

CONFIG_ERROR = 1
RUNTIME_ERROR = 2


class ConfigError(Exception):
    pass


# --- option tables -------------------------------------------------------------
# name -> (default, type, help); type "flag" is a boolean switch.

COMMON = {
    "out": ("out", str, "output directory"),
    "workers": (1, int, "worker processes where parallelism is supported"),
}

SEEDED = {"seed": (None, int, f"master seed (falls back to ${SEED_ENV})")}

DATA = {
    "data": (None, str, "dataset directory (corpus.tsv, topics.tsv, qrels.txt ...)"),
    "corpus": (None, str, "corpus file docid<TAB>text"),
    "topics": (None, str, "topics file qid<TAB>text"),
    "qrels": (None, str, "TREC qrels file"),
}

SCORER = {
    "scorer": (None, str, "classical scorer: bm25, lm or tfidf"),
    "model_dir": (None, str, "trained matcher directory (instead of --scorer)"),
    "truncate": (None, int, "score only the first N document tokens"),
    "passage_len": (None, int, "score passages of this length and aggregate"),
    "stride": (None, int, "passage stride (default: passage length)"),
    "agg": ("max", str, "passage aggregation: max or mean"),
}

COMMANDS = {
    "gen-synthetic": {
        **SEEDED,
        "preset": ("desk-density", str, "desk-density, desk-topic, full-density or full-topic"),
        "n_queries": (None, int, "override the preset's query count"),
    },
    "train": {
        **SEEDED,
        **DATA,
        "model": ("int", str, "rep or int"),
        "similarity": ("cosine", str, "int model similarity: dot, cosine or gaussian"),
        "sigma": (1.0, float, "gaussian kernel width"),
        "row_pooling": (False, "flag", "int model: pool every query row separately"),
        "dim": (50, int, "embedding dimension"),
        "max_len": (500, int, "document truncation length"),
        "epochs": (5, int, "training epochs"),
        "rate": (0.001, float, "learning rate"),
        "margin": (1.0, float, "hinge margin"),
        "batch": (16, int, "triples per update"),
        "optimizer": ("adam", str, "adam or sgd"),
        "fixed_embeddings": (False, "flag", "do not train the embedding table"),
    },
    "score": {**DATA, **SCORER, "split": ("all", str, "query split: all, train or test")},
    "eval": {
        "run": (None, str, "TREC run file"),
        "qrels": (None, str, "TREC qrels file"),
        "cutoffs": ("1,10", str, "comma-separated rank cutoffs"),
    },
    "axioms": {
        **SEEDED,
        **DATA,
        **SCORER,
        "n": (200, int, "probes per axiom"),
        "axioms": ("TFC1,TFC2,TDC,LNC1,LNC2,TF-LNC,TSFC", str, "comma-separated axiom ids"),
        "tie_tol": (1e-9, float, "relative tie tolerance"),
        "edit_start": (0, int, "only edit document positions at or after this index"),
        "detail": (False, "flag", "also write per-probe probes.csv"),
    },
    "diagnose": {
        **SEEDED,
        **DATA,
        "features": (None, str, "robustness: feature CSV qid,docid,label,f1,..."),
        "model_dir": (None, str, "robustness/pooling: trained matcher directory"),
        "classic": (False, "flag", "robustness: use classical features"),
        "test_fraction": (0.2, float, "robustness: held-out query fraction when no split is given"),
        "l2": (1e-3, float, "robustness: ridge penalty"),
        "refit": (False, "flag", "robustness: refit after each removal"),
        "n_queries": (50, int, "pooling: number of test queries"),
        "top_n": (50, int, "pooling: ranked words compared"),
        "threshold": (500, int, "positions: truncation threshold"),
        "bin_width": (100, int, "positions: histogram bin width"),
        "all_pairs": (False, "flag", "positions: include non-relevant pairs"),
        "words": (None, str, "overlap: ranked word CSV (word,count)"),
        "reference": (None, str, "overlap: topics JSON or one word per line"),
        "max_n": (500, int, "overlap: longest prefix"),
    },
    "lda": {
        **SEEDED,
        "data": (None, str, "dataset directory"),
        "corpus": (None, str, "corpus file"),
        "k": (50, int, "topics"),
        "alpha": (None, float, "doc-topic prior (default 50/K)"),
        "beta": (0.01, float, "topic-word prior"),
        "iters": (500, int, "Gibbs sweeps"),
        "per_topic": (50, int, "exported words per topic"),
    },
    "grad-check": {
        **SEEDED,
        "seeds": (10, int, "seeds per fragment"),
        "tolerance": (1e-4, float, "maximum accepted relative error"),
    },
}

NEEDS_SEED = {"gen-synthetic", "train", "axioms", "lda", "grad-check"}
DIAGNOSE_TASKS = ("robustness", "pooling", "positions", "overlap")


def _options(command: str) -> dict:
    return {**COMMON, **COMMANDS[command]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irlab", description="Retrieval-model diagnostics laboratory.")
    parser.add_argument("--version", action="version", version=f"irlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        if command == "diagnose":
            p.add_argument("task", choices=DIAGNOSE_TASKS)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
        for name, (default, typ, help_) in _options(command).items():
            flag = "--" + name.replace("_", "-")
            shown = f"{help_} (default: {default})"
            if typ == "flag":
                p.add_argument(flag, dest=name, action="store_true", default=argparse.SUPPRESS, help=shown)
            else:
                p.add_argument(flag, dest=name, type=typ, default=argparse.SUPPRESS, help=shown)
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    """Merge defaults, config file and flags; validate keys and the seed."""
    options = _options(command)
    config = {name: spec[0] for name, spec in options.items()}
    path = flags.pop("config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            name = key.replace("-", "_")
            if name not in options:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            config[name] = value
    config.update(flags)
    if "seed" in options and config["seed"] is None:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                config["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if command in NEEDS_SEED and config.get("seed") is None:
        raise ConfigError(f"{command}: a seed is required (--seed, config 'seed' or ${SEED_ENV})")
    if config.get("workers", 1) < 1:
        raise ConfigError("workers must be >= 1")
    return config


def _versions() -> dict:
    import numba
    import scipy

    return {
        "irlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_manifest(out: Path, command: str, config: dict, outputs: list[str]):
    # Output location and worker count do not change results, so they stay out of the hash.
    hashed = {k: v for k, v in config.items() if k not in ("out", "workers")}
    canonical = json.dumps({"command": command, **hashed}, sort_keys=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.get("seed"),
        "versions": _versions(),
        "outputs": sorted(outputs),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --- shared loaders ------------------------------------------------------------


def _require(config, *names):
    for n in names:
        if config.get(n) in (None, ""):
            raise ConfigError(f"--{n.replace('_', '-')} is required")


def _existing(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_data(config, vocab=None):
    """Dataset from --data, or from --corpus/--topics/--qrels."""
    from .corpus import Qrels, load_collection, parse_qrels
    from .synthetic import SyntheticDataset, load_dataset

    if config.get("data"):
        return load_dataset(_existing(config["data"], "dataset directory"), vocab)
    _require(config, "corpus")
    topics = _existing(config["topics"]) if config.get("topics") else None
    coll = load_collection(_existing(config["corpus"]), topics, vocab=vocab)
    qrels = parse_qrels(_existing(config["qrels"])) if config.get("qrels") else Qrels()
    by_query = qrels.by_query()
    ann = {q: {"docs": sorted(d for d in by_query.get(q, {}) if d in coll.documents)} for q in coll.queries}
    return SyntheticDataset(
        "text", None, coll.vocab, coll.queries, coll.documents, qrels, [], ann,
        {"train": list(coll.queries), "test": []},
    )


def _load_model(model_dir):
    from .corpus import read_vocabulary
    from .matchers import load_model

    d = _existing(model_dir, "model directory")
    return load_model(d), read_vocabulary(d / "vocab.tsv")


def _build_scorer(config, vocab=None):
    """Returns (scorer, vocabulary or None when the scorer brings none)."""
    from .diagnostics import PassageScorer, Truncated
    from .rankers import CLASSIC_SCORERS, CollectionStats

    if config.get("model_dir"):
        scorer, model_vocab = _load_model(config["model_dir"])
    else:
        _require(config, "scorer")
        if config["scorer"] not in CLASSIC_SCORERS:
            raise ConfigError(f"unknown scorer {config['scorer']!r}; choose from {sorted(CLASSIC_SCORERS)}")
        scorer = CLASSIC_SCORERS[config["scorer"]](CollectionStats.from_vocabulary(vocab))
        model_vocab = None
    if config.get("truncate"):
        scorer = Truncated(scorer, config["truncate"])
    if config.get("passage_len"):
        if config["agg"] not in ("max", "mean"):
            raise ConfigError("agg must be max or mean")
        scorer = PassageScorer(scorer, config["passage_len"], config.get("stride"), config["agg"])
    return scorer, model_vocab


def _split_qids(ds, split: str) -> list[str]:
    if split == "all":
        return list(ds.queries)
    if split not in ("train", "test"):
        raise ConfigError("split must be all, train or test")
    return [q for q in ds.split.get(split, []) if q in ds.queries]


# --- commands ------------------------------------------------------------------


def cmd_gen_synthetic(config, out: Path) -> list[str]:
    from .synthetic import generate, preset

    try:
        scale, kind = config["preset"].split("-")
        cfg = preset(scale, seed=config["seed"])
    except ValueError:
        raise ConfigError(f"unknown preset {config['preset']!r}; use desk-density, desk-topic, full-density or full-topic") from None
    if config.get("n_queries"):
        from dataclasses import replace

        cfg = replace(cfg, n_queries=config["n_queries"])
    if kind not in ("density", "topic"):
        raise ConfigError(f"unknown dataset kind {kind!r}")
    generate(kind, cfg).write(out)
    return ["corpus.tsv", "topics.tsv", "qrels.txt", "triples.tsv", "annotations.json"]


def cmd_train(config, out: Path) -> list[str]:
    from .corpus import write_vocabulary
    from .matchers import IntModel, RepModel, TrainConfig, train_pairwise

    ds = _load_data(config)
    if not ds.triples:
        raise ConfigError("training needs triples.tsv in the dataset directory")
    common = dict(
        vocab_size=len(ds.vocab), dim=config["dim"], max_len=config["max_len"], seed=config["seed"],
        train_embeddings=not config["fixed_embeddings"],
    )
    if config["model"] == "rep":
        model = RepModel(**common)
    elif config["model"] == "int":
        if config["similarity"] not in ("dot", "cosine", "gaussian"):
            raise ConfigError(f"unknown similarity {config['similarity']!r}")
        model = IntModel(similarity=config["similarity"], sigma=config["sigma"], row_pooling=config["row_pooling"], **common)
    else:
        raise ConfigError(f"unknown model {config['model']!r}; use rep or int")
    if config["optimizer"] not in ("adam", "sgd"):
        raise ConfigError("optimizer must be adam or sgd")
    triples = ds.token_triples()
    tc = TrainConfig(config["epochs"], config["rate"], config["margin"], config["batch"], config["seed"], config["optimizer"])
    result = train_pairwise(model, triples, tc, log=lambda m: print(m, file=sys.stderr))
    model.save(out)
    write_vocabulary(out / "vocab.tsv", ds.vocab)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.loss_trace, start=1):
            w.writerow([i, f"{v:.6g}"])
    return ["model.ckpt", "model.json", "vocab.tsv", "loss.csv"]


def _score_queries(args):
    scorer, jobs = args
    return [(qid, {d: float(scorer(q, tokens)) for d, tokens in docs}) for qid, q, docs in jobs]


def cmd_score(config, out: Path) -> list[str]:
    from .corpus import ranked_run, write_run

    model_vocab = None
    if config.get("model_dir"):
        _, model_vocab = _load_model(config["model_dir"])
    ds = _load_data(config, model_vocab)
    scorer, _ = _build_scorer(config, ds.vocab)
    jobs = [
        (q, ds.queries[q].tokens, [(d, ds.documents[d].tokens) for d in ds.docs_for(q)])
        for q in _split_qids(ds, config["split"])
    ]
    jobs = [j for j in jobs if j[2]]
    if not jobs:
        raise ConfigError("no query has candidate documents (check qrels and split)")
    workers = config["workers"]
    if workers > 1:
        chunks = [(scorer, jobs[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scored = [r for part in pool.map(_score_queries, chunks) for r in part]
    else:
        scored = _score_queries((scorer, jobs))
    tag = getattr(scorer, "name", None) or getattr(scorer, "kind", "irlab")
    write_run(out / "run.txt", ranked_run(dict(scored), tag=str(tag)))
    return ["run.txt"]


def cmd_eval(config, out: Path) -> list[str]:
    from .corpus import parse_qrels, parse_run
    from .metrics import evaluate_run

    _require(config, "run", "qrels")
    try:
        cutoffs = [int(k) for k in str(config["cutoffs"]).split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"cutoffs must be comma-separated integers, got {config['cutoffs']!r}") from None
    run = parse_run(_existing(config["run"]))
    if not run:
        raise ConfigError(f"run file {config['run']} is empty")
    try:
        report = evaluate_run(run, parse_qrels(_existing(config["qrels"])), cutoffs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report.write_csv(out / "metrics.csv")
    report.write_table(out / "table.csv")
    report.write_json(out / "summary.json")
    return ["metrics.csv", "table.csv", "summary.json"]


def cmd_axioms(config, out: Path) -> list[str]:
    from .axioms import AXIOMS, ProbeContext, run_suite

    model_vocab = None
    if config.get("model_dir"):
        _, model_vocab = _load_model(config["model_dir"])
    ds = _load_data(config, model_vocab)
    scorer, _ = _build_scorer(config, ds.vocab)
    axioms = [a.strip() for a in config["axioms"].split(",") if a.strip()]
    bad = [a for a in axioms if a not in AXIOMS]
    if bad:
        raise ConfigError(f"unknown axioms {bad}; choose from {list(AXIOMS)}")
    base = scorer
    while hasattr(base, "scorer"):
        base = base.scorer
    ctx = ProbeContext.for_scorer(base, [d.tokens for d in ds.documents.values()], len(ds.vocab))
    report = run_suite(
        scorer, ctx, config["n"], config["seed"], config["tie_tol"], axioms,
        config["edit_start"], config["workers"], keep_details=config["detail"],
    )
    report.write_json(out / "axioms.json")
    outputs = ["axioms.json"]
    if config["detail"]:
        report.write_details(out / "probes.csv")
        outputs.append("probes.csv")
    return outputs


def _judged_pairs(ds, qids):
    for q in qids:
        for d in ds.docs_for(q):
            yield q, d, ds.queries[q].tokens, ds.documents[d].tokens, ds.qrels.grade(q, d)


def diagnose_robustness(config, out: Path) -> list[str]:
    from .diagnostics import FeatureSet, classic_features, learned_features, robustness_curve, split_queries
    from .rankers import CollectionStats

    outputs = []
    if config.get("features"):
        fs = FeatureSet.read_csv(_existing(config["features"]))
        train, test = split_queries(fs.qids, config["test_fraction"], config["seed"])
    else:
        model_vocab = None
        if config.get("model_dir"):
            model, model_vocab = _load_model(config["model_dir"])
        elif not config["classic"]:
            raise ConfigError("robustness needs --features, --model-dir or --classic")
        ds = _load_data(config, model_vocab)
        pairs = list(_judged_pairs(ds, ds.queries))
        if config.get("model_dir"):
            fs = learned_features(model, pairs)
        else:
            fs = classic_features(CollectionStats.from_vocabulary(ds.vocab), pairs)
        if ds.split.get("test"):
            train, test = ds.split["train"], ds.split["test"]
        else:
            train, test = split_queries(fs.qids, config["test_fraction"], config["seed"])
        fs.write_csv(out / "features.csv")
        outputs.append("features.csv")
    curve = robustness_curve(fs, train, test, config["l2"], config["refit"])
    curve.write(out / "robustness.csv")
    return outputs + ["robustness.csv", "robustness.json"]


def diagnose_pooling(config, out: Path) -> list[str]:
    from .diagnostics import pooling_report

    _require(config, "model_dir")
    model, vocab = _load_model(config["model_dir"])
    ds = _load_data(config, vocab)
    qids = (ds.split.get("test") or list(ds.queries))[: config["n_queries"]]
    report = pooling_report(model, ds, qids, config["top_n"])
    with open(out / "pooling_words.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["word", "count"])
        for t, c in report.ranked:
            w.writerow([vocab.words[t], c])
    summary = {k: (float(f"{v:.6g}") if isinstance(v, float) else v) for k, v in report.to_dict().items()}
    (out / "pooling.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ["pooling_words.csv", "pooling.json"]


def diagnose_positions(config, out: Path) -> list[str]:
    from .diagnostics import last_match_positions, positions_from_qrels

    ds = _load_data(config)
    pairs = list(positions_from_qrels(ds.queries, ds.documents, ds.qrels, relevant_only=not config["all_pairs"]))
    if not pairs:
        raise ConfigError("no judged (query, document) pairs found")
    report = last_match_positions(pairs, config["threshold"], config["bin_width"])
    report.histogram.write(out / "positions.csv")
    return ["positions.csv", "positions.json"]


def diagnose_overlap(config, out: Path) -> list[str]:
    from .diagnostics import overlap_curve

    _require(config, "words", "reference")
    with open(_existing(config["words"]), newline="") as fh:
        rows = list(csv.reader(fh))
    words = [r[0] for r in rows[1:] if r]
    ref_path = _existing(config["reference"])
    text = ref_path.read_text()
    try:
        data = json.loads(text)
        reference = {w for ws in data.values() for w in ws} if isinstance(data, dict) else set(data)
    except json.JSONDecodeError:
        reference = {line.strip() for line in text.splitlines() if line.strip()}
    curve = overlap_curve(words, reference, config["max_n"])
    curve.meta["reference_size"] = len(reference)
    curve.write(out / "overlap.csv")
    return ["overlap.csv", "overlap.json"]


def cmd_diagnose(config, out: Path, task: str) -> list[str]:
    return {
        "robustness": diagnose_robustness,
        "pooling": diagnose_pooling,
        "positions": diagnose_positions,
        "overlap": diagnose_overlap,
    }[task](config, out)


def cmd_lda(config, out: Path) -> list[str]:
    from .corpus import load_collection
    from .topics import export_topics, fit_lda

    if config.get("data"):
        coll = load_collection(_existing(Path(config["data"]) / "corpus.tsv"))
    else:
        _require(config, "corpus")
        coll = load_collection(_existing(config["corpus"]))
    if config["k"] < 1:
        raise ConfigError("k must be >= 1")
    model = fit_lda(
        [d.tokens for d in coll.documents.values()], len(coll.vocab), config["k"], config["alpha"],
        config["beta"], config["iters"], config["seed"],
    )
    export_topics(out / "topics.json", model, coll.vocab.words, config["per_topic"])
    with open(out / "loglik.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for i, v in enumerate(model.loglik, start=1):
            w.writerow([i, f"{v:.6g}"])
    return ["topics.json", "loglik.csv"]


class CheckFailed(Exception):
    pass


def cmd_grad_check(config, out: Path) -> list[str]:
    from .gradcheck import run_all

    seeds = range(config["seed"], config["seed"] + config["seeds"])
    errors = run_all(seeds)
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fragment", "max_rel_error", "ok"])
        for name, err in errors.items():
            w.writerow([name, f"{err:.6g}", int(err < config["tolerance"])])
    bad = [n for n, e in errors.items() if e >= config["tolerance"]]
    for name, err in errors.items():
        print(f"{name:24s} {err:.3g}")
    if bad:
        raise CheckFailed(f"gradient check above tolerance for: {', '.join(bad)}")
    return ["gradcheck.csv"]


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "axioms": cmd_axioms,
    "lda": cmd_lda,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    task = args.pop("task", None)
    try:
        config = resolve_config(command, args)
        out = Path(config["out"])
        out.mkdir(parents=True, exist_ok=True)
        if command == "diagnose":
            outputs = cmd_diagnose(config, out, task)
            config = {"task": task, **config}
        else:
            outputs = HANDLERS[command](config, out)
        write_manifest(out, command, config, outputs)
    except ConfigError as exc:
        print(f"irlab {command}: configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"irlab {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    print(f"wrote {', '.join(sorted(outputs))} to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
