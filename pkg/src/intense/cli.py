"""Command-line entry point: ``python -m intense {generate,train,verify,report}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 runtime failure. Options may also come from ``--config file.json`` (keys are
the long option names with dashes or underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .analysis import SUITES, pearson, run_verification
from .errors import (ContractError, InputError, OracleFailure, TrainingDivergedError,
                     UndefinedRelevanceError)
from .fusion import RelevanceReport, interaction_set, set_name
from .synthdata import (SYNTHGENE_PROBS, XOR_PROBS, SynthGeneConfig, generate_synthgene,
                        generate_synthgene_tri, read_jsonl, write_jsonl)
from .training import (NORMALIZATIONS, MultimodalModel, TrainConfig, evaluate,
                       save_checkpoint, train)

log = logging.getLogger("intense")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

TRAIN_DEFAULTS = {
    "method": "mnl", "normalization": None, "tf_indices": "", "p_norm": 1.0,
    "reg_param": 0.05, "lr": 1e-3, "scheduler_gamma": 0.9, "epochs": 20,
    "batch_size": 32, "seed": 0, "weight_decay": 0.01, "latent_dim": 8,
    "tf_latent_dim": 8, "modalities": "",
}
GENERATE_DEFAULTS = {"dataset": "synthgene", "seed": 0, "n": 10000, "probs": ""}


class UsageError(Exception):
    pass


def parse_tf_indices(text) -> list:
    """``"12,13"`` -> [(1, 2), (1, 3)]; ``"[1,13]"`` names the set {1, 13}.

    Both forms may be mixed: ``"12,[1,13]"``. Lists are accepted as-is.
    """
    if isinstance(text, (list, tuple)):
        return [interaction_set(s) for s in text]
    text = (text or "").replace(" ", "")
    out = []
    for token in re.findall(r"\[[^\]]*\]|[^,\[\]]+", text):
        if token.startswith("["):
            body = token[1:-1]
            if not re.fullmatch(r"\d+(,\d+)*", body):
                raise UsageError(f"bad interaction set {token!r}")
            idx = [int(d) for d in body.split(",")]
        else:
            if not token.isdigit():
                raise UsageError(f"bad interaction set {token!r}: expected digits like 13")
            idx = [int(d) for d in token]
        try:
            out.append(interaction_set(idx))
        except ContractError as exc:
            raise UsageError(f"bad interaction set {token!r}: {exc}") from None
    if re.sub(r"\[[^\]]*\]|[^,\[\]]+|,", "", text):
        raise UsageError(f"unbalanced brackets in {text!r}")
    return out


def _int_list(text) -> list:
    if isinstance(text, list):
        return [int(x) for x in text]
    if not text:
        return []
    try:
        return [int(x) for x in str(text).split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text) -> list:
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",")] if text else []
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _resolve(args, defaults: dict) -> dict:
    """Merge built-in defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
        for key, value in cfg.items():
            key = key.replace("-", "_")
            if key not in defaults:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# commands --------------------------------------------------------------------

def cmd_generate(args) -> int:
    opts = _resolve(args, GENERATE_DEFAULTS)
    if opts["dataset"] not in ("synthgene", "synthgene-tri"):
        raise UsageError(f"unknown dataset {opts['dataset']!r}")
    default = SYNTHGENE_PROBS if opts["dataset"] == "synthgene" else XOR_PROBS
    probs = _float_list(opts["probs"]) or list(default)
    n = int(opts["n"])
    if n < 2:
        raise UsageError("--n must be at least 2")
    try:
        config = SynthGeneConfig(tuple(probs), n, int(opts["seed"]))
        gen = generate_synthgene if opts["dataset"] == "synthgene" else generate_synthgene_tri
        data = gen(config)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(data, out)
    rates = data.flags.mean(axis=0)
    print(f"wrote {len(data)} samples x {data.n_modalities} modalities to {out}")
    print(f"class balance: {int((data.labels == 1).sum())} positive / "
          f"{int((data.labels == -1).sum())} negative")
    print("insertion rates: " + " ".join(f"M{m + 1}={r:.3f}" for m, r in enumerate(rates)))
    return EXIT_OK


def _train_config(opts: dict) -> TrainConfig:
    if opts["method"] not in ("mnl", "intense"):
        raise UsageError(f"unknown method {opts['method']!r}")
    if opts["normalization"] is not None and opts["normalization"] not in NORMALIZATIONS:
        raise UsageError(f"unknown normalization {opts['normalization']!r}")
    try:
        return TrainConfig(
            method=opts["method"], normalization=opts["normalization"],
            tf_indices=parse_tf_indices(opts["tf_indices"]),
            modalities=_int_list(opts["modalities"]) or None,
            lr=float(opts["lr"]), scheduler_gamma=float(opts["scheduler_gamma"]),
            epochs=int(opts["epochs"]), batch_size=int(opts["batch_size"]),
            weight_decay=float(opts["weight_decay"]), lambda_reg=float(opts["reg_param"]),
            p=float(opts["p_norm"]), seed=int(opts["seed"]),
            latent_dim=int(opts["latent_dim"]), tf_latent_dim=int(opts["tf_latent_dim"]))
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    opts = _resolve(args, TRAIN_DEFAULTS)
    config = _train_config(opts)
    data = read_jsonl(args.dataset)
    try:
        config.fusion_config(data.n_modalities)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    train_set, val_set, test_set = data.split(config.seed)
    model = MultimodalModel.from_config(config, data.n_modalities)
    best, history = train(model, train_set, val_set, config)
    test_acc, test_loss = evaluate(best, test_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", best, config, data.n_modalities)
    _atomic_write(out / "history.csv", _csv_text(
        history.rows(), ["epoch", "lr", "train_loss", "val_loss", "val_accuracy"]))
    rel = best.relevance().to_dict()
    rel["top"] = set_name(best.relevance().top())
    _atomic_write(out / "relevance.json", _dump(rel))
    _atomic_write(out / "metrics.json", _dump({
        "best_epoch": history.best_epoch, "test_accuracy": test_acc, "test_loss": test_loss,
        "modalities": config.modalities, "method": config.method,
        "normalization": config.normalization, "config_hash": config.digest()}))
    print(f"best epoch {history.best_epoch}: test accuracy {test_acc:.4f}, loss {test_loss:.4f}")
    for row in rel["scores"]:
        print(f"  {row['set']:>8}  beta={row['beta']:.4f}  share={row['share']:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    suites = args.suite or list(SUITES)
    if args.order is not None and args.order not in (2, 3, 4):
        raise UsageError("--order must be 2, 3 or 4")
    try:
        results = run_verification(suites, seed=args.seed, order=args.order)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    summary = {"seed": args.seed, "passed": all(r.passed for r in results),
               "checks": [r.to_dict() for r in results]}
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        print(f"{flag} {r.suite}/{r.name}: worst {r.worst:.3e} (tolerance {r.tolerance:.0e})"
              + (f" {r.detail}" if r.detail else ""))
    if args.out:
        _atomic_write(Path(args.out), _dump(summary))
    if not summary["passed"]:
        print("failed: " + ", ".join(f"{r.suite}/{r.name}" for r in results if not r.passed),
              file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _load_run(path: Path):
    rel_path, met_path = path / "relevance.json", path / "metrics.json"
    if not rel_path.is_file() or not met_path.is_file():
        raise InputError(f"{path} holds no trained run (relevance.json and metrics.json)")
    return (RelevanceReport.from_dict(json.loads(rel_path.read_text())),
            json.loads(met_path.read_text()))


def cmd_report(args) -> int:
    report, metrics = _load_run(Path(args.run))
    accuracy = {}
    for u in args.unimodal or []:
        _, um = _load_run(Path(u))
        mods = um.get("modalities") or []
        if len(mods) != 1:
            raise InputError(f"{u} is not a single-modality run")
        accuracy[(mods[0],)] = um["test_accuracy"]
    share = report.display_share
    top = report.top()
    rows = [{"set": set_name(s), "beta": report.beta[s], "share": share[s],
             "accuracy": accuracy.get(s, ""), "max": int(s == top)} for s in report.beta]
    paired = [(accuracy[s], report.beta[s]) for s in report.beta if s in accuracy]
    corr = pearson(*zip(*paired)) if len(paired) >= 2 else None
    if corr is not None and not np.isfinite(corr):
        corr = None
    out = Path(args.out)
    _atomic_write(out.with_suffix(".csv"),
                  _csv_text(rows, ["set", "beta", "share", "accuracy", "max"]))
    _atomic_write(out.with_suffix(".json"), _dump({
        "rows": rows, "pearson": corr, "p": report.p, "top": set_name(top),
        "multimodal_accuracy": metrics["test_accuracy"]}))
    print(f"{len(rows)} rows, top {set_name(top)}"
          + (f", pearson {corr:.4f}" if corr is not None else ""))
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intense", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic JSON Lines dataset")
    g.add_argument("--dataset", choices=["synthgene", "synthgene-tri"])
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--probs", help="comma-separated insertion probability per modality")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a fusion model and export relevance scores")
    t.add_argument("--dataset", required=True)
    t.add_argument("--method", choices=["mnl", "intense"])
    t.add_argument("--normalization", choices=list(NORMALIZATIONS))
    t.add_argument("--tf-indices", dest="tf_indices",
                   help='interaction sets, e.g. "12,13,123" or "[1,13]"')
    t.add_argument("--modalities", help="restrict to these modalities, e.g. 4 or 2,7")
    t.add_argument("--p-norm", dest="p_norm", type=float)
    t.add_argument("--reg-param", dest="reg_param", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--scheduler-gamma", dest="scheduler_gamma", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--latent-dim", dest="latent_dim", type=int)
    t.add_argument("--tf-latent-dim", dest="tf_latent_dim", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the numerical certificate suites")
    v.add_argument("--suite", action="append", choices=list(SUITES))
    v.add_argument("--order", type=int, help="restrict theorem2 to one interaction order")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="JSON summary path")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="export relevance/accuracy tables as CSV + JSON")
    r.add_argument("--run", required=True, help="directory written by train")
    r.add_argument("--unimodal", action="append", help="single-modality run directory")
    r.add_argument("--out", required=True, help="output path stem (.csv and .json)")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, InputError, ContractError) as exc:
        print(f"intense {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, OracleFailure, UndefinedRelevanceError) as exc:
        print(f"intense {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
