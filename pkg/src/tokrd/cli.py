"""Command-line pipeline driver.

Subcommands: train-tokeniser, tokenise, collect, estimate, sweep.  A TOML
config file supplies the pipeline settings; a few common keys can be
overridden with flags.  Every run writes a manifest JSON recording the
resolved config and its hash, so outputs are reproducible byte-for-byte
from the same config.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time

try:
    import tomllib as tomli
except ModuleNotFoundError:
    import tomli

from . import __version__
from .lm import (
    SyntheticLanguage,
    load_external_logprobs,
    perfect_oracle,
    train_ngram,
    UniformBackend,
)
from .outcomes import (
    collect_outcomes,
    enumerate_candidates,
    exclude_nested,
    write_outcomes_csv,
)
from .rd import dataset_from_outcomes, fit_rd, write_fit_report, write_fitted_values_csv
from .tokeniser import load_vocab, save_vocab, train_ranked_vocab, write_token_stream


DEFAULTS = {
    "seed": 0,
    "data": {"train": "", "eval": ""},
    "tokeniser": {
        "objective": "bpe_count",
        "k_plus": 4000,
        "cutoff": 2000,
        "tok_fn": "merge_based",
        "pretokenise": True,
        "byte_alphabet": False,
        "vocab_file": "vocab.json",
    },
    "backend": {
        "kind": "ngram",
        "order": 3,
        "alpha": 0.1,
        "vocabulary_size": 0,
        "path": "",
    },
    "estimate": {
        "window": 500,
        "min_occurrences": 5,
        "stats": ["mean"],
        "windows": [250, 500, 1000],
        "include_doc_start": True,
    },
}


class CLIError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


def _merge_config(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_config(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, "rb") as f:
                cfg = _merge_config(cfg, tomli.load(f))
        except FileNotFoundError:
            raise CLIError("config", f"config file not found: {path}")
        except tomli.TOMLDecodeError as e:
            raise CLIError("config", f"{path}: {e}")
    if getattr(args, "cutoff", None) is not None:
        cfg["tokeniser"]["cutoff"] = args.cutoff
    if getattr(args, "window", None) is not None:
        cfg["estimate"]["window"] = args.window
    if getattr(args, "stat", None) is not None:
        cfg["estimate"]["stats"] = [args.stat]
    if getattr(args, "backend", None) is not None:
        cfg["backend"]["kind"] = args.backend
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir: str, cfg: dict, command: str) -> None:
    payload = {
        "command": command,
        "config": cfg,
        "config_sha256": _config_hash(cfg),
        "tokrd_version": __version__,
    }
    tmp = os.path.join(out_dir, ".manifest.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))


def read_corpus(path: str, stage: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f]
    except OSError as e:
        raise CLIError(stage, f"cannot read corpus {path}: {e}")


def _vocab_path(cfg: dict, out_dir: str) -> str:
    p = cfg["tokeniser"]["vocab_file"]
    return p if os.path.isabs(p) else os.path.join(out_dir, p)


def _load_or_train_vocab(cfg: dict, out_dir: str, stage: str):
    path = _vocab_path(cfg, out_dir)
    if os.path.exists(path):
        return load_vocab(path)
    tk = cfg["tokeniser"]
    corpus = read_corpus(cfg["data"]["train"], stage)
    vocab = train_ranked_vocab(
        corpus,
        tk["objective"],
        tk["k_plus"],
        pretokenised=tk["pretokenise"],
        byte_alphabet=tk["byte_alphabet"],
    )
    save_vocab(vocab, path)
    return vocab


def _build_backend(cfg: dict, tok, stage: str):
    b = cfg["backend"]
    kind = b["kind"]
    if kind == "uniform":
        size = b["vocabulary_size"] or tok.vocab_size
        return UniformBackend(size)
    if kind == "ngram":
        corpus = read_corpus(cfg["data"]["train"], stage)
        token_corpus = [tok.tokenise(doc) for doc in corpus]
        return train_ngram(token_corpus, b["order"], b["alpha"], vocab=tok.vocab_ids)
    if kind == "perfect":
        if not b["path"]:
            raise CLIError(stage, "perfect backend requires backend.path (language JSON)")
        with open(b["path"], encoding="utf-8") as f:
            support = [(s, p) for s, p in json.load(f)]
        return perfect_oracle(SyntheticLanguage(support), tok)
    if kind == "external":
        if not b["path"]:
            raise CLIError(stage, "external backend requires backend.path (JSON-lines file)")
        return load_external_logprobs(b["path"])
    raise CLIError(stage, f"unknown backend kind {kind!r}")


def cmd_train_tokeniser(cfg: dict, args: argparse.Namespace) -> None:
    tk = cfg["tokeniser"]
    corpus = read_corpus(cfg["data"]["train"], "train-tokeniser")
    t0 = time.monotonic()
    vocab = train_ranked_vocab(
        corpus,
        tk["objective"],
        tk["k_plus"],
        pretokenised=tk["pretokenise"],
        byte_alphabet=tk["byte_alphabet"],
    )
    elapsed = time.monotonic() - t0
    path = _vocab_path(cfg, args.out_dir)
    save_vocab(vocab, path)
    print(f"trained {vocab.k_plus} merges in {elapsed:.2f}s -> {path}")
    if vocab.truncated:
        print(f"warning: corpus exhausted mergeable pairs before {tk['k_plus']} merges")


def cmd_tokenise(cfg: dict, args: argparse.Namespace) -> None:
    vocab = _load_or_train_vocab(cfg, args.out_dir, "tokenise")
    tk = cfg["tokeniser"]
    tok = vocab.truncate(tk["cutoff"], tk["tok_fn"])
    docs = read_corpus(args.input, "tokenise")
    t0 = time.monotonic()
    streams = [tok.tokenise(doc) for doc in docs]
    elapsed = max(time.monotonic() - t0, 1e-9)
    if args.check_roundtrip:
        for i, (doc, stream) in enumerate(zip(docs, streams)):
            if tok.detokenise(stream) != doc:
                raise CLIError("tokenise", f"round-trip failed on line {i + 1}")
    out = os.path.join(args.out_dir, "tokens.txt")
    sidecar = os.path.join(args.out_dir, "subwords.json")
    write_token_stream(streams, out, sidecar, {i: tok.subword_string(i) for i in tok.vocab_ids})
    n_tokens = sum(len(s) for s in streams)
    print(f"tokenised {len(docs)} documents, {n_tokens} tokens ({n_tokens / elapsed:.0f} tokens/s) -> {out}")


def _collect(cfg: dict, out_dir: str, stage: str):
    tk, est = cfg["tokeniser"], cfg["estimate"]
    vocab = _load_or_train_vocab(cfg, out_dir, stage)
    tok = vocab.truncate(tk["cutoff"], tk["tok_fn"])
    backend = _build_backend(cfg, tok, stage)
    window = max([est["window"]] + list(est.get("windows") or []))
    candidates = enumerate_candidates(vocab, tk["cutoff"], window)
    candidates = exclude_nested(candidates, tok.vocab_strings)
    eval_corpus = read_corpus(cfg["data"]["eval"], stage)
    records = collect_outcomes(
        eval_corpus,
        tok,
        backend,
        candidates,
        min_occurrences=est["min_occurrences"],
        include_doc_start=est["include_doc_start"],
    )
    return records


def cmd_collect(cfg: dict, args: argparse.Namespace) -> None:
    records = _collect(cfg, args.out_dir, "collect")
    path = os.path.join(args.out_dir, "outcomes.csv")
    write_outcomes_csv(records, path)
    print(f"collected outcomes for {len(records)} candidates -> {path}")


def cmd_estimate(cfg: dict, args: argparse.Namespace) -> None:
    est, tk = cfg["estimate"], cfg["tokeniser"]
    records = _collect(cfg, args.out_dir, "estimate")
    write_outcomes_csv(records, os.path.join(args.out_dir, "outcomes.csv"))
    w = est["window"]
    sub = [r for r in records if tk["cutoff"] - w + 1 <= r.candidate.rank <= tk["cutoff"] + w]
    for stat in est["stats"]:
        data = dataset_from_outcomes(sub, tk["cutoff"], w, stat)
        fit = fit_rd(data)
        report = os.path.join(args.out_dir, f"report_{stat}.json")
        write_fit_report(fit, report)
        write_fitted_values_csv(data, fit, os.path.join(args.out_dir, f"fitted_{stat}.csv"))
        print(
            f"stat={stat} window={w}: tau_hat={fit.tau_hat:.4f} se={fit.se_tau:.4f} "
            f"(n={fit.n_treated}+{fit.n_control}) -> {report}"
        )


def cmd_sweep(cfg: dict, args: argparse.Namespace) -> None:
    est, tk = cfg["estimate"], cfg["tokeniser"]
    records = _collect(cfg, args.out_dir, "sweep")
    write_outcomes_csv(records, os.path.join(args.out_dir, "outcomes.csv"))
    from .rd import window_sweep

    for stat in est["stats"]:
        fits, skipped = window_sweep(records, tk["cutoff"], est["windows"], stat)
        for fit in fits:
            report = os.path.join(args.out_dir, f"report_{stat}_w{fit.window}.json")
            write_fit_report(fit, report)
            print(f"stat={stat} window={fit.window}: tau_hat={fit.tau_hat:.4f} se={fit.se_tau:.4f} -> {report}")
        for w, reason in skipped:
            print(f"warning: window {w} skipped: {reason}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokrd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--cutoff", type=int)
        p.add_argument("--window", type=int)
        p.add_argument("--stat", choices=["mean", "std", "median", "iqr"])
        p.add_argument("--backend", choices=["uniform", "ngram", "perfect", "external"])
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train-tokeniser", help="train a ranked vocabulary")
    common(p)
    p = sub.add_parser("tokenise", help="tokenise a text file")
    common(p)
    p.add_argument("--input", required=True, help="input text file, one document per line")
    p.add_argument("--check-roundtrip", action="store_true", help="verify detokenisation reproduces the input")
    p = sub.add_parser("collect", help="collect per-candidate outcomes")
    common(p)
    p = sub.add_parser("estimate", help="collect outcomes and fit the discontinuity regression")
    common(p)
    p = sub.add_parser("sweep", help="estimate across the configured window sizes")
    common(p)
    return parser


COMMANDS = {
    "train-tokeniser": cmd_train_tokeniser,
    "tokenise": cmd_tokenise,
    "collect": cmd_collect,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        os.makedirs(args.out_dir, exist_ok=True)
        write_manifest(args.out_dir, cfg, args.command)
        COMMANDS[args.command](cfg, args)
    except CLIError as e:
        print(f"error: {e.stage}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
