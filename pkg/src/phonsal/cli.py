"""Command-line entry points.

    phonsal analyze --corpus <dir> --backend <spec> --out <dir> [options]
    phonsal dump-saliency --corpus <dir> --backend <spec> --out <dir> --utt <id> --token <i>
    phonsal selftest [--out <dir>]

Backend specs: ``exec:<command>``, ``http(s)://<url>``, ``oracle:<script.json>``.
The PHONSAL_BACKEND environment variable, when set, overrides --backend.
Options may also come from a key=value config file (--config); explicit flags
win over the file.
"""

from __future__ import annotations

import argparse
import os
import sys

from .report import PipelineError, RunConfig, dump_saliency, run_pipeline

BACKEND_ENV = "PHONSAL_BACKEND"

_ANALYZE_KEYS = {
    "corpus": str, "backend": str, "out": str, "subset": str,
    "iterations": int, "keep_prob": float, "top_fraction": float, "seed": int,
    "workers": int, "batch_size": int, "n_bands": int,
    "error_free_only": bool, "cache": bool, "dump_maps": bool,
}


def read_config_file(path: str) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _ANALYZE_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = _ANALYZE_KEYS[key]
            if kind is bool:
                values[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = kind(value)
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phonsal", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser):
        p.add_argument("--corpus", help="corpus root directory")
        p.add_argument("--backend", help="backend spec (exec:/http:/oracle:)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--subset", default=None, help="utterance-id prefix filter (default sx)")
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--keep-prob", type=float, default=None, dest="keep_prob")
        p.add_argument("--top-fraction", type=float, default=None, dest="top_fraction")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
        p.add_argument("--n-bands", type=int, default=None, dest="n_bands")
        p.add_argument("--no-error-free-filter", action="store_true")
        p.add_argument("--no-cache", action="store_true")
        p.add_argument("--dump-maps", action="store_true", dest="dump_maps",
                       help="also write per-token saliency dumps and word-map RLEs")

    analyze = sub.add_parser("analyze", help="run the full corpus analysis")
    add_common(analyze)

    dump = sub.add_parser("dump-saliency", help="export one token's map triple")
    add_common(dump)
    dump.add_argument("--utt", required=True, help="utterance id, e.g. train/dr1/mjd0/sx101")
    dump.add_argument("--token", required=True, type=int, help="token index within the utterance")

    selftest = sub.add_parser("selftest", help="run the synthetic acceptance suite")
    selftest.add_argument("--out", default=None, help="work directory (default: temp)")
    return parser


def _merged_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}

    def pick(flag_value, key: str, default):
        if flag_value is not None:
            return flag_value
        return file_values.get(key, default)

    backend = os.environ.get(BACKEND_ENV) or pick(args.backend, "backend", None)
    corpus = pick(args.corpus, "corpus", None)
    out = pick(args.out, "out", None)
    missing = [name for name, value in
               (("--corpus", corpus), ("--backend", backend), ("--out", out)) if not value]
    if missing:
        raise SystemExit(f"missing required option(s): {', '.join(missing)}")

    error_free = not args.no_error_free_filter and file_values.get("error_free_only", True)
    cache = not args.no_cache and file_values.get("cache", True)
    return RunConfig(
        corpus_root=corpus, backend_spec=backend, output_dir=out,
        subset=pick(args.subset, "subset", "sx"),
        iterations=pick(args.iterations, "iterations", 20000),
        keep_prob=pick(args.keep_prob, "keep_prob", 0.5),
        top_fraction=pick(args.top_fraction, "top_fraction", 0.03),
        seed=pick(args.seed, "seed", 0),
        workers=pick(args.workers, "workers", 1),
        batch_size=pick(args.batch_size, "batch_size", 128),
        n_bands=pick(args.n_bands, "n_bands", 8),
        error_free_only=error_free, cache=cache,
        dump_maps=args.dump_maps or file_values.get("dump_maps", False),
    )


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "selftest":
        from .acceptance import run_all
        results = run_all(work_dir=args.out)
        for r in results:
            print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
        return 0 if all(r.passed for r in results) else 1

    try:
        cfg = _merged_config(args)
        if args.command == "analyze":
            summary = run_pipeline(cfg)
            wer_text = "n/a" if summary.wer is None else f"{summary.wer:.2f}"
            print(f"analyzed {summary.n_analyzed}/{summary.n_utterances} utterances "
                  f"(WER {wer_text}, skips {summary.skips}); wrote {len(summary.files)} "
                  f"files to {cfg.output_dir}")
            return 0
        if args.command == "dump-saliency":
            files = dump_saliency(cfg, args.utt, args.token)
            for f in files:
                print(f)
            return 0
    except (PipelineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
