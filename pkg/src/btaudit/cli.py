"""Command-line audits: fit, check-topk, min-drop, inspect, selftest.

Every command is a thin shell over the library; exit status 0 means completed
and robust, 2 means completed with a verified non-robust finding, 1 means error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .arena import SCHEMA_PRESETS, Arena, EloParams, IngestError, IngestSchema, ingest
from .btmodel import FitError, SolverOptions, fit, head_to_head, ranking
from .influence import influence_scores
from .oracle import brute_force_pair, finite_difference_influence, generate, random_spec
from .report import (
    leaderboard_rows,
    parse_report,
    render_leaderboard,
    render_min_drop_report,
    render_pair_report,
    render_topk_report,
    topk_pair_rows,
    write_csv,
)
from .robustness import DropBudget, check_pair, check_topk, min_drop_search

__all__ = ["main", "run"]

ENV_OUT = "BTAUDIT_OUT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NON_ROBUST = 2


class _Parser(argparse.ArgumentParser):
    # Exit code 2 is reserved for "non-robust found"; usage errors exit 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_ERROR)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="btaudit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_flags(p):
        p.add_argument("dataset", help="path to the matchup dataset")
        p.add_argument("--schema", help="schema preset name or path to a JSON schema file")
        p.add_argument("--reference", help="model name pinned to score 0")
        p.add_argument("--ridge", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./btaudit-out)")
        p.add_argument("--config", default=None, help="JSON file with defaults for any flag")

    p_fit = sub.add_parser("fit", help="fit the full dataset and write the leaderboard")
    add_dataset_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_topk = sub.add_parser("check-topk", help="audit top-k sets at the given budgets")
    add_dataset_flags(p_topk)
    p_topk.add_argument("--method", choices=("if", "newton"), default=None)
    p_topk.add_argument("--alpha", action="append", type=float, default=None,
                        help="drop-fraction budget; repeatable")
    p_topk.add_argument("--count", action="append", type=int, default=None,
                        help="drop-count budget; repeatable")
    p_topk.add_argument("--k", action="append", type=int, default=None, help="top-k size; repeatable")
    p_topk.add_argument("--always-refit", action="store_true", default=None)
    p_topk.set_defaults(func=cmd_check_topk)

    p_min = sub.add_parser("min-drop", help="smallest verified flipping drop count for a pair")
    add_dataset_flags(p_min)
    p_min.add_argument("model_a")
    p_min.add_argument("model_b")
    p_min.add_argument("--method", choices=("if", "newton"), default=None)
    p_min.add_argument("--max-budget", type=int, default=None)
    p_min.set_defaults(func=cmd_min_drop)

    p_ins = sub.add_parser("inspect", help="dump the dropped matchups named in a report")
    p_ins.add_argument("report", help="path to a report written by check-topk or min-drop")
    p_ins.add_argument("dataset")
    p_ins.add_argument("--schema", required=True)
    p_ins.add_argument("--reference", default=None)
    p_ins.add_argument("--truncate", type=int, default=200, help="max characters per metadata value")
    p_ins.set_defaults(func=cmd_inspect)

    p_self = sub.add_parser("selftest", help="validate predictions against exhaustive refits")
    p_self.add_argument("--seed", type=int, default=0)
    p_self.add_argument("--arenas", type=int, default=25)
    p_self.set_defaults(func=cmd_selftest)

    return parser


def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return cfg


def _setting(args, cfg: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in cfg:
        return cfg[name]
    return default


def _resolve_schema(spec: str | None, reference: str | None) -> IngestSchema:
    if not spec:
        raise IngestError("--schema is required (preset name or JSON file)")
    if spec in SCHEMA_PRESETS:
        schema = SCHEMA_PRESETS[spec]
    elif Path(spec).exists():
        schema = IngestSchema.from_file(spec)
    else:
        raise IngestError(f"schema {spec!r} is neither a preset nor an existing file")
    if reference:
        schema = replace(schema, reference=reference)
    return schema


def _out_dir(args, cfg: dict) -> Path:
    out = _setting(args, cfg, "out", None) or os.environ.get(ENV_OUT) or "btaudit-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _solver_options(args, cfg: dict) -> SolverOptions:
    return SolverOptions(
        ridge=float(_setting(args, cfg, "ridge", 1e-6)),
        tol=float(_setting(args, cfg, "tol", 1e-8)),
    )


def _load_arena(args, cfg: dict) -> Arena:
    schema = _resolve_schema(_setting(args, cfg, "schema", None),
                             _setting(args, cfg, "reference", None))
    return ingest(args.dataset, schema)


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


@dataclass
class AuditConfig:
    """Resolved settings for one audit run."""

    dataset: str
    method: str = "if"
    alphas: tuple[float, ...] = ()
    counts: tuple[int, ...] = ()
    ks: tuple[int, ...] = (1,)
    always_refit: bool = False
    max_budget: int = 100

    def budgets(self) -> list[DropBudget]:
        out = [DropBudget(alpha=a) for a in self.alphas]
        out += [DropBudget(count=c) for c in self.counts]
        if not out:
            raise ValueError("at least one --alpha or --count budget is required")
        return out

    def validate_ks(self, n_models: int) -> None:
        for k in self.ks:
            if not 1 <= k < n_models:
                raise ValueError(f"k={k} out of range [1, {n_models})")


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    arena = _load_arena(args, cfg)
    bt = fit(arena, options=_solver_options(args, cfg))
    out = _out_dir(args, cfg)
    text = render_leaderboard(bt, dataset=args.dataset)
    (out / "leaderboard.txt").write_text(text, encoding="utf-8")
    rows = leaderboard_rows(bt, EloParams())
    write_csv(out / "leaderboard.csv", ["rank", "model", "score", "elo", "matchups"], rows)
    print(arena.summary())
    print(f"wrote {out / 'leaderboard.txt'}")
    print(f"wrote {out / 'leaderboard.csv'}")
    return EXIT_OK


def cmd_check_topk(args) -> int:
    cfg = _load_config(args)
    arena = _load_arena(args, cfg)
    config = AuditConfig(
        dataset=args.dataset,
        method=_setting(args, cfg, "method", "if"),
        alphas=tuple(_setting(args, cfg, "alpha", ()) or ()),
        counts=tuple(_setting(args, cfg, "count", ()) or ()),
        ks=tuple(_setting(args, cfg, "k", None) or (1,)),
        always_refit=bool(_setting(args, cfg, "always_refit", False)),
    )
    config.validate_ks(arena.n_models)
    budgets = config.budgets()
    bt = fit(arena, options=_solver_options(args, cfg))
    out = _out_dir(args, cfg)

    any_non_robust = False
    for k in config.ks:
        for budget in budgets:
            tk = check_topk(arena, bt, k, budget, method=config.method,
                            always_refit=config.always_refit)
            stem = f"topk_k{k}_{_safe_name(budget.label().replace('=', ''))}"
            (out / f"{stem}.txt").write_text(
                render_topk_report(tk, arena, bt, dataset=args.dataset), encoding="utf-8"
            )
            write_csv(
                out / f"{stem}_pairs.csv",
                ["leader", "challenger", "gap_before", "verdict",
                 "predicted_flip", "refit_performed", "dropped_count"],
                topk_pair_rows(tk),
            )
            verdict = "robust" if tk.robust else "non-robust"
            print(f"k={k} {budget.label()}: {verdict} ({tk.pairs_checked}/{tk.pairs_total} pairs)")
            any_non_robust = any_non_robust or not tk.robust
    return EXIT_NON_ROBUST if any_non_robust else EXIT_OK


def cmd_min_drop(args) -> int:
    cfg = _load_config(args)
    if args.model_a == args.model_b:
        print("error: min-drop needs two distinct models", file=sys.stderr)
        return EXIT_ERROR
    arena = _load_arena(args, cfg)
    method = _setting(args, cfg, "method", "if")
    max_budget = int(_setting(args, cfg, "max_budget", 100))
    bt = fit(arena, options=_solver_options(args, cfg))
    a = arena.models.resolve(args.model_a)
    b = arena.models.resolve(args.model_b)
    result = min_drop_search(arena, bt, a, b, max_budget=max_budget, method=method)
    out = _out_dir(args, cfg)
    stem = f"mindrop_{_safe_name(args.model_a)}_vs_{_safe_name(args.model_b)}"
    (out / f"{stem}.txt").write_text(
        render_min_drop_report(result, arena, bt, dataset=args.dataset, max_budget=max_budget),
        encoding="utf-8",
    )
    if result.found:
        h2h = head_to_head(arena, a, b)
        pct = "-" if h2h.win_percent is None else f"{100 * h2h.win_percent:.2f}%"
        print(f"non-robust: {result.count} of {arena.n_matchups} matchups "
              f"({result.count / arena.n_matchups:.6f}), leader win percent {pct}")
        print(f"wrote {out / (stem + '.txt')}")
        return EXIT_NON_ROBUST
    print(f"not found within budget {max_budget}")
    print(f"wrote {out / (stem + '.txt')}")
    return EXIT_OK


def _truncate(value: str, limit: int) -> str:
    if limit > 0 and len(value) > limit:
        return value[:limit] + "..."
    return value


def cmd_inspect(args) -> int:
    text = Path(args.report).read_text(encoding="utf-8")
    fields = parse_report(text)
    dropped_raw = fields.get("dropped_indices", "-")
    if dropped_raw in ("-", ""):
        print("report lists no dropped matchups")
        return EXIT_OK
    dropped = [int(tok) for tok in dropped_raw.split()]
    schema = _resolve_schema(args.schema, args.reference)
    schema = replace(schema, meta_columns="all")
    arena = ingest(args.dataset, schema)
    bad = [n for n in dropped if not 0 <= n < arena.n_matchups]
    if bad:
        print(f"error: dropped index {bad[0]} out of range for this dataset "
              f"(N={arena.n_matchups}); report/dataset mismatch", file=sys.stderr)
        return EXIT_ERROR
    print(f"pair: {fields.get('pair', '-')}")
    print(f"dropped matchups ({len(dropped)}), most influential first:")
    for rank, n in enumerate(dropped, start=1):
        m = arena.matchup(n)
        winner = m.side_a.name if m.a_won else m.side_b.name
        print(f"[{rank}] matchup {n}: {m.side_a.name} vs {m.side_b.name} | winner: {winner}")
        if m.meta:
            for key in sorted(m.meta):
                print(f"    {key}: {_truncate(m.meta[key], args.truncate)}")
        else:
            print("    (no metadata)")
    return EXIT_OK


def cmd_selftest(args) -> int:
    seed = int(args.seed)
    n_arenas = int(args.arenas)
    sound = True
    non_robust = misses = 0
    for i in range(n_arenas):
        budget = 1 + i % 3
        spec = random_spec(seed * 100_003 + i, target_matchups=12 + (i % 9))
        arena = generate(spec)
        bt = fit(arena)
        first, second = ranking(bt).order[:2]
        rep = check_pair(arena, bt, first, second, DropBudget(count=budget), always_refit=True)
        oracle = brute_force_pair(arena, first, second, budget)
        if rep.verdict == "non-robust":
            non_robust += 1
            if not oracle.flip_exists:
                sound = False
                print(f"FAIL arena {i}: verdict non-robust but exhaustive search finds no flip")
        elif oracle.flip_exists:
            misses += 1

    spec = random_spec(seed * 100_003 + n_arenas, target_matchups=16)
    arena = generate(spec)
    bt = fit(arena)
    target = int(ranking(bt).order[0]) or 1
    predicted = influence_scores(bt, target)
    max_rel = 0.0
    for n in range(0, arena.n_matchups, max(1, arena.n_matchups // 4)):
        fd = finite_difference_influence(arena, bt, target, n)
        max_rel = max(max_rel, abs(predicted[n] - fd) / max(abs(fd), 1e-9))
    fd_ok = max_rel <= 1e-3
    sound = sound and fd_ok

    print(f"selftest: {n_arenas} arenas, {non_robust} non-robust verdicts all "
          f"{'confirmed' if sound else 'NOT confirmed'} by exhaustive search, "
          f"{misses} prediction misses (one-sided guarantee)")
    print(f"selftest: derivative spot-check max relative error {max_rel:.2e} "
          f"({'ok' if fd_ok else 'FAIL'})")
    return EXIT_OK if sound else EXIT_ERROR


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (IngestError, FitError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
