"""Command-line driver.

Subcommands::

    make-prior  shapes dir -> prior bundle
    synth       scenario   -> noisy input PGM (+ truth mask)
    match       scenario   -> report.json, trace.jsonl and shape rasters
    oracle      scenario   -> exact evidence of every hypothesis (CSV)
    bench       scenario   -> bound pairs and tau across resolutions (CSV)
    confusion   reports    -> confusion matrices for beta in {0, 0.5, 1} (CSV)

Exit codes: 0 success, 2 configuration error, 3 empty hypothesis space,
4 budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .errors import EmptyHypothesisSpaceError, InvalidConfigurationError, InvalidInputError
from .experiments import (
    apply_overrides,
    confusion,
    load_scenario,
    oracle_rows,
    run_experiment,
    scale_scenario,
    synthesize,
)
from .foam import BUDGET, STRATEGIES

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY, EXIT_BUDGET = 0, 2, 3, 4

ORACLE_COLUMNS = ["hypothesis_id", "class_id", "sx", "sy", "tx", "ty", "exact_evidence", "is_argmax"]
BENCH_COLUMNS = ["factor", "width", "height", "n_hypotheses", "total_bound_pairs", "tau", "status", "n_solutions", "seconds"]

log = logging.getLogger("shapebound")


def _engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=int, help="summary resolution (2m+1 thresholds)")
    p.add_argument("--delta-max", type=float, help="log-odds clamp (default: from the scenario)")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--max-cycles", type=int)
    p.add_argument("--parallel", type=int, help="hypotheses refined per cycle")
    p.add_argument("--seed", type=int)


def _scenario(args) -> dict:
    sc = load_scenario(args.scenario)
    return apply_overrides(
        sc,
        m=args.m,
        delta_max=args.delta_max,
        strategy=args.strategy,
        max_cycles=args.max_cycles,
        parallel=args.parallel,
        seed=args.seed,
    )


def cmd_make_prior(args) -> int:
    from .hypotheses import build_priors, save_prior_bundle, square_translations
    from .pgm import load_mask

    files = sorted(Path(args.shapes).glob("*.pgm"))
    if not files:
        raise InvalidConfigurationError(f"no .pgm masks in {args.shapes}")
    shapes = [load_mask(f) for f in files]
    priors = build_priors(shapes, args.k, args.seed or 0, square_translations(args.radius), class_id=args.class_id)
    save_prior_bundle(args.out, priors, args.delta_max, {"shapes": [f.name for f in files], "k": args.k, "seed": args.seed or 0})
    print(f"wrote {len(priors)} priors to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .pgm import save_mask, save_probability_image

    sc = _scenario(args)
    img, mask = synthesize(sc)
    out = Path(args.out)
    save_probability_image(out, img, None, {"scenario": sc.get("name"), "seed": sc.get("seed", 0)})
    if mask is not None:
        save_mask(out.with_name(out.stem + "_truth.pgm"), mask)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    sc = _scenario(args)
    rep = run_experiment(sc, args.out)
    r = rep["result"]
    print(json.dumps({k: r[k] for k in ("status", "n_hypotheses", "n_cycles", "total_bound_pairs", "tau")}))
    for s in r["solutions"]:
        print(f"solution {s['id']}: class={s['class_id']} s=({s['sx']},{s['sy']}) t=({s['tx']},{s['ty']}) bounds=[{s['lower']:.4f}, {s['upper']:.4f}]")
    return EXIT_BUDGET if r["status"] == BUDGET else EXIT_OK


def _write_csv(path, columns, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_oracle(args) -> int:
    _write_csv(args.out, ORACLE_COLUMNS, oracle_rows(_scenario(args)))
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = _scenario(args)
    rows = []
    worst = EXIT_OK
    for k in args.factors:
        s = scale_scenario(sc, k)
        t0 = time.perf_counter()
        rep = run_experiment(s, None, record_trace=False)
        r = rep["result"]
        size = s["image"]["size"]
        rows.append(
            {
                "factor": k,
                "width": size[0],
                "height": size[1],
                "n_hypotheses": r["n_hypotheses"],
                "total_bound_pairs": r["total_bound_pairs"],
                "tau": f"{r['tau']:.4f}",
                "status": r["status"],
                "n_solutions": len(r["solutions"]),
                "seconds": f"{time.perf_counter() - t0:.3f}",
            }
        )
        if r["status"] == BUDGET:
            worst = EXIT_BUDGET
    _write_csv(args.out, BENCH_COLUMNS, rows)
    return worst


def cmd_confusion(args) -> int:
    runs = []
    for f in sorted(Path(args.reports).rglob("report.json")):
        rep = json.loads(f.read_text())
        if "truth" not in rep:
            continue
        runs.append((rep["truth"]["class"], rep["result"]["solutions"]))
    if not runs:
        raise InvalidConfigurationError(f"no reports with a known truth under {args.reports}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = ["beta,p_total,n_solutions"]
    for beta in (0.0, 0.5, 1.0):
        cm = confusion(runs, beta)
        (out / f"confusion_beta_{beta:g}.csv").write_text(cm.to_csv())
        summary.append(f"{beta:g},{cm.p_total:.6f},{int(cm.counts.sum())}")
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapebound", description="Hypothesize-and-bound shape matching.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    mp = sub.add_parser("make-prior", help="cluster binary masks into a prior bundle")
    mp.add_argument("shapes", help="directory of 8-bit PGM masks")
    mp.add_argument("out", help="bundle directory to write")
    mp.add_argument("--k", type=int, default=1, help="clusters (priors) to form")
    mp.add_argument("--radius", type=int, default=2, help="alignment search radius in pixels")
    mp.add_argument("--class-id", default="K")
    mp.add_argument("--delta-max", type=float)
    mp.add_argument("--seed", type=int)
    mp.set_defaults(func=cmd_make_prior)

    for name, fn, helptext in (
        ("synth", cmd_synth, "write the scenario's noisy input image"),
        ("match", cmd_match, "run the matcher and write a report"),
        ("oracle", cmd_oracle, "exact evidence of every hypothesis"),
        ("bench", cmd_bench, "tau across resolutions"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("scenario", help="scenario JSON")
        _engine_flags(sp)
        sp.set_defaults(func=fn)
    sub.choices["synth"].add_argument("--out", required=True, help="output PGM path")
    sub.choices["match"].add_argument("--out", help="report directory")
    sub.choices["oracle"].add_argument("--out", help="CSV path (default stdout)")
    sub.choices["bench"].add_argument("--out", help="CSV path (default stdout)")
    sub.choices["bench"].add_argument("--factors", type=int, nargs="+", default=[1, 2])

    cp = sub.add_parser("confusion", help="confusion matrices from match reports")
    cp.add_argument("reports", help="directory searched recursively for report.json")
    cp.add_argument("--out", required=True, help="output directory for CSVs")
    cp.set_defaults(func=cmd_confusion)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EmptyHypothesisSpaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except (InvalidConfigurationError, InvalidInputError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
