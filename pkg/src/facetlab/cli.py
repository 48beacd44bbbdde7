"""Command-line entry point: ``facetlab sample|mcmc|enumerate|events|experiment|fit``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, TextIO

from . import __version__
from .chain import ChainState, default_window_max, init_chain, load_checkpoint, observe, save_checkpoint
from .errors import AuditFailure, BudgetExceeded, ConfigError, FacetlabError
from .harness import ExperimentConfig, estimate, fit_exponent
from .oracle import exact_conditional, exact_length_area_law
from .path_core import LatticePath, ModelParams
from .rng import RngStream
from .samplers import sample_bridge_below, sample_bridge_uniform, sample_conditioned_rejection, sample_free
from .sectors import build_sector_grid, full_res, sector_reports

log = logging.getLogger("facetlab")


def _point(text: str):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}") from None
    return x, y


def _open_out(out: Optional[str], name: str) -> TextIO:
    if out is None or out == "-":
        return sys.stdout
    os.makedirs(out, exist_ok=True)
    return open(os.path.join(out, name), "w")


def _params(args) -> ModelParams:
    try:
        return ModelParams(args.lam, args.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_sample(args) -> int:
    rng = RngStream(args.seed, 0)
    fh = _open_out(args.out, "samples.jsonl")
    try:
        for _ in range(args.count):
            if args.mode in ("bridge", "bridge-below"):
                if args.a is None or args.b is None:
                    raise ConfigError("bridge modes need --a x,y and --b x,y")
                draw = sample_bridge_uniform if args.mode == "bridge" else sample_bridge_below
                br = draw(args.a, args.b, rng)
                rec = {"a": list(br.a), "b": list(br.b), "steps": br.text, "q_area": br.q_area}
            else:
                params = _params(args)
                if args.mode == "free":
                    path = sample_free(params, rng)
                    rec = {"path": path.encode(), "length": path.length, "area": path.area}
                else:
                    path, attempts = sample_conditioned_rejection(params, rng, args.max_attempts)
                    rec = {"path": path.encode(), "length": path.length, "area": path.area, "attempts": attempts}
                rec.update({"N": params.n_target, "lambda": params.lam, "seed": args.seed})
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_mcmc(args) -> int:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "checkpoint.json")
    rec_path = os.path.join(out, "records.jsonl")
    if args.resume:
        if not os.path.exists(ckpt):
            raise ConfigError(f"--resume given but {ckpt} does not exist")
        state = load_checkpoint(ckpt)
        kept = []
        if os.path.exists(rec_path):
            with open(rec_path) as fh:
                kept = [line for line in fh if line.strip() and json.loads(line)["sweep"] <= state.sweep_count]
        with open(rec_path, "w") as fh:
            fh.writelines(kept)
        log.info("resumed at sweep %d", state.sweep_count)
    else:
        state = init_chain(_params(args), RngStream(args.seed, 0))
        open(rec_path, "w").close()
    wmax = args.window_max or default_window_max(state.params.n_target)
    total = args.burn_in + args.sweeps
    with open(rec_path, "a") as fh:
        while state.sweep_count < total:
            state.advance(max(state.length, 1), args.interior_fraction, args.window_fraction, wmax)
            state.sweep_count += 1
            s = state.sweep_count
            if s > args.burn_in and (s - args.burn_in) % args.thin == 0:
                rec = {"N": state.params.n_target, "lambda": state.params.lam, "seed": args.seed, "sweep": s}
                rec.update(observe(state))
                if args.paths:
                    rec["path"] = state.path.encode()
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if args.checkpoint_every and s % args.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(state, ckpt)
    state.audit()
    save_checkpoint(state, ckpt)
    rates = state.acceptance_rates()
    log.info("acceptance rates %s", rates)
    return 0


def cmd_enumerate(args) -> int:
    params = _params(args)
    if args.marginal:
        law = exact_length_area_law(params, args.max_length)
        fh = _open_out(args.out, f"length_area_N{params.n_target}_lam{params.lam}.tsv")
        fh.write(f"# N={params.n_target} lambda={params.lam!r} max_length={law.max_length} "
                 f"neglected_mass_bound={law.neglected_mass_bound!r}\n")
        fh.write("length\tarea\tprobability\n")
        for (n, a), p in sorted(law.as_dict().items()):
            fh.write(f"{n}\t{a}\t{p!r}\n")
    else:
        table = exact_conditional(params, args.max_length)
        fh = _open_out(args.out, f"exact_N{params.n_target}_lam{params.lam}.tsv")
        fh.write(f"# N={params.n_target} lambda={params.lam!r} max_length={table.max_length} "
                 f"neglected_mass_bound={table.neglected_mass_bound!r}\n")
        fh.write("length\tpattern\tpath\tarea\tprobability\n")
        for row in range(len(table)):
            path = table.path(row)
            fh.write(f"{table.lengths[row]}\t{table.patterns[row]}\t{path.encode()}\t{table.areas[row]}\t"
                     f"{float(table.probs[row])!r}\n")
    if fh is not sys.stdout:
        fh.close()
    return 0


def _read_paths(path: str) -> List[LatticePath]:
    paths = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("{"):
                rec = json.loads(line)
                if "path" not in rec:
                    raise ConfigError(f"record without a path in {path}")
                line = rec["path"]
            paths.append(LatticePath.parse(line))
    return paths


def cmd_events(args) -> int:
    if args.paths is None:
        raise ConfigError("events needs --paths FILE")
    grid = build_sector_grid(args.n, args.chi, args.epsilon1)
    fh = _open_out(args.out, "events.jsonl")
    rng = RngStream(args.seed, 0)
    for idx, path in enumerate(_read_paths(args.paths)):
        if args.resample:
            state = ChainState(path, ModelParams(args.lam, args.n), rng.spawn(idx))
            _, report = full_res(state, grid, rng, eta=args.eta, epsilon=args.epsilon)
            rows = report.rows()
        else:
            rows = [r.row() for r in sector_reports(path, grid, eta=args.eta, epsilon=args.epsilon)]
        for row in rows:
            fh.write(json.dumps({"path_index": idx, **row}, sort_keys=True) + "\n")
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_experiment(args) -> int:
    if args.config is None:
        raise ConfigError("experiment needs --config PATH")
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    result = estimate(config)
    for stat, fit in sorted(result.fits.items()):
        print(f"{stat}\tslope={fit.slope:.4f}\tci=[{fit.ci_low:.4f}, {fit.ci_high:.4f}]")
    return 0


def cmd_fit(args) -> int:
    if args.input is None:
        raise ConfigError("fit needs --input FILE")
    if args.input.endswith(".json"):
        with open(args.input) as fh:
            summary = json.load(fh)
        table = [(float(n), v[args.statistic]["mean"], v[args.statistic]["se"]) for n, v in summary["per_n"].items()]
    else:
        table = [tuple(float(v) for v in line.split()[:3]) for line in open(args.input)
                 if line.strip() and not line.startswith("#")]
    table.sort()
    fit = fit_exponent(table, seed=args.seed or 0)
    print(json.dumps(fit.as_dict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory (stdout when omitted, where that makes sense)")
    common.add_argument("-v", "--verbose", action="store_true")
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--lambda", dest="lam", type=float, default=0.3)
    model.add_argument("--n", type=int, default=1)

    parser = argparse.ArgumentParser(prog="facetlab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common, model], help="draw exact samples")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mode", choices=["free", "rejection", "bridge", "bridge-below"], default="rejection")
    p.add_argument("--a", type=_point, help="bridge start x,y")
    p.add_argument("--b", type=_point, help="bridge end x,y")
    p.add_argument("--max-attempts", type=int, default=10**7)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("mcmc", parents=[common, model], help="run the global chain")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--interior-fraction", type=float, default=0.9)
    p.add_argument("--window-fraction", type=float, default=0.1)
    p.add_argument("--window-max", type=int, default=0)
    p.add_argument("--paths", action="store_true", help="include the path encoding in each record")
    p.set_defaults(func=cmd_mcmc)

    p = sub.add_parser("enumerate", parents=[common, model], help="exact conditional table")
    p.add_argument("--max-length", type=int, default=12)
    p.add_argument("--marginal", action="store_true", help="emit the (length, area) law instead of every path")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("events", parents=[common, model], help="per-sector event report for stored paths")
    p.add_argument("--paths", help="file of path encodings or JSON records with a 'path' field")
    p.add_argument("--chi", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--epsilon1", type=float, default=2.0 / 27.0)
    p.add_argument("--resample", action="store_true", help="run the full resampling pass before reporting")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fit", parents=[common], help="fit a log-log exponent")
    p.add_argument("--input", help="summary.json or a whitespace table of N mean se")
    p.add_argument("--statistic", default="mean_fl")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command not in ("experiment", "fit"):
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"facetlab: config error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"facetlab: budget exceeded: {exc}", file=sys.stderr)
        return 3
    except AuditFailure as exc:
        print(f"facetlab: audit failure: {exc}", file=sys.stderr)
        return 4
    except (FacetlabError, ValueError) as exc:
        print(f"facetlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
