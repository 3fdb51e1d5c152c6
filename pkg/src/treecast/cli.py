"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 bad parameters, 3 I/O.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import channel as ch
from . import dynsys as ds
from . import moments as mo
from . import popdyn as pd
from . import treesim as ts

EXIT_OK, EXIT_FAIL, EXIT_PARAM, EXIT_IO = 0, 1, 2, 3

# keys that never belong in a manifest's config echo
_NOT_ECHOED = {"config", "func"}


class _ParamError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("grid must be nonempty")
    return vals


def _default_threads() -> int:
    env = os.environ.get("TREECAST_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _resolve_params(args, default_lambda: float | None = None) -> ch.ChannelParams:
    lam, dl2 = getattr(args, "lam", None), getattr(args, "dlambda2", None)
    if lam is not None and dl2 is not None:
        raise _ParamError("give exactly one of --lambda and --dlambda2")
    if lam is None and dl2 is None:
        if default_lambda is None:
            raise _ParamError("one of --lambda and --dlambda2 is required")
        lam = default_lambda
    if dl2 is not None:
        return ch.ChannelParams.from_dlambda2(args.theta, dl2, args.d)
    return ch.ChannelParams(args.theta, lam, args.d)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# outputs and manifests


class _Outputs:
    """Collects output files so the manifest can checksum them."""

    def __init__(self):
        self.paths = []

    @contextlib.contextmanager
    def open(self, path: str | None):
        if path is None or path == "-":
            yield sys.stdout
            return
        with open(path, "w", newline="") as fh:
            yield fh
        self.paths.append(path)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest_path(args) -> str | None:
    if getattr(args, "manifest", None):
        return args.manifest
    out = getattr(args, "out", None)
    if out and out != "-":
        return out + ".manifest.json"
    return None


def _write_manifest(args, outputs: _Outputs, started: float) -> None:
    path = _manifest_path(args)
    if path is None:
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    doc = {
        "tool": "treecast",
        "version": __version__,
        "config": config,
        "duration_s": time.perf_counter() - started,
        "outputs": {p: _sha256(p) for p in outputs.paths},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_channel(args, outputs: _Outputs) -> int:
    params = _resolve_params(args)
    p = ch.make_transition(params)
    leading, second, mult = ch.spectral_check(p)
    doc = {
        "theta": params.theta,
        "lambda": params.lam,
        "d": params.d,
        "dlambda2": params.dlambda2,
        "matrix": p.tolist(),
        "pi": params.pi.tolist(),
        "eigenvalues": {"leading": leading, "second": second, "multiplicity": mult},
        "stochastic": params.is_stochastic,
        "ks_lambda": ch.ks_threshold_lambda(params.d),
    }
    if args.steps is not None:
        doc["steps"] = args.steps
        doc["step_matrix"] = ch.multi_step_closed_form(params, args.steps).tolist()
    with outputs.open(args.out) as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_simulate(args, outputs: _Outputs) -> int:
    params = _resolve_params(args)
    cfg = ts.TreeConfig(args.d, args.depth)
    if args.count < 1:
        raise _ParamError("--count must be >= 1")
    roots = np.full(args.count, args.root)
    leaves = ts.broadcast_batch(cfg, params, roots, args.seed)
    post = ts.posterior_batch(cfg, params, leaves)
    with outputs.open(args.out) as fh:
        for lv, pv in zip(leaves, post):
            row = {"root": args.root, "leaves": lv.tolist(), "posterior": [float(v) for v in pv]}
            fh.write(json.dumps(row) + "\n")
    return EXIT_OK


def cmd_popdyn(args, outputs: _Outputs) -> int:
    params = _resolve_params(args)
    if args.pop < 1:
        raise _ParamError("--pop must be >= 1")
    if args.levels < 0:
        raise _ParamError("--levels must be >= 0")
    traj = pd.run_trajectory(params, args.levels, args.pop, args.seed, args.threads)
    with outputs.open(args.out) as fh:
        pd.write_trajectory_csv(traj, fh)
    if len(traj) >= 10:
        print(f"classification: {pd.classify_reconstruction(traj)}", file=sys.stderr)
    return EXIT_OK


def _verify_reports(args, params: ch.ChannelParams) -> list[mo.IdentityReport]:
    suites = ["lemma1", "lemma2", "lemma3", "zproducts"] if args.suite == "all" else [args.suite]
    if args.mode == "exact":
        cfg = ts.TreeConfig(params.d, args.depth)
        law = ts.exact_law_bruteforce(cfg, params)
        mv = ts.exact_moments_bruteforce(cfg, params)
    else:
        if args.pop < 2:
            raise _ParamError("--pop must be >= 2 in statistical mode")
        law = pd.init_population(args.pop, params.theta)
        for _ in range(args.level):
            law = pd.evolve_one_level(law, params, args.pop, args.seed, args.threads)
        mv = pd.estimate_moments(law)
    reports = []
    for suite in suites:
        if suite == "lemma1":
            reports += mo.check_lemma1(mv, tol_sigma=args.sigma)
        elif suite == "lemma2":
            reports += mo.check_lemma2(law, tol_sigma=args.sigma)
        elif suite == "lemma3":
            reports += mo.check_lemma3(law, params, args.sigma, seed=args.seed + 1, threads=args.threads)
        elif suite == "zproducts":
            reports += mo.check_z_products(
                law, params, args.sigma, seed=args.seed + 2,
                predictions=args.predictions, threads=args.threads,
            )
    return reports


def _render(reports, fh) -> None:
    width = max(len(r.name) for r in reports)
    fh.write(f"{'identity':<{width}}  {'lhs':>22}  {'rhs':>22}  {'tol':>10}  result\n")
    for r in reports:
        fh.write(
            f"{r.name:<{width}}  {r.lhs:>22.15g}  {r.rhs:>22.15g}  {r.tolerance:>10.3g}  "
            f"{'pass' if r.passed else 'FAIL'}\n"
        )


def cmd_verify(args, outputs: _Outputs) -> int:
    params = _resolve_params(args, default_lambda=0.5)
    if args.mode is None:
        args.mode = "statistical" if args.level is not None else "exact"
    if args.level is None:
        args.level = 2
    reports = _verify_reports(args, params)
    _render(reports, sys.stdout)
    if args.json:
        with outputs.open(args.json) as fh:
            fh.write(mo.reports_to_json(reports) + "\n")
    return EXIT_OK if mo.all_passed(reports) else EXIT_FAIL


def cmd_dynsys(args, outputs: _Outputs) -> int:
    if args.roots:
        lo, hi = ds.threshold_roots()
        print(f"{lo:.10f}\n{hi:.10f}")
        if args.json:
            with outputs.open(args.json) as fh:
                json.dump({"roots": [lo, hi]}, fh, indent=2)
                fh.write("\n")
        return EXIT_OK
    if args.theta is None:
        raise _ParamError("--theta is required unless --roots is given")
    params = _resolve_params(args)
    s0 = ds.initial_state(params.theta)
    if args.start_scale != 1.0:
        if not (0 < args.start_scale <= 1):
            raise _ParamError("--start-scale must lie in (0, 1]")
        s0 = ds.DynState(*(args.start_scale * s0.as_array()))
    traj = ds.iterate(s0, params, args.steps)
    with outputs.open(args.out) as fh:
        ds.write_trajectory_csv(traj, fh)
    summary = {
        "theta": params.theta,
        "dlambda2": params.dlambda2,
        "d": params.d,
        "quadratic_coefficient": ds.quadratic_coefficient(params.theta),
        "roots": list(ds.threshold_roots()),
        "diverged": traj.diverged,
        "classification": ds.classify_trajectory(traj),
    }
    for block, t in (("th", params.theta), ("1mth", 1 - params.theta)):
        try:
            zb = ds.zbound_params(t, args.zeta)
        except ch.ParameterError as exc:
            summary[f"zbound_{block}"] = {"error": str(exc)}
            continue
        rep = ds.verify_zbound(traj, params, zb, block)
        summary[f"zbound_{block}"] = {
            "Gamma": zb.Gamma, "xi": zb.xi, "passed": rep.passed,
            "first_violation": rep.first_violation, "violated": rep.violated,
        }
    if args.json:
        with outputs.open(args.json) as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    else:
        print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


SWEEP_COLUMNS = ("theta", "dlambda2", "d", "classification", "final_x_th", "final_x_1mth", "se")


def _sweep_cell(args, theta: float, dl2: float) -> list[str]:
    params = ch.ChannelParams.from_dlambda2(theta, dl2, args.d)
    if args.engine == "dynsys":
        s0 = ds.DynState(*(args.start_scale * ds.initial_state(theta).as_array()))
        traj = ds.iterate(s0, params, args.steps)
        last = traj[-1]
        return [ds.classify_trajectory(traj), _fmt(last.x_th), _fmt(last.x_1mth), _fmt(0.0)]
    traj = pd.run_trajectory(params, args.levels, args.pop, args.seed, args.threads)
    last = traj[-1]
    se = max(last.std_err.x_th, last.std_err.x_1mth)
    return [pd.classify_reconstruction(traj), _fmt(last.value.x_th), _fmt(last.value.x_1mth), _fmt(se)]


def cmd_sweep(args, outputs: _Outputs) -> int:
    if args.pop < 2 and args.engine == "popdyn":
        raise _ParamError("--pop must be >= 2")
    if not (0 < args.start_scale <= 1):
        raise _ParamError("--start-scale must lie in (0, 1]")
    rows = []
    for theta in args.theta:
        for dl2 in args.dlambda2:
            rows.append([_fmt(theta), _fmt(dl2), str(args.d)] + _sweep_cell(args, theta, dl2))
    with outputs.open(args.out) as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_channel_args(p, theta_required=True):
    p.add_argument("--theta", type=float, required=theta_required)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--dlambda2", type=float, help="phase variable d*lambda^2 (lambda >= 0)")
    p.add_argument("--d", type=int, default=2)


def _add_run_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads; never changes results (env TREECAST_THREADS)")


def _add_io_args(p):
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--manifest", help="manifest path (default OUT.manifest.json)")
    p.add_argument("--config", help="JSON config or manifest; flags override it")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="treecast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"treecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("channel", help="transition matrix, spectrum and s-step matrix as JSON")
    _add_channel_args(p)
    p.add_argument("--steps", type=int)
    _add_io_args(p)
    p.set_defaults(func=cmd_channel)
    subs["channel"] = p

    p = sub.add_parser("simulate", help="broadcast samples and their root posteriors (JSON lines)")
    _add_channel_args(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--root", type=int, default=1, choices=[1, 2, 3, 4])
    p.add_argument("--count", type=int, default=1)
    _add_run_args(p)
    _add_io_args(p)
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("popdyn", help="population-dynamics moment trajectory as CSV")
    _add_channel_args(p)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--pop", type=int, required=True)
    _add_run_args(p)
    _add_io_args(p)
    p.set_defaults(func=cmd_popdyn)
    subs["popdyn"] = p

    p = sub.add_parser("verify", help="run identity suites; exit 1 on any failure")
    _add_channel_args(p)
    p.add_argument("--suite", choices=["lemma1", "lemma2", "lemma3", "zproducts", "all"], default="all")
    p.add_argument("--mode", choices=["exact", "statistical"])
    p.add_argument("--depth", type=int, default=2, help="tree depth in exact mode")
    p.add_argument("--level", type=int,
                   help="population level in statistical mode (default 2; implies --mode statistical)")
    p.add_argument("--pop", type=int, default=100_000)
    p.add_argument("--sigma", type=float, default=mo.STAT_SIGMA, help="tolerance in standard errors")
    p.add_argument("--no-predictions", dest="predictions", action="store_false",
                   help="zproducts: only check E(Z1 Z2) = E(Z2^2)")
    p.add_argument("--json", help="also write the reports as a JSON array")
    _add_run_args(p)
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.set_defaults(func=cmd_verify)
    subs["verify"] = p

    p = sub.add_parser("dynsys", help="iterate the truncated moment map; --roots for thresholds")
    _add_channel_args(p, theta_required=False)
    p.add_argument("--roots", action="store_true")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--start-scale", type=float, default=1.0,
                   help="multiply the level-0 state by this factor")
    p.add_argument("--zeta", type=float, default=0.99)
    p.add_argument("--json", help="summary / threshold JSON path")
    _add_io_args(p)
    p.set_defaults(func=cmd_dynsys)
    subs["dynsys"] = p

    p = sub.add_parser("sweep", help="classify every (theta, dlambda2) cell of a grid")
    p.add_argument("--theta", type=_floats, required=True)
    p.add_argument("--dlambda2", type=_floats, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--engine", choices=["dynsys", "popdyn"], default="dynsys")
    p.add_argument("--steps", type=int, default=500, help="map steps (dynsys engine)")
    p.add_argument("--start-scale", type=float, default=1e-3,
                   help="multiply the level-0 state by this factor (dynsys engine)")
    p.add_argument("--levels", type=int, default=60, help="tree levels (popdyn engine)")
    p.add_argument("--pop", type=int, default=100_000)
    _add_run_args(p)
    _add_io_args(p)
    p.set_defaults(func=cmd_sweep)
    subs["sweep"] = p
    return parser, subs


def _apply_config(argv, parser, subs):
    """Parse argv, taking defaults from a --config JSON file when given."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in subs:
        with open(known.config) as fh:
            doc = json.load(fh)
        cfg = doc.get("config", doc)
        cfg = {k: v for k, v in cfg.items() if k not in _NOT_ECHOED | {"command"}}
        subs[known.command].set_defaults(**cfg)
        # required flags may now come from the file
        for action in subs[known.command]._actions:
            if action.dest in cfg:
                action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = _apply_config(argv, parser, subs)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: bad config file: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_PARAM
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_PARAM
    outputs = _Outputs()
    started = time.perf_counter()
    try:
        code = args.func(args, outputs)
    except (_ParamError, ch.ParameterError, ts.SizeError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (ch.ValidationError, pd.StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        _write_manifest(args, outputs, started)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
