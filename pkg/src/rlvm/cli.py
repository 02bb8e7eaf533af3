"""Command-line harness: ``rlvm <subcommand>``.

Subcommands
    gen-request  build a request file from traces or a synthetic pattern
    run          simulate one method on one request
    train        train the learned selector and save the model
    compare      every (request, method, seed) cell, with CSVs and SVG charts
    eval         run a saved model greedily on one or more requests

Exit codes: 0 ok, 2 usage or configuration, 3 data, 4 simulation, 5 training.

A request argument is either a request file or ``spike:SEED`` for the
built-in square-wave spike workload.
"""

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import ClusterConfig, load_kv
from .errors import (ConfigError, DataError, InvalidSpec, ModelFormatError, PreconditionError,
                     RlvmError, SimulationError, TrainingError)
from .files import atomic_write
from .metrics import per_slot_csv, summary_csv, summary_row
from .policies import DetectionConfig
from .simulate import METHODS, evaluate
from .trace import (PATTERNS, SLOTS_PER_DAY, SynthSpec, build_request, read_request,
                    spike_benchmark, synth_request, write_request)

log = logging.getLogger("rlvm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SIM, EXIT_TRAIN = 0, 2, 3, 4, 5


class UsageError(RlvmError):
    pass


def exit_code(exc):
    if isinstance(exc, (UsageError, ConfigError, InvalidSpec, ModelFormatError, PreconditionError)):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, SimulationError):
        return EXIT_SIM
    if isinstance(exc, TrainingError):
        return EXIT_TRAIN
    return 1


class Settings:
    """Everything read from ``--config`` and the global flags."""

    def __init__(self, args):
        values = load_kv(args.config) if args.config else {}
        known = set(ClusterConfig.KEYS) | {"lr.window", "lr.safety"}
        from .agent import PPOConfig
        known |= {"ppo." + name for name in PPOConfig.__dataclass_fields__}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self.values = values
        self.seed = args.seed
        self.out_dir = Path(args.out_dir)
        self.cluster = ClusterConfig.from_mapping(values)
        self.detection = DetectionConfig.from_mapping(values)
        self.ppo = PPOConfig.from_mapping(values)

    def ppo_for(self, seed, iterations=None, rollouts=None):
        from dataclasses import replace
        kw = {"seed": seed}
        if iterations is not None:
            kw["iterations"] = iterations
        if rollouts is not None:
            kw["rollout_episodes"] = rollouts
        return replace(self.ppo, **kw)


def load_request(token):
    if token.startswith("spike"):
        _, _, seed = token.partition(":")
        try:
            return spike_benchmark(int(seed or 0))
        except ValueError:
            raise UsageError(f"bad spike request {token!r}; expected spike:SEED") from None
    return read_request(token)


def _load_model(path):
    from .agent import load_model
    return load_model(path)


def _train_model(request, settings, seed, iterations=None, rollouts=None, params=None):
    from .agent import train
    cfg = settings.ppo_for(seed, iterations, rollouts)
    return train(request, settings.cluster, cfg, params=params, detection=settings.detection)


# gen-request ---------------------------------------------------------------

def cmd_gen_request(args, settings):
    if bool(args.synth) == bool(args.trace_dir):
        raise UsageError("give exactly one of --synth or --trace-dir")
    if args.synth == "spike":
        req = spike_benchmark(settings.seed, vm_count=args.vms, slot_count=args.slots)
    elif args.synth:
        spec = SynthSpec(vm_count=args.vms, slot_count=args.slots, pattern=args.synth,
                         amplitude=args.amplitude, baseline=args.baseline, period=args.period,
                         duty=args.duty, d_vm=args.d_vm, seed=settings.seed, jitter=args.jitter,
                         name=args.name)
        req = synth_request(spec)
    else:
        req = build_request(args.trace_dir, args.vms, window_start=args.window_start,
                            seed=settings.seed, slot_count=args.slots, delimiter=args.delimiter,
                            name=args.name)
    out = Path(args.output) if args.output else settings.out_dir / f"{req.name}.req"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_request(req, out)
    print(f"wrote {out}: vms={len(req)} slots={req.slot_count} "
          f"mean_demand_mhz={float(np.mean(req.d_vm)) if len(req) else 0.0:.2f}")
    return EXIT_OK


# run / eval ---------------------------------------------------------------

def cmd_run(args, settings):
    method = args.method.lower()
    if method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; expected one of {', '.join(METHODS)}")
    request = load_request(args.request)
    params = None
    if method == "rl-pabfd":
        if args.model:
            params = _load_model(args.model)
        elif args.train:
            params = _train_model(request, settings, settings.seed, args.iterations).params
        else:
            raise UsageError("rl-pabfd needs --model FILE or --train")
    metrics, accounting = evaluate(request, method, settings.cluster, settings.detection,
                                   settings.seed, params)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(settings.out_dir / f"per_slot_{method}.csv", per_slot_csv(accounting))
    row = summary_row(method, request.name, metrics, settings.seed)
    text = summary_csv([row])
    atomic_write(settings.out_dir / f"summary_{method}.csv", text)
    sys.stdout.write(text.splitlines()[1] + "\n")
    return EXIT_OK


def cmd_eval(args, settings):
    params = _load_model(args.model)
    rows = []
    for token in args.requests:
        request = load_request(token)
        metrics, _ = evaluate(request, "rl-pabfd", settings.cluster, settings.detection,
                              settings.seed, params)
        rows.append(summary_row("rl-pabfd", request.name, metrics, settings.seed))
    text = summary_csv(rows)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(settings.out_dir / "eval_summary.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


# train ---------------------------------------------------------------------

def cmd_train(args, settings):
    from .agent import curve_csv, save_model
    request = load_request(args.request)
    params = _load_model(args.resume) if args.resume else None
    result = _train_model(request, settings, settings.seed, args.iterations, args.rollouts, params)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = Path(args.model_out) if args.model_out else settings.out_dir / "model.rlvm"
    save_model(result.params, model_path)
    curve_path = settings.out_dir / "learning_curve.csv"
    atomic_write(curve_path, curve_csv(result.curve))
    last = result.curve[-1] if result.curve else None
    print(f"wrote {model_path} (iteration {result.params.iteration}) and {curve_path}"
          + (f"; last mean_ec={last['mean_ec']:.6g}" if last else ""))
    return EXIT_OK


# compare -------------------------------------------------------------------

def _run_cell(cell):
    """Worker for one (request, method, seed) cell; returns plain data or an error."""
    token, method, seed, settings, model = cell
    try:
        request = load_request(token)
        params = None
        if method == "rl-pabfd":
            params = _load_model(model) if model else _train_model(request, settings, seed).params
        metrics, accounting = evaluate(request, method, settings.cluster, settings.detection,
                                       seed, params)
        per_slot = [(a.slot, a.ec_total, len(a.migrations)) for a in accounting]
        return {"row": summary_row(method, request.name, metrics, seed), "per_slot": per_slot,
                "request": request.name}
    except RlvmError as exc:
        return {"error": f"{token} {method} seed={seed}: {type(exc).__name__}: {exc}",
                "code": exit_code(exc)}


def _threads():
    raw = os.environ.get("RLVM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RLVM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"RLVM_THREADS must be a positive integer, got {raw!r}")
    return n


def _table(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_compare(args, settings):
    from . import plots
    methods = [m.lower() for m in args.methods]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods: {', '.join(bad)}; expected {', '.join(METHODS)}")
    seeds = args.seeds if args.seeds else [settings.seed]
    if args.model:
        _load_model(args.model)  # fail early on a bad file
    cells = [(tok, m, s, settings, args.model) for tok in args.requests for m in methods for s in seeds]
    threads = min(_threads(), len(cells))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    failures = [r for r in results if "error" in r]
    done = [(c, r) for c, r in zip(cells, results) if "error" not in r]
    out = settings.out_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "summary.csv", summary_csv([r["row"] for _, r in done]))

    names = []
    for _, r in done:
        if r["request"] not in names:
            names.append(r["request"])
    metric_cols = {"total_ec": 2, "slav": 5, "migrations": 6}
    for metric, col in metric_cols.items():
        means = {}
        for name in names:
            for m in methods:
                vals = [float(r["row"][col]) for (_, mm, _, _, _), r in done
                        if r["request"] == name and mm == m]
                if vals:
                    means[(name, m)] = float(np.mean(vals))
        rows = [[g, m, repr(v)] for (g, m), v in means.items()]
        atomic_write(out / f"bar_{metric}.csv", _table(["request", "method", f"mean_{metric}"], rows))
        plots.bar_chart(out / f"bar_{metric}.svg", names, methods, means,
                        title=f"{metric} by method", ylabel=metric, log=(metric == "slav"))

    for name in names:
        rows, ec_series, mig_series = [], {}, {}
        for (_, m, s, _, _), r in done:
            if r["request"] != name:
                continue
            for slot, ec, mig in r["per_slot"]:
                rows.append([m, s, slot, repr(float(ec)), mig])
            if s == seeds[0]:
                ec_series[m] = [ec for _, ec, _ in r["per_slot"]]
                mig_series[m] = [mig for _, _, mig in r["per_slot"]]
        atomic_write(out / f"per_slot_{name}.csv",
                     _table(["method", "seed", "slot", "ec_total", "migrations"], rows))
        plots.line_chart(out / f"line_ec_{name}.svg", ec_series, f"EC per slot, {name}", "EC")
        plots.line_chart(out / f"line_migrations_{name}.svg", mig_series,
                         f"migrations per slot, {name}", "migrations")

    print(f"{len(done)} of {len(cells)} cells done; results in {out}")
    if failures:
        for f in failures:
            print(f"FAILED {f['error']}", file=sys.stderr)
        return max(f["code"] for f in failures)
    return EXIT_OK


# parser --------------------------------------------------------------------

def _global_flags(parser, defaults=True):
    # subcommands repeat the global flags; their defaults are suppressed so a
    # value given before the subcommand is not overwritten
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None),
                        help="flat key = value file (hosts.*, slav.*, lr.*, ppo.*)")
    parser.add_argument("--seed", type=int, default=d(0))
    parser.add_argument("--out-dir", default=d("."))
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)

    p = argparse.ArgumentParser(prog="rlvm",
                                description="Slot-based VM consolidation simulator and harness.")
    _global_flags(p)
    p.add_argument("--version", action="version", version=f"rlvm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-request", parents=[common], help="write a request file")
    g.add_argument("--synth", choices=PATTERNS + ("spike",))
    g.add_argument("--trace-dir")
    g.add_argument("--vms", type=int, required=True)
    g.add_argument("--slots", type=int, default=SLOTS_PER_DAY)
    g.add_argument("--window-start", type=int, default=0)
    g.add_argument("--delimiter", default=";")
    g.add_argument("--amplitude", type=float, default=500.0)
    g.add_argument("--baseline", type=float, default=0.0)
    g.add_argument("--period", type=int, default=2)
    g.add_argument("--duty", type=float, default=0.5)
    g.add_argument("--d-vm", type=float)
    g.add_argument("--jitter", action="store_true")
    g.add_argument("--name")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen_request)

    r = sub.add_parser("run", parents=[common], help="simulate one method")
    r.add_argument("--request", required=True)
    r.add_argument("--method", required=True)
    r.add_argument("--model")
    r.add_argument("--train", action="store_true", help="train rl-pabfd on the request first")
    r.add_argument("--iterations", type=int)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", parents=[common], help="train the learned selector")
    t.add_argument("--request", required=True)
    t.add_argument("--iterations", type=int)
    t.add_argument("--rollouts", type=int)
    t.add_argument("--resume", help="model file to continue from")
    t.add_argument("--model-out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", parents=[common], help="requests x methods x seeds")
    c.add_argument("--requests", nargs="+", required=True)
    c.add_argument("--methods", nargs="+", default=list(METHODS))
    c.add_argument("--seeds", nargs="+", type=int)
    c.add_argument("--model", help="use this model for rl-pabfd instead of training per cell")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--requests", nargs="+", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings(args)
        return args.func(args, settings)
    except (RlvmError, OSError) as exc:
        code = exit_code(exc) if isinstance(exc, RlvmError) else EXIT_DATA
        print(f"rlvm: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
