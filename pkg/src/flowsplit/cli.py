"""Command line entry point: ``flowsplit {run,sweep,bench,check,dump-workload}``.

Exit codes: 0 ok, 1 config error, 2 acceptance failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import typing
from pathlib import Path
from typing import List, Optional

from . import acceptance, experiment as ex, plots
from .experiment import ConfigError, ExperimentConfig
from .workload import dump_workload

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_IO = 0, 1, 2, 3

# config keys that are set through the config file only
_FILE_ONLY = {"mix"}

# sweep axis names on the command line -> config field
AXES = {"threshold": "threshold", "utilization": "utilization", "pps": "flow_rate"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", type=Path, help="JSON experiment config")
    p.add_argument("--fast", action="store_true", help="10x scaled-down tunnels and bursts")
    hints = typing.get_type_hints(ExperimentConfig)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _FILE_ONLY:
            continue
        flag = "--" + f.name.replace("_", "-")
        hint = hints[f.name]
        args = typing.get_args(hint)
        if hint is bool:
            p.add_argument(flag, dest=f.name, action="store_const", const=True, default=None)
        elif typing.get_origin(hint) in (list, List):
            p.add_argument(flag, dest=f.name, nargs="+", type=args[0], default=None)
        else:
            base = next((a for a in args if a is not type(None)), hint)
            p.add_argument(flag, dest=f.name, type=base, default=None)


def load_config(ns: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(ns.config) if ns.config else ExperimentConfig()
    changes = {f.name: getattr(ns, f.name) for f in dataclasses.fields(ExperimentConfig)
               if getattr(ns, f.name, None) is not None}
    if changes:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **changes})
    if ns.fast:
        cfg = ex.fast_preset(cfg)
    return cfg


def cmd_run(ns) -> int:
    cfg = load_config(ns)
    out = Path(cfg.out_dir)
    pair = ex.run_experiment(cfg, out)
    for kind in ("fct", "jitter"):
        hists = {role: getattr(pair, role).histograms[kind]
                 for role in ("treatment", "baseline") if kind in getattr(pair, role).histograms}
        if hists:
            labelled = {f"{getattr(pair, r).policy}": h for r, h in hists.items()}
            plots.plot_histograms(labelled, f"short-flow {kind}", out / f"pdf_{kind}_short.svg")
    print(pair.treatment.to_text() + pair.baseline.to_text(), end="")
    s = pair.summary()
    print(f"speedup short mean {s['speedup_short_mean']}  p99 {s['speedup_short_p99']}  "
          f"long mean {s['speedup_long_mean']}")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_sweep(ns) -> int:
    cfg = load_config(ns)
    axis = AXES[ns.axis]
    rows = ex.sweep(cfg, axis, ns.values)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_sweep_csv(rows, out / "sweep.csv", axis)
    plots.emit_plots({axis: rows}, out)
    for r in rows:
        print(f"{axis}={r.value:g}  speedup={_num(r.speedup)}  p99={_num(r.speedup_p99)}  "
              f"long_ratio={_num(r.long_ratio)}  pps={r.aggregate_pps:.0f}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _num(x) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def cmd_bench(ns) -> int:
    if ns.packets < 1 or ns.flows < 1:
        raise ConfigError("--packets and --flows must be >= 1")
    res = ex.bench_splitter(ns.packets, ns.flows, impl=ns.impl)
    print(json.dumps(res.as_dict(), indent=2))
    if res.mean_ns >= 1000:
        print(f"mean cost {res.mean_ns:.0f} ns is not below 1 us", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_check(ns) -> int:
    only = [int(x) for x in ns.only] if ns.only else None
    verdicts = acceptance.run_all(only)
    failed = [v.number for v in verdicts if not v.passed]
    print(f"{len(verdicts) - len(failed)}/{len(verdicts)} criteria passed")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def cmd_dump(ns) -> int:
    cfg = load_config(ns)
    w = ex.build_workload(cfg)
    path = ns.output or Path(cfg.out_dir) / "workload.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_workload(w.flows, path)
    print(f"wrote {len(w.flows)} flows to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowsplit",
                                description="Short/long flow splitter simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="seed-matched splitter vs baseline run")
    _add_config_flags(r)
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="speedup across one parameter")
    _add_config_flags(s)
    s.add_argument("--axis", choices=sorted(AXES), required=True)
    s.add_argument("--values", nargs="+", type=float,
                   help="axis values (default: the config's list for the axis)")
    s.set_defaults(fn=cmd_sweep)

    b = sub.add_parser("bench", help="per-packet splitter cost")
    b.add_argument("--packets", type=int, default=1_000_000)
    b.add_argument("--flows", type=int, default=10_000)
    b.add_argument("--impl", choices=("native", "python"), default="native")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("check", help="run the acceptance criteria")
    c.add_argument("--only", nargs="+", help="criterion numbers to run")
    c.set_defaults(fn=cmd_check)

    d = sub.add_parser("dump-workload", help="write the generated flows as CSV")
    _add_config_flags(d)
    d.add_argument("-o", "--output", type=Path)
    d.set_defaults(fn=cmd_dump)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    if getattr(ns, "axis", None) == "threshold" and ns.values:
        ns.values = [int(v) for v in ns.values]
    try:
        return ns.fn(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
