"""Command line entry point.

Exit codes: 0 success (tracked, gate holds), 1 negative verdict or failed gate,
2 matrix is neither sub- nor super-stochastic, 3 input error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import sim_engine as se
from . import stochastic_matrix as sm
from .presets import (Preset, list_presets, load_config, load_matrix_file, load_preset, parse_value,
                      preset_dir)

OK, NEGATIVE, NEITHER, INPUT_ERROR, IO_ERROR = 0, 1, 2, 3, 4
DEFAULT_OUT = "signed_consensus_out"


class InputError(Exception):
    pass


def output_dir(args) -> Path:
    """--out beats SIGNED_CONSENSUS_OUT, which beats the default."""
    return Path(args.out or os.environ.get("SIGNED_CONSENSUS_OUT") or DEFAULT_OUT)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InputError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def load_scenario(args) -> Preset:
    if bool(args.config) == bool(args.preset):
        raise InputError("give exactly one of --config or --preset")
    over = _overrides(args.override)
    if args.seed is not None:
        over["seed"] = args.seed
    if args.horizon is not None:
        over["horizon"] = args.horizon
    try:
        if args.preset:
            return load_preset(args.preset, over)
        return load_config(args.config, over)
    except OSError as exc:
        raise InputError(f"cannot read {exc.filename}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"invalid scenario: {type(exc).__name__}: {exc}") from exc


def _emit(obj):
    print(json.dumps(obj, indent=2, default=se._json_default))


# analyze


def cmd_analyze(args) -> int:
    try:
        kind, data = load_matrix_file(args.matrix)
    except OSError as exc:
        raise InputError(f"cannot read {args.matrix}: {exc.strerror}")
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed matrix file: {exc}")
    if kind == "matrix":
        report = sm.analyze(data)
        code = NEITHER if report["classification"] == "neither" else OK
    else:
        report, code = analyze_product(data)
    _emit(report)
    if args.out:
        se.write_json(report, output_dir(args) / "analysis.json")
    return code


def analyze_product(Fs) -> tuple[dict, int]:
    classes = [sm.classify(F).kind for F in Fs]
    out = {"factors": classes, "factor_rho": [sm.spectral_radius(F) for F in Fs],
           "window_norm": sm.inf_norm(sm.ordered_product(Fs))}
    if "neither" in classes:
        out["reason"] = "a factor has a negative entry"
        return out, NEITHER
    if all(c == "sub" for c in classes):
        _, rep = sm.product_sub(Fs)
    else:
        rep = sm.product_super(Fs)
    out.update({"certified": rep.certified, "g": rep.g, "c": rep.c, "varphi": rep.varphi,
                "witness": {str(k + 1): [v[0] + 1, v[1] + 1, v[2] + 1, v[3] + 1]
                            for k, v in rep.witness.items()},
                "reason": rep.reason})
    return out, OK


# gate


def cmd_gate(args) -> int:
    pre = load_scenario(args)
    report = dyn.gate(pre.spec).to_json()
    _emit(report)
    if args.out:
        se.write_json(report, output_dir(args) / pre.name / "gate.json")
    return OK if report["overall"] else NEGATIVE


# simulate

PLOT_SCRIPT = '''"""Plots for {name}; reads {data} from this directory."""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).resolve().parent
names = (here / "{data}").read_text().splitlines()[0].lstrip("# ").split()
data = np.loadtxt(here / "{data}")
col = {{n: data[:, i] for i, n in enumerate(names)}}
t = col["t"]
fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
for ax, prefix in zip(axes[:2], ("x", "v")):
    ax.plot(t, col[prefix + "0"], "k--", lw=2, label="leader")
    for n in names:
        if n.startswith(prefix) and n[1:].isdigit() and n != prefix + "0":
            ax.plot(t, col[n], lw=1, label="follower " + n[1:])
    ax.set_ylabel("position" if prefix == "x" else "velocity")
axes[0].legend(fontsize=7, ncol=4)
axes[2].semilogy(t, np.maximum(col["err_pos"], 1e-16), label="position error")
axes[2].semilogy(t, np.maximum(col["err_vel"], 1e-16), label="velocity error")
axes[2].set_ylabel("signed error (inf-norm)")
axes[2].set_xlabel("time")
axes[2].legend(fontsize=7)
fig.tight_layout()
fig.savefig(here / "{png}", dpi=120)
'''


def render_plot(script: Path) -> bool:
    if importlib.util.find_spec("matplotlib") is None:
        print("matplotlib is not installed; skipping --render (pip install 'artifact[plot]')",
              file=sys.stderr)
        return False
    env = dict(os.environ, MPLBACKEND="Agg")
    res = subprocess.run([sys.executable, str(script)], env=env, capture_output=True, text=True)
    if res.returncode:
        print(f"plot script failed: {res.stderr.strip()}", file=sys.stderr)
        return False
    return True


def cmd_simulate(args) -> int:
    pre = load_scenario(args)
    spec = pre.spec
    threshold = pre.threshold if args.threshold is None else args.threshold
    try:
        trace = se.run(spec)
    except ValueError as exc:
        raise InputError(str(exc))
    v = se.verdict(trace, spec, pre.tail_fraction, threshold)
    gate = dyn.gate(spec).to_json()
    result = {"scenario": pre.name, "seed": trace.seed, "spec_digest": trace.digest,
              "horizon": trace.horizon, "verdict": v.to_json(), "gate_overall": gate["overall"],
              "dual_divergence": trace.divergence}
    if pre.window and spec.kind not in dyn.STOCHASTIC_KINDS:
        norms = se.window_contraction_scan(spec, pre.window, 10, stride=7)
        result["window_norms"] = {"window": pre.window, "norms": norms}
    out = output_dir(args) / pre.name
    se.write_trace_csv(trace, out / "trace.csv")
    se.write_json(result, out / "verdict.json")
    se.write_json(gate, out / "gate.json")
    se.write_json(dyn.spec_to_json(spec), out / "scenario.json")
    stride = max(1, trace.horizon // 5000)
    se.write_plot_data(trace, out / "plot_data.txt", stride)
    script = out / "plot.py"
    script.write_text(PLOT_SCRIPT.format(name=pre.name, data="plot_data.txt", png="trajectories.png"))
    if args.render:
        result["rendered"] = render_plot(script)
    _emit(result)
    return OK if v.ok else NEGATIVE


# monte carlo


def cmd_monte_carlo(args) -> int:
    pre = load_scenario(args)
    spec = pre.spec
    threshold = 1e-2 if args.threshold is None else args.threshold
    if args.replicates < 1:
        raise InputError("replicates must be at least 1")
    mc = se.monte_carlo(spec, args.replicates)
    steps = [k for k in (25, 50, 100, 200, 400) if k <= spec.horizon]
    summary = {"scenario": pre.name, "replicates": mc.replicates, "tail_mean_error": mc.tail_mean(pre.tail_fraction),
               "threshold": threshold, "fraction_tracked": mc.tracked_fraction}
    if mc.expected is not None:
        z = mc.zscores(steps)
        summary["checkpoints"] = steps
        summary["max_z"] = float(z.max())
    out = output_dir(args) / pre.name
    cols = [np.arange(len(mc.norm_mean)), mc.norm_mean, mc.mean, mc.std]
    header = ["k", "mean_err_inf"] + [f"mean_e{i + 1}" for i in range(mc.mean.shape[1])]
    header += [f"std_e{i + 1}" for i in range(mc.std.shape[1])]
    if mc.expected is not None:
        cols.append(mc.expected)
        header += [f"expected_e{i + 1}" for i in range(mc.expected.shape[1])]
    table = np.column_stack(cols)
    se._atomic_write(out / "monte_carlo.csv", lambda fh: (fh.write(",".join(header) + "\n"),
                                                          np.savetxt(fh, table, delimiter=",", fmt="%.12g")))
    se.write_json(summary, out / "monte_carlo.json")
    _emit(summary)
    ok = summary["tail_mean_error"] < threshold and summary.get("max_z", 0.0) <= 3
    return OK if ok else NEGATIVE


# reproduce-all


def cmd_reproduce_all(args) -> int:
    from . import acceptance

    base = Path(args.preset_dir) if args.preset_dir else preset_dir()
    out = output_dir(args)
    rows, all_ok = [], True
    print(f"{'preset':28s} {'kind':28s} {'gate':5s} {'verdict':9s} tail")
    for name in list_presets(base):
        try:
            pre = load_preset(name, base=base)
            trace = se.run(pre.spec, dual=False)
            v = se.verdict(trace, pre.spec, pre.tail_fraction, pre.threshold)
            gate = dyn.gate(pre.spec).overall
            label = "tracked" if v.tracked else ("bounded" if v.bounded else "no")
            row = {"preset": name, "kind": pre.spec.kind, "gate": gate, "verdict": label,
                   "tail_max": v.tail_max, "pass": v.ok}
            print(f"{name:28s} {pre.spec.kind:28s} {str(gate):5s} {label:9s} {v.tail_max:.2e}")
        except Exception as exc:  # keep going: one broken preset must not hide the rest
            row = {"preset": name, "pass": False, "error": f"{type(exc).__name__}: {exc}"}
            print(f"{name:28s} FAILED: {row['error']}")
        all_ok &= row["pass"]
        rows.append(row)
    print()
    results = [] if args.skip_criteria else acceptance.run_all()
    all_ok &= all(r.passed for r in results)
    summary = {"presets": rows, "criteria": [vars(r) for r in results], "all_pass": bool(all_ok)}
    try:
        se.write_json(summary, out / "reproduce_all.json")
    except OSError as exc:
        print(f"cannot write summary: {exc}", file=sys.stderr)
        return IO_ERROR
    return OK if all_ok else NEGATIVE


# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are input errors; 2 is reserved for "neither" matrices
        self.print_usage(sys.stderr)
        self.exit(INPUT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="output directory (default: $SIGNED_CONSENSUS_OUT or ./%s)" % DEFAULT_OUT)

    scen = _Parser(add_help=False)
    scen.add_argument("--config", help="scenario JSON file")
    scen.add_argument("--preset", help="name of a shipped preset")
    scen.add_argument("--seed", type=int)
    scen.add_argument("--horizon", type=int)
    scen.add_argument("--threshold", type=float)
    scen.add_argument("--override", action="append", metavar="KEY=VALUE",
                      help="replace a gain or scenario field; repeatable")

    p = _Parser(prog="signed-consensus",
                description="Bipartite tracking over signed digraphs: matrix bounds, gates and simulations.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="classify a matrix and evaluate its spectral bounds")
    a.add_argument("matrix", help='JSON file with {"matrix": [[...]]} or {"matrices": [...]}')
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("gate", parents=[common, scen], help="evaluate a scenario's gain conditions")
    g.set_defaults(func=cmd_gate)

    s = sub.add_parser("simulate", parents=[common, scen], help="run a scenario and write its trace")
    s.add_argument("--render", action="store_true", help="also draw the plot if matplotlib is installed")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("monte-carlo", parents=[common, scen], help="replicate a stochastic scenario")
    m.add_argument("--replicates", type=int, default=1000)
    m.set_defaults(func=cmd_monte_carlo)

    r = sub.add_parser("reproduce-all", parents=[common], help="run every preset and acceptance check")
    r.add_argument("--preset-dir", help=argparse.SUPPRESS)
    r.add_argument("--skip-criteria", action="store_true", help="only run the preset table")
    r.set_defaults(func=cmd_reproduce_all)

    sub.add_parser("list-presets", help="show shipped presets").set_defaults(func=cmd_list)
    return p


def cmd_list(args) -> int:
    from .presets import load_preset as lp
    for name in list_presets():
        try:
            print(f"{name:28s} {lp(name).description}")
        except Exception as exc:
            print(f"{name:28s} (unreadable: {exc})")
    return OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
