"""Command-line entry point: synth, train, eval, param-count, gradcheck.

Exit codes: 0 success, 1 numeric / data / file-format failure (or a failed
gradient check), 2 usage or configuration error.  Every subcommand that
accepts ``--config FILE`` reads ``key = value`` lines (``#`` starts a
comment); explicit flags win over the file.  ``AQPINN_THREADS`` caps the
BLAS thread pool.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as D
from .errors import AqpinnError, ConfigurationError, DataError, FormatError, NumericError, UsageError
from .gradcheck import gradcheck
from .model import (FluidConstants, ModelConfig, ModelTopology, ParamVector, forward, load_checkpoint,
                    loss_value, param_report, save_checkpoint)
from .train import TrainOptions, input_normalisation, train

TOPOLOGIES = [t.value for t in ModelTopology]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _model_flags(p, defaults=True):
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--topology", choices=TOPOLOGIES, default=d("qmps"))
    p.add_argument("--formulation", choices=["streamfunction", "velocity"], default=d("streamfunction"))
    p.add_argument("--n-tokens", type=int, default=d(4))
    p.add_argument("--n-heads", type=int, default=d(2))
    p.add_argument("--d-h", type=int, default=d(8))
    p.add_argument("--hidden-width", type=int, default=d(32))
    p.add_argument("--qmps-layers", type=int, default=d(1))
    p.add_argument("--nu", type=float, default=d(0.01))
    p.add_argument("--rho", type=float, default=d(1.0))


def _model_config(a, seed=0, shift=(0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0)) -> ModelConfig:
    return ModelConfig(topology=a.topology, formulation=a.formulation, n_tokens=a.n_tokens, n_heads=a.n_heads,
                       d_h=a.d_h, hidden_width=a.hidden_width, qmps_layers=a.qmps_layers,
                       constants=FluidConstants(a.rho, a.nu), seed=seed, input_shift=shift, input_scale=scale)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aqpinn", description="Attention PINN with simulated quantum circuits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.subcommands = sub.choices

    p = sub.add_parser("synth", help="write an AQPD dataset sampled from an exact solution")
    p.add_argument("--solution", choices=[s.value for s in D.Solution], default="taylor-green")
    p.add_argument("--nx", type=int, default=32)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--t-steps", type=int, default=10)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--nu", type=float, default=0.01)
    p.add_argument("--speed", type=float, default=1.0, help="free-stream speed of the uniform solution")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on an AQPD dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    _model_flags(p)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--lr", default="auto", help="'auto' for the range test, or an initial step")
    p.add_argument("--history-size", type=int, default=10)
    p.add_argument("--lr-probe-points", type=int, default=256,
                   help="training points used by the range test (0 = all)")
    p.add_argument("--out-checkpoint")
    p.add_argument("--out-log")

    p = sub.add_parser("eval", help="losses and per-point predictions on the held-out time slice")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--time-index", type=int)
    p.add_argument("--out", help="tab-separated predictions 'x y t u v p f_x f_y c'")
    _model_flags(p, defaults=False)

    p = sub.add_parser("param-count", help="attention and whole-model parameter counts")
    p.add_argument("--config")
    p.add_argument("--topology", choices=TOPOLOGIES + ["all"], default="all")
    p.add_argument("--n-tokens", type=int, default=4)
    p.add_argument("--n-heads", type=int, default=2)
    p.add_argument("--d-h", type=int, default=8)
    p.add_argument("--hidden-width", type=int, default=32)
    p.add_argument("--qmps-layers", type=int, default=1)

    p = sub.add_parser("gradcheck", help="automatic derivatives against finite differences")
    p.add_argument("--config")
    _model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=1e-5)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if path:
        values = read_config_file(path)
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        for key, raw in values.items():
            if key not in known or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            action = known[key]
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
            sub.set_defaults(**{key: value})
        args = parser.parse_args(argv)
    return args


# -- subcommands ----------------------------------------------------------------

def cmd_synth(a, out):
    ds = D.synth_dataset(D.Grid(a.nx, a.ny), D.Times(a.t_steps, a.t_max), a.solution, a.nu, speed=a.speed)
    D.save_dataset(ds, a.out)
    print(f"wrote {a.out}: solution={a.solution} N={ds.N} T={ds.T}", file=out)
    return 0


def cmd_train(a, out):
    ds = D.load_dataset(a.data)
    shift, scale = input_normalisation(ds)
    config = _model_config(a, a.seed, shift, scale)
    lr = a.lr
    if lr != "auto":
        try:
            lr = float(lr)
        except ValueError:
            raise UsageError(f"--lr must be 'auto' or a number, got {a.lr!r}") from None
    opts = TrainOptions(n_train=a.n_train, max_iters=a.max_iters, tol=a.tol, seed=a.seed, lr=lr,
                        history_size=a.history_size, lr_probe_points=a.lr_probe_points)
    res = train(config, ds, opts)
    text = res.log_text()
    if a.out_log:
        with open(a.out_log, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)
    if a.out_checkpoint:
        save_checkpoint(a.out_checkpoint, config, res.params)
    first, last = res.rows[0], res.rows[-1]
    print(f"lr {res.lr:.6g}; total loss {first.total:.6g} -> {last.total:.6g} "
          f"after {last.iteration} iterations", file=out)
    return 0


def _check_overrides(a, config: ModelConfig):
    pairs = {"topology": config.topology.value, "formulation": config.formulation.value,
             "n_tokens": config.n_tokens, "n_heads": config.n_heads, "d_h": config.d_h,
             "hidden_width": config.hidden_width, "qmps_layers": config.qmps_layers,
             "nu": config.constants.nu, "rho": config.constants.rho}
    for key, have in pairs.items():
        want = getattr(a, key, None)
        if want is not None and want != have:
            raise FormatError(f"checkpoint has {key} = {have}, requested {want}", 0)


def evaluate(config: ModelConfig, params: ParamVector, ds: D.FlowDataset, time_index=None):
    split = D.holdout_split(ds, time_index)
    points, targets = split.points(), split.targets()
    lb = loss_value(params.gamma, points, targets, config)
    pred = forward(points, params, config)
    res = pred.residuals(config.constants)
    cols = [pred.u.value, pred.v.value, pred.p.value, res.f_x, res.f_y, res.c]
    table = np.column_stack([points] + [np.asarray(getattr(c, "data", c)) for c in cols])
    return lb, table


def cmd_eval(a, out):
    config, params = load_checkpoint(a.checkpoint)
    _check_overrides(a, config)
    ds = D.load_dataset(a.data)
    lb, table = evaluate(config, params, ds, a.time_index)
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            fh.write("# x\ty\tt\tu\tv\tp\tf_x\tf_y\tc\n")
            for row in table:
                fh.write("\t".join("%.17g" % v for v in row) + "\n")
    k = ds.T // 2 if a.time_index is None else a.time_index
    print(f"test slice: time index {k} ({table.shape[0]} points)", file=out)
    print("data_loss\t%.17g" % lb.data_loss, file=out)
    print("phys_loss\t%.17g" % lb.phys_loss, file=out)
    print("total\t%.17g" % lb.total, file=out)
    return 0


def cmd_param_count(a, out):
    names = TOPOLOGIES if a.topology == "all" else [a.topology]
    print("reduction = 1 - attention params / classical attention params (same n_tokens, n_heads, d_h)",
          file=out)
    print("topology\tattention\tclassical_attention\treduction_pct\tmodel\tclassical_model\tmodel_reduction_pct",
          file=out)
    for name in names:
        config = ModelConfig(topology=name, n_tokens=a.n_tokens, n_heads=a.n_heads, d_h=a.d_h,
                             hidden_width=a.hidden_width, qmps_layers=a.qmps_layers)
        r = param_report(config)
        print(f"{name}\t{r['attention_params']}\t{r['classical_attention_params']}\t"
              f"{r['attention_reduction_pct']:.2f}\t{r['model_params']}\t{r['classical_model_params']}\t"
              f"{r['model_reduction_pct']:.2f}", file=out)
    return 0


def cmd_gradcheck(a, out):
    if a.points < 1:
        raise UsageError(f"--points must be >= 1, got {a.points}")
    if not a.tolerance > 0:
        raise UsageError("--tolerance must be positive")
    config = _model_config(a, a.seed)
    report = gradcheck(config, a.points, a.seed)
    for line in report.lines(a.tolerance):
        print(line, file=out)
    return 0 if report.passed(a.tolerance) else 1


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "param-count": cmd_param_count, "gradcheck": cmd_gradcheck}


def _limit_threads():
    raw = os.environ.get("AQPINN_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AQPINN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("AQPINN_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = parse_args(sys.argv[1:] if argv is None else list(argv))
        limiter = _limit_threads()
        try:
            return COMMANDS[args.command](args, out)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, ConfigurationError) as exc:
        print(f"aqpinn: usage error: {exc}", file=err)
        return 2
    except (NumericError, FormatError, DataError, OSError, AqpinnError) as exc:
        print(f"aqpinn: error: {exc}", file=err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
