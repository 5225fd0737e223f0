"""Command-line pipeline: returns, train, forecast, backtest, vine-fit, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import os
import sys

import numpy as np

from . import riskeval as rk
from .config import load_config, training_config
from .data import (DataSizeError, IngestionError, bundled_prices_path, load_prices, load_returns,
                   save_returns, to_log_returns)
from .depstats import SingularityError
from .paircopula import CopulaFamily
from .riskeval import ConfigError
from .vine import WeightedPartialVine, write
from .vlstm.training import DivergenceError, forecast, load_checkpoint, save_checkpoint, train

log = logging.getLogger("wpvc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class DataError(ValueError):
    """Range or alignment problem with otherwise readable data."""


def _fmt(x) -> str:
    return repr(float(x))


def _out(cfg, name):
    d = cfg["output_dir"]
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def _returns_panel(cfg, args=None):
    path = getattr(args, "returns", None) or cfg["data"]["returns"]
    if path:
        return load_returns(path)
    prices = getattr(args, "prices", None) or cfg["data"]["prices"] or bundled_prices_path()
    return to_log_returns(load_prices(prices), cfg["data"]["alignment"], cfg["data"]["max_fill"])


def cmd_returns(cfg, args):
    prices = args.prices or cfg["data"]["prices"] or bundled_prices_path()
    rp = to_log_returns(load_prices(prices), cfg["data"]["alignment"], cfg["data"]["max_fill"])
    path = _out(cfg, "returns.csv")
    save_returns(rp, path)
    log.info("wrote %d returns for %d instruments to %s", len(rp), len(rp.instruments), path)
    return path


def cmd_train(cfg, args):
    rp = _returns_panel(cfg, args)
    sp = cfg["split"]
    train_rp = rp.between(sp["train_start"], sp["train_end"])
    if len(train_rp) == 0:
        raise DataError("training range is empty")
    tcfg = training_config(cfg)
    ckpt_dir = _out(cfg, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    res = train(train_rp.returns, tcfg, checkpoint_dir=ckpt_dir)
    path = _out(cfg, "checkpoint.npz")
    save_checkpoint(res.model, path)
    with open(_out(cfg, "loss_trace.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_P", "neg_L_VAE", "total"])
        for epoch, lp, nvae, tot in res.trace:
            w.writerow([epoch, _fmt(lp), _fmt(nvae), _fmt(tot)])
    if res.model.vine is not None:
        write(res.model.vine, _out(cfg, "latent_vine.txt"))
    with open(_out(cfg, "instruments.json"), "w", encoding="utf-8") as fh:
        json.dump({"instruments": list(rp.instruments)}, fh)
    if res.converged is False:
        log.warning("loss threshold not reached after %d epochs", len(res.trace))
    log.info("trained %d epochs; checkpoint %s", len(res.trace), path)
    return path


def cmd_forecast(cfg, args):
    model = load_checkpoint(args.checkpoint or _out(cfg, "checkpoint.npz"))
    rp = _returns_panel(cfg, args)
    sp = cfg["split"]
    start = args.start or sp["valid_start"]
    end = args.end or sp["valid_end"]
    # by default start at the first date that has an earlier return
    lo = _dt.date.fromisoformat(str(start)) if start else rp.dates[min(1, len(rp.dates) - 1)]
    hi = _dt.date.fromisoformat(str(end)) if end else rp.dates[-1]
    if lo < rp.dates[0] or hi > rp.dates[-1]:
        raise DataError(f"forecast range {lo}..{hi} outside data {rp.dates[0]}..{rp.dates[-1]}")
    idx = [i for i, d in enumerate(rp.dates) if lo <= d <= hi]
    names = rp.instruments
    # identity returns give back the (validated) weight vector
    wts = rk.portfolio_return(np.eye(len(names)), cfg["portfolio_weights"])
    header = ["date"] + [f"{n}_{k}" for n in names for k in ("mu", "sigma", "p_up")]
    header += ["portfolio_mu", "portfolio_sigma"]
    rows = []
    if idx:
        if idx[0] == 0:
            raise DataError("the first forecast date needs at least one earlier return")
        f = forecast(model, rp.returns[: idx[-1]], start=idx[0], sample=cfg["forecast_mode"] == "sample",
                     random_state=cfg["seed"])
        for j, i in enumerate(idx):
            row = [rp.dates[i].isoformat()]
            for k in range(len(names)):
                row += [_fmt(f["mu"][j, k]), _fmt(f["sigma"][j, k]), _fmt(f["p_up"][j, k])]
            row += [_fmt(f["mu"][j] @ wts), _fmt(np.sqrt(np.sum((wts * f["sigma"][j]) ** 2)))]
            rows.append(row)
    path = args.output or _out(cfg, "forecast.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    log.info("wrote %d forecast rows to %s", len(rows), path)
    return path


def read_forecast(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = [h[:-3] for h in header if h.endswith("_mu") and h != "portfolio_mu"]
    dates = [_dt.date.fromisoformat(r[0]) for r in body]
    col = {h: i for i, h in enumerate(header)}

    def get(key):
        return np.array([[float(r[col[f"{n}_{key}"]]) for n in names] for r in body]).reshape(len(body), len(names))

    return {
        "dates": dates,
        "names": names,
        "mu": get("mu"),
        "sigma": get("sigma"),
        "p_up": get("p_up"),
        "portfolio_mu": np.array([float(r[col["portfolio_mu"]]) for r in body]),
        "portfolio_sigma": np.array([float(r[col["portfolio_sigma"]]) for r in body]),
    }


def run_backtest(fc, actual, dates_actual, cfg):
    """Strategy returns, metrics, ARR and coverage tests for aligned forecasts."""
    pos = {d: i for i, d in enumerate(dates_actual)}
    missing = [d.isoformat() for d in fc["dates"] if d not in pos]
    if missing:
        raise DataError("forecast dates missing from actual returns: " + ", ".join(missing[:10]))
    A = actual[[pos[d] for d in fc["dates"]]]
    wts = cfg["portfolio_weights"]
    if cfg["direction_source"] == "mu":
        up_pred = fc["mu"] > 0
    else:
        up_pred = fc["p_up"] > 0.5
    strat = np.where(up_pred, 1.0, -1.0) * A
    strat_p = rk.portfolio_return(strat, wts)
    port = rk.portfolio_return(A, wts)
    mape, rae, rse = rk.regression_metrics(A.ravel(), fc["mu"].ravel())
    precision, recall, acc = rk.classification_metrics((A > 0).ravel(), up_pred.ravel())
    report = rk.BacktestReport(metrics=rk.MetricReport(mape, rae, rse, precision, recall, acc),
                               arr=rk.arr(strat_p, float(cfg["arr_periods"])))
    for lvl in cfg["var_levels"]:
        vs, _, _ = rk.exceedances(port, rk.var_forecast(fc["portfolio_mu"], fc["portfolio_sigma"], lvl))
        report.levels[float(lvl)] = rk.coverage_tests(vs.indicators, lvl)
    return report


def cmd_backtest(cfg, args):
    fc = read_forecast(args.forecast or _out(cfg, "forecast.csv"))
    rp = _returns_panel(cfg, args)
    if list(rp.instruments) != fc["names"]:
        raise DataError(f"instrument mismatch: {list(rp.instruments)} vs {fc['names']}")
    report = run_backtest(fc, rp.returns, rp.dates, cfg)
    with open(_out(cfg, "backtest.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json(indent=2) + "\n")
    with open(_out(cfg, "backtest.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.table())
    log.info("backtest over %d steps written to %s", len(fc["dates"]), cfg["output_dir"])
    return report


def _weights_matrix(path, n):
    if not path:
        return None
    W = np.loadtxt(path, delimiter=",", ndmin=2)
    if W.shape != (n, n):
        raise ConfigError(f"weights file must hold a {n}x{n} matrix")
    return W


def cmd_vine_fit(cfg, args):
    rp = _returns_panel(cfg, args)
    n = len(rp.instruments)
    if n < 2:
        raise DataError("vine-fit needs at least two instruments")
    est = WeightedPartialVine(truncation=float(cfg["vine"]["truncation"]), families=tuple(cfg["vine"]["families"]),
                              weights=_weights_matrix(cfg["vine"]["weights"], n))
    est.fit(rp.returns)
    v = est.structure_
    v = dataclasses.replace(v, labels=tuple(rp.instruments))
    write(v, _out(cfg, "vine.txt"))
    diag = {
        "n": n,
        "R": v.score,
        "inverse_indicator": v.inverse_indicator,
        "truncated": v.n_truncated,
        "candidates": [{"l": c.inverse_indicator, "R": c.score} for c in est.candidates_],
        "edges": [
            {
                "edge": e.label(v.labels),
                "tree": len(e.conditioning) + 1,
                "family": (e.copula.family.value if e.copula is not None else CopulaFamily.INDEPENDENCE.value),
                "params": list(e.copula.params) if e.copula is not None else [],
                "tau": e.copula.tau() if e.active else 0.0,
                "partial_rho": e.partial_rho,
                "truncated": e.truncated,
            }
            for e in v.edges
        ],
    }
    with open(_out(cfg, "vine_diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("vine over %d instruments: R=%.6g, %d truncated edges", n, v.score, v.n_truncated)
    return diag


def cmd_report(cfg, args):
    parts = []
    trace = _out(cfg, "loss_trace.csv")
    if os.path.exists(trace):
        with open(trace, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        if rows:
            parts.append(f"training: {len(rows)} epochs, final total loss {float(rows[-1][3]):.6g}")
    diag = _out(cfg, "vine_diagnostics.json")
    if os.path.exists(diag):
        with open(diag, encoding="utf-8") as fh:
            d = json.load(fh)
        parts.append(f"vine: n={d['n']} l={d['inverse_indicator']} R={d['R']:.6g} truncated={d['truncated']}")
        parts += [f"  {e['edge']}: {e['family']} {e['params']} tau={e['tau']:.4f}" for e in d["edges"]]
    bt = _out(cfg, "backtest.txt")
    if os.path.exists(bt):
        with open(bt, encoding="utf-8") as fh:
            parts.append(fh.read().rstrip("\n"))
    text = "\n".join(parts) + "\n" if parts else "no outputs found\n"
    with open(_out(cfg, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return text


COMMANDS = {
    "returns": cmd_returns,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "vine-fit": cmd_vine_fit,
    "report": cmd_report,
}


def _global_flags(default):
    g = argparse.ArgumentParser(add_help=False, argument_default=default)
    g.add_argument("--config", help="YAML run configuration")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir")
    g.add_argument("--ablation", choices=("wpvc", "mean_field", "plain_lstm"))
    g.add_argument("--verbose", "-v", action="store_true")
    return g


def build_parser():
    # flags are accepted before or after the subcommand; the subcommand copy
    # must not reset values given before it
    p = argparse.ArgumentParser(prog="wpvc", description=__doc__.splitlines()[0], parents=[_global_flags(None)])
    common = _global_flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("returns", parents=[common], help="prices CSV -> log returns CSV")
    s.add_argument("--prices")
    s = sub.add_parser("train", parents=[common], help="train the variational LSTM")
    s.add_argument("--prices")
    s.add_argument("--returns")
    s = sub.add_parser("forecast", parents=[common], help="one-step-ahead forecasts")
    s.add_argument("--checkpoint")
    s.add_argument("--prices")
    s.add_argument("--returns")
    s.add_argument("--start")
    s.add_argument("--end")
    s.add_argument("--output")
    s = sub.add_parser("backtest", parents=[common], help="metrics, ARR and VaR coverage tests")
    s.add_argument("--forecast")
    s.add_argument("--prices")
    s.add_argument("--returns")
    s = sub.add_parser("vine-fit", parents=[common], help="fit the weighted partial vine on returns")
    s.add_argument("--prices")
    s.add_argument("--returns")
    sub.add_parser("report", parents=[common], help="summarize outputs in the output directory")
    return p


def _setup_logging(cfg, verbose):
    log.handlers.clear()
    log.setLevel(logging.DEBUG)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(console)
    os.makedirs(cfg["output_dir"], exist_ok=True)
    side = logging.FileHandler(os.path.join(cfg["output_dir"], "run.log"), encoding="utf-8")
    side.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    log.addHandler(side)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for key, dest in (("seed", "seed"), ("output_dir", "out_dir"), ("ablation", "ablation")):
        val = getattr(args, dest, None)
        if val is not None:
            overrides[key] = val
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(cfg, args.verbose)
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (IngestionError, DataSizeError, DataError, SingularityError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except DivergenceError as exc:
        if exc.model is not None:
            save_checkpoint(exc.model, _out(cfg, "checkpoint_last_good.npz"))
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    finally:
        for h in list(log.handlers):
            h.close()
            log.removeHandler(h)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
