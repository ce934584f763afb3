"""Command line entry point: ``mesofolio {synth,filter,communities,optimize,backtest}``."""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import backtest as bt
from .communities import detect_communities, sector_composition
from .config import config_hash, load_config
from .data import (
    WindowSpec,
    block_labels,
    generate_regime_switching,
    generate_synthetic,
    load_prices,
    slice_window,
    to_log_returns,
)
from .errors import MesofolioError
from .portfolio import (
    STRATEGY_SOURCE,
    build_covariance,
    community_gmv,
    effective_size,
    equal_weights,
    gmv,
    mean_vector,
    solve_constrained,
    two_asset_shift,
    volatilities,
)
from .spectral import decompose_panel, risk_fractions


class Output:
    """Writes artifacts into one directory, tagging JSON with the config hash."""

    def __init__(self, cfg: dict):
        self.dir = Path(cfg["output"]["dir"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fmt = cfg["output"]["format"]
        echo = copy.deepcopy(cfg)
        echo["output"].pop("dir")
        self.config = echo
        self.hash = config_hash(echo)

    @property
    def csv(self) -> bool:
        return self.fmt in ("csv", "both")

    @property
    def json(self) -> bool:
        return self.fmt in ("json", "both")

    def write_json(self, name: str, payload: dict, force: bool = False):
        if not (self.json or force):
            return
        payload = {**payload, "config_hash": self.hash}
        text = json.dumps(payload, sort_keys=True, indent=2, default=bt._json_default)
        (self.dir / name).write_text(text + "\n")

    def write_frame(self, name: str, frame: pd.DataFrame, index: bool = False, force: bool = False):
        if not (self.csv or force):
            return
        frame.to_csv(self.dir / name, index=index, lineterminator="\n")

    def write_config(self):
        self.write_json("config.resolved.json", {"config": self.config}, force=True)


def _returns(cfg: dict):
    inp = cfg["input"]
    if not inp["path"]:
        raise MesofolioError("input.path is required (set it in the config file)")
    sector = None
    if inp["sector_path"]:
        sec = pd.read_csv(inp["sector_path"])
        sector = dict(zip(sec.iloc[:, 0].astype(str), sec.iloc[:, 1].astype(str)))
    prices = load_prices(inp["path"], layout=inp["layout"], missing_threshold=inp["missing_threshold"], sector=sector)
    return to_log_returns(prices, kind=inp["returns"]), prices.report


def _analysis_panel(cfg: dict):
    rp, report = _returns(cfg)
    if cfg["window"]:
        w = cfg["window"]
        rp = slice_window(rp, WindowSpec(t0=w["t0"], delta=w["delta"], mode="in-sample"))
    return rp, report


def _matrix_frame(M, assets):
    return pd.DataFrame(M, index=list(assets), columns=list(assets))


def cmd_synth(cfg: dict, out: Output) -> int:
    s = cfg["synthetic"]
    seed = cfg["seed"]
    blocks = [tuple(b) for b in s["blocks"]]
    n = sum(int(b[0]) for b in blocks)
    vol = None
    if s["volatility"]:
        lo, hi = s["volatility"]
        vol = np.random.default_rng([seed, 1]).uniform(lo, hi, n)
    if s["regimes"]:
        rp = generate_regime_switching(blocks, s["regimes"]["lengths"], s["regimes"]["levels"], seed=seed, volatility=vol)
    else:
        rp = generate_synthetic(n, s["n_obs"], blocks, s["market_loading"], s["noise_sd"], seed=seed, volatility=vol)
    dates = pd.bdate_range(end=pd.Timestamp(rp.dates[0]) - pd.offsets.BDay(1), periods=1).append(pd.DatetimeIndex(rp.dates))
    prices = 100.0 * np.exp(np.vstack([np.zeros(n), np.cumsum(rp.returns, axis=0)]))
    frame = pd.DataFrame(prices, columns=list(rp.assets))
    frame.insert(0, "date", dates.strftime("%Y-%m-%d"))
    # prices are the input format of every other command, so always written
    out.write_frame("prices.csv", frame, force=True)
    out.write_frame("planted.csv", pd.DataFrame({"asset": rp.assets, "block": block_labels(blocks)}), force=True)
    out.write_config()
    return 0


def cmd_filter(cfg: dict, out: Output) -> int:
    rp, report = _analysis_panel(cfg)
    dec = decompose_panel(rp, sign_threshold=cfg["filter"]["sign_threshold"])
    for name, M in (("C", dec.C), ("C_r", dec.C_r), ("C_g", dec.C_g), ("C_m", dec.C_m)):
        out.write_frame(f"{name}.csv", _matrix_frame(M, rp.assets), index=True)
    out.write_frame("eigenvalues.csv", pd.DataFrame({"eigenvalue": dec.eig.values, "component": _components(dec)}))
    rf = risk_fractions(dec)
    out.write_json(
        "decomposition.json",
        {
            **dec.summary(),
            "assets": list(rp.assets),
            "risk_fractions": {"total": rf.total, "r": rf.frac_r, "g": rf.frac_g, "m": rf.frac_m},
            "n_obs": rp.n_obs,
            "data_report": report,
        },
        force=True,
    )
    out.write_config()
    return 0


def _components(dec) -> list:
    comp = np.empty(dec.n_assets, dtype=object)
    comp[dec.indices_r], comp[dec.indices_g], comp[dec.indices_m] = "r", "g", "m"
    return comp.tolist()


def cmd_communities(cfg: dict, out: Output) -> int:
    rp, _ = _analysis_panel(cfg)
    dec = decompose_panel(rp, sign_threshold=cfg["filter"]["sign_threshold"])
    part = detect_communities(dec, restarts=cfg["communities"]["restarts"], seed=cfg["seed"])
    out.write_frame("partition.csv", pd.DataFrame({"asset": rp.assets, "community": part.labels}))
    payload = {**part.as_dict(rp.assets), "sizes": part.sizes.tolist()}
    if rp.sector:
        comp = sector_composition(part, rp.assets, rp.sector)
        payload["sector_composition"] = {str(k): v for k, v in comp.items()}
        rows = [{"community": c, "sector": s, "count": n} for c, row in sorted(comp.items()) for s, n in sorted(row.items())]
        out.write_frame("sector_composition.csv", pd.DataFrame(rows))
    out.write_json("partition.json", payload, force=True)
    out.write_config()
    return 0


def _strategy_weights(name, no_short, target, dec, vols, mu, cfg, partition):
    n = dec.n_assets
    if name == "equal":
        return equal_weights(n)
    sigma = build_covariance(dec, vols, STRATEGY_SOURCE[name])
    if name == "community":
        return community_gmv(sigma, partition().labels, mu=mu, target=target, no_short=no_short)
    if no_short or target is not None:
        return solve_constrained(sigma, mu, target=target, no_short=no_short, strategy=name, tol=cfg["solver"]["kkt_tol"])
    return gmv(sigma, strategy=name)


def cmd_optimize(cfg: dict, out: Output) -> int:
    rp, _ = _analysis_panel(cfg)
    dec = decompose_panel(rp, sign_threshold=cfg["filter"]["sign_threshold"])
    vols, mu = volatilities(rp), mean_vector(rp)
    cache = {}

    def partition():
        if "p" not in cache:
            cache["p"] = detect_communities(dec, restarts=cfg["communities"]["restarts"], seed=cfg["seed"])
        return cache["p"]

    results, failures = {}, []
    for spec in cfg["strategies"]:
        s = bt.StrategySpec(**spec)
        try:
            results[s.label] = _strategy_weights(s.name, s.no_short, s.target_return, dec, vols, mu, cfg, partition)
        except MesofolioError as exc:
            failures.append({"strategy": s.label, "error": type(exc).__name__, "code": exc.code, "message": str(exc)})

    for label, w in results.items():
        out.write_frame(f"weights_{label}.csv", pd.DataFrame({"asset": rp.assets, "weight": w.weights}))
    comp = bt.weight_comparison(results) if results else {}
    payload = {
        "weights": {label: w.as_dict(rp.assets) for label, w in results.items()},
        "effective_size": {label: effective_size(w) for label, w in results.items()},
        "comparison": comp,
        "failures": failures,
    }
    if rp.n_assets == 2:
        C_all = dec.C[0, 1]
        C_free = (dec.C_g + dec.C_m)[0, 1]
        shift = two_asset_shift(vols[0], vols[1], C_free, dec.C_g[0, 1])
        payload["two_asset"] = {
            "c12_empirical": C_all,
            "c12_noise_free": C_free,
            "c12_mesoscopic": dec.C_g[0, 1],
            "w1_star": shift.w1_star,
            "w1_adj": shift.w1_adj,
            "delta": shift.delta,
            "sign": shift.sign,
        }
    out.write_json("weights.json", payload, force=True)
    if results:
        out.write_frame(
            "weight_comparison.csv",
            pd.DataFrame({"strategy": list(comp["to_equal"]), "l1_to_equal": list(comp["to_equal"].values()), "effective_size": list(comp["effective_size"].values())}),
        )
    out.write_config()
    return 1 if failures else 0


def cmd_backtest(cfg: dict, out: Output) -> int:
    rp, _ = _returns(cfg)
    b = cfg["backtest"]
    windows = b["windows"] or [{"t0": rp.n_obs // 2, "delta": rp.n_obs // 2}]
    windows = [WindowSpec(t0=w["t0"], delta=w["delta"]) for w in windows]
    strategies = [bt.StrategySpec(**s) for s in cfg["strategies"]]
    report = bt.run_backtest(
        rp,
        windows,
        strategies,
        sizes=b["sizes"],
        draws=b["draws"],
        seed=cfg["seed"],
        restarts=cfg["communities"]["restarts"],
        predict_with=b["predict_with"],
        on_error="record",
        workers=cfg["workers"],
    )
    payload = report.to_dict()
    frontier_rows = []
    if b["frontier"]:
        fr = b["frontier"]
        for w_idx, window in enumerate(windows):
            for spec in strategies:
                if spec.name == "equal":
                    continue
                res = bt.frontier_reliability(
                    rp, window, spec, n_targets=fr.get("n_targets", 30), mode=fr.get("mode", "grid"),
                    restarts=cfg["communities"]["restarts"], seed=cfg["seed"], predict_with=b["predict_with"],
                )
                for r in res["rows"]:
                    frontier_rows.append({"window": w_idx, **r})
                payload.setdefault("frontier", []).append({"window": w_idx, "strategy": spec.label, "summary": res["summary"], "skipped": res["skipped"]})
    out.write_json("backtest.json", payload, force=True)

    if report.rows:
        rows = pd.DataFrame([{k: v for k, v in r.items() if k != "weights"} for r in report.rows])
        out.write_frame("rows.csv", rows)
        out.write_frame("reliability_table.csv", pd.DataFrame(report.mean_reliability()))
        out.write_frame("reliability_best.csv", pd.DataFrame(report.best_short_mode()))
        summary = pd.DataFrame([{"strategy": k, **v} for k, v in report.aggregates().items()])
        out.write_frame("reliability_summary.csv", summary)
        out.write_frame("effective_size.csv", rows[["window", "size", "draw", "strategy", "no_short", "effective_size"]])
    if frontier_rows:
        out.write_frame("frontier.csv", pd.DataFrame(frontier_rows))
        fs = pd.DataFrame([{"window": f["window"], "strategy": f["strategy"], **f["summary"], "skipped": f["skipped"]} for f in payload["frontier"]])
        out.write_frame("frontier_summary.csv", fs)
    out.write_frame("failures.csv", pd.DataFrame(report.failures, columns=["window", "size", "draw", "strategy", "no_short", "error", "message"]))
    out.write_config()
    return 1 if report.failures else 0


COMMANDS = {
    "synth": cmd_synth,
    "filter": cmd_filter,
    "communities": cmd_communities,
    "optimize": cmd_optimize,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesofolio", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML or JSON run configuration")
    parser.add_argument("--seed", type=int, help="random seed (default: $MESOFOLIO_SEED or config)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=("json", "csv", "both"))
    parser.add_argument("--layout", choices=("wide", "long"))
    parser.add_argument("--workers", type=int)
    parser.add_argument("--input", help="price CSV (overrides input.path)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "output.dir": args.out,
        "output.format": args.format,
        "input.layout": args.layout,
        "input.path": args.input,
        "workers": args.workers,
    }
    try:
        cfg = load_config(args.config, overrides)
    except (OSError, KeyError, ValueError, yaml.YAMLError) as exc:
        print(f"mesofolio: bad configuration: {exc}", file=sys.stderr)
        return 2
    out = Output(cfg)
    try:
        return COMMANDS[args.command](cfg, out)
    except MesofolioError as exc:
        record = {"command": args.command, "error": type(exc).__name__, "code": exc.code, "message": str(exc)}
        out.write_json("error.json", record, force=True)
        out.write_config()
        print(f"mesofolio {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
