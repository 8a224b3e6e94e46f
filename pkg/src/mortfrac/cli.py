"""Command-line front end.

Exit codes: 0 ok, 2 input/format/config error, 3 estimation or calibration
failure, 4 simulation or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data, estimate, plotting
from .calibrate import InfeasibleError, NoBracketError, calibrate_attachment, calibrate_exhaustion, calibrate_pricing, simulate_index
from .model import RiskPremiums, simulate_bivariate, to_pricing
from .pricing import (
    BondSpec,
    InsufficientDataError,
    baseline_weeks,
    bond_payout_paths,
    coupon_surface,
    fair_coupon_details,
    risk_measures,
    simulate_bond_paths,
    zcb_curve,
    zcb_price_t0,
)

log = logging.getLogger("mortfrac")

EXIT_OK, EXIT_FORMAT, EXIT_ESTIMATION, EXIT_SIMULATION = 0, 2, 3, 4

SCENARIOS = {
    1: "rho = 0",
    2: "H1 = H2 = 0.5",
    3: "sigma1^2 doubled",
    4: "sigma2^2 doubled",
    5: "gamma1 x 1.5",
    6: "gamma2 x 1.5",
}

ZCB_FAMILY = dict(alpha=0.0, m=0.10, theta=1.0, r0=0.05)
ZCB_SIGMAS = (0.005, 0.01)
ZCB_HURSTS = (0.55, 0.65, 0.75, 0.85, 0.95)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else data.fmt(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
            fh.flush()


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_cell) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------

def baseline_curve(cfg: cfgmod.RunConfig) -> data.BaselineCurve:
    if cfg.io.stmf:
        return data.build_baseline(data.parse_stmf(cfg.io.stmf), cfg.estimate.reference_years)
    log.info("no STMF file given; using the synthetic seasonal baseline")
    return data.synthetic_baseline()


def bond_spec(cfg: cfgmod.RunConfig, coupon: float = 0.0, term: float | None = None) -> BondSpec:
    b = cfg.bond
    a = 0.0 if math.isnan(b.attachment) else b.attachment
    e = a + 1.0 if math.isnan(b.exhaustion) else b.exhaustion
    return BondSpec(b.face, coupon, b.pay_freq, b.term if term is None else term, a, e, b.index_rule)


def attach_exhaust(cfg, baseline) -> tuple[float, float, dict]:
    """(a, b) from the config, or calibrated from the quote when unset."""
    b = cfg.bond
    if not (math.isnan(b.attachment) or math.isnan(b.exhaustion)):
        return b.attachment, b.exhaustion, {"source": "config"}
    c, s, q = cfg.calibration, cfg.simulation, cfg.quote
    spec = bond_spec(cfg, term=q.term)
    rp = RiskPremiums(gamma1=cfg.premiums.gamma1) if c.index_measure == "pricing" else None
    index, _ = simulate_index(cfg.model, rp, spec, baseline.expected_rate, s.n_paths, s.seed)
    a = calibrate_attachment(index, q.prob_first_loss, c.attachment_rule)
    e = calibrate_exhaustion(index, a, q.expected_loss, q.prob_first_loss)
    return a, e, {"source": "calibrated", "rule": c.attachment_rule, "measure": c.index_measure}


def price_and_assess(p, rp, spec: BondSpec, baseline, n_paths, seed, coupon=None, disable_prf=False) -> dict:
    """Fair coupon under Q, then payouts and loss metrics under P at that coupon."""
    fair = fair_coupon_details(p, rp, spec, baseline, n_paths, seed, disable_prf)
    used = fair.coupon if coupon is None or math.isnan(coupon) else coupon
    payouts = bond_payout_paths(p, None, spec.with_(coupon_rate=used), baseline, n_paths, seed)
    return {"fair": fair, "coupon": used, "payouts": payouts, "metrics": payouts.loss_metrics()}


def output_dir(cfg) -> Path:
    out = Path(cfg.io.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_aligned(cfg) -> data.AlignedSeries:
    if cfg.io.aligned:
        return data.read_aligned_csv(cfg.io.aligned)
    return data.ingest(cfg.io.stmf, cfg.io.fred, cfg.estimate.reference_years)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg) -> int:
    series = data.ingest(cfg.io.stmf, cfg.io.fred, cfg.estimate.reference_years)
    out = output_dir(cfg)
    data.write_aligned_csv(series, out / "aligned.csv")
    write_json(out / "aligned_meta.json", {"provenance": series.provenance, "flags": series.flags, "weeks": len(series)})
    print(f"{len(series)} aligned weeks -> {out / 'aligned.csv'}")
    return EXIT_OK


def _run_estimation(cfg):
    series = load_aligned(cfg)
    r = estimate.ObservedSeries(series.rate, 52, "rate")
    mu = estimate.ObservedSeries(series.excess_mortality, 52, "excess_mortality")
    e = cfg.estimate
    report = estimate.calibrate_physical(r, mu, e.long_term_mean_rate, e.hurst_source, e.vol_method, e.rho_normalization)
    return series, r, mu, report


def _report_files(out: Path, report, r, mu, hurst_source) -> None:
    write_csv(out / "estimates.csv", ("parameter", "rate", "excess_mortality"), report.table())
    write_json(out / "estimate_diagnostics.json", report.diagnostics)
    for name, x in (("rate", r), ("mortality", mu)):
        vals = x.values if hurst_source == "levels" else x.increments()
        _, fit = estimate.estimate_hurst_rs(vals)
        ln = np.log(fit.sizes)
        y = np.array(fit.log_rs) - np.array(fit.log_expected)
        slope, icpt = np.polyfit(ln, y, 1)
        write_csv(out / f"rs_{name}.csv", ("block_size", "log_rs", "log_expected_rs"), zip(fit.sizes, fit.log_rs, fit.log_expected))
        plotting.loglog(out / f"rs_{name}.png", ln, y, slope * ln + icpt, "log block size", "log R/S - log E[R/S]", f"R/S fit ({name})")


def _print_table(report) -> None:
    print(f"{'parameter':<10}{'rate':>14}{'mortality':>14}")
    for name, a, b in report.table():
        right = "" if math.isnan(b) else f"{b:14.5g}"
        print(f"{name:<10}{a:14.5g}{right}")


def cmd_estimate(cfg) -> int:
    _, r, mu, report = _run_estimation(cfg)
    out = output_dir(cfg)
    _report_files(out, report, r, mu, cfg.estimate.hurst_source)
    _print_table(report)
    return EXIT_OK


def cmd_calibrate_p(cfg) -> int:
    series, r, mu, report = _run_estimation(cfg)
    out = output_dir(cfg)
    _report_files(out, report, r, mu, cfg.estimate.hurst_source)
    fitted = report.as_params(r0=float(series.rate[-1]), mu0=float(series.excess_mortality[-1]), rate_unit=cfg.model.rate_unit)
    cfgmod.save(replace(cfg, model=fitted), out / "fitted_config.toml")
    _print_table(report)
    return EXIT_OK


def cmd_price_zcb(cfg) -> int:
    out = output_dir(cfg)
    times = np.arange(1, 21) * 0.25
    phys = zcb_curve(cfg.model, None, times)
    pric = zcb_curve(cfg.model, cfg.premiums, times)
    write_csv(out / "zcb.csv", ("maturity", "physical", "pricing"), zip(times, phys, pric))
    plotting.lines(out / "zcb.png", times, {"physical": phys, "pricing": pric}, "maturity (years)", "P(0, T)")
    rows = []
    for sigma in ZCB_SIGMAS:
        curves = {}
        for h in ZCB_HURSTS:
            f = ZCB_FAMILY
            prices = [zcb_price_t0(f["m"], f["theta"], sigma, f["alpha"], h, f["r0"], t) for t in times]
            curves[f"H = {h:g}"] = prices
            rows.extend((sigma, h, t, v) for t, v in zip(times, prices))
        plotting.lines(out / f"zcb_hurst_sigma{sigma:g}.png", times, curves, "maturity (years)", "P(0, T)", f"sigma = {sigma:g}")
    write_csv(out / "zcb_hurst.csv", ("sigma", "hurst", "maturity", "price"), rows)
    print(f"P(0,{times[-1]:g}) physical {phys[-1]:.6f} pricing {pric[-1]:.6f}")
    return EXIT_OK


def _histogram(values, lo=0.0, width=1.0):
    top = max(lo + width, math.ceil(float(np.max(values)) / width) * width)
    edges = np.arange(lo, top + width / 2, width)
    return edges, np.histogram(values, bins=edges)[0]


def cmd_price_mls(cfg) -> int:
    out = output_dir(cfg)
    base = baseline_curve(cfg)
    a, e, info = attach_exhaust(cfg, base)
    spec = bond_spec(cfg).with_(attachment=a, exhaustion=e)
    s = cfg.simulation
    res = price_and_assess(cfg.model, cfg.premiums, spec, base.expected_rate, s.n_paths, s.seed, cfg.bond.coupon_rate, cfg.bond.disable_prf)
    par = fair_coupon_details(cfg.model, cfg.premiums, spec, None, s.n_paths, s.seed, disable_prf=True).coupon
    pay = res["payouts"]
    m = res["metrics"]
    summary = [
        ("attachment", a), ("exhaustion", e), ("attachment_source", info["source"]),
        ("fair_coupon", res["fair"].coupon), ("coupon_used", res["coupon"]), ("par_yield", par),
        ("pfl", m["pfl"]), ("cel", m["cel"]), ("el", m["el"]),
        ("pricing_pfl", res["fair"].metrics["pfl"]), ("pricing_el", res["fair"].metrics["el"]),
        ("synthetic_baseline", base.synthetic), ("n_paths", s.n_paths), ("seed", s.seed),
    ]
    write_csv(out / "mls_summary.csv", ("quantity", "value"), summary)
    keys = ("mean", "std", "var_0.05", "var_0.01", "cte_0.05", "cte_0.01")
    risk = [(name, *[risk_measures(v)[k] for k in keys]) for name, v in (("principal", pay.principal_pv), ("total", pay.total_pv))]
    write_csv(out / "payout_risk.csv", ("payout", *keys), risk)
    edges, c_p = _histogram(pay.principal_pv)
    edges_t, c_t = _histogram(pay.total_pv)
    write_csv(out / "payout_histogram_principal.csv", ("bin_left", "bin_right", "paths"), zip(edges[:-1], edges[1:], c_p))
    write_csv(out / "payout_histogram_total.csv", ("bin_left", "bin_right", "paths"), zip(edges_t[:-1], edges_t[1:], c_t))
    plotting.histogram(out / "payout_histogram_principal.png", edges, c_p, "present value of principal", zoom=(10, 60))
    plotting.histogram(out / "payout_histogram_total.png", edges_t, c_t, "present value of total payout", zoom=(20, 90))
    print(f"fair coupon {res['fair'].coupon:.4%}  PFL {m['pfl']:.2%}  CEL {m['cel']:.2%}  EL {m['el']:.2%}")
    return EXIT_OK


def cmd_calibrate_q(cfg) -> int:
    out = output_dir(cfg)
    base = baseline_curve(cfg)
    c, s = cfg.calibration, cfg.simulation
    grid = np.round(np.arange(int(round(c.gamma2_max / c.gamma2_step)) + 1) * c.gamma2_step, 6)
    res, search = calibrate_pricing(
        cfg.model, cfg.quote, bond_spec(cfg), base.expected_rate, s.n_paths, s.seed,
        c.attachment_rule, c.index_measure, None if c.calibrate_gamma1 else cfg.premiums.gamma1, grid, return_search=True,
    )
    rows = [("gamma1", res.gamma1), ("gamma2", res.gamma2), ("attachment", res.attachment), ("exhaustion", res.exhaustion)]
    rows += [(f"achieved_{k}", v) for k, v in res.achieved.items()]
    rows += [("note", n) for n in res.notes]
    write_csv(out / "calibration.csv", ("quantity", "value"), rows)
    write_csv(out / "gamma2_grid.csv", ("gamma2", "coupon"), zip(search.grid, search.coupons))
    plotting.lines(out / "gamma2_grid.png", search.grid, {"fair coupon": search.coupons, "observed": np.full(search.grid.size, cfg.quote.coupon_obs)}, "gamma2", "coupon")
    calibrated = replace(
        cfg,
        premiums=replace(cfg.premiums, gamma1=res.gamma1, gamma2=res.gamma2),
        bond=replace(cfg.bond, attachment=res.attachment, exhaustion=res.exhaustion),
    )
    cfgmod.save(calibrated, out / "calibrated_config.toml")
    print(f"gamma1 {res.gamma1:.4f}  gamma2 {res.gamma2:.3f}  a {res.attachment:.6g}  b {res.exhaustion:.6g}")
    for n in res.notes:
        print(f"note: {n}")
    return EXIT_OK


def scenario_inputs(sid: int, p, rp):
    if sid == 1:
        return p.with_(rho=0.0), rp
    if sid == 2:
        return p.with_(h1=0.5, h2=0.5), rp
    if sid == 3:
        return p.with_(sigma1=p.sigma1 * math.sqrt(2.0)), rp
    if sid == 4:
        return p.with_(sigma2=p.sigma2 * math.sqrt(2.0)), rp
    if sid == 5:
        return p, replace(rp, gamma1=1.5 * rp.gamma1)
    if sid == 6:
        return p, replace(rp, gamma2=1.5 * rp.gamma2)
    raise ValueError(f"unknown scenario {sid}")


def _scenario_row(name, res):
    total = risk_measures(res["payouts"].total_pv)
    m = res["metrics"]
    return (name, total["mean"], total["std"], total["var_0.05"], total["cte_0.05"], m["pfl"], m["cel"], m["el"], res["fair"].coupon)


def cmd_sensitivity(cfg) -> int:
    out = output_dir(cfg)
    base = baseline_curve(cfg)
    s = cfg.simulation
    a, e, _ = attach_exhaust(cfg, base)
    spec = bond_spec(cfg).with_(attachment=a, exhaustion=e)
    header = ("scenario", "mean", "std", "var_0.05", "cte_0.05", "pfl", "cel", "el", "coupon")
    rows = [_scenario_row("baseline", price_and_assess(cfg.model, cfg.premiums, spec, base.expected_rate, s.n_paths, s.seed))]
    path = out / "scenarios.csv"
    write_csv(path, header, rows)
    for sid in cfg.scenario_ids():
        p_s, rp_s = scenario_inputs(sid, cfg.model, cfg.premiums)
        rows.append(_scenario_row(f"scenario {sid}", price_and_assess(p_s, rp_s, spec, base.expected_rate, s.n_paths, s.seed)))
        write_csv(path, header, rows)  # flush what is done so far

    mat_rows = []
    for term in range(1, int(cfg.bond.term) + 1):
        res = price_and_assess(cfg.model, cfg.premiums, spec.with_(term=float(term)), base.expected_rate, s.n_paths, s.seed)
        m = res["metrics"]
        mat_rows.append((term, m["pfl"], m["cel"], m["el"], res["fair"].coupon))
    write_csv(out / "maturity.csv", ("term", "pfl", "cel", "el", "coupon"), mat_rows)

    level = float(np.mean(base.expected_rate)) + cfg.model.mu0
    a_mult = np.round(np.linspace(0.9, 1.1, 9) * a / level, 4)
    b_mult = np.round(np.linspace(0.9, 1.3, 9) * e / level, 4)
    q = to_pricing(cfg.model, cfg.premiums)
    paths = simulate_bond_paths(q, None, spec, s.n_paths, s.seed)
    surface = coupon_surface(q, paths, spec, a_mult * level, b_mult * level, base.expected_rate)
    write_csv(
        out / "coupon_heatmap.csv",
        ("attachment_multiple", "exhaustion_multiple", "coupon"),
        [(am, bm, surface[i, j]) for i, am in enumerate(a_mult) for j, bm in enumerate(b_mult)],
    )
    plotting.heatmap(out / "coupon_heatmap.png", b_mult, a_mult, surface, "exhaustion / issue-year level", "attachment / issue-year level", cbar="fair coupon")
    for row in rows:
        print(f"{row[0]:<12} coupon {row[-1]:.4%}  PFL {row[5]:.2%}  EL {row[7]:.2%}")
    return EXIT_OK


def cmd_simulate(cfg, measure: str = "pricing") -> int:
    out = output_dir(cfg)
    base = baseline_curve(cfg)
    s = cfg.simulation
    spec = bond_spec(cfg)
    rp = cfg.premiums if measure == "pricing" else None
    paths = simulate_bivariate(cfg.model, rp, s.n_paths, spec.n_weeks, spec.term, s.seed)
    mort = paths.mortality_paths + baseline_weeks(base.expected_rate, paths.n_steps)
    rate = paths.rate_paths
    weeks = np.arange(paths.n_steps + 1)
    stats = []
    for x in (mort, rate):
        stats.extend([x.mean(axis=0), np.quantile(x, 0.025, axis=0), np.quantile(x, 0.975, axis=0)])
    write_csv(
        out / "simulation_summary.csv",
        ("week", "mortality_mean", "mortality_lo", "mortality_hi", "rate_mean", "rate_lo", "rate_hi"),
        zip(weeks, *stats),
    )
    k = min(3, s.n_paths)
    write_csv(
        out / "simulation_samples.csv",
        ("week", *[f"mortality_{i}" for i in range(k)], *[f"rate_{i}" for i in range(k)]),
        zip(weeks, *mort[:k], *rate[:k]),
    )
    plotting.fan(out / "simulation_mortality.png", weeks, *stats[:3], mort[:k], "week", "weekly mortality rate", f"{measure} measure")
    plotting.fan(out / "simulation_rate.png", weeks, *stats[3:], rate[:k], "week", "short rate", f"{measure} measure")
    print(f"{s.n_paths} paths x {paths.n_steps} weeks under the {measure} measure")
    return EXIT_OK


COMMAND_FUNCS = {
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "price-zcb": cmd_price_zcb,
    "price-mls": cmd_price_mls,
    "calibrate-p": cmd_calibrate_p,
    "calibrate-q": cmd_calibrate_q,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mortfrac", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=cfgmod.COMMANDS)
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--stmf", help="STMF weekly mortality CSV")
    parser.add_argument("--fred", help="FRED weekly T-bill CSV")
    parser.add_argument("--aligned", help="aligned series CSV written by ingest")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--out")
    parser.add_argument("--scenario", help="1..6, a comma list, or all")
    parser.add_argument("--rate-unit", choices=("percent", "decimal"))
    parser.add_argument("--measure", choices=("pricing", "physical"), default="pricing", help="measure for simulate")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    for item in args.set:
        cfg = cfgmod.from_dict(cfgmod.parse_assignment(item), cfg)
    io = {k: getattr(args, k) for k in ("stmf", "fred", "aligned", "out") if getattr(args, k) is not None}
    sim = {}
    if args.seed is not None:
        sim["seed"] = args.seed
    if args.paths is not None:
        sim["n_paths"] = args.paths
    layered = {"io": io, "simulation": sim}
    if args.rate_unit:
        layered["model"] = {"rate_unit": args.rate_unit}
    if args.scenario:
        layered["scenario"] = args.scenario
    cfg = cfgmod.from_dict(layered, cfg)
    cfg.validate(args.command)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        fn = COMMAND_FUNCS[args.command]
        return fn(cfg, args.measure) if args.command == "simulate" else fn(cfg)
    except (cfgmod.ConfigError, data.FormatError, data.CoverageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (estimate.EstimationError, NoBracketError, InfeasibleError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ArithmeticError, InsufficientDataError, MemoryError, ValueError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
