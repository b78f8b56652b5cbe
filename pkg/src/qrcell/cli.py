"""Command-line front end.

Every command builds a list of table rows from direct calls into the library
and writes them as CSV or JSON.  Output depends only on the configuration and
the seed, so repeated runs produce identical files.

Exit codes: 0 success, 1 configuration error, 2 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import fit, noise, protocol, qcore, rates, tomo
from .config import ConfigError, RunConfig
from .entangle import BellOutcome, atom_photon_state, photon_target, swap

COMMANDS = ("simulate", "scan-nmax", "scan-transmission", "thresholds", "fit",
            "tomography", "budget")


class NonConvergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# table builders

def simulate(cfg: RunConfig) -> tuple[list[dict], dict]:
    params = cfg.protocol_params()
    mc = protocol.monte_carlo(params, cfg.reps)
    row = {
        "n_reps": mc.n_reps,
        "successes": mc.successes,
        "pair_probability": mc.pair_probability,
        "pair_probability_stderr": mc.pair_probability_stderr,
        "pair_probability_model": rates.p_pair_asyn(params.p1, params.p2, params.n_max),
        "mean_repetition_time_us": mc.mean_repetition_time,
        "mean_repetition_time_model_us": protocol.expected_repetition_time(params),
        "rate": mc.rate,
        "rate_model": protocol.expected_rate(params),
        "mean_atom1_fidelity": mc.mean_atom1_fidelity,
    }
    for o in BellOutcome:
        row[f"count_{o.name}"] = mc.outcome_counts[o]
        f = mc.outcome_fidelities[o]
        row[f"fidelity_{o.name}"] = math.nan if f is None else f
    meta = {"trials_histogram": mc.trials_histogram.tolist(),
            "trial_weights": noise.trial_weights(params.p2_effective, params.n_max).tolist()
            if params.p2_effective > 0 else None}
    return [row], meta


def _noise_params(cfg: RunConfig, **kw) -> noise.NoiseModelParams:
    n = cfg.noise
    base = dict(f10=n.f10, f20=n.f20, p_sia_false=n.p_sia_false, eta_850=n.eta_850, p=n.p)
    base.update(kw)
    try:
        return noise.NoiseModelParams(**base)
    except ValueError as e:
        raise ConfigError(f"noise: {e}") from e


def scan_nmax(cfg: RunConfig) -> tuple[list[dict], dict]:
    rows = []
    for n in cfg.scan_nmax.n_values:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("scan_nmax.n_values must be positive integers")
        row = {"n_max": n, "F_atom1": noise.avg_atom_fidelity(_noise_params(cfg, n=n))}
        for name, o in cfg.noise.outcomes.items():
            row[f"F_pp_{name}"] = noise.avg_pp_fidelity(_noise_params(cfg, n=n, **o))
        params = cfg.protocol_params(n_max=n)
        row["p_pair"] = rates.p_pair_asyn(params.p1, params.p2, n)
        mc = protocol.monte_carlo(params, cfg.reps)
        row["p_pair_mc"] = mc.pair_probability
        row["p_pair_mc_stderr"] = mc.pair_probability_stderr
        rows.append(row)
    return rows, {}


def scan_transmission(cfg: RunConfig) -> tuple[list[dict], dict]:
    params = cfg.protocol_params()
    sec = cfg.scan_transmission
    channel = _channel(cfg)
    rows = []
    for p_t in sec.p_t:
        if not 0.0 < p_t <= 1.0:
            raise ConfigError(f"scan_transmission.p_t: transmission {p_t!r} outside (0, 1]")
        p1, p2 = params.p1 * p_t, params.p2 * p_t
        rows.append({
            "p_t": p_t,
            "length_km": rates.length_for_transmission(p_t, channel),
            "p_pair_asyn": rates.p_pair_asyn(p1, p2, sec.n_max),
            "p_pair_syn": rates.p_pair_syn(p1, p2),
            "p_pair_limit": rates.p_pair_limit(p1),
        })
    return rows, {"n_max": sec.n_max}


def _channel(cfg: RunConfig) -> rates.ChannelModel:
    try:
        return rates.ChannelModel(cfg.rates.attenuation, cfg.rates.conversion_efficiency)
    except ValueError as e:
        raise ConfigError(f"rates: {e}") from e


def _scenario(cfg: RunConfig, p: float) -> rates.RateScenario:
    r = cfg.rates
    try:
        return rates.RateScenario(p=p, p_t=r.p_t, one_way_length=r.one_way_length_km * 1e3,
                                  tau0=r.tau0, fiber_speed=r.fiber_speed)
    except ValueError as e:
        raise ConfigError(f"rates: {e}") from e


def thresholds(cfg: RunConfig) -> tuple[list[dict], dict]:
    rows = []
    target = cfg.thresholds.target
    n = cfg.noise

    def fid_row(scenario, quantity, params, model):
        rows.append({
            "scenario": scenario, "quantity": quantity, "p": params.p,
            "threshold": noise.fidelity_threshold(params, target, model),
            "limit": noise.limit_fidelity(params, model),
        })

    for label, p in (("base", n.p), ("p_alternative", n.p_alternative)):
        fid_row(label, "fidelity_atom1", _noise_params(cfg, p=p), "atom")
        for name, o in n.outcomes.items():
            fid_row(label, f"fidelity_pp_{name}", _noise_params(cfg, p=p, **o), "pp")
    sat = _noise_params(cfg, f10=1.0, f20=1.0, f_ms=1.0, p=n.p * cfg.rates.upgrade_factor,
                        p_sia_false=cfg.thresholds.saturating_p_sia_false)
    fid_row("saturating", "fidelity_pp_ideal", sat, "pp")

    r = cfg.rates
    for label, p in (("base", r.p), ("upgraded", r.p * r.upgrade_factor), ("tiny_p", r.tiny_p)):
        s = _scenario(cfg, p)
        for kind in ("fully_asyn", "semi_asyn"):
            nmin = rates.superiority_threshold(s, kind)
            at = s.with_n_max(nmin if nmin is not None else rates.THRESHOLD_CAP)
            rows.append({"scenario": label, "quantity": f"rate_{kind}", "p": p,
                         "threshold": nmin, "limit": rates.rate_ratio(at, kind)})
    return rows, {"target": target,
                  "limit_meaning": "fidelity rows: N->infinity fidelity; "
                                   "rate rows: rate ratio to direct at the threshold or cap"}


def run_fit(cfg: RunConfig) -> tuple[list[dict], dict]:
    sec = cfg.fit
    n = cfg.noise
    if sec.model not in ("atom", "pp"):
        raise ConfigError(f"fit.model must be 'atom' or 'pp', not {sec.model!r}")
    synthetic = sec.curve is None
    if synthetic:
        rng = np.random.default_rng(cfg.seed)
        if sec.model == "atom":
            model, theta = fit.atom_model(n.p, n.eta_850), list(fit.ATOM_REFERENCE.values())
        else:
            if sec.outcome not in fit.PP_REFERENCE:
                raise ConfigError(f"fit.outcome: unknown outcome {sec.outcome!r}")
            ref = fit.PP_REFERENCE[sec.outcome]
            model, theta = fit.pp_model(n.f10, n.f20, n.p, n.eta_850), [ref["f_ms"], ref["p_sia_false"]]
        curve = fit.synthetic_curve(model, theta, sec.n_values, sec.synthetic_sigma, rng)
    else:
        try:
            curve = fit.FidelityCurve.read_csv(cfg.resolve(sec.curve))
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"fit.curve: {e}") from e
    if sec.model == "atom":
        res = fit.fit_atom_model(curve, n.p, n.eta_850)
    else:
        res = fit.fit_pp_model(curve, n.f10, n.f20, n.p, n.eta_850)
    rows = [{"parameter": k, "value": float(v), "error": float(e)}
            for k, v, e in zip(res.names, res.values, res.errors)]
    rows += [{"parameter": k, "value": v, "error": e} for k, (v, e) in res.derived.items()]
    meta = {"model": sec.model, "synthetic": synthetic, "curve": curve.points(),
            **{k: v for k, v in res.to_dict().items() if k not in ("parameters", "derived")}}
    if not res.converged:
        raise NonConvergence(res.message, rows, meta)
    return rows, meta


def _tomography_state(cfg: RunConfig):
    sec = cfg.tomography
    if sec.state in ("atom1", "atom2"):
        atom = 1 if sec.state == "atom1" else 2
        try:
            rho = noise.depolarized_ap_state(sec.fidelity, atom=atom)
        except ValueError as e:
            raise ConfigError(f"tomography.fidelity: {e}") from e
        return rho, atom_photon_state(True, 0.0, atom=atom)
    if sec.state == "photon_pair":
        if sec.outcome not in BellOutcome.__members__:
            raise ConfigError(f"tomography.outcome: unknown outcome {sec.outcome!r}")
        o = BellOutcome[sec.outcome]
        p = cfg.noise.outcomes.get(sec.outcome, {"f_ms": 1.0})
        joint = qcore.tensor(noise.depolarized_ap_state(cfg.noise.f10, atom=1),
                             noise.depolarized_ap_state(cfg.noise.f20, atom=2))
        rho, _ = swap(joint, o, f_ms=p["f_ms"])
        return rho, photon_target(o)
    raise ConfigError(f"tomography.state: unknown state {sec.state!r}")


def tomography(cfg: RunConfig, counts_out: Path | None = None) -> tuple[list[dict], dict]:
    sec = cfg.tomography
    rng = np.random.default_rng(cfg.seed)
    rho, target = _tomography_state(cfg)
    if sec.counts is None:
        settings = tomo.complete_settings(len(rho.register), sec.shots)
        data = tomo.simulate_counts(rho, settings, rng)
    else:
        try:
            data = tomo.read_counts_csv(cfg.resolve(sec.counts), rho.register, sec.shots is None)
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"tomography.counts: {e}") from e
    if counts_out is not None:
        tomo.write_counts_csv(data, counts_out)
    n_boot = sec.bootstrap if any(s.shots for s in data.settings) else 0
    res = tomo.reconstruct(data, target, n_boot, rng)
    row = {"state": sec.state, "fidelity": res.fidelity, "fidelity_err": res.fidelity_err,
           "purity": res.purity, "purity_err": res.purity_err,
           "fidelity_linear": res.fidelity_linear,
           "projection_distance": res.projection_distance, "n_bootstrap": res.n_bootstrap,
           "fidelity_true": qcore.fidelity_with_pure(rho, target)}
    m = res.rho.matrix
    meta = {"register": [q.value for q in res.rho.register],
            "rho_real": np.real(m).tolist(), "rho_imag": np.imag(m).tolist()}
    return [row], meta


def budget(cfg: RunConfig) -> tuple[list[dict], dict]:
    rows = []
    for label, b in (("atom1", protocol.ATOM1_BUDGET), ("atom2", protocol.ATOM2_BUDGET)):
        rows.append({"atom": label, **b.factors(),
                     "product": protocol.detection_efficiency(b)})
    return rows, {"extinction_ratio": protocol.extinction_ratio(),
                  "extinction_free": protocol.EXTINCTION_FREE,
                  "extinction_fiber": protocol.EXTINCTION_FIBER}


BUILDERS = {
    "simulate": simulate,
    "scan-nmax": scan_nmax,
    "scan-transmission": scan_transmission,
    "thresholds": thresholds,
    "fit": run_fit,
    "tomography": tomography,
    "budget": budget,
}


# ---------------------------------------------------------------------------
# output

def _cell(v):
    if v is None:
        return "never"
    if isinstance(v, float):
        return repr(v)
    return v


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def render(command: str, rows: list[dict], meta: dict, fmt: str) -> str:
    if fmt == "json":
        rows = [{k: ("never" if v is None and k == "threshold" else v) for k, v in r.items()}
                for r in rows]
        doc = {"command": command, "rows": rows, "meta": meta}
        return json.dumps(_json_value(doc), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    columns = list(dict.fromkeys(k for r in rows for k in r))
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k, "")) for k in columns})
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qrcell", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (defaults built in)")
    ap.add_argument("--out", help="output file (stdout when omitted)")
    ap.add_argument("--seed", type=int, help=f"RNG seed (default {cfgmod.DEFAULT_SEED})")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--reps", type=int, help="Monte Carlo repetitions")
    ap.add_argument("--plot", action="store_true",
                    help="also write a PNG figure next to --out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.reps is not None:
            if args.reps < 1:
                raise ConfigError("--reps must be >= 1")
            cfg.reps = args.reps
        if args.plot and not args.out:
            raise ConfigError("--plot needs --out")
        out = Path(args.out) if args.out else None
        counts_out = out.with_name(out.stem + "_counts.csv") \
            if out is not None and args.command == "tomography" else None
        status = 0
        try:
            if counts_out is not None:
                rows, meta = tomography(cfg, counts_out)
            else:
                rows, meta = BUILDERS[args.command](cfg)
        except NonConvergence as e:
            message, rows, meta = e.args
            print(f"qrcell: fit did not converge: {message}", file=sys.stderr)
            status = 2
    except ConfigError as e:
        print(f"qrcell: configuration error: {e}", file=sys.stderr)
        return 1
    text = render(args.command, rows, meta, args.format)
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        if args.plot:
            from .plotting import plot_command
            plot_command(args.command, rows, meta, out.with_suffix(".png"))
    return status


if __name__ == "__main__":
    sys.exit(main())
