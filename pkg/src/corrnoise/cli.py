"""Command-line interface: simulate, fit, diagnose, vir and experiment."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments, workflow
from .infer import optimize_map, sample_posterior
from .likelihood import ObservationModel
from .noise import NoiseModel, simulate_noise
from .odes import VoltageProtocol, constant_model, demo_step_protocol, herg_model, \
    integrate, logistic_model
from .series import TimeSeries


def _parse_params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        name, _, value = pair.partition("=")
        if not _:
            raise SystemExit(f"--param expects name=value, got {pair!r}")
        out[name] = float(value)
    return out


def _noise_from_args(args) -> NoiseModel:
    kind = args.noise
    if kind == "iid":
        return NoiseModel.iid(args.sigma)
    if kind == "ar1":
        return NoiseModel.ar1(args.sigma, args.rho)
    if kind == "ma1":
        return NoiseModel.ma1(args.sigma, args.phi)
    if kind == "arma":
        rho = [float(v) for v in (args.rho_list or "").split(",") if v] \
            if args.rho_list else ([args.rho] if args.rho else [])
        phi = [float(v) for v in (args.phi_list or "").split(",") if v] \
            if args.phi_list else ([args.phi] if args.phi else [])
        return NoiseModel.arma(args.sigma, rho, phi)
    raise SystemExit(f"unknown noise kind {kind!r}")


def _model_from_args(args, params: dict):
    name = args.model
    if name == "constant":
        return constant_model(params.get("mu", 0.0))
    if name == "logistic":
        return logistic_model(params.get("r", 0.5), params.get("kappa", 50.0),
                              params.get("x0", 1.0))
    if name == "herg":
        protocol = (VoltageProtocol.from_csv(args.protocol)
                    if getattr(args, "protocol", None) else demo_step_protocol())
        p = [params.get(f"p{i}", None) for i in range(1, 9)]
        if any(v is None for v in p) or "g_kr" not in params:
            raise SystemExit("herg model needs --param g_kr=.. and p1..p8")
        return herg_model(params["g_kr"], p, protocol,
                          e_k_mv=getattr(args, "ek", -88.0))
    raise SystemExit(f"unknown model {name!r}")


def _cmd_simulate(args) -> int:
    noise = _noise_from_args(args)
    if args.model is None:
        series = simulate_noise(noise, args.n, args.seed)
        series = TimeSeries(args.t0, args.dt, series.values)
    else:
        params = _parse_params(args.param)
        model = _model_from_args(args, params)
        theta = np.array([params[n] for n in model.param_names])
        grid = TimeSeries(args.t0, args.dt, np.zeros(args.n))
        series = experiments.synthetic_data(model, theta, grid, noise, args.seed)
    series.to_csv(args.out)
    print(f"wrote {args.n} observations to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    data = TimeSeries.from_csv(args.data)
    params = _parse_params(args.param)
    model = _model_from_args(args, params)
    noise = _noise_from_args(args)
    fixed = _parse_params(args.fix)
    priors = experiments.default_priors(args.model, noise.kind)
    priors = {n: p for n, p in priors.items() if n not in fixed}
    obs = ObservationModel(model, noise)
    os.makedirs(args.out, exist_ok=True)
    if args.method == "map":
        fit = optimize_map(obs, data, priors, seed=args.seed,
                           restarts=args.restarts, fixed=fixed)
    else:
        init = None
        if args.init_map:
            init = optimize_map(obs, data, priors, seed=args.seed,
                                restarts=args.restarts, fixed=fixed).point
        fit = sample_posterior(obs, data, priors, chains=args.chains,
                               iterations=args.iterations, warmup=args.warmup,
                               seed=args.seed, fixed=fixed, init=init)
        fit.draws_to_csv(os.path.join(args.out, "draws.csv"))
    fit.to_json(os.path.join(args.out, "fit.json"))
    print(json.dumps(fit.point, indent=2))
    return 0


def _cmd_diagnose(args) -> int:
    data = TimeSeries.from_csv(args.data)
    params = _parse_params(args.param)
    model = _model_from_args(args, params)
    priors = experiments.default_priors(args.model, "iid")
    obs = ObservationModel(model, NoiseModel.iid(max(float(np.std(data.values)), 1e-6)))
    os.makedirs(args.out, exist_ok=True)
    fit = optimize_map(obs, data, priors, seed=args.seed, restarts=args.restarts)
    residuals = workflow.compute_residuals(data, fit, model)
    acf_report = workflow.acf_diagnostic(residuals, max_lag=args.max_lag)
    acf_report.to_csv(os.path.join(args.out, "acf.csv"))
    acf_report.to_json(os.path.join(args.out, "acf.json"))
    table = workflow.arma_grid_search(residuals, args.p_max, args.q_max)
    table.to_csv(os.path.join(args.out, "aic.csv"))
    table.to_json(os.path.join(args.out, "aic.json"))
    rec = workflow.recommend(table, parsimony_threshold=args.parsimony)
    payload = {
        "map_point": fit.point,
        "substantial_autocorrelation": acf_report.substantial_autocorrelation,
        "recommended": {"p": rec.p, "q": rec.q, "kind": rec.noise.kind,
                        "sigma": rec.noise.sigma, "rho": rec.noise.rho.tolist(),
                        "phi": rec.noise.phi.tolist(),
                        "identifiability_risk": rec.identifiability_risk},
        "note": rec.note,
    }
    with open(os.path.join(args.out, "recommendation.json"), "w",
              encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_vir(args) -> int:
    if args.rho is not None and args.phi is not None and args.formula == "arma11":
        from .fisher import vir_arma11
        print(vir_arma11(args.rho, args.phi))
        return 0
    if args.rho is not None and args.formula == "ar1":
        from .fisher import vir_ar1
        print(vir_ar1(args.rho))
        return 0
    if args.phi is not None and args.formula == "ma1":
        from .fisher import vir_ma1
        print(vir_ma1(args.phi))
        return 0
    experiments.vir_surface(args.formula, path=args.out)
    print(f"wrote {args.formula} VIR table to {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        import dataclasses
        config = experiments.ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            config = dataclasses.replace(config, master_seed=args.seed)
        result = experiments.run_experiment(config, threads=args.threads)
        experiments.write_outputs(result, args.out)
        print(f"{config.name}: {len(result.records)} replicates, "
              f"attrition {result.attrition()}")
        return 0
    kwargs = {"out_dir": args.out, "threads": args.threads,
              "paper_scale": args.paper_scale}
    if args.seed is not None:
        kwargs["master_seed"] = args.seed
    if args.study == "logistic":
        result = experiments.logistic_study(**kwargs)
    elif args.study == "ma1":
        result = experiments.ma1_study(**kwargs)
    elif args.study == "arma11":
        result = experiments.arma11_study(**kwargs)
    elif args.study == "herg-recovery":
        kwargs.pop("threads")
        kwargs.pop("paper_scale")
        report = experiments.herg_recovery_study(**kwargs)
        print(f"herg recovery: {report['n_ok']}/{report['n_seeds']} seeds ok")
        return 0
    else:
        raise SystemExit(f"unknown study {args.study!r}")
    print(f"{result.config.name}: {len(result.records)} replicates, "
          f"attrition {result.attrition()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrnoise",
        description="ODE parameter inference under autocorrelated measurement noise")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_noise_args(p):
        p.add_argument("--noise", default="iid", choices=["iid", "ar1", "ma1", "arma"])
        p.add_argument("--sigma", type=float, default=1.0)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--phi", type=float, default=None)
        p.add_argument("--rho-list", dest="rho_list", default=None,
                       help="comma-separated AR coefficients for --noise arma")
        p.add_argument("--phi-list", dest="phi_list", default=None,
                       help="comma-separated MA coefficients for --noise arma")

    def add_model_args(p, required=False):
        p.add_argument("--model", default=None if not required else "constant",
                       choices=["constant", "logistic", "herg"])
        p.add_argument("--param", action="append", default=[],
                       help="model parameter, name=value (repeatable)")
        p.add_argument("--protocol", default=None,
                       help="voltage protocol CSV for the herg model")
        p.add_argument("--ek", type=float, default=-88.0,
                       help="potassium reversal potential (mV)")

    p = sub.add_parser("simulate", help="simulate noise or model+noise data")
    add_noise_args(p)
    add_model_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit an observation model to data")
    add_noise_args(p)
    add_model_args(p, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="map", choices=["map", "mcmc"])
    p.add_argument("--fix", action="append", default=[],
                   help="fix a parameter, name=value (repeatable)")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--init-map", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("diagnose", help="IID fit, residual ACF, ARMA grid and "
                                        "noise recommendation")
    add_model_args(p, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--p-max", type=int, default=2)
    p.add_argument("--q-max", type=int, default=2)
    p.add_argument("--parsimony", type=float, default=2.0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("vir", help="closed-form variance inflation ratios")
    p.add_argument("--formula", required=True, choices=["ar1", "ma1", "arma11"])
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--out", default="vir.csv")
    p.set_defaults(func=_cmd_vir)

    p = sub.add_parser("experiment", help="run a replicate study")
    p.add_argument("--study", default=None,
                   choices=["logistic", "ma1", "arma11", "herg-recovery"])
    p.add_argument("--config", default=None, help="ExperimentConfig JSON file")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "experiment" and not (args.study or args.config):
        parser.error("experiment needs --study or --config")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
