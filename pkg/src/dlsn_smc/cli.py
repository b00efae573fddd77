"""Command-line front end: ``dlsn-smc {simulate,fit,evaluate,benchmark,ingest}``.

Settings are resolved as built-in default < config file < command-line flag.
The config file is INI with sections ``[model]``, ``[simulate]``, ``[girf]``,
``[estimation]``, ``[evaluate]``, ``[benchmark]`` and ``[ingest]``; keys use
the flag names with dashes replaced by underscores.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataio, estimation, kernels, metrics
from . import model as dlsn
from .girf import GirfConfig, run_girf
from .smc import FilterCollapse

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_COLLAPSE = 4

PRESETS = {
    "s1": dict(N=30, T=25, alpha=0.75, sigma=0.4, phi=0.9),
    "scal-t": dict(N=20, T=1000, alpha=1.25, sigma=0.2, phi=0.9),
    "scal-n": dict(N=[50, 75, 100], T=25, alpha=1.0, sigma=0.2, phi=0.9),
}


class Settings:
    """Layered lookup over parsed flags and an INI mapping."""

    def __init__(self, args, config: dict):
        self.args = args
        self.config = config
        self.used: dict = {}

    def get(self, section, key, cast=str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key.lower() in self.config.get(section, {}):
            raw = self.config[section][key.lower()]
            try:
                value = _cast(raw, cast)
            except ValueError:
                raise dataio.ConfigError(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}") from None
        else:
            value = default
        self.used.setdefault(section, {})[key] = value if not isinstance(value, Path) else str(value)
        return value


def _cast(raw, cast):
    if cast is bool:
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    return cast(raw)


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


# -- commands ----------------------------------------------------------------


def _model_params(st: Settings, defaults: dict) -> dlsn.StaticParams:
    return dlsn.StaticParams(
        st.get("model", "alpha", float, defaults.get("alpha", 0.75)),
        st.get("model", "sigma", float, defaults.get("sigma", 0.4)),
        st.get("model", "phi", float, defaults.get("phi", 0.9)),
        link=st.get("model", "link", str, "euclidean"),
        likelihood=st.get("model", "likelihood", str, "bernoulli"),
    )


def cmd_simulate(st: Settings, out: Path, seed: int):
    preset = st.get("simulate", "preset", str, "s1").lower()
    if preset not in PRESETS:
        raise dataio.ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset]
    params = _model_params(st, base)
    scenario = st.get("simulate", "scenario", str, "S1")
    T = st.get("simulate", "T", int, base["T"])
    d = st.get("model", "d", int, 2)
    sizes = base["N"] if isinstance(base["N"], list) else [base["N"]]
    n_flag = st.get("simulate", "N", int, None)
    if n_flag is not None:
        sizes = [n_flag]
    schedule = st.get("simulate", "alpha_schedule", str, None)
    rng = np.random.default_rng(seed)
    outputs = []
    for N in sizes:
        spec = dlsn.ScenarioSpec(
            scenario, N=N, T=T, d=d, params=params,
            q=st.get("simulate", "q", float, 0.25),
            alpha_schedule=None if schedule is None else [float(v) for v in schedule.replace(",", " ").split()],
        )
        obs, latent = dlsn.simulate_scenario(spec, rng)
        target = out if len(sizes) == 1 else dataio.ensure_dir(out / f"N{N}")
        dataio.save_series(target / "observations.csv", obs)
        dataio.save_latents(target / "latent.csv", latent)
        dataio.save_probabilities(target / "probabilities.csv", dlsn.scenario_means(spec, latent))
        outputs += [str(target / n) for n in ("observations.csv", "latent.csv", "probabilities.csv")]
    return outputs, {"params": dataio.params_to_dict(params)}


def _load_observations(st: Settings):
    path = st.get("data", "data", str, None)
    if path is None:
        raise dataio.ConfigError("no observation file given (--data)")
    if not Path(path).exists():
        raise dataio.ConfigError(f"observation file {path} does not exist")
    return path, dataio.load_series(path)


def _girf_cfg(st: Settings, N: int, default_factor=1.5) -> GirfConfig:
    S = st.get("girf", "S", int, None)
    if S is None:
        S = max(1, math.ceil(st.get("girf", "s_factor", float, default_factor) * N))
    return GirfConfig(
        S=S, B=st.get("girf", "B", int, 1), M=st.get("girf", "M", int, 5000),
        guide=st.get("girf", "guide", str, "auto"), guide_mean=st.get("girf", "guide_mean", str, "exact"),
    )


def cmd_fit(st: Settings, out: Path, seed: int):
    data_path, obs = _load_observations(st)
    mode = st.get("estimation", "mode", str, "offline")
    if mode not in ("online", "offline"):
        raise dataio.ConfigError(f"mode must be online or offline, got {mode!r}")
    holdout = st.get("estimation", "holdout_last", bool, False)
    train = obs[:-1] if holdout else obs
    d = st.get("model", "d", int, 2)
    link = st.get("model", "link", str, "euclidean")
    lik = st.get("model", "likelihood", str, "bernoulli")
    dlsn.check_observation(train[0], dlsn.Likelihood(lik))
    rng = np.random.default_rng(seed)
    init_text = st.get("estimation", "init", str, None)
    if init_text:
        a, s, p = (float(v) for v in init_text.replace(",", " ").split())
        init = dlsn.StaticParams(a, s, p, link=link, likelihood=lik)
    else:
        init = estimation.initialize_params(train, d=d, rng=rng, link=dlsn.Link(link),
                                            likelihood=dlsn.Likelihood(lik))
    cfg = _girf_cfg(st, train.shape[1])
    schedule = estimation.AscentSchedule(a=st.get("estimation", "step_exponent", float, 0.7),
                                         c=st.get("estimation", "step_scale", float, None))
    lam = st.get("estimation", "lam", float, 0.95)
    if mode == "offline":
        n_iters = st.get("estimation", "n_iters", int, 20)
        fit = estimation.fit_offline(train, init, cfg, schedule, n_iters, rng, lam=lam, d=d,
                                     keep_last_snapshots=True)
        dataio.save_params_trace(out / "params.csv", fit.params, fit.log_likelihoods, "iteration")
        snap_params = [fit.params[-2] if len(fit.params) > 1 else init] * len(fit.snapshots)
        final_trace = fit.traces[-1]
        final = fit.final
    else:
        fit = estimation.fit_online(train, init, cfg, schedule, rng, lam=lam, d=d)
        dataio.save_params_trace(out / "params.csv", fit.params, fit.log_likelihoods, "time", start=0)
        snap_params = list(fit.params)
        final_trace = fit.traces[-1]
        final = fit.final
    dataio.save_filter_trace(out / "filter_trace.csv", final_trace)
    probs = metrics.posterior_mean_probabilities(snap_params, fit.snapshots)
    dataio.save_probabilities(out / "probabilities.csv", probs)
    outputs = [str(out / n) for n in ("params.csv", "filter_trace.csv", "probabilities.csv")]
    if holdout:
        pred = metrics.predict_final(fit.snapshots[-1], final, rng)
        dataio.save_probabilities(out / "predictive.csv", pred[None])
        outputs.append(str(out / "predictive.csv"))
    return outputs, {
        "params": dataio.params_to_dict(final),
        "init": dataio.params_to_dict(init),
        "log_lik_estimate": final_trace.log_likelihood,
        "inputs": {data_path: dataio.file_digest(data_path)},
    }


def cmd_evaluate(st: Settings, out: Path, seed: int):
    data_path, obs = _load_observations(st)
    wanted = (st.get("evaluate", "metrics", str, "auto") or "auto").replace(",", " ").split()
    est_path = st.get("evaluate", "estimates", str, None)
    truth_path = st.get("evaluate", "truth", str, None)
    pred_path = st.get("evaluate", "predictive", str, None)
    trace_path = st.get("evaluate", "filter_trace", str, None)
    if "mse" in wanted and truth_path is None:
        raise dataio.ConfigError("MSE in probability needs simulation truth (--truth)")
    outputs = []
    summary = {}
    est = dataio.load_probabilities(est_path) if est_path else None
    auto = "auto" in wanted
    if est is not None and (auto or "roc" in wanted):
        n_t = min(len(est), len(obs))
        rows, auc = _roc_rows(obs[:n_t], est[:n_t], "fitted")
        summary["auc_fitted"] = auc
        if truth_path:
            truth = dataio.load_probabilities(truth_path)
            more, auc_t = _roc_rows(obs[:n_t], truth[:n_t], "truth")
            rows += more
            summary["auc_truth"] = auc_t
        dataio.write_table(out / "roc.csv", ["curve", "fpr", "tpr", "threshold"], rows)
        outputs.append(str(out / "roc.csv"))
    if est is not None and truth_path and (auto or "mse" in wanted):
        truth = dataio.load_probabilities(truth_path)
        n_t = min(len(est), len(truth))
        mse = metrics.mse_series(truth[:n_t], est[:n_t])
        ess = {}
        if trace_path:
            tr = dataio.load_filter_trace(trace_path)
            ess = {r.t + 1: r.ess for r in tr.records if r.s == max(x.s for x in tr.records)}
        dataio.write_table(out / "mse.csv", ["t", "ess", "mse_prob"],
                           ([t + 1, ess.get(t + 1, float("nan")), mse[t]] for t in range(n_t)))
        summary["mean_mse_prob"] = float(mse.mean())
        outputs.append(str(out / "mse.csv"))
    if pred_path and (auto or "aae" in wanted):
        pred = dataio.load_probabilities(pred_path)[-1]
        lik = dlsn.Likelihood(st.get("model", "likelihood", str, "bernoulli"))
        R = st.get("evaluate", "r_rep", int, 5000)
        aae = metrics.average_absolute_error(obs[-1], pred, R, np.random.default_rng(seed), lik)
        iu, ju = np.triu_indices(obs.shape[1], k=1)
        dataio.write_table(out / "aae.csv", ["i", "j", "y", "predictive", "aae"],
                           zip(iu, ju, obs[-1][iu, ju], pred[iu, ju], aae))
        summary["mean_aae"] = float(aae.mean())
        outputs.append(str(out / "aae.csv"))
    if not outputs:
        raise dataio.ConfigError("nothing to evaluate: give --estimates and/or --predictive")
    return outputs, {"summary": summary, "inputs": {data_path: dataio.file_digest(data_path)}}


def _roc_rows(obs, probs, name):
    labels = metrics.upper_pairs(obs).ravel() > 0
    scores = metrics.upper_pairs(probs).ravel()
    fpr, tpr, thr, auc = metrics.roc_curve(labels, scores)
    return [[name, f, t, h] for f, t, h in zip(fpr, tpr, thr)], auc


def time_girf(params, N, T, S, M, seed, d=2, repeats=1):
    """Wall-clock of one GIRF pass on simulated data; returns ``(seconds, median ESS/M)``."""
    rng = np.random.default_rng(seed)
    obs, _ = dlsn.simulate_scenario(dlsn.ScenarioSpec("S1", N=N, T=T, d=d, params=params), rng)
    best = math.inf
    ess = float("nan")
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = run_girf(params, obs, GirfConfig(S=S, M=M), rng, keep_snapshots=False, d=d)
        best = min(best, time.perf_counter() - t0)
        ess = float(np.median(res.trace.ess()) / M)
    return best, ess


def cmd_benchmark(st: Settings, out: Path, seed: int):
    sweep = st.get("benchmark", "sweep", str, "N")
    M = st.get("girf", "M", int, 500)
    repeats = st.get("benchmark", "repeats", int, 1)
    rows = []
    if sweep == "N":
        params = dlsn.StaticParams(1.0, 0.2, 0.9)
        T = st.get("simulate", "T", int, 25)
        for N in _int_list(st.get("benchmark", "sizes", str, "20 40 60")):
            for f in (0.5, 1.0, 2.0):
                S = max(1, math.ceil(f * N))
                sec, ess = time_girf(params, N, T, S, M, seed, repeats=repeats)
                rows.append(["N", N, T, S, M, sec, sec / (T * S), ess])
    elif sweep == "T":
        params = dlsn.StaticParams(1.25, 0.2, 0.9)
        N = st.get("simulate", "N", int, 10)
        for T in _int_list(st.get("benchmark", "lengths", str, "50 100 200 400")):
            sec, ess = time_girf(params, N, T, N, M, seed, repeats=repeats)
            rows.append(["T", N, T, N, M, sec, sec / (T * N), ess])
    elif sweep == "M":
        params = dlsn.StaticParams(1.0, 0.2, 0.9)
        N = st.get("simulate", "N", int, 20)
        for m in (M, 2 * M):
            sec, ess = time_girf(params, N, 25, N, m, seed, repeats=repeats)
            rows.append(["M", N, 25, N, m, sec, sec / (25 * N), ess])
    else:
        raise dataio.ConfigError(f"sweep must be N, T or M, got {sweep!r}")
    dataio.write_table(out / "timing.csv",
                       ["sweep", "N", "T", "S", "M", "seconds", "seconds_per_substep", "median_ess_frac"], rows)
    return [str(out / "timing.csv")], {}


def cmd_ingest(st: Settings, out: Path, seed: int):
    path = st.get("ingest", "input", str, None)
    if path is None or not Path(path).exists():
        raise dataio.ConfigError(f"input file {path!r} does not exist")
    nodes = None
    group = st.get("ingest", "group", str, None)
    if group is not None:
        meta = st.get("ingest", "metadata", str, None)
        if meta is None:
            raise dataio.ConfigError("--group needs --metadata")
        nodes = [n for n, g in dataio.read_node_metadata(meta).items() if g == group]
    edges = dataio.read_edge_list(path, nodes=nodes)
    spec = dataio.WindowSpec(st.get("ingest", "window", int, 240), st.get("ingest", "mode", str, "binary"))
    obs = dataio.aggregate(edges, spec, n_nodes=st.get("ingest", "n_nodes", int, None))
    dataio.save_series(out / "observations.csv", obs)
    dataio.save_node_map(out / "node_map.csv", edges.nodes)
    if edges.self_ties:
        print(f"warning: skipped {edges.self_ties} self-tie records", file=sys.stderr)
    return [str(out / "observations.csv"), str(out / "node_map.csv")], {
        "records": len(edges), "self_ties": edges.self_ties, "T": int(obs.shape[0]), "N": int(obs.shape[1]),
        "inputs": {path: dataio.file_digest(path)},
    }


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "ingest": cmd_ingest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker threads for the likelihood kernels")
    common.add_argument("--out-dir", default=".", help="directory for output tables")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--alpha", type=float)
    model.add_argument("--sigma", type=float)
    model.add_argument("--phi", type=float)
    model.add_argument("--d", type=int)
    model.add_argument("--link", choices=["euclidean", "dot"])
    model.add_argument("--likelihood", choices=["bernoulli", "poisson"])

    girf = argparse.ArgumentParser(add_help=False)
    girf.add_argument("--S", type=int, help="intermediary steps (default ceil(s_factor * N))")
    girf.add_argument("--s-factor", dest="s_factor", type=float)
    girf.add_argument("--B", type=int)
    girf.add_argument("--M", type=int)
    girf.add_argument("--guide", choices=["auto", "predictive", "lookahead", "flat"])
    girf.add_argument("--guide-mean", dest="guide_mean", choices=["exact", "literal"])

    p = argparse.ArgumentParser(prog="dlsn-smc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, model], help="simulate a scenario")
    s.add_argument("--scenario", choices=["S1", "S2", "S3"])
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--N", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--q", type=float)
    s.add_argument("--alpha-schedule", dest="alpha_schedule")

    f = sub.add_parser("fit", parents=[common, model, girf], help="estimate parameters and states")
    f.add_argument("--data", help="observations CSV")
    f.add_argument("--mode", choices=["online", "offline"])
    f.add_argument("--n-iters", dest="n_iters", type=int)
    f.add_argument("--lam", type=float)
    f.add_argument("--step-exponent", dest="step_exponent", type=float)
    f.add_argument("--step-scale", dest="step_scale", type=float)
    f.add_argument("--init", help="alpha,sigma,phi (skips the data-driven initialisation)")
    f.add_argument("--holdout-last", dest="holdout_last", action="store_const", const=True,
                   help="fit on 1..T-1 and write predictive probabilities for T")

    e = sub.add_parser("evaluate", parents=[common, model], help="compute metrics")
    e.add_argument("--data", help="observations CSV")
    e.add_argument("--estimates", help="fitted probabilities CSV")
    e.add_argument("--truth", help="true probabilities CSV")
    e.add_argument("--predictive", help="predictive probabilities for the last time")
    e.add_argument("--filter-trace", dest="filter_trace")
    e.add_argument("--metrics", help="subset of: mse roc aae (default: all available)")
    e.add_argument("--r-rep", dest="r_rep", type=int)

    b = sub.add_parser("benchmark", parents=[common, girf], help="time the filter")
    b.add_argument("--sweep", choices=["N", "T", "M"])
    b.add_argument("--sizes", help="node counts for the N sweep")
    b.add_argument("--lengths", help="series lengths for the T sweep")
    b.add_argument("--N", type=int)
    b.add_argument("--T", type=int)
    b.add_argument("--repeats", type=int)

    i = sub.add_parser("ingest", parents=[common], help="aggregate a contact list")
    i.add_argument("--input")
    i.add_argument("--metadata", help="node-to-group file")
    i.add_argument("--group", help="keep only nodes of this group")
    i.add_argument("--window", type=int)
    i.add_argument("--mode", choices=["binary", "count"])
    i.add_argument("--n-nodes", dest="n_nodes", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = dataio.load_config(args.config) if args.config else {}
        st = Settings(args, config)
        kernels.set_num_threads(args.threads)
        out = dataio.ensure_dir(args.out_dir)
        outputs, extra = COMMANDS[args.command](st, out, args.seed)
    except dataio.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FilterCollapse as exc:
        print(f"filter collapse: {exc} (t={exc.t}, s={exc.s})", file=sys.stderr)
        return EXIT_COLLAPSE
    except (dataio.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    inputs = extra.pop("inputs", {})
    manifest = dataio.RunManifest(
        command=args.command, seed=args.seed, config=st.used, inputs=inputs,
        outputs=outputs, results=extra or None,
    )
    dataio.save_manifest(out / "manifest.json", manifest)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
