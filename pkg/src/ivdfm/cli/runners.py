"""Experiment runners: each writes CSV tables (and PNG figures) into an output directory."""
from __future__ import annotations

import logging
import os
import warnings

import numpy as np

from .. import metrics, plotting
from ..baselines import fit_pca_dfm
from ..intervene import InterventionError, intervene_once, OracleModel, IRF_METRICS
from ..prior import gaussian_degeneracy_demo, lambda_rank
from ..synthdata import ScmSpec, gen_dynamic_dgp, gen_forecast_dgp, gen_scm, gen_static_dgp
from ..vimodel import IVDFM, TrainingError, elbo_gradient_check, predict_quantiles, train
from .config import config_hash, train_config
from .io import apply_scaler, fit_scaler, ingest_csv, write_csv, write_matrix

log = logging.getLogger(__name__)

RECOVERY_METRICS = ("mcc", "subspace", "smoothness", "trace_r2")
QUANTILES = metrics.QUANTILES


class RunContext:
    """Output directory, provenance footer and a plain-text run log."""

    def __init__(self, cfg, out=None):
        self.cfg = cfg
        self.out = out or cfg["out"]
        os.makedirs(self.out, exist_ok=True)
        self.footer = f"config-hash {config_hash(cfg)}"
        self._log_lines = []

    def path(self, name):
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows, self.footer)
        return self.path(name)

    def note(self, msg):
        log.info(msg)
        self._log_lines.append(msg)

    def close(self):
        with open(self.path("run.log"), "w") as fh:
            fh.write("\n".join(self._log_lines + [self.footer]) + "\n")


def _mean_std(values):
    vals = np.asarray([v for v in values if np.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return float("nan"), float("nan")
    return float(vals.mean()), float(vals.std())


# ---------------------------------------------------------------- recovery

def score_factors(F_true, F_hat):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {
            "mcc": metrics.mcc(F_true, F_hat).mcc,
            "subspace": metrics.subspace_distance(F_true, F_hat),
            "smoothness": metrics.smoothness(F_hat),
            "trace_r2": metrics.trace_r2(F_true, F_hat),
        }


def matched_trajectories(F_true, F_hat):
    """Recovered columns reordered, sign-flipped and rescaled to the true mean and scale."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        match = metrics.mcc(F_true, F_hat)
    F = F_hat[:, match.permutation] * match.signs
    sd = F.std(axis=0)
    F = (F - F.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return F * F_true.std(axis=0) + F_true.mean(axis=0)


def probe_contexts(model, T, constant):
    times = np.linspace(0, T - 1, model.config.r + 1)
    u = model.context(times)
    return np.repeat(u[:1], len(u), axis=0) if constant else u


def run_recovery(cfg, out=None, constant_context=None):
    ctx = RunContext(cfg, out)
    rc = cfg["recovery"]
    constant = rc["constant_context"] if constant_context is None else constant_context
    gen = gen_dynamic_dgp if rc["dgp"] == "dynamic" else gen_static_dgp
    r = rc["r"]
    per_seed, results = [], {"ivdfm": {}, "pca_dfm": {}}
    failed = []
    for seed in cfg["seeds"]:
        data = gen(T=rc["T"], N=rc["N"], r=r, seed=seed, **({"p": rc["p"]} if rc["dgp"] == "dynamic" else {}))
        Y = data.Y
        if rc["standardize"]:
            Y = apply_scaler(fit_scaler(Y), Y)
        tcfg = train_config(cfg, r=r, seed=int(seed))
        model = IVDFM(Y.shape[1], tcfg)
        estimates = {}
        try:
            train(model, Y, tcfg, constant_context=constant)
            U = model.context(np.arange(len(Y)))
            if constant:
                U = np.repeat(U[:1], len(U), axis=0)
            estimates["ivdfm"] = model.factors(Y, U)
            rank = lambda_rank(model.prior, probe_contexts(model, len(Y), constant), bank=model.bank)
            ctx.note(f"seed {seed}: lambda_rank {rank} ({'constant' if constant else model.config.context} context)")
        except TrainingError as exc:
            failed.append(int(seed))
            rank = -1
            ctx.note(f"seed {seed}: ivdfm failed: {exc}")
        estimates["pca_dfm"] = fit_pca_dfm(Y, r).factors
        for name in ("ivdfm", "pca_dfm"):
            if name not in estimates:
                per_seed.append([seed, name, "failed"] + [float("nan")] * 4 + [rank])
                continue
            scores = score_factors(data.F_true, estimates[name])
            results[name][seed] = scores
            per_seed.append([seed, name, "ok"] + [scores[m] for m in RECOVERY_METRICS]
                            + [rank if name == "ivdfm" else ""])
        traj = {name: matched_trajectories(data.F_true, F) for name, F in estimates.items()}
        for name, F in traj.items():
            names = [f"true_{i + 1}" for i in range(r)] + [f"{name}_{i + 1}" for i in range(r)]
            write_matrix(ctx.path(f"trajectory_seed{seed}_{name}.csv"), np.hstack([data.F_true, F]),
                         names, ctx.footer)
        if cfg["figures"] and seed == cfg["seeds"][0]:
            plotting.plot_trajectories(ctx.path(f"trajectory_seed{seed}.png"), data.F_true, traj,
                                       title=f"{rc['dgp']} DGP, seed {seed}")
    ctx.csv("recovery_per_seed.csv", ["seed", "model", "status", *RECOVERY_METRICS, "lambda_rank"], per_seed)
    aggregate, agg_rows = {}, []
    for name in ("ivdfm", "pca_dfm"):
        aggregate[name] = {}
        for m in RECOVERY_METRICS:
            mean, std = _mean_std([s[m] for s in results[name].values()])
            aggregate[name][m] = (mean, std)
            n_fail = len(failed) if name == "ivdfm" else 0
            agg_rows.append([name, m, mean, std, len(results[name]), n_fail])
    ctx.csv("recovery_aggregate.csv", ["model", "metric", "mean", "std", "n_ok", "n_failed"], agg_rows)
    if cfg["figures"]:
        plotting.plot_metric_bars(ctx.path("recovery_metrics.png"), aggregate)
    if failed:
        ctx.note(f"failed seeds: {failed}")
    ctx.close()
    return aggregate


# ---------------------------------------------------------------- intervention

def intervention_grid(ic):
    rows = [("base", v, ic["T"], ic["r"]) for v in ic["variants"]]
    rows += [("T", v, T, ic["r"]) for T in ic["T_grid"] for v in ic["variants"]]
    rows += [("r", v, ic["T"], r) for r in ic["r_grid"] for v in ic["variants"]]
    return rows


def run_intervention(cfg, out=None, oracle=None):
    ctx = RunContext(cfg, out)
    ic = cfg["intervention"]
    oracle = ic["oracle"] if oracle is None else oracle
    grid_rows, seed_rows = [], []
    first_plot = cfg["figures"]
    for section, variant, T, fitted_r in intervention_grid(ic):
        spec = ScmSpec(variant, r=ic["r"], N=ic["N"], shock_scale=ic["shock_scale"])
        t0 = T // 2 if ic["t0"] is None else ic["t0"]
        ok, failed = [], []
        for seed in cfg["seeds"]:
            Y, _, E = gen_scm(spec, T, seed)
            try:
                if oracle:
                    model = OracleModel(spec)
                else:
                    tcfg = train_config(cfg, r=fitted_r, seed=int(seed))
                    model = IVDFM(spec.N, tcfg)
                    train(model, Y, tcfg)
                U = model.context(np.arange(T))
                res = intervene_once(model, Y, U, E, spec, ic["k"], ic["c"], ic["H"], t0)
            except (TrainingError, InterventionError) as exc:
                failed.append(int(seed))
                ctx.note(f"{section}/{variant}/T={T}/r={fitted_r} seed {seed} failed: {exc}")
                seed_rows.append([section, variant, T, fitted_r, seed, "failed"] + [float("nan")] * 6)
                continue
            ok.append(res)
            seed_rows.append([section, variant, T, fitted_r, seed, "ok"]
                             + [res.metrics[m] for m in IRF_METRICS] + [res.component, res.alignment_corr])
            if first_plot:
                first_plot = False
                h = np.arange(ic["H"] + 1)[:, None]
                names = ["h"] + [f"true_y{i + 1}" for i in range(spec.N)] + [f"model_y{i + 1}" for i in range(spec.N)]
                write_matrix(ctx.path("irf_example.csv"), np.hstack([h, res.irf_true, res.irf_hat]), names, ctx.footer)
                plotting.plot_irf(ctx.path("irf_example.png"), res.irf_true, res.irf_hat)
        row = [section, variant, T, fitted_r, len(ok), len(failed)]
        for m in IRF_METRICS:
            row += list(_mean_std([r.metrics[m] for r in ok]))
        grid_rows.append(row)
    header = ["section", "variant", "T", "fitted_r", "n_ok", "n_failed"]
    for m in IRF_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    ctx.csv("intervention_grid.csv", header, grid_rows)
    ctx.csv("intervention_per_seed.csv",
            ["section", "variant", "T", "fitted_r", "seed", "status", *IRF_METRICS, "component", "alignment_corr"],
            seed_rows)
    ctx.close()
    return grid_rows


# ---------------------------------------------------------------- forecasting

def chronological_split(T, fractions=(0.6, 0.2)):
    n_train = int(round(fractions[0] * T))
    n_val = int(round(fractions[1] * T))
    return n_train, n_val


def naive_quantiles(context, q_model):
    """Context median held flat, with the model's quantile offsets around its own median."""
    med = np.median(context, axis=0)
    mid = q_model.shape[-1] // 2
    return med[None, :, None] + (q_model - q_model[..., mid:mid + 1])


def load_forecast_data(cfg, ctx):
    fc = cfg["forecast"]
    if fc["dataset"]:
        values, names, _ = ingest_csv(fc["dataset"], fc["has_header"], fc["timestamp_col"])
        return os.path.splitext(os.path.basename(fc["dataset"]))[0], values
    syn = fc["synthetic"]
    data = gen_forecast_dgp(T=syn["T"], N=syn["N"], r=syn["r"], p=syn["p"], seed=syn["seed"])
    write_matrix(ctx.path("dataset.csv"), data.Y, footer=ctx.footer)
    return "synthetic_ar", data.Y


def run_forecast(cfg, out=None):
    ctx = RunContext(cfg, out)
    fc = cfg["forecast"]
    name, Y = load_forecast_data(cfg, ctx)
    T = len(Y)
    n_train, n_val = chronological_split(T)
    scaler = fit_scaler(Y[:n_train])
    Z = apply_scaler(scaler, Y)
    L = fc["window"]
    seed = cfg["seeds"][0]
    origin_rows, summary_rows = [], []
    for H in fc["horizons"]:
        tcfg = train_config(cfg, seed=int(seed), window=L, stride=fc["stride"])
        model = IVDFM(Z.shape[1], tcfg)
        train(model, Z[:n_train], tcfg)
        start = n_train + n_val
        cells = []
        for i in range(fc["max_origins"]):
            o = start + i * H
            if o + H > T:
                ctx.note(f"horizon {H}: origin {o} skipped, needs {o + H} rows but only {T} available")
                break
            ctx_win = Z[o - L:o]
            q = predict_quantiles(model, ctx_win, H, fc["n_paths"], QUANTILES,
                                  rng=np.random.default_rng([int(seed), H, i]), t0=o - L)
            target = Z[o:o + H]
            qn = naive_quantiles(ctx_win, q)
            row = [H, o, metrics.crps_quantile(q, target), metrics.mse_standardized(q[..., 1], target),
                   metrics.crps_quantile(qn, target), metrics.mse_standardized(qn[..., 1], target)]
            cells.append(row)
            if cfg["figures"] and i == 0:
                plotting.plot_forecast(ctx.path(f"forecast_h{H}.png"), ctx_win, target, q)
        if not cells:
            raise ValueError(f"horizon {H} leaves no complete test origin in {T - start} test rows")
        origin_rows += cells
        arr = np.array(cells)[:, 2:]
        summary_rows.append([name, H, len(cells), *arr.mean(axis=0)])
    header = ["crps", "mse", "crps_naive", "mse_naive"]
    ctx.csv("forecast_origins.csv", ["horizon", "origin", *header], origin_rows)
    ctx.csv("forecast_by_horizon.csv", ["dataset", "horizon", "n_origins", *header], summary_rows)
    avg = np.array([r[3:] for r in summary_rows]).mean(axis=0)
    ctx.csv("forecast_summary.csv", ["dataset", *header], [[name, *avg]])
    ctx.close()
    return summary_rows


# ---------------------------------------------------------------- demos

def run_degeneracy(cfg, out=None):
    ctx = RunContext(cfg, out)
    dg = cfg["degeneracy"]
    rows = []
    for i in range(dg["n_rotations"]):
        for family in ("gaussian", "laplace"):
            a, b = gaussian_degeneracy_demo(i, family, r=dg["r"], T=dg["T"])
            rows.append([i, family, a, b, abs(a - b)])
    ctx.csv("degeneracy.csv", ["rotation_seed", "family", "loglik", "loglik_rotated", "abs_delta"], rows)
    g = max(r[4] for r in rows if r[1] == "gaussian")
    n_lap = sum(r[4] > 1e-3 for r in rows if r[1] == "laplace")
    ctx.note(f"gaussian max |delta| {g:.3e}; laplace |delta| > 1e-3 in {n_lap}/{dg['n_rotations']}")
    ctx.close()
    return g, n_lap


def run_gradcheck(cfg, out=None):
    ctx = RunContext(cfg, out)
    gc = cfg["gradcheck"]
    rows = []
    for i in range(gc["n_configs"]):
        tcfg, N, T, err = elbo_gradient_check(i, eps=gc["eps"])
        rows.append([i, tcfg.r, tcfg.p, tcfg.K, tcfg.family, tcfg.mixture_prior, tcfg.context, N, T, err])
    ctx.csv("gradcheck.csv", ["seed", "r", "p", "K", "family", "mixture", "context", "N", "T", "max_rel_error"], rows)
    worst = max(r[-1] for r in rows)
    ctx.note(f"max relative gradient error {worst:.3e} over {len(rows)} configurations")
    ctx.close()
    return worst
