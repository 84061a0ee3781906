"""Experiment driver: config parsing, run orchestration and CSV output.

Subcommands
-----------
run      one low-rank integration (optionally sweeping the rank), writing
         error_vs_time / error_vs_rank / rank_trace / singular_values /
         residual_trace CSVs against a configured reference solution.
sweep    temporal-convergence study: error vs dt per (scheme, rank) with
         least-squares log-log slope fits.
compare  low-rank vs full-order on identical inputs: error over time,
         rank traces, residual traces, per-step wall clock; optional
         size sweeps for cost-scaling studies.
fom      full-order run emitting the same CSV kinds, for parity checks.

All floats are written with 17 significant digits so repeated runs with
the same config and seed produce bit-identical files.  Exit codes: 2 for
invalid configuration, 3 for solver failures.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, InputError, TdbCurError
from .factorization import TruncationRule, truncated_svd
from .fom import (FomIntegrator, exact_linear_propagator,
                  exact_linear_solution, relative_error, rk4_reference)
from .integrator import TdbCurIntegrator
from .models import MODEL_NAMES, make_model
from .schemes import SCHEME_NAMES

FMT = "%.17g"

#: ledger of implementation choices that may differ between codebases
#: computing the same experiments; recorded in every run's metadata
DECISION_NOTES = {
    "tableaux": {
        "euler": "backward Euler",
        "am2": "trapezoidal rule (2nd-order Adams-Moulton)",
        "bdf2": "standard BDF2",
        "bdf3": "standard BDF3",
        "bdf4": "standard BDF4",
        "dirk2": "2-stage SDIRK, gamma = 1 - sqrt(2)/2, stiffly accurate",
        "dirk3": "3-stage SDIRK (Alexander), gamma root of the cubic",
        "dirk4": "5-stage SDIRK, gamma = 1/4 (Hairer-Wanner)",
    },
    "burgers_kernel": ("squared-exponential covariance, KL modes from the "
                       "discrete covariance eigendecomposition"),
    "rank_increase": ("extra column index from greedy oversampling of the "
                      "right-singular-vector selection"),
    "multistep_startup": "bootstrapped with a DIRK scheme of matching order",
}


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    sys.exit(code)


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    return cfg


def validate_config(cfg, mode):
    """Check types/ranges shared by all subcommands; returns the config."""
    if "model" not in cfg or "name" not in cfg.get("model", {}):
        raise ConfigError("config needs a model block with a name")
    if cfg["model"]["name"] not in MODEL_NAMES:
        raise ConfigError(f"unknown model {cfg['model']['name']!r}")
    scheme = cfg.get("scheme", "dirk2")
    for sch in scheme if isinstance(scheme, list) else [scheme]:
        if sch not in SCHEME_NAMES:
            raise ConfigError(f"unknown scheme {sch!r}")
    dt = cfg.get("dt", 0.01)
    if not isinstance(dt, (int, float)) or dt <= 0:
        raise ConfigError("dt must be a positive number")
    T = cfg.get("T", 1.0)
    if not isinstance(T, (int, float)) or T < 0:
        raise ConfigError("T must be nonnegative")
    if cfg.get("rank") is None and cfg.get("thresholds") is None \
            and mode in ("run", "compare") and cfg.get("sweep", {}).get("r") is None:
        raise ConfigError("config needs a fixed rank, thresholds, or a rank sweep")
    sweep = cfg.get("sweep", {})
    if mode == "sweep" and not sweep.get("dt"):
        raise ConfigError("sweep mode needs a non-empty sweep.dt list")
    for key in ("dt", "r", "n", "s"):
        if key in sweep and (not isinstance(sweep[key], list) or not sweep[key]):
            raise ConfigError(f"sweep.{key} must be a non-empty list")
    return cfg


def _thresholds(cfg):
    th = cfg.get("thresholds")
    if th is None:
        return None
    return (float(th["eps_l"]), float(th["eps_u"]))


def _build_model(cfg, seed=None, **overrides):
    blk = dict(cfg["model"])
    if seed is not None:
        blk["seed"] = int(seed)
    blk.update(overrides)
    return make_model(blk)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([FMT % x if isinstance(x, float) else x for x in row])


def write_metadata(outdir, cfg, extra=None):
    meta = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config": cfg,
        "decisions": DECISION_NOTES,
    }
    if extra:
        meta.update(extra)
    with open(os.path.join(outdir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Reference:
    """Reference trajectory provider: exact, rk4, fom or none.

    ``exact`` uses the one-step matrix-exponential propagator (linear
    models only); ``rk4`` integrates at ``reference_dt``; ``fom`` runs
    the full-order model with the same scheme and dt.  States are cached
    at every multiple of dt so error-vs-time series are cheap.
    """

    def __init__(self, cfg, model, scheme, dt, t0, T):
        self.kind = cfg.get("reference", "none")
        self.states = {}
        if self.kind == "none":
            return
        V0 = model.initial_condition()
        n_steps = int(round((T - t0) / dt))
        if self.kind == "exact":
            P = exact_linear_propagator(model, dt)
            V = exact_linear_solution(model, V0, t0)
            self.states[round(t0, 12)] = V
            for k in range(n_steps):
                V = P @ V
                self.states[round(t0 + (k + 1) * dt, 12)] = V
        elif self.kind == "fom":
            fom = FomIntegrator(model, scheme=scheme, dt=dt,
                                tol=cfg.get("tol", 1e-14),
                                solver=cfg.get("solver", "auto"))
            if t0 > 0:
                fom.run(t0)
            self.states[round(t0, 12)] = fom.V.copy()
            fom.run(T - t0, observer=lambda t, V:
                    self.states.__setitem__(round(t, 12), V.copy()))
        elif self.kind == "rk4":
            rdt = float(cfg.get("reference_dt", dt / 100.0))
            sub = int(round(dt / rdt))
            if abs(sub * rdt - dt) > 1e-12:
                raise ConfigError("reference_dt must divide dt")
            V = np.array(V0, dtype=float)
            self.states[0.0] = V.copy()
            t = 0.0
            for k in range(int(round(T / dt))):
                V = rk4_reference(model, V, rdt, sub, t0=t)
                t = (k + 1) * dt
                self.states[round(t, 12)] = V.copy()
        else:
            raise ConfigError(f"unknown reference {self.kind!r}")

    def at(self, t):
        return self.states.get(round(t, 12))


def _warmup(cfg, model, scheme, dt):
    """Optional full-order warm-up phase; returns (t0, V0 or None)."""
    wT = float(cfg.get("warmup_T", 0.0))
    if wT <= 0:
        return 0.0, None
    fom = FomIntegrator(model, scheme=scheme, dt=dt,
                        tol=cfg.get("tol", 1e-14),
                        solver=cfg.get("solver", "auto"))
    V0 = fom.run(wT)
    return fom.t, V0


def _tdb_run(cfg, model, scheme, dt, T, rank, t0=0.0, V0=None,
             trace=False, observer=None):
    integ = TdbCurIntegrator(
        model, scheme=scheme, dt=dt, rank=rank, e=int(cfg.get("e", 0)),
        eps_t=float(cfg.get("eps_t", 1e-13)), thresholds=_thresholds(cfg),
        tol=float(cfg.get("tol", 1e-14)), solver=cfg.get("solver", "auto"),
        t0=t0, V0=V0, trace_residuals=trace)
    integ.run(T - t0, observer=observer)
    return integ


def cmd_run(cfg, outdir):
    scheme = cfg.get("scheme", "dirk2")
    schemes = scheme if isinstance(scheme, list) else [scheme]
    dt, T = float(cfg.get("dt", 0.01)), float(cfg.get("T", 1.0))
    sweep = cfg.get("sweep", {})
    ranks = sweep.get("r")
    extra = {}

    if ranks:
        rows = []
        for sch in schemes:
            for r in ranks:
                model = _build_model(cfg)
                t0, V0 = _warmup(cfg, model, sch, dt)
                ref = Reference(cfg, model, sch, dt, t0, T)
                integ = _tdb_run(cfg, model, sch, dt, T, int(r), t0, V0)
                Vr = ref.at(integ.t)
                err = relative_error(Vr, integ.state.reconstruct()) \
                    if Vr is not None else float("nan")
                rows.append((sch, int(r), err))
        write_csv(os.path.join(outdir, "error_vs_rank.csv"),
                  ["scheme", "r", "error"], rows)
        write_metadata(outdir, cfg, extra)
        return

    sch = schemes[0]
    model = _build_model(cfg)
    t0, V0 = _warmup(cfg, model, sch, dt)
    ref = Reference(cfg, model, sch, dt, t0, T)
    err_rows, rank_rows, sig_rows, res_rows = [], [], [], []
    trace = bool(cfg.get("trace_residuals", False))

    def observer(rep, state):
        Vr = ref.at(rep.t)
        if Vr is not None:
            err_rows.append((rep.t,
                             relative_error(Vr, state.reconstruct())))
        proxy = float(rep.sigma[-1] / np.sqrt(np.sum(rep.sigma ** 2)))
        rank_rows.append((len(rank_rows) + 1, rep.t, rep.rank,
                          rep.r_delta, proxy))
        for i, sv in enumerate(rep.sigma):
            sig_rows.append((rep.t, i + 1, float(sv), "tdbcur"))
        for i, (rr, fr) in enumerate(zip(rep.collocation_residuals,
                                         rep.full_residuals)):
            res_rows.append((len(rank_rows), i + 1, rr, fr))

    integ = _tdb_run(cfg, model, sch, dt, T, cfg.get("rank"), t0, V0,
                     trace=trace, observer=observer)
    if err_rows:
        write_csv(os.path.join(outdir, "error_vs_time.csv"),
                  ["t", "error"], err_rows)
    write_csv(os.path.join(outdir, "rank_trace.csv"),
              ["step", "t", "r", "r_delta", "proxy"], rank_rows)
    write_csv(os.path.join(outdir, "singular_values.csv"),
              ["t", "index", "sigma", "source"], sig_rows)
    if res_rows:
        write_csv(os.path.join(outdir, "residual_trace.csv"),
                  ["step", "iteration", "row_rms", "full_rms"], res_rows)
    write_metadata(outdir, cfg, extra)


def fit_slope(dts, errs):
    """Least-squares slope of log(err) vs log(dt); NaN-safe."""
    x = np.log(np.asarray(dts, dtype=float))
    y = np.asarray(errs, dtype=float)
    good = y > 0
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(x[good], np.log(y[good]), 1)[0])


def cmd_sweep(cfg, outdir):
    scheme = cfg.get("scheme", "dirk2")
    schemes = scheme if isinstance(scheme, list) else [scheme]
    sweep = cfg["sweep"]
    dts = [float(d) for d in sweep["dt"]]
    ranks = [int(r) for r in sweep.get("r", [cfg.get("rank")])]
    T = float(cfg.get("T", 1.0))
    lo, hi = sweep.get("fit_range", [min(dts), max(dts)])
    rows, slopes = [], {}
    for sch in schemes:
        for r in ranks:
            errs = []
            for dt in dts:
                model = _build_model(cfg)
                t0, V0 = _warmup(cfg, model, sch, dt)
                ref = Reference(cfg, model, sch, dt, t0, T)
                integ = _tdb_run(cfg, model, sch, dt, T, r, t0, V0)
                Vr = ref.at(integ.t)
                if Vr is None:
                    raise ConfigError("sweep needs a reference solution")
                err = relative_error(Vr, integ.state.reconstruct())
                errs.append(err)
                rows.append((sch, r, dt, err))
            in_fit = [(d, e) for d, e in zip(dts, errs) if lo <= d <= hi]
            slopes[f"{sch}_r{r}"] = fit_slope(*zip(*in_fit)) if len(in_fit) >= 2 \
                else float("nan")
    write_csv(os.path.join(outdir, "error_vs_dt.csv"),
              ["scheme", "r", "dt", "error"], rows)
    write_metadata(outdir, cfg, {"slopes": slopes})


def _timed_steps(step_fn, n_steps):
    """Average wall-clock seconds per step over ``n_steps`` calls."""
    t0 = time.perf_counter()
    for _ in range(n_steps):
        step_fn()
    return (time.perf_counter() - t0) / n_steps


def cmd_compare(cfg, outdir):
    sweep = cfg.get("sweep", {})
    if sweep.get("n") or sweep.get("s"):
        return _compare_scaling(cfg, outdir, sweep)

    sch = cfg.get("scheme", "dirk2")
    dt, T = float(cfg.get("dt", 0.01)), float(cfg.get("T", 1.0))
    model = _build_model(cfg)
    t0, V0 = _warmup(cfg, model, sch, dt)

    fom = FomIntegrator(model, scheme=sch, dt=dt,
                        tol=float(cfg.get("tol", 1e-14)),
                        solver=cfg.get("solver", "auto"), t0=t0, V0=V0)
    fom_states, fom_times = {round(t0, 12): fom.V.copy()}, []
    n_steps = int(round((T - t0) / dt))
    for _ in range(n_steps):
        tic = time.perf_counter()
        fom.step()
        fom_times.append(time.perf_counter() - tic)
        fom_states[round(fom.t, 12)] = fom.V.copy()

    err_rows, rank_rows, sig_rows, res_rows, time_rows = [], [], [], [], []
    trace = bool(cfg.get("trace_residuals", False))
    tdb_times = []

    def observer(rep, state):
        Vf = fom_states[round(rep.t, 12)]
        err_rows.append((rep.t, relative_error(Vf, state.reconstruct())))
        proxy = float(rep.sigma[-1] / np.sqrt(np.sum(rep.sigma ** 2)))
        k = len(rank_rows) + 1
        rank_rows.append((k, rep.t, rep.rank, rep.r_delta, proxy))
        sf = np.linalg.svd(Vf, compute_uv=False)
        for i in range(rep.rank):
            sig_rows.append((rep.t, i + 1, float(rep.sigma[i]), "tdbcur"))
            sig_rows.append((rep.t, i + 1, float(sf[i]), "fom"))
        for i, (rr, fr) in enumerate(zip(rep.collocation_residuals,
                                         rep.full_residuals)):
            res_rows.append((k, i + 1, rr, fr))

    integ = TdbCurIntegrator(
        model, scheme=sch, dt=dt, rank=cfg.get("rank"),
        e=int(cfg.get("e", 0)), eps_t=float(cfg.get("eps_t", 1e-13)),
        thresholds=_thresholds(cfg), tol=float(cfg.get("tol", 1e-14)),
        solver=cfg.get("solver", "auto"), t0=t0, V0=V0,
        trace_residuals=trace)
    for k in range(n_steps):
        tic = time.perf_counter()
        rep = integ.step()
        tdb_times.append(time.perf_counter() - tic)
        observer(rep, integ.state)
        time_rows.append((k + 1, rep.t, tdb_times[-1], fom_times[k]))

    write_csv(os.path.join(outdir, "error_vs_time.csv"),
              ["t", "error"], err_rows)
    write_csv(os.path.join(outdir, "rank_trace.csv"),
              ["step", "t", "r", "r_delta", "proxy"], rank_rows)
    write_csv(os.path.join(outdir, "singular_values.csv"),
              ["t", "index", "sigma", "source"], sig_rows)
    if res_rows:
        write_csv(os.path.join(outdir, "residual_trace.csv"),
                  ["step", "iteration", "row_rms", "full_rms"], res_rows)
    write_csv(os.path.join(outdir, "timing.csv"),
              ["step", "t", "tdbcur_seconds", "fom_seconds"], time_rows)
    write_metadata(outdir, cfg)


def _compare_scaling(cfg, outdir, sweep):
    """Wall-clock scaling study over problem size n and/or sample count s."""
    sch = cfg.get("scheme", "am2")
    dt = float(cfg.get("dt", 0.01))
    n_steps = int(cfg.get("timing_steps", 5))
    rank = int(cfg.get("rank", 5))
    rows = []
    base = cfg["model"]
    for n in sweep.get("n", [base.get("n")]):
        for s in sweep.get("s", [base.get("s")]):
            model = _build_model(cfg, n=int(n), s=int(s))
            fom = FomIntegrator(model, scheme=sch, dt=dt,
                                tol=float(cfg.get("tol", 1e-14)),
                                solver=cfg.get("solver", "auto"))
            fom.step()  # settle caches before timing
            fom_sec = _timed_steps(fom.step, n_steps)
            model = _build_model(cfg, n=int(n), s=int(s))
            integ = TdbCurIntegrator(model, scheme=sch, dt=dt, rank=rank,
                                     e=int(cfg.get("e", 0)),
                                     eps_t=float(cfg.get("eps_t", 1e-13)),
                                     tol=float(cfg.get("tol", 1e-14)),
                                     solver=cfg.get("solver", "auto"))
            integ.step()
            tdb_sec = _timed_steps(integ.step, n_steps)
            rows.append((int(n), int(s), tdb_sec, fom_sec))
    write_csv(os.path.join(outdir, "timing.csv"),
              ["n", "s", "tdbcur_seconds_per_step", "fom_seconds_per_step"],
              rows)
    write_metadata(outdir, cfg)


def cmd_fom(cfg, outdir):
    sch = cfg.get("scheme", "dirk2")
    dt, T = float(cfg.get("dt", 0.01)), float(cfg.get("T", 1.0))
    model = _build_model(cfg)
    ref = Reference(cfg, model, sch, dt, 0.0, T)
    fom = FomIntegrator(model, scheme=sch, dt=dt,
                        tol=float(cfg.get("tol", 1e-14)),
                        solver=cfg.get("solver", "auto"))
    err_rows, sig_rows, time_rows = [], [], []
    n_steps = int(round(T / dt))
    for k in range(n_steps):
        tic = time.perf_counter()
        V = fom.step()
        sec = time.perf_counter() - tic
        time_rows.append((k + 1, fom.t, sec))
        Vr = ref.at(fom.t)
        if Vr is not None:
            err_rows.append((fom.t, relative_error(Vr, V)))
        sv = np.linalg.svd(V, compute_uv=False)
        for i in range(min(len(sv), int(cfg.get("sigma_count", 10)))):
            sig_rows.append((fom.t, i + 1, float(sv[i]), "fom"))
    if err_rows:
        write_csv(os.path.join(outdir, "error_vs_time.csv"),
                  ["t", "error"], err_rows)
    write_csv(os.path.join(outdir, "singular_values.csv"),
              ["t", "index", "sigma", "source"], sig_rows)
    write_csv(os.path.join(outdir, "timing.csv"),
              ["step", "t", "fom_seconds"], time_rows)
    write_metadata(outdir, cfg)


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare,
            "fom": cmd_fom}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="tdbcur",
        description="implicit low-rank (TDB-CUR) experiment driver")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS/LAPACK thread cap")
        p.add_argument("--seed", type=int, default=None,
                       help="override the model seed")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            print("warning: threadpoolctl not installed; --threads ignored",
                  file=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.setdefault("model", {})["seed"] = args.seed
        validate_config(cfg, args.command)
        outdir = args.out or cfg.get("out", ".")
        os.makedirs(outdir, exist_ok=True)
    except (ConfigError, InputError) as exc:
        _fail(2, str(exc))
    try:
        COMMANDS[args.command](cfg, outdir)
    except ConfigError as exc:
        _fail(2, str(exc))
    except TdbCurError as exc:
        _fail(3, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
