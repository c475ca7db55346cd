"""Experiment runner and command line front end.

An experiment is a grid of accuracies eps = 2^-k crossed with a list of
estimators.  For every cell we run R independent replications, compare the
estimates with a reference price and emit one table row.  Everything needed
to repeat a run (config, calibrated constants, per-eps plans and shifts) is
written to a manifest; ``replay`` re-runs from it.

Config files are INI documents with one section per concern; see
``ExperimentConfig.to_ini`` for the layout and README for the key list.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive_is import RobbinsMonroConfig, ThetaSchedule, compute_k_l, trajectory
from .calibration import Branch, LevelPlan, StructuralParams, estimate_structural_params, plan
from .estimators import (
    EstimateResult,
    Summary,
    _gradient_samples,
    estimate_bias_variance,
    improvement_factor,
    run_aisml2r,
    run_crude_mc,
    run_ml2r,
)
from .path_kernel import Scheme, gbm
from .payoffs import PayoffKind, PayoffSpec, black_scholes_call, payoff_id, reference_price, register_analytic
from . import streams as st

log = logging.getLogger("aisml2r")

OUTPUT_ENV = "AISML2R_OUTPUT_DIR"
DEFAULT_OUTPUT = "aisml2r-results"
ESTIMATORS = ("ml2r", "aisml2r", "crude")
FORMATS = ("csv", "json", "plot")

CSV_COLUMNS = (
    "estimator",
    "scheme",
    "payoff",
    "k",
    "eps",
    "L",
    "N",
    "variance",
    "bias",
    "rmse",
    "cost",
    "time_seconds",
    "improvement_factor_cost",
    "improvement_factor_time",
)


class ExperimentError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "european-milstein"
    # model: geometric Brownian motion
    x0: float = 100.0
    rate: float = 0.06
    vol: float = 0.4
    horizon: float = 1.0
    # payoff
    payoff: str = "european_call"
    strike: float | None = 80.0
    zeta: float | None = None
    reference: float | None = None
    # discretization
    scheme: str = "milstein"
    M: int = 8
    coarsest_h: float = 1.0
    alpha: float = 1.0
    # estimation grid
    estimators: tuple[str, ...] = ("ml2r", "aisml2r")
    ks: tuple[int, ...] = (3, 4, 5, 6, 7, 8, 9)
    replications: tuple[int, ...] | None = None
    master_seed: int = 12345
    workers: int = 1
    block_size: int = st.DEFAULT_BLOCK_SIZE
    path_multiplier: int | None = None
    adaptive_plan: str = "shared"
    # calibration
    n_pilot: int = 100_000
    M_max: int = 10
    A: float = 1.0
    c_inf: float = 1.0
    # Robbins-Monro
    rm_iter: int = 1000
    pilot_iter: int = 1000
    theta_lo: float = 0.0
    theta_hi: float = 1.0
    use_k: bool = True
    # output
    output_dir: str | None = None
    formats: tuple[str, ...] = FORMATS

    def __post_init__(self):
        if not self.ks:
            raise ValueError("ks must not be empty")
        for e in self.eps_list:
            if not 0 < e < 1:
                raise ValueError(f"eps={e} outside (0, 1)")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ValueError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if self.replications is not None:
            if len(self.replications) not in (1, len(self.ks)):
                raise ValueError("replications must be one value or one per k")
            if min(self.replications) < 1:
                raise ValueError("replication count must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.adaptive_plan not in ("shared", "theta"):
            raise ValueError("adaptive_plan must be 'shared' or 'theta'")
        if self.theta_lo > self.theta_hi:
            raise ValueError("theta_lo > theta_hi")
        if set(self.formats) - set(FORMATS):
            raise ValueError(f"formats must be a subset of {FORMATS}")
        Scheme.parse(self.scheme)
        self.payoff_spec()

    @property
    def eps_list(self) -> list[float]:
        return [2.0 ** (-k) for k in self.ks]

    def replications_for(self, k: int) -> int:
        if self.replications is None:
            return default_replications(k)
        if len(self.replications) == 1:
            return self.replications[0]
        return self.replications[self.ks.index(k)]

    def multiplier_for(self, estimator: str) -> int:
        if estimator != "aisml2r":
            return 1
        if self.path_multiplier is not None:
            return self.path_multiplier
        return 2 if Scheme.parse(self.scheme) is Scheme.EULER else 1

    def model(self):
        return gbm(self.x0, self.rate, self.vol, self.horizon)

    def payoff_spec(self) -> PayoffSpec:
        kind = PayoffKind(self.payoff)
        if kind is PayoffKind.EUROPEAN_CALL:
            return PayoffSpec.european_call(self.strike, self.rate, self.horizon)
        return PayoffSpec.partial_lookback_call(self.zeta, self.rate, self.horizon)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, (section, kind) in _SCHEMA.items():
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, name, _encode(getattr(self, name), kind))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        updates = {}
        for section in cp.sections():
            for key, raw in cp.items(section):
                name = _resolve_key(f"{section}.{key}")
                updates[name] = _decode(raw, _SCHEMA[name][1])
        return replace(base or cls(), **updates)

    def with_overrides(self, pairs: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` (or ``section.key=value``) strings."""
        updates = {}
        for pair in pairs:
            if "=" not in pair:
                raise ValueError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            name = _resolve_key(key.strip())
            updates[name] = _decode(raw.strip(), _SCHEMA[name][1])
        return replace(self, **updates)


# field -> (INI section, value kind)
_SCHEMA = {
    "name": ("experiment", "str"),
    "x0": ("model", "float"),
    "rate": ("model", "float"),
    "vol": ("model", "float"),
    "horizon": ("model", "float"),
    "payoff": ("payoff", "str"),
    "strike": ("payoff", "float?"),
    "zeta": ("payoff", "float?"),
    "reference": ("payoff", "float?"),
    "scheme": ("discretization", "str"),
    "M": ("discretization", "int"),
    "coarsest_h": ("discretization", "float"),
    "alpha": ("discretization", "float"),
    "estimators": ("estimation", "strs"),
    "ks": ("estimation", "ints"),
    "replications": ("estimation", "ints?"),
    "master_seed": ("estimation", "int"),
    "workers": ("estimation", "int"),
    "block_size": ("estimation", "int"),
    "path_multiplier": ("estimation", "int?"),
    "adaptive_plan": ("estimation", "str"),
    "n_pilot": ("calibration", "int"),
    "M_max": ("calibration", "int"),
    "A": ("calibration", "float"),
    "c_inf": ("calibration", "float"),
    "rm_iter": ("robbins_monro", "int"),
    "pilot_iter": ("robbins_monro", "int"),
    "theta_lo": ("robbins_monro", "float"),
    "theta_hi": ("robbins_monro", "float"),
    "use_k": ("robbins_monro", "bool"),
    "output_dir": ("output", "str?"),
    "formats": ("output", "strs"),
}

_NONE = "auto"


def _encode(value, kind: str) -> str:
    if value is None:
        return _NONE
    base = kind.rstrip("?")
    if base in ("ints", "strs"):
        return ", ".join(str(v) for v in value)
    if base == "float":
        return repr(float(value))
    if base == "bool":
        return "true" if value else "false"
    return str(value)


def _decode(raw: str, kind: str):
    raw = raw.strip()
    if kind.endswith("?") and raw.lower() in (_NONE, "none", ""):
        return None
    base = kind.rstrip("?")
    if base == "float":
        return float(raw)
    if base == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw.replace("_", ""))
    if base == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if base == "ints":
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    if base == "strs":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    return raw


def _resolve_key(key: str) -> str:
    key = key.replace("-", "_")
    section, _, name = key.rpartition(".")
    if name not in _SCHEMA:
        raise KeyError(f"unknown config key {key!r}")
    if section and _SCHEMA[name][0] != section:
        raise KeyError(f"key {name!r} lives in section [{_SCHEMA[name][0]}], not [{section}]")
    return name


def default_replications(k: int) -> int:
    if k <= 5:
        return 50
    if k <= 7:
        return 10
    return 3


PRESETS = {
    "european-milstein": ExperimentConfig(),
    "european-euler": ExperimentConfig(name="european-euler", scheme="euler", M=6, rm_iter=500),
    "lookback-milstein": ExperimentConfig(
        name="lookback-milstein",
        rate=0.15,
        vol=0.1,
        payoff="partial_lookback_call",
        strike=None,
        zeta=1.1,
        M=8,
        rm_iter=200,
    ),
    "lookback-euler": ExperimentConfig(
        name="lookback-euler",
        rate=0.15,
        vol=0.1,
        payoff="partial_lookback_call",
        strike=None,
        zeta=1.1,
        scheme="euler",
        M=8,
        rm_iter=200,
    ),
}


def resolve_reference(cfg: ExperimentConfig) -> float:
    if cfg.reference is not None:
        return float(cfg.reference)
    spec, model = cfg.payoff_spec(), cfg.model()
    try:
        return reference_price((spec, model)).value
    except KeyError:
        if spec.kind is PayoffKind.EUROPEAN_CALL:
            value = black_scholes_call(cfg.x0, cfg.strike, cfg.rate, cfg.vol, cfg.horizon)
            return register_analytic(payoff_id(spec, model), value).value
        raise


# --------------------------------------------------------------------------
# calibration


@dataclass
class Calibration:
    structural: StructuralParams
    pilot_theta: float | None = None
    structural_theta: StructuralParams | None = None

    def to_dict(self) -> dict:
        return {
            "structural": self.structural.to_dict(),
            "pilot_theta": self.pilot_theta,
            "structural_theta": None if self.structural_theta is None else self.structural_theta.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        sth = d.get("structural_theta")
        return cls(
            StructuralParams.from_dict(d["structural"]),
            d.get("pilot_theta"),
            None if sth is None else StructuralParams.from_dict(sth),
        )


def _rm_config(cfg: ExperimentConfig, n_iter: int) -> RobbinsMonroConfig:
    return RobbinsMonroConfig(n_iter=n_iter, lo=cfg.theta_lo, hi=cfg.theta_hi, use_k=cfg.use_k)


def pilot_theta(cfg: ExperimentConfig, sp: StructuralParams, n_iter: int | None = None, seed: int | None = None) -> float:
    """Averaged level-1 shift from a short Robbins-Monro run on pilot draws."""
    n_iter = cfg.pilot_iter if n_iter is None else n_iter
    seed = cfg.master_seed if seed is None else seed
    model, payoff, scheme = cfg.model(), cfg.payoff_spec(), Scheme.parse(cfg.scheme)
    branch = Branch.for_beta(scheme.beta)
    lp = plan(max(cfg.eps_list), sp)
    k1 = compute_k_l(1, sp, lp.weights) if (branch is Branch.BETA_GT_1 and cfg.use_k) else 1.0
    stream = st.Streams(seed, (st.PILOT_THETA, 0, 0), cfg.block_size).level(1)
    samples = _gradient_samples(model, payoff, scheme, 1, lp, stream, n_iter, branch, k1)
    state = _rm_config(cfg, n_iter).state(1, cfg.theta_lo)
    trajectory(state, samples, model.horizon)
    return state.theta_bar


def calibrate(cfg: ExperimentConfig) -> Calibration:
    model, payoff = cfg.model(), cfg.payoff_spec()
    seed, B = cfg.master_seed, cfg.block_size

    def pilot(purpose_v1, purpose_var, theta):
        return estimate_structural_params(
            model,
            payoff,
            cfg.scheme,
            cfg.M,
            cfg.coarsest_h,
            cfg.n_pilot,
            st.Streams(seed, (purpose_v1, 0, 0), B).level(2),
            st.Streams(seed, (purpose_var, 0, 0), B).level(1),
            alpha=cfg.alpha,
            c_inf=cfg.c_inf,
            A=cfg.A,
            M_max=cfg.M_max,
            theta=theta,
        )

    sp = pilot(st.PILOT_V1, st.PILOT_VAR, 0.0)
    log.info("pilot: V1=%.6g var=%.6g lambda=%.6g", sp.V1, sp.var_Y0, sp.lam)
    if "aisml2r" not in cfg.estimators:
        return Calibration(sp)
    th = pilot_theta(cfg, sp)
    sp_th = pilot(st.PILOT_THETA_V1, st.PILOT_THETA_VAR, th)
    log.info("pilot theta=%.6g: V1=%.6g var=%.6g", th, sp_th.V1, sp_th.var_Y0)
    return Calibration(sp, th, sp_th)


def crude_plan(eps: float, sp: StructuralParams, horizon: float) -> dict:
    """Steps and paths giving bias and statistical error of eps/sqrt(2) each."""
    h = (eps / math.sqrt(2.0)) ** (1.0 / sp.alpha) / sp.c_inf
    n_steps = max(1, math.ceil(horizon / h - 1e-9))
    n_paths = max(2, math.ceil(2.0 * sp.var_Y0 / (eps * eps)))
    return {"eps": eps, "n_steps": n_steps, "n_paths": n_paths}


def make_plans(cfg: ExperimentConfig, cal: Calibration) -> dict[tuple[int, str], dict]:
    plans = {}
    for k, eps in zip(cfg.ks, cfg.eps_list):
        for est in cfg.estimators:
            if est == "crude":
                plans[(k, est)] = crude_plan(eps, cal.structural, cfg.horizon)
                continue
            sp = cal.structural
            if est == "aisml2r" and cfg.adaptive_plan == "theta":
                sp = cal.structural_theta
            p = plan(eps, sp)
            mult = cfg.multiplier_for(est)
            plans[(k, est)] = (p.scaled(mult) if mult != 1 else p).to_dict()
    return plans


# --------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class TableRow:
    estimator: str
    scheme: str
    payoff: str
    k: int
    eps: float
    L: int
    N: int
    variance: float
    bias: float
    rmse: float
    cost: float
    time_seconds: float
    improvement_factor_cost: float | None = None
    improvement_factor_time: float | None = None

    def csv_record(self) -> dict:
        d = asdict(self)
        return {c: ("" if d[c] is None else repr(d[c]) if isinstance(d[c], float) else str(d[c])) for c in CSV_COLUMNS}

    @classmethod
    def from_record(cls, rec: dict) -> "TableRow":
        opt = lambda s: None if s in ("", None) else float(s)
        return cls(
            rec["estimator"],
            rec["scheme"],
            rec["payoff"],
            int(rec["k"]),
            float(rec["eps"]),
            int(rec["L"]),
            int(rec["N"]),
            float(rec["variance"]),
            float(rec["bias"]),
            float(rec["rmse"]),
            float(rec["cost"]),
            float(rec["time_seconds"]),
            opt(rec["improvement_factor_cost"]),
            opt(rec["improvement_factor_time"]),
        )


@dataclass
class RunManifest:
    config: dict
    master_seed: int
    version: str
    calibration: dict
    reference: float
    plans: list[dict] = field(default_factory=list)
    theta_schedules: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})

    def plan_for(self, k: int, estimator: str) -> dict:
        for p in self.plans:
            if p["k"] == k and p["estimator"] == estimator:
                return p["plan"]
        raise KeyError((k, estimator))


@dataclass
class ExperimentResult:
    table: list[TableRow]
    manifest: RunManifest
    estimates: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self, with_time: bool = True) -> dict:
        rows = [asdict(r) for r in self.table]
        if not with_time:
            for r in rows:
                r.pop("time_seconds")
                r.pop("improvement_factor_time")
        return {"table": rows, "manifest": self.manifest.to_dict(), "estimates": self.estimates}


def _one_replication(cfg, est, k, plan_dict, rep, cal, theta_init):
    model, payoff, scheme = cfg.model(), cfg.payoff_spec(), cfg.scheme
    if est == "crude":
        rng = st.Streams.for_replication(cfg.master_seed, rep, purpose=st.CRUDE, experiment=k, block_size=cfg.block_size)
        return run_crude_mc(model, payoff, scheme, plan_dict["n_steps"], plan_dict["n_paths"], rng)
    # ml2r and aisml2r share streams so their comparison uses common draws
    rng = st.Streams.for_replication(cfg.master_seed, rep, purpose=st.ESTIMATION, experiment=k, block_size=cfg.block_size)
    lp = LevelPlan.from_dict(plan_dict)
    if est == "ml2r":
        return run_ml2r(model, payoff, scheme, lp, rng)
    return run_aisml2r(model, payoff, scheme, lp, theta_init, rng, cal.structural, _rm_config(cfg, cfg.rm_iter))


def _summarize(results: list[EstimateResult], ref: float) -> Summary:
    if len(results) >= 2:
        return estimate_bias_variance(results, ref)
    r = results[0]
    bias = abs(r.estimate - ref)
    return Summary(1, r.estimate, bias, float("nan"), float("nan"), r.cost, r.wall_time)


def _execute(cfg: ExperimentConfig, manifest: RunManifest, workers: int) -> ExperimentResult:
    cal = Calibration.from_dict(manifest.calibration)
    ref = manifest.reference
    rows, estimates, schedules = [], {}, []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k, eps in zip(cfg.ks, cfg.eps_list):
            R = cfg.replications_for(k)
            for est in cfg.estimators:
                pd = manifest.plan_for(k, est)
                theta_init = None
                if est == "aisml2r":
                    sched = next((s for s in manifest.theta_schedules if s["k"] == k), None)
                    theta_init = ThetaSchedule(tuple(sched["initial"])) if sched else ThetaSchedule.constant(cal.pilot_theta or 0.0, pd["L"])

                def job(rep, est=est, k=k, pd=pd, theta_init=theta_init):
                    try:
                        return _one_replication(cfg, est, k, pd, rep, cal, theta_init)
                    except Exception as exc:
                        raise ExperimentError(f"{est} failed at k={k} (eps={eps:g}), seed={cfg.master_seed}, replication={rep}: {exc}") from exc

                log.info("%s k=%d: %d replications", est, k, R)
                results = list(pool.map(job, range(R))) if pool else [job(r) for r in range(R)]
                s = _summarize(results, ref)
                if est == "crude":
                    L, N = 1, pd["n_paths"]
                else:
                    L, N = pd["L"], pd["N"]
                rows.append(TableRow(est, cfg.scheme, cfg.payoff, k, eps, L, N, s.variance, s.bias, s.rmse, s.cost, s.time))
                estimates[f"{est}:{k}"] = [r.estimate for r in results]
                if est == "aisml2r":
                    schedules.append(
                        {"k": k, "initial": list(theta_init.initial), "final": [list(r.theta.final) for r in results]}
                    )
    finally:
        if pool:
            pool.shutdown()
    manifest = replace(manifest, theta_schedules=schedules or manifest.theta_schedules)
    return ExperimentResult(_with_improvement(rows), manifest, estimates)


def _with_improvement(rows: list[TableRow]) -> list[TableRow]:
    base = {r.k: r for r in rows if r.estimator == "ml2r"}
    out = []
    for r in rows:
        b = base.get(r.k)
        if r.estimator == "ml2r" or b is None:
            out.append(r)
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            ifc = _safe_if(b.variance, b.cost, r.variance, r.cost)
            ift = _safe_if(b.variance, b.time_seconds, r.variance, r.time_seconds)
        out.append(replace(r, improvement_factor_cost=ifc, improvement_factor_time=ift))
    return out


def _safe_if(vb, eb, vn, en) -> float:
    den = vn * en
    if den == 0 or math.isnan(den):
        return float("nan")
    return improvement_factor(vb, eb, vn, en)


def build_manifest(cfg: ExperimentConfig, cal: Calibration | None = None) -> RunManifest:
    cal = calibrate(cfg) if cal is None else cal
    plans = make_plans(cfg, cal)
    schedules = []
    if "aisml2r" in cfg.estimators:
        for k in cfg.ks:
            L = plans[(k, "aisml2r")]["L"]
            schedules.append({"k": k, "initial": list(ThetaSchedule.constant(cal.pilot_theta, L).initial)})
    return RunManifest(
        cfg.to_dict(),
        cfg.master_seed,
        __version__,
        cal.to_dict(),
        resolve_reference(cfg),
        [{"k": k, "estimator": e, "plan": p} for (k, e), p in plans.items()],
        schedules,
    )


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Calibrate, plan and run every (eps, estimator) cell of ``cfg``."""
    t0 = time.perf_counter()
    manifest = build_manifest(cfg)
    res = _execute(cfg, manifest, workers or cfg.workers)
    log.info("experiment %s done in %.1fs", cfg.name, time.perf_counter() - t0)
    return res


def replay(manifest: RunManifest | dict, workers: int | None = None) -> ExperimentResult:
    """Re-run the replications described by a manifest without re-calibrating."""
    if isinstance(manifest, dict):
        manifest = RunManifest.from_dict(manifest)
    cfg = ExperimentConfig.from_dict(manifest.config)
    initial = [{"k": s["k"], "initial": s["initial"]} for s in manifest.theta_schedules]
    return _execute(cfg, replace(manifest, theta_schedules=initial), workers or cfg.workers)


# --------------------------------------------------------------------------
# outputs


def table_to_csv(table: list[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in table:
        w.writerow(r.csv_record())
    return buf.getvalue()


def table_from_csv(text: str) -> list[TableRow]:
    return [TableRow.from_record(rec) for rec in csv.DictReader(io.StringIO(text))]


def plot_data(table: list[TableRow]) -> dict:
    """log10 series per estimator: variance against wall time and against N."""
    out = {}
    for est in dict.fromkeys(r.estimator for r in table):
        rows = [r for r in table if r.estimator == est]
        lg = lambda xs: [float(np.log10(x)) if x > 0 else None for x in xs]
        out[est] = {
            "k": [r.k for r in rows],
            "log10_variance": lg([r.variance for r in rows]),
            "log10_time": lg([r.time_seconds for r in rows]),
            "log10_N": lg([r.N for r in rows]),
            "log10_cost": lg([r.cost for r in rows]),
        }
    return out


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def emit_outputs(result: ExperimentResult | None, manifest: RunManifest, formats, out_dir) -> list[Path]:
    """Write the manifest plus the requested formats; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = list(formats)
    if formats and (result is None or not result.table):
        raise ValueError("cannot emit an empty table")
    written = []

    def put(name, text):
        p = out_dir / name
        p.write_text(text)
        written.append(p)

    put("manifest.json", json.dumps(manifest.to_dict(), indent=2))
    if "csv" in formats:
        put("results.csv", table_to_csv(result.table))
    if "json" in formats:
        put("results.json", json.dumps(result.to_dict(), indent=2))
    if "plot" in formats:
        put("plot_data.json", json.dumps(plot_data(result.table), indent=2))
    return written


def format_table(table: list[TableRow]) -> str:
    head = f"{'estimator':<9} {'k':>2} {'L':>2} {'N':>11} {'variance':>10} {'bias':>10} {'rmse':>10} {'cost':>11} {'time':>9} {'if_cost':>8} {'if_time':>8}"
    lines = [head]
    f = lambda v: "" if v is None else f"{v:.3f}"
    for r in table:
        lines.append(
            f"{r.estimator:<9} {r.k:>2} {r.L:>2} {r.N:>11} {r.variance:>10.3e} {r.bias:>10.3e} {r.rmse:>10.3e} "
            f"{r.cost:>11.4e} {r.time_seconds:>9.3f} {f(r.improvement_factor_cost):>8} {f(r.improvement_factor_time):>8}"
        )
    return "\n".join(lines)


# --------------------------------------------------------------------------
# command line


def _load_config(args, extra: list[str]) -> ExperimentConfig:
    cfg = PRESETS[args.preset]
    if args.config:
        cfg = ExperimentConfig.from_ini(Path(args.config).read_text(), base=cfg)
    overrides = list(args.set or [])
    # any remaining --key value / --key=value pairs are config overrides
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise SystemExit(f"unexpected argument {tok!r}")
        if "=" in tok:
            overrides.append(tok[2:])
        else:
            try:
                overrides.append(f"{tok[2:]}={next(it)}")
            except StopIteration:
                raise SystemExit(f"missing value for {tok}") from None
    try:
        return cfg.with_overrides(overrides)
    except (KeyError, ValueError) as exc:
        raise SystemExit(f"bad override: {exc}") from None


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return default_output_dir() / cfg.name


def _add_config_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="european-milstein")
    p.add_argument("--config", help="INI file layered over the preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<name> or ./{DEFAULT_OUTPUT}/<name>)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aisml2r", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("calibrate", help="run the pilots and write plans to manifest.json")
    _add_config_args(p)
    p = sub.add_parser("run", help="calibrate, run all replications, write outputs")
    _add_config_args(p)
    p = sub.add_parser("report", help="print a results table")
    p.add_argument("results", help="results.json or results.csv")
    p.add_argument("--csv", action="store_true", help="print CSV instead of the text table")
    p = sub.add_parser("replay", help="re-run from a manifest and check against recorded results")
    p.add_argument("manifest", help="manifest.json or results.json")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p = sub.add_parser("config", help="print a preset as an INI document")
    p.add_argument("--preset", choices=sorted(PRESETS), default="european-milstein")
    return ap


def _read_table(path: Path) -> list[TableRow]:
    if path.suffix == ".csv":
        return table_from_csv(path.read_text())
    d = json.loads(path.read_text())
    return [TableRow(**r) for r in d["table"]]


def _numeric_mismatches(old: list[TableRow], new: list[TableRow]) -> list[str]:
    skip = {"time_seconds", "improvement_factor_time"}
    bad = []
    if len(old) != len(new):
        return [f"row count {len(old)} != {len(new)}"]
    for a, b in zip(old, new):
        for c in CSV_COLUMNS:
            if c in skip:
                continue
            x, y = getattr(a, c), getattr(b, c)
            same = x == y or (isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y))
            if not same:
                bad.append(f"{a.estimator} k={a.k} {c}: {x!r} != {y!r}")
    return bad


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if extra and args.cmd not in ("calibrate", "run"):
        ap.error(f"unrecognized arguments: {' '.join(extra)}")

    if args.cmd == "config":
        print(PRESETS[args.preset].to_ini(), end="")
        return 0

    if args.cmd in ("calibrate", "run"):
        cfg = _load_config(args, extra)
        out = _out_dir(args, cfg)
        if args.cmd == "calibrate":
            m = build_manifest(cfg)
            paths = emit_outputs(None, m, [], out)
            print(json.dumps(m.calibration, indent=2))
        else:
            res = run_experiment(cfg)
            paths = emit_outputs(res, res.manifest, cfg.formats, out)
            print(format_table(res.table))
        for p in paths:
            print(f"wrote {p}", file=sys.stderr)
        return 0

    if args.cmd == "report":
        table = _read_table(Path(args.results))
        print(table_to_csv(table) if args.csv else format_table(table), end="\n" if not args.csv else "")
        return 0

    # replay
    path = Path(args.manifest)
    doc = json.loads(path.read_text())
    manifest_doc = doc.get("manifest", doc)
    recorded = None
    if "table" in doc:
        recorded = [TableRow(**r) for r in doc["table"]]
    elif (path.parent / "results.json").exists():
        recorded = [TableRow(**r) for r in json.loads((path.parent / "results.json").read_text())["table"]]
    res = replay(manifest_doc, workers=args.workers)
    print(format_table(res.table))
    if args.out:
        cfg = ExperimentConfig.from_dict(manifest_doc["config"])
        emit_outputs(res, res.manifest, cfg.formats, args.out)
    if recorded is not None:
        bad = _numeric_mismatches(recorded, res.table)
        if bad:
            print("replay MISMATCH:\n  " + "\n  ".join(bad), file=sys.stderr)
            return 1
        print("replay matches recorded results (wall time excluded)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
