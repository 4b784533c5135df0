"""Reproducible experiment driver behind the CLI.

Configs are flat key=value dictionaries.  Resolution turns every deferred
choice (pilot expansion points, planned subsample sizes, default soft
bounds) into literal numbers, and the resolved config is echoed next to
every artifact, so re-running from the echo reproduces outputs
byte-for-byte.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .control_variates import (
    ExactControlVariate,
    build_data_expanded,
    build_param_expanded,
    kmeans_cluster,
    select_expansion_point,
)
from .diagnostics import autocorrelations, iact, summarize, write_summary_csv
from .errors import ConfigError, DomainError
from .estimators import (
    BlockPoissonConfig,
    PlanningInputs,
    default_soft_bound,
    estimate_sigma2_pilot,
    plan_subsample_size,
    wor_sampling_fraction,
)
from .models import MODELS, Dataset, ModelSpec, load_dataset, simulate_poisson
from .samplers import (
    ChainTrace,
    DependenceConfig,
    DifferenceConfig,
    HmcConfig,
    ProposalConfig,
    chain_seed,
    hmc_ecs_run,
    hmc_run,
    mh_run,
    pmmh_run,
)

EXAMPLE_THETA = (1.0, 0.75)
EXAMPLE_N = 1000
EXAMPLE_SEED = 1830

OUTPUT_DIR_ENV = "SUBMCMC_OUTPUT_DIR"

# seed tags for the deterministic helper streams used during resolution
_TAG_EXPANSION = 101
_TAG_PLANNING = 102
_TAG_BOUND = 103
_TAG_DIRECTIONS = 104


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def config_comment(cfg: dict) -> str:
    return "; ".join(f"{k}={cfg[k]}" for k in sorted(cfg))


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment; later keys win."""
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("config", f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    out = dict(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError("set", f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Config access helpers
# ---------------------------------------------------------------------------

def _get_int(cfg, key, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(key, "required field is missing")
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {cfg[key]!r}") from None


def _get_float(cfg, key, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(key, "required field is missing")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(key, f"expected a number, got {cfg[key]!r}") from None


def _get_floats(cfg, key, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(key, "required field is missing")
        return default
    try:
        return np.array([float(v) for v in cfg[key].split(",") if v.strip() != ""])
    except ValueError:
        raise ConfigError(key, f"expected comma-separated numbers, got {cfg[key]!r}") from None


def _get_choice(cfg, key, choices, default=None, required=False):
    value = cfg.get(key, default)
    if value is None and required:
        raise ConfigError(key, "required field is missing")
    if value is not None and value not in choices:
        raise ConfigError(key, f"expected one of {sorted(choices)}, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# Resolution: config dict -> runnable plan + fully-resolved echo
# ---------------------------------------------------------------------------

@dataclass
class RunPlan:
    model: ModelSpec
    dataset: Dataset
    sampler: str
    theta0: np.ndarray
    n_iter: int
    burn_in: int
    seed: int
    chains: int
    proposal: ProposalConfig | None = None
    hmc: HmcConfig | None = None
    dependence: DependenceConfig | None = None
    estimator: object = None
    cache: object = None
    m: int | None = None
    include_variance_grad: bool = True


def build_dataset(cfg: dict) -> tuple[Dataset, dict]:
    resolved = {}
    if "data" in cfg:
        dataset = load_dataset(cfg["data"])
        resolved["data"] = cfg["data"]
    elif "simulate_n" in cfg:
        n = _get_int(cfg, "simulate_n", required=True)
        theta = _get_floats(cfg, "simulate_theta", required=True)
        sim_seed = _get_int(cfg, "simulate_seed", default=EXAMPLE_SEED)
        law = _get_choice(cfg, "simulate_law", {"standard_normal", "uniform"},
                          default="standard_normal")
        dataset = simulate_poisson(n, theta, covariate_law=law, seed=sim_seed)
        resolved.update({
            "simulate_n": str(n), "simulate_theta": _fmt(theta),
            "simulate_seed": str(sim_seed), "simulate_law": law,
        })
    else:
        raise ConfigError("data", "provide a dataset path or simulate_n/simulate_theta")
    return dataset, resolved


def _resolve_expansion(cfg, model, dataset, seed, resolved) -> np.ndarray:
    raw = cfg.get("expansion", "pilot")
    if raw == "pilot":
        point = select_expansion_point(model, dataset, seed=chain_seed(seed, _TAG_EXPANSION))
    elif raw == "exact":
        point = select_expansion_point(model, dataset, exact=True)
    else:
        point = _get_floats(cfg, "expansion", required=True)
        if point.size != model.dim(dataset):
            raise ConfigError("expansion", "dimension mismatch with the model")
    resolved["expansion"] = _fmt(point)
    return point


def _build_cache(cfg, model, dataset, seed, resolved):
    kind = _get_choice(cfg, "cv", {"param", "data", "exact"}, default="param")
    resolved["cv"] = kind
    if kind == "exact":
        return ExactControlVariate(model, dataset)
    order = _get_int(cfg, "order", default=2)
    if order not in (0, 1, 2):
        raise ConfigError("order", "must be 0, 1 or 2")
    resolved["order"] = str(order)
    if kind == "param":
        point = _resolve_expansion(cfg, model, dataset, seed, resolved)
        return build_param_expanded(model, dataset, point, order=order)
    K = _get_int(cfg, "centroids", default=75)
    resolved["centroids"] = str(K)
    cseed = _get_int(cfg, "cluster_seed", default=seed)
    resolved["cluster_seed"] = str(cseed)
    clustering = kmeans_cluster(dataset, K, seed=cseed)
    return build_data_expanded(model, dataset, clustering, order=order)


def laplace_covariance(model: ModelSpec, dataset: Dataset, center: np.ndarray) -> np.ndarray:
    """Inverse negative curvature of the log-posterior at a central point."""
    H = np.sum(model.hess_theta(center, dataset), axis=0)
    H = H - np.eye(center.size) / model.prior.sd**2
    return np.linalg.inv(-H)


def laplace_typical_points(model: ModelSpec, dataset: Dataset, center: np.ndarray,
                           count: int, seed) -> np.ndarray:
    """Draws from the Gaussian (mode, inverse curvature) approximation; used
    to evaluate planning variances where the chain actually lives."""
    L = np.linalg.cholesky(laplace_covariance(model, dataset, center))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return center + rng.standard_normal((count, center.size)) @ L.T


def _resolve_m(cfg, model, dataset, cache, seed, resolved, expansion) -> int:
    if "m" in cfg:
        m = _get_int(cfg, "m", required=True)
        if m < 1:
            raise ConfigError("m", "subsample size must be >= 1")
        resolved["m"] = str(m)
        # keep planning fields in the echo so rerunning an echoed config
        # reproduces it byte-for-byte
        for key in ("sigma2_target", "plan_degenerate"):
            if key in cfg:
                resolved[key] = cfg[key]
        return m
    target = _get_float(cfg, "sigma2_target")
    if target is None:
        raise ConfigError("m", "provide m or sigma2_target")
    if target <= 0:
        raise ConfigError("sigma2_target", "target variance must be positive")
    pilot = min(dataset.n, max(30, int(np.ceil(10.0 * np.sqrt(dataset.n)))))
    thetas = laplace_typical_points(model, dataset, expansion, count=5,
                                    seed=chain_seed(seed, _TAG_PLANNING))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(chain_seed(seed, _TAG_PLANNING))))
    sigma2 = estimate_sigma2_pilot(model, cache, dataset, thetas, pilot, rng)
    m, degenerate = plan_subsample_size(PlanningInputs(dataset.n, sigma2, target))
    resolved["sigma2_target"] = repr(target)
    resolved["m"] = str(m)
    if degenerate:
        resolved["plan_degenerate"] = "1"
    return m


def resolve(cfg: dict) -> tuple[RunPlan, dict]:
    """Validate against the sampler requirement matrix and resolve defaults."""
    resolved = {}
    model_name = _get_choice(cfg, "model", set(MODELS), required=True)
    resolved["model"] = model_name
    model = MODELS[model_name]()
    dataset, ds_resolved = build_dataset(cfg)
    resolved.update(ds_resolved)
    if model_name == "poisson":
        model._check_counts(dataset.y)

    sampler = _get_choice(cfg, "sampler", {"mh", "pmmh", "hmc", "hmc_ecs"}, required=True)
    resolved["sampler"] = sampler
    n_iter = _get_int(cfg, "iterations", required=True)
    if n_iter < 1:
        raise ConfigError("iterations", "must be >= 1")
    burn_in = _get_int(cfg, "burn_in", default=0)
    if not 0 <= burn_in < n_iter:
        raise ConfigError("burn_in", "must satisfy 0 <= burn_in < iterations")
    seed = _get_int(cfg, "seed", default=0)
    chains = _get_int(cfg, "chains", default=1)
    if chains < 1:
        raise ConfigError("chains", "must be >= 1")
    resolved.update({"iterations": str(n_iter), "burn_in": str(burn_in),
                     "seed": str(seed), "chains": str(chains)})

    d = model.dim(dataset)
    raw_theta0 = cfg.get("theta0", "pilot")
    if raw_theta0 == "pilot":
        theta0 = select_expansion_point(model, dataset, seed=chain_seed(seed, _TAG_EXPANSION))
    else:
        theta0 = _get_floats(cfg, "theta0", required=True)
        if theta0.size != d:
            raise ConfigError("theta0", f"expected {d} coordinates")
    resolved["theta0"] = _fmt(theta0)

    plan = RunPlan(model=model, dataset=dataset, sampler=sampler, theta0=theta0,
                   n_iter=n_iter, burn_in=burn_in, seed=seed, chains=chains)

    if sampler in ("mh", "pmmh"):
        kappa = _get_float(cfg, "kappa")
        omega_kind = _get_choice(cfg, "omega", {"identity", "laplace"}, default="identity")
        shape = None
        if omega_kind == "laplace":
            shape = laplace_covariance(model, dataset, theta0)
        plan.proposal = ProposalConfig(
            kind=_get_choice(cfg, "proposal_kind", {"rwm", "independence"}, default="rwm"),
            step_scale=kappa, shape=shape)
        resolved["proposal_kind"] = plan.proposal.kind
        resolved["omega"] = omega_kind
        resolved["kappa"] = repr(float(kappa) if kappa is not None else 2.38 / math.sqrt(d))
        if kappa is None:
            plan.proposal.step_scale = 2.38 / math.sqrt(d)

    if sampler in ("hmc", "hmc_ecs"):
        eps = _get_float(cfg, "epsilon", required=True)
        steps = _get_int(cfg, "leapfrog_steps", required=True)
        plan.hmc = HmcConfig(step_size=eps, n_steps=steps)
        resolved["epsilon"] = repr(eps)
        resolved["leapfrog_steps"] = str(steps)

    if sampler in ("pmmh", "hmc_ecs"):
        dep_kind = _get_choice(cfg, "dependence", {"independent", "cpm", "bpm"},
                               default="independent")
        resolved["dependence"] = dep_kind
        if dep_kind == "cpm":
            phi = _get_float(cfg, "phi", required=True)
            plan.dependence = DependenceConfig(kind="cpm", ar_coef=phi)
            resolved["phi"] = repr(phi)
        elif dep_kind == "bpm":
            blocks = _get_int(cfg, "blocks", required=True)
            plan.dependence = DependenceConfig(kind="bpm", n_blocks=blocks)
            resolved["blocks"] = str(blocks)
        else:
            plan.dependence = DependenceConfig()

    if sampler == "pmmh":
        est_name = _get_choice(cfg, "estimator", {"difference", "block_poisson"},
                               required=True)
        resolved["estimator"] = est_name
        plan.cache = _build_cache(cfg, model, dataset, seed, resolved)
        expansion = getattr(plan.cache, "expansion_point", theta0)
        if est_name == "difference":
            plan.estimator = DifferenceConfig(
                m=_resolve_m(cfg, model, dataset, plan.cache, seed, resolved, expansion))
        else:
            lam = _get_int(cfg, "lambda", required=True)
            m_b = _get_int(cfg, "m_b", required=True)
            if lam < 1 or m_b < 1:
                raise ConfigError("lambda", "lambda and m_b must be >= 1")
            if plan.dependence.kind == "bpm" and lam % plan.dependence.n_blocks != 0:
                raise ConfigError("blocks", "block count must divide lambda")
            bound = _get_float(cfg, "a")
            if bound is None:
                rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence(chain_seed(seed, _TAG_BOUND))))
                pilot_m = min(dataset.n, max(30, 10 * m_b))
                bound = default_soft_bound(model, plan.cache, dataset, expansion,
                                           lam, pilot_m, rng)
            plan.estimator = BlockPoissonConfig(n_products=lam, batch_size=m_b, bound=bound)
            resolved.update({"lambda": str(lam), "m_b": str(m_b), "a": repr(float(bound))})

    if sampler == "hmc_ecs":
        kind = _get_choice(cfg, "cv", {"param", "exact"}, default="param")
        plan.cache = _build_cache({**cfg, "cv": kind}, model, dataset, seed, resolved)
        expansion = getattr(plan.cache, "expansion_point", theta0)
        plan.m = _resolve_m(cfg, model, dataset, plan.cache, seed, resolved, expansion)
        plan.include_variance_grad = cfg.get("variance_grad", "1") not in ("0", "false")
        resolved["variance_grad"] = "1" if plan.include_variance_grad else "0"

    return plan, resolved


def run_chain(plan: RunPlan, chain_id: int) -> ChainTrace:
    seed = plan.seed if plan.chains == 1 else chain_seed(plan.seed, chain_id)
    if plan.sampler == "mh":
        return mh_run(plan.model, plan.dataset, plan.proposal, plan.theta0,
                      plan.n_iter, seed)
    if plan.sampler == "pmmh":
        return pmmh_run(plan.model, plan.dataset, plan.cache, plan.estimator,
                        plan.proposal, plan.dependence, plan.theta0, plan.n_iter, seed)
    if plan.sampler == "hmc":
        return hmc_run(plan.model, plan.dataset, plan.hmc, plan.theta0,
                       plan.n_iter, seed)
    return hmc_ecs_run(plan.model, plan.dataset, plan.cache, plan.hmc, plan.m,
                       plan.theta0, plan.n_iter, seed, dependence=plan.dependence,
                       include_variance_grad=plan.include_variance_grad)


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------

def write_trace_csv(trace: ChainTrace, path, comment: str | None = None):
    d = trace.draws.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        cols = ["iter"] + [f"theta_{j}" for j in range(1, d + 1)] + \
            ["accept", "loglik_est", "sign"]
        fh.write(",".join(cols) + "\n")
        for i in range(trace.n_iter):
            row = [str(i + 1)]
            row += [repr(float(v)) for v in trace.draws[i]]
            row += [str(int(trace.accept[i])), repr(float(trace.loglik_est[i])),
                    str(int(trace.sign[i]))]
            fh.write(",".join(row) + "\n")


def read_trace_csv(path) -> ChainTrace:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise DomainError(f"{path}: no trace rows")
    data = np.asarray(rows)
    d = len(header) - 4
    return ChainTrace(
        draws=data[:, 1:1 + d],
        accept=data[:, 1 + d].astype(bool),
        loglik_est=data[:, 2 + d],
        sign=data[:, 3 + d].astype(np.int8),
        u_accept=np.zeros(data.shape[0], dtype=bool),
        meta={"source": str(path)},
    )


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=10)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def write_manifest(out_dir, resolved: dict, wall_time: float, extra: dict | None = None):
    manifest = {
        "config": resolved,
        "git_hash": _git_hash(),
        "wall_time_seconds": wall_time,
        "version": __version__,
        "argv": sys.argv,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def run_experiment(cfg: dict, out_dir) -> dict:
    """Resolve, run all chains, and write trace/summary/config/manifest files."""
    t0 = time.perf_counter()
    plan, resolved = resolve(cfg)
    os.makedirs(out_dir, exist_ok=True)
    comment = config_comment(resolved)

    if plan.chains == 1:
        traces = [run_chain(plan, 0)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=plan.chains) as pool:
            traces = list(pool.map(run_chain, [plan] * plan.chains, range(plan.chains)))

    paths = {"out_dir": out_dir}
    for k, trace in enumerate(traces):
        suffix = "" if plan.chains == 1 else f"_chain{k}"
        trace_path = os.path.join(out_dir, f"trace{suffix}.csv")
        write_trace_csv(trace, trace_path, comment)
        rows = summarize(trace, burn_in=plan.burn_in)
        summary_path = os.path.join(out_dir, f"summary{suffix}.csv")
        write_summary_csv(rows, summary_path, comment)
        paths[f"trace{suffix}"] = trace_path
        paths[f"summary{suffix}"] = summary_path

    echo_path = os.path.join(out_dir, "config_resolved.cfg")
    with open(echo_path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")
    paths["config"] = echo_path
    write_manifest(out_dir, resolved, time.perf_counter() - t0)
    return paths


# ---------------------------------------------------------------------------
# Figure data generators
# ---------------------------------------------------------------------------

def figure1_table(n_grid=None, sigma2_values=(0.01, 0.1), target: float = 3.3):
    """Exact closed-form sampling fractions m/n for without-replacement SRS."""
    if n_grid is None:
        n_grid = np.unique(np.logspace(2, 8, 61).astype(int))
    rows = []
    for sigma2 in sigma2_values:
        for n in n_grid:
            frac = wor_sampling_fraction(int(n), float(sigma2), target)
            rows.append({"sigma2_pop": float(sigma2), "n": int(n),
                         "fraction": frac, "m": frac * int(n)})
    return rows


def example_dataset(n: int = EXAMPLE_N, seed: int = EXAMPLE_SEED) -> Dataset:
    """The running Poisson-regression example: theta = (1, 0.75), x ~ N(0, 1)."""
    return simulate_poisson(n, EXAMPLE_THETA, seed=seed)


def sphere_direction(d: int, seed) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def figure234_tables(cv_kind: str = "param", radius_list=(0.025, 0.1, 0.25),
                     order_list=(0, 1, 2), K_list=(75,), seed: int = EXAMPLE_SEED,
                     dataset: Dataset | None = None):
    """Per-observation (ell_i, q_i) scatter data plus the planned subsample
    size that would hit estimator variance 3.3 in each panel."""
    if cv_kind not in ("param", "data"):
        raise ConfigError("cv", "cv must be 'param' or 'data'")
    model = MODELS["poisson"]()
    dataset = dataset if dataset is not None else example_dataset(seed=seed)
    center = select_expansion_point(model, dataset, exact=True)
    direction = sphere_direction(model.dim(dataset), chain_seed(seed, _TAG_DIRECTIONS))

    caches = {}
    if cv_kind == "param":
        for order in order_list:
            caches[(order, 0)] = build_param_expanded(model, dataset, center, order=order)
    else:
        for K in K_list:
            clustering = kmeans_cluster(dataset, K, seed=seed)
            for order in order_list:
                caches[(order, K)] = build_data_expanded(model, dataset, clustering,
                                                         order=order)

    all_idx = np.arange(dataset.n)
    pairs, panels = [], []
    for radius in radius_list:
        theta = center + radius * direction
        ell = model.loglik(theta, dataset)
        for (order, K), cache in caches.items():
            q = cache.values_at(theta, all_idx)
            d_i = ell - q
            sigma2_d = float(np.mean((d_i - d_i.mean()) ** 2))
            m_opt = int(np.ceil(dataset.n**2 * sigma2_d / 3.3)) if sigma2_d > 0 else 1
            panels.append({"cv": cv_kind, "order": order, "centroids": K,
                           "radius": float(radius), "m_opt": m_opt,
                           "sigma2_d": sigma2_d})
            for i in range(dataset.n):
                pairs.append({"cv": cv_kind, "order": order, "centroids": K,
                              "radius": float(radius), "i": i,
                              "ell": float(ell[i]), "q": float(q[i])})
    return pairs, panels


def figure5_study(sigma2_targets=(0.0, 1.0, 10.0, 50.0), n_iter: int = 20000,
                  seed: int = 0, out_dir=None, cv_order: int = 0,
                  dataset: Dataset | None = None, max_lag: int = 200):
    """One chain per target estimator variance, all sharing the theta-proposal
    stream: target 0 is full-data MH, the rest are pseudo-marginal runs at
    the planned subsample size."""
    model = MODELS["poisson"]()
    dataset = dataset if dataset is not None else example_dataset(seed=EXAMPLE_SEED)
    center = select_expansion_point(model, dataset, seed=chain_seed(seed, _TAG_EXPANSION))
    cache = build_param_expanded(model, dataset, center, order=cv_order)
    # proposal shaped to the posterior so the variance ladder, not the step
    # size, drives the mixing differences across rows
    proposal = ProposalConfig(shape=laplace_covariance(model, dataset, center))
    pilot = min(dataset.n, max(30, int(np.ceil(10.0 * np.sqrt(dataset.n)))))
    thetas = laplace_typical_points(model, dataset, center, count=5,
                                    seed=chain_seed(seed, _TAG_PLANNING))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(chain_seed(seed, _TAG_PLANNING))))
    sigma2_d = estimate_sigma2_pilot(model, cache, dataset, thetas, pilot, rng)

    coord = min(1, model.dim(dataset) - 1)
    results = []
    for target in sigma2_targets:
        if target == 0.0:
            trace = mh_run(model, dataset, proposal, center, n_iter, seed)
            m = dataset.n
        else:
            m, _ = plan_subsample_size(PlanningInputs(dataset.n, sigma2_d, target))
            trace = pmmh_run(model, dataset, cache, DifferenceConfig(m), proposal,
                             DependenceConfig(), center, n_iter, seed)
        burn = min(n_iter // 10, 2000)
        est = iact(trace.draws[:, coord], burn_in=burn)
        acf = autocorrelations(trace.draws[burn:, coord], max_lag=max_lag)
        results.append({"target": float(target), "m": int(m), "trace": trace,
                        "iact": est.value, "acf": acf,
                        "accept_rate": float(np.mean(trace.accept))})

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        comment = config_comment({"targets": ",".join(str(t) for t in sigma2_targets),
                                  "iterations": n_iter, "seed": seed,
                                  "cv_order": cv_order, "sigma2_d": repr(sigma2_d)})
        for res in results:
            tag = ("%g" % res["target"]).replace(".", "p")
            write_trace_csv(res["trace"], os.path.join(out_dir, f"trace_var{tag}.csv"),
                            comment)
            with open(os.path.join(out_dir, f"acf_var{tag}.csv"), "w",
                      encoding="utf-8") as fh:
                fh.write(f"# {comment}\n")
                fh.write("lag,acf\n")
                for lag, val in enumerate(res["acf"]):
                    fh.write(f"{lag},{repr(float(val))}\n")
        with open(os.path.join(out_dir, "iact_table.csv"), "w", encoding="utf-8") as fh:
            fh.write(f"# {comment}\n")
            fh.write("target,m,iact,accept_rate,ct\n")
            for res in results:
                fh.write(f"{res['target']},{res['m']},{repr(res['iact'])},"
                         f"{repr(res['accept_rate'])},"
                         f"{repr(res['iact'] * res['m'])}\n")
    return results


def plan_table(cfg: dict, targets=(1.0, 3.3)) -> list[dict]:
    """Planning rows (target variance -> subsample size) for a model/CV config."""
    model_name = _get_choice(cfg, "model", set(MODELS), required=True)
    model = MODELS[model_name]()
    dataset, _ = build_dataset(cfg)
    seed = _get_int(cfg, "seed", default=0)
    resolved = {}
    cache = _build_cache(cfg, model, dataset, seed, resolved)
    center = getattr(cache, "expansion_point", None)
    if center is None:
        center = select_expansion_point(model, dataset, seed=chain_seed(seed, _TAG_EXPANSION))
    pilot = min(dataset.n, max(30, int(np.ceil(10.0 * np.sqrt(dataset.n)))))
    thetas = laplace_typical_points(model, dataset, center, count=5,
                                    seed=chain_seed(seed, _TAG_PLANNING))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(chain_seed(seed, _TAG_PLANNING))))
    sigma2_d = estimate_sigma2_pilot(model, cache, dataset, thetas, pilot, rng)
    rows = []
    for target in targets:
        m, degenerate = plan_subsample_size(PlanningInputs(dataset.n, sigma2_d, target))
        rows.append({"target": float(target), "sigma2_d": sigma2_d, "m": m,
                     "degenerate": int(degenerate),
                     "wor_m": int(np.ceil(wor_sampling_fraction(dataset.n, sigma2_d, target)
                                          * dataset.n))})
    return rows
