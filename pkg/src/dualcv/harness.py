"""Experiment orchestration: the three-sample protocol and result tables.

One experiment = fit the dual martingale on a Q1 sample, then repeat R
times: fit the stopping rule on a fresh Q2 sample and price out of
sample on a fresh Q3 sample.  Reported "stddev" columns are the spread
of the R run means, i.e. the standard deviation of the estimator.  All
seeds are derived from the three configured base streams, so a config
reproduces its CSV byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import io
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import oracle
from .dual_martingale import (
    DualMartingale,
    evaluate_martingale,
    fit_dual_coefficients,
    increment_basis_from_breakpoints,
    increment_basis_from_paths,
)
from .estimators import (
    PriceEstimate,
    VarianceDecomposition,
    cv_price,
    dual_price,
    mc_price,
    stopped_values,
    variance_decomposition,
)
from .market import ModelSpec, PayoffSpec, discounted_payoffs, simulate_paths
from .oracle import IdentityCheck, IdentityReport, TreeModel
from .regression import build_polynomial_basis
from .stopping import StopTimes, apply_policy, fit_policy, policy_histogram, proxy_policy

CSV_COLUMNS = (
    "experiment_id",
    "method",
    "price",
    "stddev",
    "lambda",
    "dual_price",
    "dual_stddev",
    "q1",
    "q2",
    "q3",
    "nbar",
    "p_local",
    "runs",
    "seconds",
)

_CONFIG_KEYS = {
    "model": {"d", "s0", "r", "delta", "sigma", "t", "n"},
    "payoff": {"kind", "k", "k1", "k2"},
    "algorithm": {
        "q1",
        "q2",
        "q3",
        "nbar",
        "p_local",
        "ls_degree",
        "variant",
        "binning",
        "runs",
        "itm_only",
        "include_ls2prime",
        "refresh_q1",
        "experiment_id",
    },
    "seeds": {"q1", "q2", "q3"},
}


class WeakDualityError(RuntimeError):
    """Dual estimate fell below the primal control-variate estimate."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one table row's experiment."""

    model: ModelSpec
    payoff: PayoffSpec
    q1: int
    q2: int
    q3: int
    p_local: int
    ls_degree: int
    variant: str = "ls1"
    binning: str = "auto"
    runs: int = 1
    seed_q1: int = 1
    seed_q2: int = 2
    seed_q3: int = 3
    itm_only: bool = False
    include_ls2prime: bool = False
    refresh_q1: bool = False
    experiment_id: str = ""

    def __post_init__(self):
        if min(self.q1, self.q2, self.q3) < 1:
            raise ValueError("sample counts q1, q2, q3 must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.variant not in ("ls1", "ls2"):
            raise ValueError("variant must be 'ls1' or 'ls2' (ls2prime is a flag)")
        if self.binning not in ("auto", "coordinate", "mean"):
            raise ValueError("binning must be 'auto', 'coordinate' or 'mean'")
        if not self.experiment_id:
            object.__setattr__(
                self, "experiment_id", f"{self.payoff.kind}_nbar{self.model.Nbar}_p{self.p_local}"
            )

    @property
    def nbar(self) -> int:
        return self.model.Nbar


@dataclass(frozen=True)
class ResultRow:
    experiment_id: str
    method: str
    price: float
    stddev: float | None
    lam: float | None
    dual_price: float
    dual_stddev: float | None
    q1: int
    q2: int
    q3: int
    nbar: int
    p_local: int
    runs: int
    seconds: float


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    martingale: DualMartingale
    run_estimates: list[dict[str, PriceEstimate]]


def _parse_scalar_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _get_bool(section, key, fallback=False) -> bool:
    raw = section.get(key, None)
    if raw is None:
        return fallback
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"boolean key {key!r} has invalid value {raw!r}")


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read an experiment config file (flat key=value with four sections).

    overrides maps "section.key" to replacement values and is applied
    before validation, mirroring the CLI flags.  Unknown sections or keys
    are errors.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(path).read_text()
    parser.read_string(text)
    if overrides:
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if not key:
                raise ValueError(f"override {dotted!r} must look like section.key")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, value)

    for section in parser.sections():
        if section not in _CONFIG_KEYS:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _CONFIG_KEYS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
    for required in ("model", "payoff", "algorithm", "seeds"):
        if not parser.has_section(required):
            raise ValueError(f"missing config section [{required}]")

    mod = parser["model"]
    alg = parser["algorithm"]
    model = ModelSpec(
        d=mod.getint("d", 1),
        s0=_parse_scalar_list(mod.get("s0")),
        r=mod.getfloat("r"),
        delta=_parse_scalar_list(mod.get("delta", "0")),
        sigma=_parse_scalar_list(mod.get("sigma")),
        T=mod.getfloat("t"),
        N=mod.getint("n"),
        Nbar=alg.getint("nbar", 1),
    )
    pay = parser["payoff"]
    kind = pay.get("kind").strip().lower()
    if kind in ("butterfly", "min_butterfly"):
        strikes = (pay.getfloat("k1"), pay.getfloat("k2"))
    else:
        strikes = (pay.getfloat("k"),)
    payoff = PayoffSpec(kind=kind, strikes=strikes)

    seeds = parser["seeds"]
    return ExperimentConfig(
        model=model,
        payoff=payoff,
        q1=alg.getint("q1"),
        q2=alg.getint("q2"),
        q3=alg.getint("q3"),
        p_local=alg.getint("p_local"),
        ls_degree=alg.getint("ls_degree"),
        variant=alg.get("variant", "ls1").strip().lower(),
        binning=alg.get("binning", "auto").strip().lower(),
        runs=alg.getint("runs", 1),
        seed_q1=seeds.getint("q1"),
        seed_q2=seeds.getint("q2"),
        seed_q3=seeds.getint("q3"),
        itm_only=_get_bool(alg, "itm_only"),
        include_ls2prime=_get_bool(alg, "include_ls2prime"),
        refresh_q1=_get_bool(alg, "refresh_q1"),
        experiment_id=alg.get("experiment_id", ""),
    )


def resolved_binning(config: ExperimentConfig) -> str:
    """Basket deltas depend on the basket level, so bin that; otherwise
    bin each coordinate."""
    if config.binning != "auto":
        return config.binning
    return "mean" if config.payoff.kind == "basket_put" else "coordinate"


def derive_seed(base: int, stream: int, index: int) -> int:
    """Stable 64-bit seed for one sample set of one run."""
    state = np.random.SeedSequence([base, stream, index]).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


class _SeedLedger:
    """Tracks every seed handed to the simulator; reuse is a bug."""

    def __init__(self):
        self.used: set[int] = set()

    def take(self, seed: int) -> int:
        if seed in self.used:
            raise AssertionError(f"seed {seed} reused across sample sets")
        self.used.add(seed)
        return seed


def fit_martingale_for(config: ExperimentConfig, run_index: int = 0) -> DualMartingale:
    """Fit the dual martingale on the configured Q1 sample."""
    seed = derive_seed(config.seed_q1, 1, run_index if config.refresh_q1 else 0)
    paths = simulate_paths(config.model, config.q1, seed)
    z = discounted_payoffs(paths, config.payoff)
    basis = increment_basis_from_paths(paths, config.p_local, resolved_binning(config))
    return fit_dual_coefficients(paths, z, basis)


def _policy_variants(config: ExperimentConfig) -> list[str]:
    variants = ["ls1"]
    if config.variant != "ls1":
        variants.append(config.variant)
    if config.include_ls2prime:
        variants.append("ls2prime")
    return variants


def _check_weak_duality(dual_est: PriceEstimate, cv_est: PriceEstimate, where: str) -> None:
    se_d = dual_est.stderr or 0.0
    se_c = cv_est.stderr or 0.0
    slack = 3.0 * float(np.hypot(se_d, se_c))
    if dual_est.mean < cv_est.mean - slack:
        raise WeakDualityError(
            f"{where}: dual {dual_est.mean:.6f} < cv {cv_est.mean:.6f} - {slack:.6f}"
        )


def _aggregate(per_run: list[float]) -> tuple[float, float | None]:
    arr = np.asarray(per_run)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size >= 2 else None
    return mean, std


def run_experiment(
    config: ExperimentConfig, martingale: DualMartingale | None = None
) -> ExperimentResult:
    """Run the full three-sample protocol R times and aggregate.

    Unless refresh_q1 is set, the martingale is fitted once (or taken
    from the caller) and shared across runs; run-to-run variability then
    comes from the policy fit and the evaluation sample only.  Raises
    WeakDualityError if any run prices the dual below the control-variate
    primal beyond three combined standard errors.
    """
    t0 = time.perf_counter()
    ledger = _SeedLedger()
    dm = martingale
    if dm is None and not config.refresh_q1:
        seed1 = ledger.take(derive_seed(config.seed_q1, 1, 0))
        paths1 = simulate_paths(config.model, config.q1, seed1)
        basis = increment_basis_from_paths(paths1, config.p_local, resolved_binning(config))
        dm = fit_dual_coefficients(paths1, discounted_payoffs(paths1, config.payoff), basis)

    ls_basis = build_polynomial_basis(config.ls_degree, config.model.d)
    variants = _policy_variants(config)
    run_estimates: list[dict[str, PriceEstimate]] = []
    for r in range(config.runs):
        if config.refresh_q1:
            seed1 = ledger.take(derive_seed(config.seed_q1, 1, r))
            paths1 = simulate_paths(config.model, config.q1, seed1)
            basis = increment_basis_from_paths(paths1, config.p_local, resolved_binning(config))
            dm = fit_dual_coefficients(paths1, discounted_payoffs(paths1, config.payoff), basis)

        paths2 = simulate_paths(config.model, config.q2, ledger.take(derive_seed(config.seed_q2, 2, r)))
        z2 = discounted_payoffs(paths2, config.payoff)
        m2 = evaluate_martingale(dm, paths2)
        states2 = paths2.exercise_values()
        policies = {
            v: fit_policy(z2, m2 if v != "ls1" else None, states2, ls_basis, v, config.itm_only)
            for v in variants
        }

        paths3 = simulate_paths(config.model, config.q3, ledger.take(derive_seed(config.seed_q3, 3, r)))
        z3 = discounted_payoffs(paths3, config.payoff)
        m3 = evaluate_martingale(dm, paths3)
        states3 = paths3.exercise_values()

        estimates: dict[str, PriceEstimate] = {}
        for v, pol in policies.items():
            tau = apply_policy(pol, z3, m3 if v != "ls1" else None, states3)
            if v == "ls1":
                estimates["ls1"] = mc_price(z3, tau)
            estimates[f"cv_{v}"] = cv_price(z3, m3, tau)
        estimates["dual"] = dual_price(z3, m3)
        _check_weak_duality(estimates["dual"], estimates[f"cv_{config.variant}"], f"run {r}")
        run_estimates.append(estimates)

    seconds = time.perf_counter() - t0
    dual_mean, dual_std = _aggregate([e["dual"].mean for e in run_estimates])
    rows = []
    for method in ["ls1"] + [f"cv_{v}" for v in variants] + ["dual"]:
        prices = [e[method].mean for e in run_estimates]
        mean, std = _aggregate(prices)
        lams = [e[method].lam for e in run_estimates if e[method].lam is not None]
        rows.append(
            ResultRow(
                experiment_id=config.experiment_id,
                method=method,
                price=mean,
                stddev=std,
                lam=float(np.mean(lams)) if lams else None,
                dual_price=dual_mean,
                dual_stddev=dual_std,
                q1=config.q1,
                q2=config.q2,
                q3=config.q3,
                nbar=config.nbar,
                p_local=config.p_local,
                runs=config.runs,
                seconds=seconds,
            )
        )
    agg = {m: r for m, r in zip(["ls1"] + [f"cv_{v}" for v in variants] + ["dual"], rows)}
    cv_row = agg[f"cv_{config.variant}"]
    se_c = (cv_row.stddev or 0.0) / np.sqrt(config.runs)
    se_d = (dual_std or 0.0) / np.sqrt(config.runs)
    if dual_mean < cv_row.price - 3.0 * float(np.hypot(se_c, se_d)):
        raise WeakDualityError("aggregate: dual price below control-variate price")
    return ExperimentResult(rows=rows, martingale=dm, run_estimates=run_estimates)


def run_histogram(config: ExperimentConfig, martingale: DualMartingale | None = None):
    """Compare the proxy random time with the LS1 stop time on fresh paths.

    Returns (differences, counts) of tau_proxy - tau_ls1 over the Q3 set.
    """
    ledger = _SeedLedger()
    dm = martingale
    if dm is None:
        seed1 = ledger.take(derive_seed(config.seed_q1, 1, 0))
        paths1 = simulate_paths(config.model, config.q1, seed1)
        basis = increment_basis_from_paths(paths1, config.p_local, resolved_binning(config))
        dm = fit_dual_coefficients(paths1, discounted_payoffs(paths1, config.payoff), basis)

    paths2 = simulate_paths(config.model, config.q2, ledger.take(derive_seed(config.seed_q2, 2, 0)))
    z2 = discounted_payoffs(paths2, config.payoff)
    pol = fit_policy(
        z2, None, paths2.exercise_values(), build_polynomial_basis(config.ls_degree, config.model.d),
        "ls1", config.itm_only,
    )

    paths3 = simulate_paths(config.model, config.q3, ledger.take(derive_seed(config.seed_q3, 3, 0)))
    z3 = discounted_payoffs(paths3, config.payoff)
    m3 = evaluate_martingale(dm, paths3)
    tau_ls = apply_policy(pol, z3, None, paths3.exercise_values())
    proxy = proxy_policy(z3, m3)
    tau0 = StopTimes(tau=proxy.tau0, n_dates=config.model.N)
    return policy_histogram(tau0, tau_ls)


def run_variance_decomposition(
    config: ExperimentConfig, frozen_policy: bool = False
) -> VarianceDecomposition:
    """Repeat the LS pricing R times and split the estimator variance.

    With frozen_policy the stopping rule is fitted once and only the Q3
    evaluation sample is refreshed, which removes the policy-estimation
    part of the variance.
    """
    if config.runs < 2:
        raise ValueError("variance decomposition needs runs >= 2")
    ledger = _SeedLedger()
    ls_basis = build_polynomial_basis(config.ls_degree, config.model.d)
    pol = None
    samples = []
    for r in range(config.runs):
        if pol is None or not frozen_policy:
            paths2 = simulate_paths(
                config.model, config.q2, ledger.take(derive_seed(config.seed_q2, 2, r))
            )
            z2 = discounted_payoffs(paths2, config.payoff)
            pol = fit_policy(z2, None, paths2.exercise_values(), ls_basis, "ls1", config.itm_only)
        paths3 = simulate_paths(config.model, config.q3, ledger.take(derive_seed(config.seed_q3, 3, r)))
        z3 = discounted_payoffs(paths3, config.payoff)
        tau = apply_policy(pol, z3, None, paths3.exercise_values())
        samples.append(stopped_values(z3.z, tau))
    return variance_decomposition(samples)


def _oracle_check(name: str, errors) -> IdentityCheck:
    err = float(np.max(np.atleast_1d(np.asarray(errors, dtype=float))))
    return IdentityCheck(name=name, passed=err <= 1e-10, max_error=err)


def run_oracle_suite() -> IdentityReport:
    """Exact-world verification: tree identities plus the Monte-Carlo
    machinery evaluated where the true Doob martingale is known.

    Uses risk-neutral trees with p = 1/2 so that the enumerated paths are
    an equal-weight sample, making the Monte-Carlo identities exact.
    """
    checks: list[IdentityCheck] = []
    put = PayoffSpec.put(100.0)
    for n_steps in (3, 5):
        for tree in (
            TreeModel(N=n_steps, u=1.2, d=0.8, p=0.5, s0=100.0),
            TreeModel(N=n_steps, u=1.15, d=0.9, p=0.4, s0=95.0, discount=0.98),
        ):
            sol = oracle.solve_tree(tree, put)
            report = oracle.exact_identity_checks(tree, sol)
            tag = f"tree N={tree.N} p={tree.p}"
            checks.extend(
                IdentityCheck(name=f"{tag}: {c.name}", passed=c.passed, max_error=c.max_error, detail=c.detail)
                for c in report.checks
            )

    # Monte-Carlo identities on the p = 1/2 tree with the exact martingale.
    tree = TreeModel(N=5, u=1.2, d=0.8, p=0.5, s0=100.0)
    sol = oracle.solve_tree(tree, put)
    paths = oracle.enumerate_paths(tree)
    proc = oracle.path_processes(tree, sol, paths)
    from .dual_martingale import MartingaleMatrix
    from .market import PayoffMatrix

    z = PayoffMatrix(z=proc["z"].copy())
    m_star = MartingaleMatrix(m=proc["m"].copy())
    tau_star = StopTimes(tau=proc["tau_star"].copy(), n_dates=tree.N)
    u0 = sol.u0

    dual_est = dual_price(z, m_star)
    checks.append(_oracle_check("dual estimator equals U_0 with zero spread",
                                [abs(dual_est.mean - u0), dual_est.stderr or 0.0]))
    cv_est = cv_price(z, m_star, tau_star)
    checks.append(_oracle_check("control variate collapses to U_0 (stderr 0, lambda 1)",
                                [abs(cv_est.mean - u0), cv_est.stderr or 0.0, abs((cv_est.lam or 0.0) - 1.0)]))
    proxy = proxy_policy(z, m_star)
    checks.append(_oracle_check("proxy time matches the optimal policy",
                                np.abs(proxy.tau0 - proc["tau_star"]).astype(float)))
    checks.append(_oracle_check("proxy stopped value equals U_0 on every path",
                                np.abs(proxy.pathmax - u0)))
    return IdentityReport(checks=tuple(checks))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_result_csv(rows: list[ResultRow], destination) -> None:
    """Result table with the fixed, versioned column layout."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.experiment_id,
                row.method,
                _fmt(row.price),
                _fmt(row.stddev),
                _fmt(row.lam),
                _fmt(row.dual_price),
                _fmt(row.dual_stddev),
                row.q1,
                row.q2,
                row.q3,
                row.nbar,
                row.p_local,
                row.runs,
                _fmt(row.seconds),
            ]
        )
    Path(destination).write_text(out.getvalue())


def write_histogram_csv(diffs: np.ndarray, counts: np.ndarray, destination) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["difference", "count"])
    for dv, cv in zip(diffs, counts):
        writer.writerow([int(dv), int(cv)])
    Path(destination).write_text(out.getvalue())
