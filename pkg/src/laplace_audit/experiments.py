"""Sweep runner for the logistic experiments and the mixture demo.

A sweep visits every ``(n, p, seed)`` cell, fits the Laplace approximation
to synthetic data and writes one CSV row per estimator. Cells draw from
streams keyed by ``(n, p, seed)``, so the numbers do not depend on the
number of workers or on the order in which cells finish.

Config files are flat TOML, for example::

    model = "logistic"
    p = [10]
    n = [10, 30, 100, 300, 1000, 3000]
    seeds = [1, 2, 3, 4, 5]
    diag_samples = 50000
    chain_iterations = 60000
    warmup = 10000
    estimators = ["klvar", "lsi", "reference_direct", "reference_chain"]
"""
from __future__ import annotations

import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diagnostics import (
    KlEstimate,
    combine_klvar_lsi,
    estimate_klvar,
    estimate_var_elbo,
    klvar_from_deltas,
    radial_fisher_terms,
    sample_deltas,
)
from .geometry import RngStream
from .laplace import build_laplace, find_map, standardize
from .reference import autocorr_gate, kl_direct_from_deltas, kl_quadrature_1d, kl_via_chain, nuts_sample
from .targets import generate_logistic_data, logistic_target, mixture_target_1d
from .taylor import TENSOR_DIM_GUARD, compute_tensors, taylor_klvar, taylor_lsi

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

CSV_COLUMNS = ["model", "n", "p", "seed", "estimator", "value", "std_error", "runtime_ms", "gate", "notes"]

ESTIMATOR_CHOICES = ("klvar", "lsi", "var_elbo", "taylor3", "taylor4", "reference_direct", "reference_chain")

#: Paper-scale grid behind ``--full``.
FULL_P = [10, 30, 100, 300, 1000]
FULL_N = [10, 30, 100, 300, 1000, 3000, 5600]

#: Chains for p above this use 260 000 iterations thinned 1-in-5.
LARGE_P_THRESHOLD = 100


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition.

    Attributes
    ----------
    model : str
        Only ``"logistic"`` is supported.
    n_values, p_values, seeds : tuple of int
    diag_samples : int
        Draws for the sampling diagnostics.
    chain_iterations, warmup : int
        Total NUTS iterations and how many of them are discarded.
    estimators : tuple of str
        Subset of :data:`ESTIMATOR_CHOICES`.
    var_elbo : (int, int)
        Outer and inner sample sizes for varELBO.
    target_accept : float
    record_timing : bool
        Write measured runtimes; off by default so reruns are byte-identical.
    workers : int
    backend : str
        ``auto``, ``cython`` or ``python``.
    taylor_guard : int
    """

    model: str = "logistic"
    n_values: tuple = (10, 30, 100, 300, 1000, 3000)
    p_values: tuple = (5, 10, 30)
    seeds: tuple = (1, 2, 3, 4, 5)
    diag_samples: int = 50_000
    chain_iterations: int = 60_000
    warmup: int = 10_000
    estimators: tuple = ("klvar", "lsi", "reference_direct", "reference_chain")
    var_elbo: tuple = (2000, 100)
    target_accept: float = 0.8
    record_timing: bool = False
    workers: int = 1
    backend: str = "auto"
    taylor_guard: int = TENSOR_DIM_GUARD

    def __post_init__(self):
        if self.model != "logistic":
            raise ValueError(f"unsupported model {self.model!r}")
        bad = [e for e in self.estimators if e not in ESTIMATOR_CHOICES]
        if bad:
            raise ValueError(f"unknown estimators {bad}; choose from {ESTIMATOR_CHOICES}")
        cells = self.cells()
        if len(set(cells)) != len(cells):
            raise ValueError("duplicate (n, p, seed) cells in config")
        if self.warmup < 100 or self.chain_iterations <= self.warmup:
            raise ValueError("need warmup >= 100 and chain_iterations > warmup")

    def cells(self) -> list[tuple[int, int, int]]:
        return [(n, p, s) for p in self.p_values for n in self.n_values for s in self.seeds]

    def with_full_grid(self) -> "ExperimentConfig":
        return replace(self, n_values=tuple(FULL_N), p_values=tuple(FULL_P))


def load_config(path) -> ExperimentConfig:
    """Read a flat TOML config; unknown keys are rejected."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    keymap = {"n": "n_values", "p": "p_values"}
    kwargs = {}
    names = {f for f in ExperimentConfig.__dataclass_fields__}
    for k, v in raw.items():
        key = keymap.get(k, k)
        if key not in names:
            raise ValueError(f"unknown config key {k!r}")
        kwargs[key] = tuple(v) if isinstance(v, list) else v
    return ExperimentConfig(**kwargs)


@dataclass(frozen=True)
class ResultRow:
    """One CSV record."""

    model: str
    n: int
    p: int
    seed: int
    estimator: str
    value: float
    std_error: float
    runtime_ms: int = 0
    gate: bool | None = None
    notes: str = ""

    def to_fields(self) -> list[str]:
        gate = "" if self.gate is None else ("true" if self.gate else "false")
        return [self.model, str(self.n), str(self.p), str(self.seed), self.estimator,
                _fmt(self.value), _fmt(self.std_error), str(int(self.runtime_ms)), gate, self.notes]

    @classmethod
    def from_fields(cls, rec: dict) -> "ResultRow":
        gate = {"true": True, "false": False}.get(rec.get("gate", ""), None)
        return cls(rec["model"], int(rec["n"]), int(rec["p"]), int(rec["seed"]), rec["estimator"],
                   float(rec["value"]), float(rec["std_error"]), int(rec["runtime_ms"]), gate,
                   rec.get("notes", ""))


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.17g}"


def expected_estimators(config: ExperimentConfig, p: int) -> list[str]:
    """Row names a cell produces, in write order."""
    est = set(config.estimators)
    out = []
    if "klvar" in est:
        out.append("klvar")
    if "lsi" in est:
        out.append("lsi")
    if {"klvar", "lsi"} <= est:
        out.append("klvar_plus_lsi")
    if "var_elbo" in est:
        out.append("var_elbo")
        if "lsi" in est:
            out.append("varelbo_plus_lsi")
    if "taylor3" in est:
        out += ["taylor3_klvar", "taylor3_lsi"]
    if "taylor4" in est:
        out += ["taylor_klvar", "taylor_lsi"]
    if "reference_direct" in est:
        out.append("kl_direct")
    if "reference_chain" in est:
        out.append("kl_chain")
    return out


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = int(round(1000 * (time.perf_counter() - self.t0))) if self.enabled else 0


def run_cell(config: ExperimentConfig, n: int, p: int, seed: int) -> list[ResultRow]:
    """Compute every enabled estimator for one ``(n, p, seed)`` cell.

    Failures become rows with a NaN value and an error note.
    """
    names = expected_estimators(config, p)
    try:
        return _run_cell(config, n, p, seed, names)
    except Exception as exc:  # recorded, never raised
        msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        return [ResultRow(config.model, n, p, seed, e, float("nan"), float("nan"), 0, None, msg)
                for e in names]


def _run_cell(config, n, p, seed, names):
    est = set(config.estimators)
    timing = config.record_timing
    rng = RngStream(seed, 0xCE11).child(n, p)
    data = generate_logistic_data(n, p, seed)
    target = logistic_target(data)
    mu = find_map(target, init=np.full(p, 1.0 / np.sqrt(p)))
    st = standardize(target, build_laplace(target, mu))
    s = config.diag_samples
    results: dict[str, tuple[KlEstimate | None, float, int, bool | None]] = {}

    def put(name, estimate, ms, gate=None, value=None, notes=""):
        results[name] = (estimate, value, ms, gate, notes)

    deltas = None
    need_deltas = est & {"klvar", "reference_direct", "reference_chain"}
    if need_deltas:
        with _Clock(timing) as c_d:
            deltas = sample_deltas(st, s, rng.child(1))
    if "klvar" in est:
        with _Clock(timing) as c:
            kv = klvar_from_deltas(deltas)
        put("klvar", kv, c.ms + c_d.ms)
    if "lsi" in est:
        with _Clock(timing) as c:
            v = radial_fisher_terms(st, s, rng.child(2))
            scale = 1.0 / (2.0 * p ** (2.0 / 3.0))
            lsi = KlEstimate(scale * float(v.mean()), scale * float(v.std(ddof=1) / np.sqrt(s)), s, "lsi")
        put("lsi", lsi, c.ms)
    if "klvar_plus_lsi" in names:
        comb = combine_klvar_lsi(results["klvar"][0], results["lsi"][0])
        put("klvar_plus_lsi", comb, results["klvar"][2] + results["lsi"][2])
    if "var_elbo" in est:
        se_, sr_ = config.var_elbo
        with _Clock(timing) as c:
            ve = estimate_var_elbo(st, int(se_), int(sr_), rng.child(3))
        put("var_elbo", ve, c.ms)
        if "lsi" in est:
            lsi = results["lsi"][0]
            comb = KlEstimate(ve.value + lsi.value, float(np.hypot(ve.std_error, lsi.std_error)),
                              min(ve.n_samples, lsi.n_samples), "varelbo_plus_lsi", ve.notes)
            put("varelbo_plus_lsi", comb, c.ms + results["lsi"][2])
    for tag, prefix in (("taylor3", "taylor3_"), ("taylor4", "taylor_")):
        if tag not in est:
            continue
        if p > config.taylor_guard:
            note = f"skipped: p = {p} above taylor guard {config.taylor_guard}"
            put(prefix + "klvar", None, 0, value=float("nan"), notes=note)
            put(prefix + "lsi", None, 0, value=float("nan"), notes=note)
            continue
        with _Clock(timing) as c:
            T3, T4 = compute_tensors(st, "analytic", max_dim=config.taylor_guard)
            t4 = T4.data if tag == "taylor4" else np.zeros_like(T4.data)
            tk = 0.5 * taylor_klvar(T3.data, t4)
            tl = taylor_lsi(T3.data, t4)
        put(prefix + "klvar", None, c.ms, value=tk, notes="half the closed-form variance")
        put(prefix + "lsi", None, c.ms, value=tl)
    if "reference_direct" in est:
        with _Clock(timing) as c:
            kd = kl_direct_from_deltas(deltas)
        put("kl_direct", kd, c.ms + c_d.ms, notes=kd.notes)
    if "reference_chain" in est:
        with _Clock(timing) as c:
            chain = _run_chain(config, target, st, p, rng)
            gate = autocorr_gate(chain.phi_values)
            kc = kl_via_chain(st, chain, s, g_deltas=deltas, require_gate=False)
        note = kc.notes
        if chain.n_divergences:
            note = "; ".join(x for x in (note, f"{chain.n_divergences} divergences") if x)
        put("kl_chain", kc, c.ms + c_d.ms, gate=gate.passed, notes=note)

    rows = []
    for name in names:
        estimate, value, ms, gate, notes = results[name]
        if estimate is not None:
            value, se = estimate.value, estimate.std_error
            notes = notes or estimate.notes
        else:
            se = 0.0
        rows.append(ResultRow(config.model, n, p, seed, name, float(value), float(se), ms, gate, notes))
    return rows


def _run_chain(config, target, st, p, rng):
    backend = None if config.backend == "auto" else config.backend
    chain_seed = int(rng.child(4).integers(0, 2**63))
    kept = config.chain_iterations - config.warmup
    if p > LARGE_P_THRESHOLD:
        chain = nuts_sample(target, n_samples=5 * kept, n_warmup=config.warmup, seed=chain_seed,
                            target_accept=config.target_accept, st=st, backend=backend)
        sl = slice(None, None, 5)
        return replace(chain, samples=chain.samples[sl], phi_values=chain.phi_values[sl],
                       samples_tilde=chain.samples_tilde[sl], accept_stat=chain.accept_stat[sl],
                       n_leapfrog=chain.n_leapfrog[sl], tree_depth=chain.tree_depth[sl])
    return nuts_sample(target, n_samples=kept, n_warmup=config.warmup, seed=chain_seed,
                       target_accept=config.target_accept, st=st, backend=backend)


def read_rows(path) -> list[ResultRow]:
    """Parse a results CSV; a missing or empty file gives no rows."""
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        return [ResultRow.from_fields(r) for r in csv.DictReader(fh)]


def run_sweep(config: ExperimentConfig, out_path, progress=None) -> int:
    """Run every cell not already complete in ``out_path``; return rows written.

    Rows are appended by a single writer in config order. Per-cell errors
    are recorded as rows and never abort the sweep.
    """
    out_path = Path(out_path)
    done = {(r.n, r.p, r.seed, r.estimator) for r in read_rows(out_path)}
    todo = [c for c in config.cells()
            if not all((c[0], c[1], c[2], e) in done for e in expected_estimators(config, c[1]))]
    new_file = not out_path.exists() or out_path.stat().st_size == 0
    written = 0
    with open(out_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_file:
            w.writerow(CSV_COLUMNS)
        for cell, rows in zip(todo, _map_cells(config, todo)):
            for r in rows:
                if (r.n, r.p, r.seed, r.estimator) in done:
                    continue
                w.writerow(r.to_fields())
                done.add((r.n, r.p, r.seed, r.estimator))
                written += 1
            fh.flush()
            if progress is not None:
                progress(cell, rows)
    return written


def _cell_job(args):
    config, cell = args
    return run_cell(config, *cell)


def _map_cells(config, cells):
    if config.workers <= 1 or len(cells) <= 1:
        return (run_cell(config, *c) for c in cells)
    ex = ProcessPoolExecutor(max_workers=config.workers)
    # executor.map yields in submission order, so the file order is fixed
    it = ex.map(_cell_job, [(config, c) for c in cells])

    def gen():
        try:
            yield from it
        finally:
            ex.shutdown()

    return gen()


# ---------------------------------------------------------------------------
# Counterexample demo
# ---------------------------------------------------------------------------

LOG_CONCAVITY_WARNING = (
    "WARNING: the KL-variance approximation is only justified for log-concave targets. "
    "A wide mixture component is not log-concave and is invisible to the Laplace "
    "approximation at the mode, so a near-zero KL-variance says nothing about the true divergence."
)


@dataclass
class MixtureReport:
    sigma_wide: float
    klvar: KlEstimate
    kl_quadrature: float
    ratio: float
    warning: str = LOG_CONCAVITY_WARNING

    def text(self) -> str:
        return (
            f"mixture counterexample, sigma_wide = {self.sigma_wide:g}\n"
            f"  KLvar/2 (sampling)   = {self.klvar.value:.6g} +- {self.klvar.std_error:.2g}\n"
            f"  KL (quadrature)      = {self.kl_quadrature:.6g}\n"
            f"  KL / (KLvar/2)       = {self.ratio:.4g}\n"
            f"{self.warning}"
        )


def demo_mixture(sigma_wide: float = 100.0, s: int = 50_000, seed: int = 0) -> MixtureReport:
    """Compare KLvar/2 with quadrature KL on the thin-plus-wide mixture."""
    target = mixture_target_1d(sigma_wide)
    mu = find_map(target, init=np.zeros(1))
    st = standardize(target, build_laplace(target, mu))
    kv = estimate_klvar(st, s, RngStream(seed, 0xD3))
    kl = kl_quadrature_1d(st)
    ratio = kl / kv.value if kv.value > 1e-12 else float("nan")
    return MixtureReport(float(sigma_wide), kv, kl, ratio)
