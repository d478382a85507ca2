"""Convergence studies: presets, the experiment driver, rate fitting and
CSV/JSON output.
"""
from dataclasses import asdict, dataclass
import csv
import json
import logging
import math
from pathlib import Path
import time

import numpy as np

from .errors import ParameterError, SolverFailure
from .fem import assemble_damping, assemble_mass, assemble_stiffness, damping_from_dict
from .field import DEFAULT_SEED, check_diffusion, eval_per_element, field_from_dict
from .linalg import SPD, factor
from .lod import LodContext, build_basis, compress
from .mesh import build_uniform
from .qep import QepSystem, match_spectra, solve_coarse, solve_fine

log = logging.getLogger(__name__)

CSV_COLUMNS = ["H_diam", "ell", "eig_index", "lambda_ref_re", "lambda_ref_im",
               "lambda_H_re", "lambda_H_im", "rel_error", "flagged"]


def ell_from_rule(rule, H_diam):
    """Localization parameter for a coarse mesh of diameter ``H_diam``.

    ``{"kind": "ceil_c_log", "c": c}`` gives ceil(c * ln(1/H_diam));
    ``{"kind": "fixed", "ell": l}`` gives l.
    """
    kind = rule.get("kind")
    if kind == "ceil_c_log":
        return max(1, math.ceil(float(rule["c"]) * math.log(1.0 / H_diam)))
    if kind == "fixed":
        ell = int(rule["ell"])
        if ell < 1:
            raise ParameterError("fixed ell must be >= 1")
        return ell
    raise ParameterError(f"unknown ell rule {rule!r}")


def default_coarse_levels(fine_level):
    top = min(fine_level - 2, 6) if fine_level >= 8 else min(fine_level - 2, 5)
    return list(range(2, top + 1))


@dataclass
class ExperimentConfig:
    name: str
    fine_level: int
    coarse_levels: list
    ell_rule: dict
    diffusion: dict
    damping: dict
    nev: int = 8
    tol: float = 1e-10
    ncv: int = None
    seed: int = DEFAULT_SEED
    fit_exclude_coarsest: int = 0
    threads: int = 1

    def validate(self):
        if not 1 <= self.fine_level <= 12:
            raise ParameterError(f"fine_level must be in [1, 12], got {self.fine_level}")
        if any(not 1 <= c < self.fine_level for c in self.coarse_levels):
            raise ParameterError(
                f"coarse levels {self.coarse_levels} must lie in [1, fine_level={self.fine_level})")
        if self.nev < 2 or self.nev % 2:
            raise ParameterError(f"nev must be even and >= 2, got {self.nev}")
        if self.ncv is not None and self.ncv <= self.nev:
            raise ParameterError(f"ncv={self.ncv} must exceed nev={self.nev}")
        ell_from_rule(self.ell_rule, 0.5)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ParameterError(f"invalid experiment config: {exc}") from exc
        cfg.coarse_levels = [int(c) for c in cfg.coarse_levels]
        return cfg.validate()


_SIN_DAMPING = {"variant": "smooth",
                "parameters": {"expression": "sin_x1", "offset": 1.0, "amplitude": 1.0,
                               "frequency": 10.0}}


def _composite(background, inclusion):
    return {"variant": "composite",
            "parameters": {"background": background, "inclusion": inclusion,
                           "periods": 8, "inclusion_fraction": 0.5}}


def preset(name, fine_level=7, seed=DEFAULT_SEED, swap_regions=False):
    """Configuration of one of the four reference experiments.

    Composite presets put the second material value in the inclusions;
    ``swap_regions`` assigns it to the matrix material instead.
    """
    def comp(omega1, rest):
        return _composite(rest, omega1) if swap_regions else _composite(omega1, rest)

    common = dict(fine_level=fine_level, coarse_levels=default_coarse_levels(fine_level),
                  seed=seed)
    if name == "exp1":
        return ExperimentConfig("exp1", ell_rule={"kind": "ceil_c_log", "c": 3.0},
                                diffusion={"variant": "constant", "parameters": {"value": 1.0}},
                                damping={"type": "mass", "weight": _SIN_DAMPING}, **common)
    if name == "exp2":
        return ExperimentConfig("exp2", ell_rule={"kind": "ceil_c_log", "c": 3.0},
                                diffusion={"variant": "random_grid",
                                           "parameters": {"n": 64, "low": 0.003, "high": 1.0,
                                                          "seed": seed}},
                                damping={"type": "mass", "weight": _SIN_DAMPING}, **common)
    if name == "exp3":
        return ExperimentConfig("exp3", ell_rule={"kind": "ceil_c_log", "c": 3.0},
                                diffusion=comp(1.0, 0.1),
                                damping={"type": "mass", "weight": comp(1.1, 0.1)}, **common)
    if name == "exp4":
        return ExperimentConfig("exp4", ell_rule={"kind": "ceil_c_log", "c": 2.0},
                                diffusion=comp(1.0, 0.1),
                                damping={"type": "stiffness", "weight": comp(0.006, 0.015)},
                                fit_exclude_coarsest=1, ncv=100, **common)
    raise ParameterError(f"unknown preset {name!r}")


PRESETS = ("exp1", "exp2", "exp3", "exp4")


def fit_rate(points):
    """Least-squares slope of log(error) against log(H)."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 2:
        raise ParameterError("rate fit needs at least two points")
    if any(e <= 0 or h <= 0 for h, e in pts):
        raise ParameterError("rate fit needs positive mesh sizes and errors")
    x = np.log([h for h, _ in pts])
    y = np.log([e for _, e in pts])
    if np.ptp(x) == 0:
        raise ParameterError("rate fit needs distinct mesh sizes")
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


@dataclass
class MatchRow:
    eig_index: int
    lambda_ref_re: float
    lambda_ref_im: float
    lambda_H_re: float
    lambda_H_im: float
    rel_error: float
    flagged: bool


@dataclass
class LevelResult:
    coarse_level: int
    H_spacing: float
    H_diam: float
    ell: int
    n_coarse_dofs: int
    max_coarse_residual: float
    conjugate_closed: bool
    saddle_point_solves: int
    timings: dict
    matches: list

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["matches"] = [MatchRow(**m) for m in doc["matches"]]
        return cls(**doc)


@dataclass
class ConvergenceReport:
    name: str
    config: dict
    reference: dict
    levels: list
    slopes: dict
    envelope_slope: float
    timings: dict
    assumption_c_flags: int
    fit_exclude_coarsest: int = 0

    def points(self, eig_index=None):
        """(H_diam, error) pairs used for fitting, excluded levels dropped.

        With ``eig_index`` the flagged matches of that eigenvalue are dropped.
        Without it the points form the max-error envelope, and a level with
        any flagged match is dropped as a whole: the max over a level-dependent
        subset of eigenvalues would not be one curve.
        """
        levels = sorted(self.levels, key=lambda lv: -lv.H_diam)[self.fit_exclude_coarsest:]
        out = []
        for lv in levels:
            if eig_index is None:
                if lv.matches and not any(m.flagged for m in lv.matches):
                    out.append((lv.H_diam, max(m.rel_error for m in lv.matches)))
                continue
            errs = [m.rel_error for m in lv.matches if not m.flagged and m.eig_index == eig_index]
            if errs:
                out.append((lv.H_diam, max(errs)))
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["levels"] = [LevelResult.from_dict(lv) for lv in doc["levels"]]
        doc["slopes"] = {int(k): v for k, v in doc["slopes"].items()}
        return cls(**doc)


def _safe_rate(points):
    pts = [(h, e) for h, e in points if e > 0]
    if len(pts) < 2:
        return None
    return fit_rate(pts)


def build_system(config):
    """Fine mesh, diffusion values and the fine QEP matrices of a configuration."""
    fine = build_uniform(config.fine_level)
    kappa = check_diffusion(eval_per_element(field_from_dict(config.diffusion), fine))
    K = assemble_stiffness(fine, kappa)
    M = assemble_mass(fine)
    D = assemble_damping(fine, damping_from_dict(config.damping), K=K, M=M)
    return fine, kappa, QepSystem(K, D, M, "fine")


class StageError(SolverFailure):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.__cause__ = exc


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except SolverFailure as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def run_experiment(config, threads=None):
    """Reference solve plus one LOD solve per coarse level; returns a ConvergenceReport."""
    config.validate()
    threads = threads or config.threads
    timings = {}
    fine, kappa, system = _stage("assembly", timings, build_system, config)
    K_fact = _stage("assembly", timings, factor, system.K, SPD)
    ref = _stage("reference_solve", timings, solve_fine, system, config.nev, config.tol,
                 seed=config.seed, ncv=config.ncv, K_fact=K_fact)
    log.info("%s: reference eigenvalues %s", config.name, np.round(ref.eigenvalues[:config.nev], 6))

    levels = []
    for kc in config.coarse_levels:
        coarse = build_uniform(kc)
        ell = ell_from_rule(config.ell_rule, coarse.diameter)
        lt = {}
        ctx = _stage("basis", lt, LodContext, coarse, fine, kappa)
        basis = _stage("basis", lt, build_basis, coarse, fine, kappa, ell, threads=threads, ctx=ctx)
        Kc, Dc, Mc = (_stage("compress", lt, compress, basis, X)
                      for X in (system.K, system.D, system.M))
        spec = _stage("coarse_solve", lt, solve_coarse, Kc, Dc, Mc, H=coarse.diameter, ell=ell)
        matches = match_spectra(ref, spec, config.nev)
        for k, v in lt.items():
            timings[k] = timings.get(k, 0.0) + v
        levels.append(LevelResult(
            coarse_level=kc, H_spacing=coarse.spacing, H_diam=coarse.diameter, ell=ell,
            n_coarse_dofs=coarse.n_interior,
            max_coarse_residual=float(spec.residuals.max()),
            conjugate_closed=spec.is_conjugate_closed(),
            saddle_point_solves=basis.stats["saddle_point_solves"], timings=lt,
            matches=[MatchRow(i, m.lambda_ref.real, m.lambda_ref.imag, m.lambda_H.real,
                              m.lambda_H.imag, m.rel_error, m.flagged)
                     for i, m in enumerate(matches)]))
        log.info("%s: level %d (H=%.4f, ell=%d) max rel. error %.3e", config.name, kc,
                 coarse.diameter, ell, max(m.rel_error for m in matches))

    reference = {"eigenvalues": [{"re": v.real, "im": v.imag, "residual": r}
                                 for v, r in zip(ref.eigenvalues, ref.residuals)],
                 "conjugate_closed": ref.is_conjugate_closed(),
                 "max_residual": float(ref.residuals.max()), "tol": config.tol,
                 "ncv": config.ncv,
                 "seed": config.seed}
    report = ConvergenceReport(
        name=config.name, config=config.to_dict(), reference=reference, levels=levels,
        slopes={}, envelope_slope=None, timings=timings,
        assumption_c_flags=sum(m.flagged for lv in levels for m in lv.matches),
        fit_exclude_coarsest=config.fit_exclude_coarsest)
    report.slopes = {i: _safe_rate(report.points(i)) for i in range(config.nev)}
    report.envelope_slope = _safe_rate(report.points())
    return report


def emit(report, directory, corrector_dump=None):
    """Write errors.csv and report.json (and corrector_dump.csv if rows are given)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "errors.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for lv in report.levels:
            for m in lv.matches:
                w.writerow([repr(lv.H_diam), lv.ell, m.eig_index, repr(m.lambda_ref_re),
                            repr(m.lambda_ref_im), repr(m.lambda_H_re), repr(m.lambda_H_im),
                            repr(m.rel_error), int(m.flagged)])
    with open(directory / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    written = [directory / "errors.csv", directory / "report.json"]
    if corrector_dump is not None:
        path = directory / "corrector_dump.csv"
        write_grid_csv(path, corrector_dump)
        written.append(path)
    return written


def write_grid_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "value"])
        for x, y, v in rows:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def load_report(path):
    with open(path) as f:
        return ConvergenceReport.from_dict(json.load(f))
