"""Stage orchestration, artifact layout and the run manifest.

Every stage reads its inputs from and writes its outputs to the output
directory, so stages can be run one command at a time or chained.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import (
    CurveComparison,
    continuous_poisson_three_step,
    jitter_quantile_fit,
    write_comparison_json,
)
from .config import RunConfig
from .dataio import Standardization, ingest_csv, write_dataset_csv
from .errors import ConfigError, DataError, StageError
from .mixture.io import dump_draws, load_draws
from .mixture.model import Dataset, PYParams, default_hyperparameters
from .mixture.pitman_yor import solve_py_params
from .mixture.sampler import Schedule, run_chain
from .quantiles import QuantileDrawMatrix, quantile_draws
from .regression import general_bayes_update, write_curves_csv
from .simulate import gen_setting1, gen_setting2, true_quantiles
from .splines import SplineBasis, SplineSpec
from .stochastic import make_rng

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATA = "data.csv"
SIMULATION = "simulation.json"
TRUTH = "truth.csv"
DRAWS = "draws.json"
TRACE = "cluster_trace.csv"
COMPARISON = "comparison.json"
REPORT_TXT = "report.txt"
REPORT_JSON = "report.json"


def tau_tag(tau: float) -> str:
    return f"{tau:g}"


def quantile_file(tau): return f"quantiles_tau{tau_tag(tau)}.csv"
def curve_file(tau): return f"curves_tau{tau_tag(tau)}.csv"
def regression_file(tau): return f"regression_tau{tau_tag(tau)}.json"
def baseline_file(method, tau): return f"baseline_{method}_tau{tau_tag(tau)}.csv"


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    versions: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    status: str = "partial"

    @classmethod
    def new(cls, cfg: RunConfig) -> "RunManifest":
        versions = {"countqr": __version__, "python": platform.python_version(),
                    "numpy": np.__version__, "scipy": scipy.__version__}
        return cls(cfg.to_dict(), versions)

    def record(self, stage: str, out: Path, files, seconds: float, error: str | None = None):
        entry = {"status": "failed" if error else "ok",
                 "files": {f: sha256(out / f) for f in sorted(files) if (out / f).exists()}}
        if error:
            entry["error"] = error
        self.stages[stage] = entry
        self.wall_clock[stage] = round(seconds, 3)
        self.status = "partial" if any(s["status"] != "ok" for s in self.stages.values()) else "complete"

    @property
    def checksums(self) -> dict:
        return {f: h for s in self.stages.values() for f, h in s["files"].items()}

    def to_dict(self) -> dict:
        return {"config": self.config, "versions": self.versions, "wall_clock": self.wall_clock,
                "stages": self.stages, "status": self.status}

    def save(self, out: Path) -> None:
        _write_json(Path(out) / MANIFEST, self.to_dict())

    @classmethod
    def load(cls, out) -> "RunManifest":
        path = Path(out) / MANIFEST
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataError(f"no manifest at {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt manifest {path}: {exc}") from exc
        if not d or "stages" not in d:
            raise DataError(f"manifest {path} is empty")
        return cls(d.get("config", {}), d.get("versions", {}), d.get("wall_clock", {}),
                   d["stages"], d.get("status", "partial"))


# ---------------------------------------------------------------------------
# shared loaders
# ---------------------------------------------------------------------------

def _data_path(cfg: RunConfig, out: Path) -> Path:
    if cfg.input:
        return Path(cfg.input)
    if (out / DATA).exists():
        return out / DATA
    raise ConfigError("no input data: pass --input or run the simulate command first")


def load_dataset(cfg: RunConfig, out: Path) -> Dataset:
    return ingest_csv(_data_path(cfg, out), cfg.response, cfg.covariates, cfg.exclude_rows)


def _spline_spec(cfg: RunConfig) -> SplineSpec:
    return SplineSpec(cfg.spline_degree, cfg.spline_knots, cfg.penalty_order, cfg.smoothing)


def _fit_meta(out: Path) -> tuple[list, dict]:
    if not (out / DRAWS).exists():
        raise DataError(f"{out / DRAWS} missing: run the fit command first")
    return load_draws(out / DRAWS)


def _model_inputs(data: Dataset, meta: dict):
    std = Standardization.from_dict(meta["standardization"])
    return std, std.apply(data.X)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_simulate(cfg: RunConfig, out: Path) -> list[str]:
    if cfg.setting is None:
        raise ConfigError("simulate needs a setting (1 or 2)")
    sim = (gen_setting1 if cfg.setting == 1 else gen_setting2)(cfg.n, cfg.seed)
    write_dataset_csv(out / DATA, sim.data)
    _write_json(out / SIMULATION, sim.metadata)
    grid = truth_grid(sim.data.X[:, 0], cfg.grid_points)
    with (out / TRUTH).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "grid_x", "y_star_true"])
        for tau in sorted(cfg.taus):
            tc = true_quantiles(cfg.setting, tau, grid)
            for gx, q in zip(tc.grid_x, tc.y_star_true):
                w.writerow([f"{tau:.17g}", f"{gx:.17g}", f"{q:.17g}"])
    return [DATA, SIMULATION, TRUTH]


def truth_grid(x, points: int) -> np.ndarray:
    """Comparison grid over the central 95% of the covariate."""
    lo, hi = np.quantile(np.asarray(x, dtype=float), [0.025, 0.975])
    return np.linspace(lo, hi, points)


def resolve_py(cfg: RunConfig, n: int) -> PYParams:
    if cfg.explicit_py:
        return PYParams(cfg.discount, cfg.strength)
    return solve_py_params(cfg.cluster_mean, cfg.cluster_sd, n)


def stage_fit(cfg: RunConfig, out: Path) -> list[str]:
    data = load_dataset(cfg, out)
    std = Standardization.fit(data.X) if cfg.standardize else Standardization.identity(data.p)
    model_data = Dataset(data.y, std.apply(data.X), data.column_names, data.response_name)
    base = default_hyperparameters(model_data)
    py = resolve_py(cfg, data.n)
    schedule = Schedule(cfg.burn_in, cfg.iterations, cfg.thin, cfg.M, rw_step=cfg.rw_step,
                        shared_fresh=cfg.shared_fresh)
    draws, chains = [], []
    with (out / TRACE).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "iteration", "n_clusters"])
        for c in range(cfg.chains):
            res = run_chain(model_data, base, py, schedule, make_rng(cfg.seed, c + 1),
                            prior_only=cfg.prior_only, paper_latent=cfg.paper_latent,
                            include_x_term=cfg.include_x_term)
            draws.extend(res.draws)
            w.writerows([c, t, int(k)] for t, k in enumerate(res.cluster_trace))
            chains.append({"chain": c, "stream_id": c + 1,
                           "acceptance": res.acceptance_rates(),
                           "retained_clusters": res.retained_clusters.tolist()})
    extra = {"standardization": std.to_dict(), "column_names": data.column_names,
             "response": data.response_name, "n": data.n, "chains": chains,
             "prior_only": cfg.prior_only}
    dump_draws(out / DRAWS, draws, py, base, extra)
    return [DRAWS, TRACE]


def stage_quantile(cfg: RunConfig, out: Path) -> list[str]:
    data = load_dataset(cfg, out)
    draws, meta = _fit_meta(out)
    _, Z = _model_inputs(data, meta)
    ids = [f"obs{i + 1}" for i in range(data.n)]
    mats = quantile_draws(draws, Z, cfg.taus, cfg.mode, cfg.quantile_tol, ids)
    files = []
    for tau, mat in mats.items():
        mat.to_csv(out / quantile_file(tau))
        files.append(quantile_file(tau))
    return files


def stage_regress(cfg: RunConfig, out: Path) -> list[str]:
    data = load_dataset(cfg, out)
    _, meta = _fit_meta(out)
    std, Z = _model_inputs(data, meta)
    files = []
    for tau in sorted(cfg.taus):
        path = out / quantile_file(tau)
        if not path.exists():
            raise DataError(f"{path} missing: run the quantile command first")
        rd = general_bayes_update(QuantileDrawMatrix.from_csv(path), Z, _spline_spec(cfg),
                                  data.column_names, cfg.grid_points)
        summaries = rd.summaries()
        for j, s in enumerate(summaries):
            s.grid = std.invert(s.grid, j)
        write_curves_csv(out / curve_file(tau), summaries)
        _write_json(out / regression_file(tau), {
            "tau": tau, "lambda": rd.lam, "intercepts": rd.intercepts.tolist(),
            "betas": rd.betas.tolist(), "bases": [b.to_dict() for b in rd.bases],
            "standardization": std.to_dict(), "column_names": data.column_names,
        })
        files += [curve_file(tau), regression_file(tau)]
    return files


def regression_curve(out: Path, tau: float, grid, j: int = 0) -> np.ndarray:
    """Posterior-mean quantile curve along covariate j, evaluated at original-scale ``grid``."""
    d = json.loads((out / regression_file(tau)).read_text())
    std = Standardization.from_dict(d["standardization"])
    bases = [SplineBasis(b["lower"], b["upper"],
                         SplineSpec(b["degree"], b["n_interior"], b["penalty_order"]))
             for b in d["bases"]]
    betas = np.asarray(d["betas"])
    parts = np.split(betas, np.cumsum([b.dim for b in bases])[:-1], axis=1)
    z = (np.asarray(grid, dtype=float) - std.means[j]) / std.sds[j]
    return float(np.mean(d["intercepts"])) + bases[j](z) @ parts[j].mean(axis=0)


def _baseline_curves(cfg: RunConfig, data: Dataset, grid, taus):
    if data.p != 1:
        raise ConfigError("baselines support a single covariate")
    x = data.X[:, 0]
    if cfg.baseline == "continuous-poisson":
        return continuous_poisson_three_step(data.y, x, taus, _spline_spec(cfg), cfg.bootstrap,
                                             cfg.seed, grid)
    curves = {}
    for tau in taus:
        curves[tau] = jitter_quantile_fit(data.y, x, tau, cfg.n_jitters, cfg.seed,
                                          SplineSpec(cfg.spline_degree, cfg.spline_knots, 1, cfg.smoothing),
                                          grid)
    first = next(iter(curves.values()))
    first.curves = {t: c.curves[t] for t, c in curves.items()}
    first.metadata["lambda"] = {t: c.metadata["lambda"] for t, c in curves.items()}
    return first


def stage_baseline(cfg: RunConfig, out: Path) -> list[str]:
    data = load_dataset(cfg, out)
    x = data.X[:, 0]
    grid = np.linspace(x.min(), x.max(), cfg.grid_points)
    res = _baseline_curves(cfg, data, grid, sorted(cfg.taus))
    files = []
    for tau in sorted(cfg.taus):
        write_curves_csv(out / baseline_file(cfg.baseline, tau), [res.summary(tau, data.column_names[0])])
        files.append(baseline_file(cfg.baseline, tau))
    return files


def stage_compare(cfg: RunConfig, out: Path) -> list[str]:
    if not (out / SIMULATION).exists():
        raise DataError("compare needs simulated data with known truth (run simulate first)")
    setting = json.loads((out / SIMULATION).read_text())["setting"]
    data = load_dataset(cfg, out)
    grid = truth_grid(data.X[:, 0], cfg.grid_points)
    taus = sorted(cfg.taus)
    base = _baseline_curves(cfg, data, grid, taus)
    comparisons = []
    for tau in taus:
        truth = true_quantiles(setting, tau, grid).y_star_true
        proposed = regression_curve(out, tau, grid)
        comparisons.append(CurveComparison(tau, cfg.baseline, grid, base.curves[tau], proposed, truth))
    write_comparison_json(out / COMPARISON, comparisons)
    return [COMPARISON]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def report(out) -> dict:
    """Summarize a run directory: cluster counts, acceptance, artifacts, comparisons."""
    out = Path(out)
    manifest = RunManifest.load(out)
    missing = [f for s in manifest.stages.values() for f in s["files"] if not (out / f).exists()]
    doc: dict = {"status": manifest.status, "stages": {k: v["status"] for k, v in manifest.stages.items()},
                 "missing_artifacts": missing}
    if (out / DRAWS).exists():
        _, meta = load_draws(out / DRAWS)
        k = np.asarray(meta["retained_clusters"], dtype=float)
        lo, hi = np.percentile(k, [2.5, 97.5])
        doc["cluster_count"] = {"mean": float(k.mean()), "lower_95": float(lo), "upper_95": float(hi),
                                "draws": int(k.size), "prior_only": bool(meta.get("prior_only", False))}
        doc["py"] = meta.get("py")
        doc["acceptance"] = [c["acceptance"] for c in meta.get("chains", [])]
    doc["curve_files"] = sorted(f for s in manifest.stages.values() for f in s["files"]
                                if f.startswith("curves_"))
    if (out / COMPARISON).exists():
        doc["relative_ise"] = json.loads((out / COMPARISON).read_text())
    return doc


def format_report(doc: dict) -> str:
    lines = [f"status: {doc['status']}"]
    lines += [f"  stage {k}: {v}" for k, v in doc["stages"].items()]
    if doc["missing_artifacts"]:
        lines.append("missing artifacts: " + ", ".join(doc["missing_artifacts"]))
    if "cluster_count" in doc:
        c = doc["cluster_count"]
        label = "prior" if c["prior_only"] else "posterior"
        lines.append(f"{label} number of clusters: mean {c['mean']:.3f}, "
                     f"95% interval [{c['lower_95']:g}, {c['upper_95']:g}] over {c['draws']} draws")
        for i, a in enumerate(doc.get("acceptance", [])):
            lines.append(f"  chain {i}: random-walk acceptance {a['random_walk']:.3f}, "
                         f"accept-reject acceptance {a['accept_reject']:.3f}, fallbacks {a['ar_fallbacks']}")
    if doc["curve_files"]:
        lines.append("curve files: " + ", ".join(doc["curve_files"]))
    if "relative_ise" in doc:
        lines.append(f"{'tau':>6}  {'method':<20}  {'relative ISE':>12}")
        lines += [f"{r['tau']:>6g}  {r['method']:<20}  {r['relative_ise']:>12.3f}" for r in doc["relative_ise"]]
    return "\n".join(lines)


def stage_report(cfg: RunConfig, out: Path) -> list[str]:
    doc = report(out)
    (out / REPORT_TXT).write_text(format_report(doc) + "\n")
    _write_json(out / REPORT_JSON, doc)
    return [REPORT_TXT, REPORT_JSON]


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

STAGES = {
    "simulate": stage_simulate,
    "fit": stage_fit,
    "quantile": stage_quantile,
    "regress": stage_regress,
    "baseline": stage_baseline,
    "compare": stage_compare,
    "report": stage_report,
}


def plan(cfg: RunConfig) -> list[str]:
    if cfg.command != "run":
        return [cfg.command]
    stages = ["simulate"] if cfg.setting is not None and not cfg.input else []
    return stages + ["fit", "quantile", "regress"]


def run_stages(cfg: RunConfig, stages) -> RunManifest:
    """Run ``stages`` in order, recording each in the manifest.

    A failing stage is recorded with its error, the manifest is saved with
    status "partial", and a StageError is raised.  Outputs of stages that
    completed earlier are left untouched.
    """
    out = Path(cfg.output_dir)
    try:
        manifest = RunManifest.load(out)
        manifest.config = cfg.to_dict()
    except DataError as exc:
        if list(stages) == ["report"]:
            raise StageError("report", exc) from exc
        manifest = RunManifest.new(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for name in stages:
        t0 = time.perf_counter()
        try:
            files = STAGES[name](cfg, out)
        except Exception as exc:
            manifest.record(name, out, [], time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
            manifest.save(out)
            raise StageError(name, exc) from exc
        manifest.record(name, out, files, time.perf_counter() - t0)
        manifest.save(out)
        log.info("stage %s done in %.1fs", name, manifest.wall_clock[name])
    return manifest


def run_pipeline(cfg: RunConfig) -> RunManifest:
    return run_stages(cfg, plan(cfg))
