"""Run files, cached training, result rows and the reproduction studies.

A run file is a JSON object. Recognised keys (all optional except that a
problem must be named, either by ``case`` or by ``target`` + ``constraint``)::

    {
      "case": 1,                      # built-in case study 1-4
      "d": 10,                        # dimension, case 4 only
      "ring_radii": [1.65, 2.3],      # case 2 mode radii
      "cs4_margin": 0.75,             # case 4 distance of the means from the boundary
      "name": "my_problem",           # label for inline problems
      "target": {"means": [[..]], "sigma": 0.4, "weights": [..]},
      "constraint": {"type": "halfspace", "a": [1, 1], "b": 0},
      "truncate": true,               # restrict target data to the feasible set
      "method": "lgvf_adjusted",      # fm | lgvf | lgvf_adjusted | fm_adjusted
      "seeds": [0, 1, 2],
      "train": {"lambda_max": 10, "alpha": 1, "learning_rate": 0.003,
                "batch_size": 256, "iterations": 8000,
                "logic_mode": "endpoint_predictive", "hidden": 128},
      "sample": {"K": 100, "eta_max": 0.5, "t0": 0.3, "n_samples": 2000,
                 "n_reference": 2000},
      "out": "runs",                  # relative to the run file
      "timing": "wall"                # or "off": wall_time_s written as 0
    }

For ``reproduce`` the problem keys are ignored; ``seeds``, ``train``,
``sample``, ``timing``, ``cases`` and ``dims`` narrow or override the study grid.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .constraints import Constraint, parse_constraint
from .distributions import CS4_DIMS, CaseStudy, GaussianMixture, builtin_case_study, make_rng
from .metrics import evaluate_samples
from .network import VectorFieldParams, hidden_width_for, load_checkpoint, save_checkpoint
from .sampling import SampleConfig, sample
from .training import TrainConfig, train

METHODS = ("fm", "lgvf", "lgvf_adjusted", "fm_adjusted")
STUDIES = ("table1", "ablation_lambda", "ablation_eta", "ablation_t0", "ablation_components", "highdim")
RESULT_COLUMNS = ("case_study", "method", "seed", "viol_rate_pct", "avg_viol", "mmd_e3", "wall_time_s")
SUMMARY_COLUMNS = (
    "case_study",
    "method",
    "n_seeds",
    "viol_rate_pct_mean",
    "viol_rate_pct_std",
    "avg_viol_mean",
    "avg_viol_std",
    "mmd_e3_mean",
    "mmd_e3_std",
)
HISTORY_COLUMNS = ("iter", "loss_fm", "loss_logic")
DEFAULT_SEEDS = (0, 1, 2)
PROBLEM_KEYS = ("case", "d", "ring_radii", "cs4_margin", "name", "target", "constraint", "truncate")
RUN_KEYS = PROBLEM_KEYS + ("method", "seeds", "train", "sample", "out", "timing")
STUDY_KEYS = RUN_KEYS + ("cases", "dims")
ABLATION_LAMBDAS = (0.0, 5.0, 10.0, 20.0, 50.0)
ABLATION_ETAS = (0.25, 0.5, 1.0, 2.0)
ABLATION_T0S = (0.1, 0.3, 0.5, 0.7, 0.9)


class RunFileError(ValueError):
    pass


# Problem and run-file handling ------------------------------------------------------

def case_label(cs: CaseStudy) -> str:
    cid = cs.meta.get("id")
    if cid == 4:
        return f"cs4_d{cs.dim}"
    if cid is not None:
        return f"cs{cid}"
    return cs.name


def resolve_problem(obj: dict) -> CaseStudy:
    """Build the case study a run file describes."""
    if "case" in obj and obj["case"] is not None:
        kw = {}
        if "ring_radii" in obj:
            kw["ring_radii"] = tuple(obj["ring_radii"])
        if "cs4_margin" in obj:
            kw["cs4_margin"] = float(obj["cs4_margin"])
        try:
            cs = builtin_case_study(obj["case"], d=obj.get("d"), **kw)
        except ValueError as e:
            raise RunFileError(str(e)) from None
    else:
        if "target" not in obj or "constraint" not in obj:
            raise RunFileError("run file needs 'case' or both 'target' and 'constraint'")
        try:
            target = GaussianMixture.from_config(obj["target"])
            c = parse_constraint(obj["constraint"], dim=target.dim)
        except (KeyError, TypeError, ValueError) as e:
            raise RunFileError(f"bad problem definition: {e}") from None
        if c.dim != target.dim:
            raise RunFileError(f"constraint dimension {c.dim} != target dimension {target.dim}")
        cs = CaseStudy(obj.get("name", "custom"), target, c, hidden=hidden_width_for(target.dim))
    if "truncate" in obj:
        cs.truncate = bool(obj["truncate"])
    return cs


def _config_from(cls, base, overrides: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise RunFileError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as e:
        raise RunFileError(f"invalid '{section}' section: {e}") from None


@dataclass
class RunFile:
    problem: CaseStudy
    method: str
    train: TrainConfig
    sample: SampleConfig
    seeds: list[int]
    out: Path
    n_reference: int = 2000
    timing: str = "wall"
    raw: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return case_label(self.problem)


def _reject_unknown(obj: dict, allowed) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise RunFileError(f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def parse_run_file(obj: dict, base_dir: Path | str = ".") -> RunFile:
    if not isinstance(obj, dict):
        raise RunFileError("run file must contain a JSON object")
    _reject_unknown(obj, RUN_KEYS)
    problem = resolve_problem(obj)
    method = obj.get("method", "lgvf_adjusted")
    if method not in METHODS:
        raise RunFileError(f"unknown method {method!r}; expected one of {METHODS}")
    train_over = dict(obj.get("train", {}))
    sample_over = dict(obj.get("sample", {}))
    n_reference = int(sample_over.pop("n_reference", 2000))
    if n_reference < 1:
        raise RunFileError("n_reference must be >= 1")
    tcfg = _config_from(
        TrainConfig,
        TrainConfig(lambda_max=problem.lambda_max, hidden=problem.hidden),
        train_over,
        "train",
    )
    scfg = _config_from(SampleConfig, SampleConfig(eta_max=problem.eta_max), sample_over, "sample")
    seeds = [int(s) for s in obj.get("seeds", DEFAULT_SEEDS)]
    if not seeds:
        raise RunFileError("seeds must be a non-empty list")
    timing = obj.get("timing", "wall")
    if timing not in ("wall", "off"):
        raise RunFileError("timing must be 'wall' or 'off'")
    out = Path(base_dir) / obj.get("out", "runs")
    return RunFile(problem, method, tcfg, scfg, seeds, out, n_reference, timing, obj)


def load_run_file(path) -> RunFile:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise RunFileError(f"{path}: not valid JSON ({e})") from None
    return parse_run_file(obj, path.parent)


def method_configs(method: str, tcfg: TrainConfig, scfg: SampleConfig):
    """Apply the method's forced settings to the training and sampling configs."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method in ("fm", "fm_adjusted"):
        tcfg = replace(tcfg, lambda_max=0.0)
    if method in ("fm", "lgvf"):
        scfg = replace(scfg, eta_max=0.0)
    return tcfg, scfg


# Training with an on-disk cache ------------------------------------------------------

def checkpoint_name(label: str, tcfg: TrainConfig, seed: int) -> str:
    return f"{label}_lam{tcfg.lambda_max:g}_{tcfg.logic_mode}_s{seed}"


def _train_key(cs: CaseStudy, tcfg: TrainConfig, seed: int) -> dict:
    return {
        "label": case_label(cs),
        "train": asdict(replace(tcfg, seed=seed)),
        "target": cs.target.to_config(),
        "constraint": cs.constraint.to_config(),
        "truncate": cs.truncate,
    }


def write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        w.writerows(history.rows())


def train_cached(cs: CaseStudy, tcfg: TrainConfig, seed: int, out: Path, log=None):
    """Train (or load an identical earlier run) and return ``(params, train_seconds, path)``.

    Training is deterministic, so a checkpoint whose stored key matches the
    requested configuration is bitwise what a fresh run would produce.
    """
    ck_dir = Path(out) / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    name = checkpoint_name(case_label(cs), tcfg, seed)
    path = ck_dir / f"{name}.json"
    # wall time lives in a sidecar so checkpoint bytes depend only on the run
    timing_path = ck_dir / f"{name}_timing.json"
    key = _train_key(cs, tcfg, seed)
    if path.exists() and timing_path.exists():
        obj = json.loads(path.read_text())
        if obj.get("meta", {}).get("key") == key:
            return load_checkpoint(path), float(json.loads(timing_path.read_text())["train_time_s"]), path
    if log:
        log(f"training {name}")
    t_start = time.perf_counter()
    p, hist = train(replace(tcfg, seed=seed), cs, cs.constraint)
    elapsed = time.perf_counter() - t_start
    save_checkpoint(p, path, extra={"key": key})
    timing_path.write_text(json.dumps({"train_time_s": elapsed}) + "\n")
    write_history(ck_dir / f"{name}_history.csv", hist)
    return p, elapsed, path


# Evaluation and result rows ---------------------------------------------------------

@dataclass
class ResultRow:
    case_study: str
    method: str
    seed: int
    viol_rate_pct: float
    avg_viol: float
    mmd_e3: float
    wall_time_s: float

    def cells(self) -> list[str]:
        return [
            self.case_study,
            self.method,
            str(self.seed),
            format(self.viol_rate_pct, ".4f"),
            format(self.avg_viol, ".8g"),
            format(self.mmd_e3, ".8g"),
            format(self.wall_time_s, ".3f"),
        ]


def reference_set(cs: CaseStudy, n: int, seed: int) -> np.ndarray:
    return cs.sample_target(n, make_rng(seed, 3))


def evaluate_model(p: VectorFieldParams, cs: CaseStudy, scfg: SampleConfig, seed: int, n_reference=2000):
    """Sample with ``scfg`` under ``seed`` and score against a fresh target reference.

    Returns ``(MetricsReport, samples, trajectory or None)``.
    """
    if p.d != cs.dim:
        raise ValueError(f"checkpoint dimension {p.d} does not match problem dimension {cs.dim}")
    scfg = replace(scfg, seed=seed)
    samples, traj = sample(p, cs.constraint, scfg)
    ref = reference_set(cs, n_reference, seed)
    return evaluate_samples(samples, ref, cs.constraint, seed=seed), samples, traj


def run_cell(
    cs: CaseStudy,
    method: str,
    seed: int,
    tcfg: TrainConfig,
    scfg: SampleConfig,
    out: Path,
    n_reference: int = 2000,
    timing: str = "wall",
    variant: str = "",
    log=None,
) -> ResultRow:
    """Train (cached) and evaluate one (problem, method, seed) cell."""
    tcfg, scfg = method_configs(method, tcfg, scfg)
    try:
        p, train_s, _ = train_cached(cs, tcfg, seed, out, log)
        t_start = time.perf_counter()
        rep, _, _ = evaluate_model(p, cs, scfg, seed, n_reference)
        eval_s = time.perf_counter() - t_start
    except (FloatingPointError, RuntimeError, ValueError) as e:
        raise RuntimeError(f"{case_label(cs)} / {method}{variant} / seed {seed}: {e}") from e
    wall = train_s + eval_s if timing == "wall" else 0.0
    return ResultRow(
        case_label(cs), method + variant, seed, rep.violation_rate_pct, rep.avg_violation, rep.mmd_e3, wall
    )


def write_results(path: Path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(r.cells())
    return path


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows) -> list[dict]:
    """Mean and sample standard deviation (ddof=1) over seeds per (case, method)."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.case_study, r.method), []).append(r)
    out = []
    for (case, method), rs in groups.items():
        entry = {"case_study": case, "method": method, "n_seeds": len(rs)}
        for col in ("viol_rate_pct", "avg_viol", "mmd_e3"):
            vals = np.array([getattr(r, col) for r in rs])
            entry[f"{col}_mean"] = float(vals.mean())
            entry[f"{col}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(entry)
    return out


def write_summary(path: Path, summary) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s[c] if isinstance(s[c], (str, int)) else format(s[c], ".8g") for c in SUMMARY_COLUMNS])
    return path


def write_samples(path: Path, samples: np.ndarray, c: Constraint) -> Path:
    viol = c.violation(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *[f"x_{j}" for j in range(samples.shape[1])], "violation"])
        for i, (row, v) in enumerate(zip(samples, viol)):
            w.writerow([i, *row.tolist(), float(v)])
    return path


def write_trajectories(path: Path, traj) -> Path:
    d = traj.x.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "k", "t", *[f"x_{j}" for j in range(d)]])
        for i in range(traj.n):
            for k in range(traj.K + 1):
                w.writerow([i, k, float(traj.t[k]), *traj.x[k, i].tolist()])
    return path


# Reproduction studies ------------------------------------------------------------------

@dataclass
class StudyOptions:
    seeds: tuple = DEFAULT_SEEDS
    train: dict = field(default_factory=dict)
    sample: dict = field(default_factory=dict)
    n_reference: int = 2000
    timing: str = "wall"
    cases: tuple = (1, 2, 3)
    dims: tuple = CS4_DIMS

    @classmethod
    def from_run_file(cls, obj: dict | None) -> "StudyOptions":
        obj = dict(obj or {})
        _reject_unknown(obj, STUDY_KEYS)
        sample_over = dict(obj.get("sample", {}))
        n_ref = int(sample_over.pop("n_reference", 2000))
        opts = cls(
            seeds=tuple(int(s) for s in obj.get("seeds", DEFAULT_SEEDS)),
            train=dict(obj.get("train", {})),
            sample=sample_over,
            n_reference=n_ref,
            timing=obj.get("timing", "wall"),
            cases=tuple(int(c) for c in obj.get("cases", (1, 2, 3))),
            dims=tuple(int(d) for d in obj.get("dims", CS4_DIMS)),
        )
        if opts.timing not in ("wall", "off"):
            raise RunFileError("timing must be 'wall' or 'off'")
        if not opts.seeds:
            raise RunFileError("seeds must be a non-empty list")
        return opts

    def configs(self, cs: CaseStudy):
        tcfg = _config_from(TrainConfig, TrainConfig(lambda_max=cs.lambda_max, hidden=cs.hidden), self.train, "train")
        scfg = _config_from(SampleConfig, SampleConfig(eta_max=cs.eta_max), self.sample, "sample")
        return tcfg, scfg


def study_cells(study: str, opts: StudyOptions):
    """Yield ``(case_study, method, tcfg, scfg, variant)`` for every cell of a study."""
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; expected one of {STUDIES}")
    if study == "table1":
        for cid in opts.cases:
            cs = builtin_case_study(cid)
            tcfg, scfg = opts.configs(cs)
            for m in ("fm", "lgvf", "lgvf_adjusted"):
                yield cs, m, tcfg, scfg, ""
    elif study == "highdim":
        for d in opts.dims:
            cs = builtin_case_study(4, d=d)
            tcfg, scfg = opts.configs(cs)
            for m in ("fm", "lgvf", "lgvf_adjusted"):
                yield cs, m, tcfg, scfg, ""
    else:
        cs = builtin_case_study(1)
        tcfg, scfg = opts.configs(cs)
        if study == "ablation_lambda":
            for lam in ABLATION_LAMBDAS:
                yield cs, "lgvf", replace(tcfg, lambda_max=lam), scfg, f"@lambda_max={lam:g}"
        elif study == "ablation_eta":
            for eta in ABLATION_ETAS:
                for m in ("fm_adjusted", "lgvf_adjusted"):
                    yield cs, m, tcfg, replace(scfg, eta_max=eta), f"@eta_max={eta:g}"
        elif study == "ablation_t0":
            for t0 in ABLATION_T0S:
                yield cs, "lgvf_adjusted", tcfg, replace(scfg, t0=t0), f"@t0={t0:g}"
        elif study == "ablation_components":
            for m in ("fm", "lgvf", "fm_adjusted", "lgvf_adjusted"):
                yield cs, m, tcfg, scfg, ""


def reproduce(study: str, out: Path | str, opts: StudyOptions | None = None, log=None):
    """Run a study grid; writes ``<out>/<study>/results.csv`` and ``summary.csv``.

    Checkpoints go to ``<out>/checkpoints`` and are shared between studies.
    Returns ``(rows, summary, results_path)``.
    """
    opts = opts or StudyOptions()
    out = Path(out)
    rows = []
    for cs, method, tcfg, scfg, variant in study_cells(study, opts):
        for seed in opts.seeds:
            rows.append(run_cell(cs, method, seed, tcfg, scfg, out, opts.n_reference, opts.timing, variant, log))
    study_dir = out / study
    path = write_results(study_dir / "results.csv", rows)
    summary = summarize(rows)
    write_summary(study_dir / "summary.csv", summary)
    return rows, summary, path
