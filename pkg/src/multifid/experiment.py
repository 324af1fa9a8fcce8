"""Config-driven experiment runner.

Reproduces the benchmark protocol: for each high-fidelity design size and
each repetition, draw fresh Latin hypercube designs, fit every requested
model on the same data, and evaluate all of them on one shared test set.
Raw per-cell metrics land in ``results.csv``; per-(model, size) means and
standard deviations in ``summary.csv``/``summary.md``.  Deep-model ELBO
traces and, for one-dimensional problems, prediction curves are written
alongside for the report renderer.

Configuration is a strict JSON document (unknown keys are errors); see
``ExperimentConfig``.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .data import (
    CsvSchema,
    FidelityDataset,
    NominalMapping,
    load_dataset_csv,
    load_nominal_csv,
    scale_io,
)
from .doe import lhs_sample
from .errors import ConfigError, MultifidError
from .exactgp import (
    GpFitConfig,
    build_bc,
    fit_ar1_recursive,
    fit_exact_gp,
    imc_calibrate,
    predict_ar1,
    predict_bc,
    predict_exact_gp,
)
from .metrics import compute_metrics
from .mfdgp import TrainConfig, build_model, predict as dgp_predict, train
from .problems import ProblemSpec, get_problem
from .rng import RngStream

MODEL_NAMES = ("gp-hf", "ar1", "bc", "imc", "mf-dgp", "mf-dgp-em")

RESULTS_HEADER = (
    "problem,model,hf_size,rep,seed,r2,rmse,mnll,train_seconds,max_jitter,warnings"
)

_VAR_FLOOR = 1e-12


@dataclass
class ExperimentConfig:
    """Validated experiment description (strict JSON schema, version 1)."""

    problem: str | None = None
    csv: dict | None = None
    models: list = field(default_factory=lambda: ["gp-hf"])
    hf_sizes: list = field(default_factory=lambda: [8])
    lf_size: int | None = None
    repetitions: int = 1
    seed: int = 0
    test_size: int | None = None
    mnll_variant: str = "density"
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str | None = None
    record_timing: bool = True
    cell_budget_seconds: float | None = None
    version: int = 1


_TOP_KEYS = {f.name for f in dc_fields(ExperimentConfig)}
_TRAIN_KEYS = {f.name for f in dc_fields(TrainConfig)}
_CSV_KEYS = {"lf", "hf", "nominal", "lf_bounds", "hf_bounds"}


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a raw JSON object; unknown keys anywhere are hard errors."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if doc.get("version", 1) != 1:
        raise ConfigError(f"unsupported config version {doc.get('version')}")
    train_doc = doc.get("train", {})
    if not isinstance(train_doc, dict):
        raise ConfigError("'train' must be an object")
    bad = set(train_doc) - _TRAIN_KEYS
    if bad:
        raise ConfigError(f"unknown train keys: {sorted(bad)}")
    csv_doc = doc.get("csv")
    if csv_doc is not None:
        if not isinstance(csv_doc, dict):
            raise ConfigError("'csv' must be an object")
        bad = set(csv_doc) - _CSV_KEYS
        if bad:
            raise ConfigError(f"unknown csv keys: {sorted(bad)}")
    cfg = ExperimentConfig(
        **{k: v for k, v in doc.items() if k not in ("train",)},
        train=TrainConfig(**train_doc),
    )
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def _validate(cfg: ExperimentConfig) -> None:
    if not cfg.models:
        raise ConfigError("model list must be non-empty")
    bad = [m for m in cfg.models if m not in MODEL_NAMES]
    if bad:
        raise ConfigError(f"unknown models {bad}; choose from {MODEL_NAMES}")
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    if not cfg.hf_sizes or any(int(s) < 1 for s in cfg.hf_sizes):
        raise ConfigError("hf_sizes must be a non-empty list of sizes >= 1")
    if cfg.lf_size is not None and cfg.lf_size < 1:
        raise ConfigError("lf_size must be >= 1")
    if cfg.mnll_variant not in ("density", "literal"):
        raise ConfigError("mnll_variant must be 'density' or 'literal'")
    if cfg.problem is None and cfg.csv is None:
        raise ConfigError("either 'problem' or 'csv' must be given")
    spec = _resolve_problem(cfg)
    same_space = spec.lf_dim == spec.hf_dim
    for m in cfg.models:
        if m in ("ar1", "mf-dgp") and not same_space:
            raise ConfigError(
                f"model {m!r} needs a shared input space; "
                f"{spec.name} has d_lf={spec.lf_dim}, d_hf={spec.hf_dim}"
            )
    if spec.lf_func is None and (cfg.csv is None or "lf" not in cfg.csv):
        raise ConfigError(f"{spec.name}: low fidelity is dataset-backed; csv.lf required")
    if spec.hf_func is None and (cfg.csv is None or "hf" not in cfg.csv):
        raise ConfigError(f"{spec.name}: high fidelity is dataset-backed; csv.hf required")
    if "bc" in cfg.models and not spec.nominal.evaluable:
        raise ConfigError("bias correction needs a function/linear nominal mapping")


def _resolve_problem(cfg: ExperimentConfig) -> ProblemSpec:
    if cfg.problem is not None:
        return get_problem(cfg.problem)
    csv = cfg.csv or {}
    if "lf_bounds" not in csv or "hf_bounds" not in csv:
        raise ConfigError("custom csv problems must declare lf_bounds and hf_bounds")
    lf_b = np.asarray(csv["lf_bounds"], dtype=float).reshape(-1, 2)
    hf_b = np.asarray(csv["hf_bounds"], dtype=float).reshape(-1, 2)
    if "nominal" not in csv:
        raise ConfigError("custom csv problems must provide a nominal table")
    # nominal values load later (table keyed by HF training rows)
    placeholder = NominalMapping(
        source_dim=hf_b.shape[0], target_dim=lf_b.shape[0],
        table=(np.zeros((0, hf_b.shape[0])), np.zeros((0, lf_b.shape[0]))),
    )
    return ProblemSpec(
        name="custom", lf_bounds=lf_b, hf_bounds=hf_b, nominal=placeholder
    )


# ---------------------------------------------------------------------------
# Data assembly


@dataclass
class _CellData:
    lf: FidelityDataset
    hf: FidelityDataset
    nominal_values: np.ndarray  # (n_hf, d_lf) raw coordinates
    x_test: np.ndarray
    y_test: np.ndarray
    warnings: list


def _load_csv_side(cfg, spec, side):
    path = cfg.csv[side]
    dim = spec.lf_dim if side == "lf" else spec.hf_dim
    bounds = spec.lf_bounds if side == "lf" else spec.hf_bounds
    loaded = load_dataset_csv(path, CsvSchema(dim=dim, bounds=bounds))
    want = 0 if side == "lf" else 1
    if want in loaded:
        return loaded[want]
    if len(loaded) == 1:
        return next(iter(loaded.values()))
    raise ConfigError(f"{path}: expected fidelity {want} rows")


def _prepare_cell(cfg, spec, hf_size, rng_rep, warn):
    lf_size = cfg.lf_size or spec.default_lf_size
    r_hf, r_lf, r_sub = rng_rep.split(3)

    if spec.hf_func is not None:
        X_hf = lhs_sample(hf_size, spec.hf_bounds, r_hf)
        y_hf = spec.hf_func(X_hf)
        hf = FidelityDataset(X=X_hf, y=y_hf, bounds=spec.hf_bounds, fidelity=1)
        hf_rest = None
    else:
        full = _load_csv_side(cfg, spec, "hf")
        n = full.n
        if hf_size > n:
            raise ConfigError(f"hf_size {hf_size} exceeds the {n} rows in csv.hf")
        pick = r_sub.permutation(n)[:hf_size]
        rest = np.setdiff1d(np.arange(n), pick)
        hf = FidelityDataset(X=full.X[pick], y=full.y[pick], bounds=full.bounds, fidelity=1)
        hf_rest = (full.X[rest], full.y[rest]) if rest.size else None
        hf_pick = pick

    if spec.lf_func is not None:
        X_lf = lhs_sample(lf_size, spec.lf_bounds, r_lf)
        lf = FidelityDataset(
            X=X_lf, y=spec.lf_func(X_lf), bounds=spec.lf_bounds, fidelity=0
        )
    else:
        full = _load_csv_side(cfg, spec, "lf")
        if lf_size < full.n:
            pick = r_lf.permutation(full.n)[:lf_size]
            lf = FidelityDataset(X=full.X[pick], y=full.y[pick], bounds=full.bounds, fidelity=0)
        else:
            lf = full

    if spec.nominal.evaluable:
        nominal_values = spec.nominal.apply(hf.X)
    else:
        table = load_nominal_csv(
            cfg.csv["nominal"], spec.lf_dim, _load_csv_side(cfg, spec, "hf").n
        )
        nominal_values = table[hf_pick]

    return lf, hf, nominal_values, hf_rest


def _test_set(cfg, spec, rng_test, hf_rest, warn):
    n_test = cfg.test_size or spec.default_test_size
    if spec.hf_func is not None:
        lo, hi = spec.hf_bounds[:, 0], spec.hf_bounds[:, 1]
        x = lo + rng_test.uniform(size=(n_test, spec.hf_dim)) * (hi - lo)
        return x, spec.hf_func(x)
    if hf_rest is not None:
        return hf_rest
    warn.append("test-set-reuses-training-rows")
    return None, None


# ---------------------------------------------------------------------------
# Model fitting


def _scaled_mapping(spec, nominal, tf):
    """Nominal mapping acting on scaled coordinates (HF [0,1] -> LF [0,1])."""

    def mapped(x01):
        return tf.scale_x(0, nominal.apply(tf.unscale_x(1, x01)))

    return NominalMapping(source_dim=spec.hf_dim, target_dim=spec.lf_dim, func=mapped)


def _fit_and_predict(model_name, cfg, spec, cell, rng_model):
    """Returns (mean, var, max_jitter, warnings) on the raw output scale."""
    warn = []
    gp_cfg = GpFitConfig()
    if model_name == "gp-hf":
        scaled, tf = scale_io([cell.hf])
        m = fit_exact_gp(scaled[0].X, scaled[0].y, gp_cfg, rng_model)
        mean, var = predict_exact_gp(m, tf.scale_x(0, cell.x_test))
        return tf.unscale_y(mean), tf.unscale_var(var), m.applied_jitter, warn

    if model_name == "ar1":
        shared = cell.hf.bounds
        scaled, tf = scale_io([cell.lf, cell.hf], shared_input_bounds=shared)
        m = fit_ar1_recursive(scaled[0], scaled[1], gp_cfg, rng_model)
        mean, var = predict_ar1(m, tf.scale_x(1, cell.x_test))
        jit = max(m.lf.applied_jitter, m.discrepancy.applied_jitter)
        return tf.unscale_y(mean), tf.unscale_var(var), jit, warn

    if model_name in ("bc", "imc"):
        scaled, tf = scale_io([cell.lf, cell.hf])
        if model_name == "bc":
            g0 = _scaled_mapping(spec, spec.nominal, tf)
        else:
            if spec.exact_lf:
                def lf01(z01):
                    return tf.scale_y(spec.lf_func(tf.unscale_x(0, np.clip(z01, 0, 1))))
            else:
                warn.append("imc-lf-surrogate")
                lf_gp = fit_exact_gp(scaled[0].X, scaled[0].y, gp_cfg, rng_model)

                def lf01(z01):
                    return predict_exact_gp(lf_gp, z01)[0]

            a0, b0 = _linearize_scaled_nominal(spec, tf)
            res = imc_calibrate(
                scaled[1], lf01, (a0, b0), lam=1e-3,
                lf_bounds=[[0.0, 1.0]] * spec.lf_dim, rng=rng_model,
            )
            g0 = res.as_mapping()
        m = build_bc(scaled[0], scaled[1], g0, gp_cfg, rng_model)
        mean, var = predict_bc(m, tf.scale_x(1, cell.x_test))
        jit = max(m.lf.applied_jitter, m.discrepancy.applied_jitter)
        return tf.unscale_y(mean), tf.unscale_var(var), jit, warn

    if model_name in ("mf-dgp", "mf-dgp-em"):
        tc = TrainConfig(
            **{
                **{f.name: getattr(cfg.train, f.name) for f in dc_fields(TrainConfig)},
                "seed": int(rng_model.integers(0, 2**31 - 1)),
            }
        )
        if model_name == "mf-dgp":
            model = build_model([cell.lf, cell.hf], None, tc, mapping=False)
        else:
            model = build_model([cell.lf, cell.hf], [cell.nominal_values], tc)
        train(model)
        mean, var = dgp_predict(model, cell.x_test, fidelity=1)
        if model.warnings:
            warn.append(f"nat-guard:{len(model.warnings)}")
        return mean, var, model.arch.jitter, warn + [("trace", model.history)]

    raise ConfigError(f"unknown model {model_name!r}")


def _linearize_scaled_nominal(spec, tf):
    """Linear coefficients of the nominal map expressed in scaled coords.

    For linear nominal mappings this is exact; otherwise it is the secant
    linearization used only to seed input-mapping calibration.
    """
    d_hf, d_lf = spec.hf_dim, spec.lf_dim
    base01 = np.full((1, d_hf), 0.5)
    f0 = tf.scale_x(0, spec.nominal.apply(tf.unscale_x(1, base01)))[0]
    A = np.zeros((d_hf, d_lf))
    h = 0.25
    for j in range(d_hf):
        up = base01.copy()
        up[0, j] += h
        dn = base01.copy()
        dn[0, j] -= h
        fu = tf.scale_x(0, spec.nominal.apply(tf.unscale_x(1, np.clip(up, 0, 1))))[0]
        fd = tf.scale_x(0, spec.nominal.apply(tf.unscale_x(1, np.clip(dn, 0, 1))))[0]
        A[j] = (fu - fd) / (2 * h)
    b = f0 - base01[0] @ A
    return A, b


# ---------------------------------------------------------------------------
# Runner


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute all cells; returns {'results': path, 'failed': k, 'total': n}."""
    spec = _resolve_problem(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    one_d = spec.hf_dim == 1
    if one_d:
        (out / "predictions").mkdir(exist_ok=True)

    rng_test = RngStream(cfg.seed)
    rows = []
    budget_exceeded = set()
    n_failed = 0

    for rep in range(1, cfg.repetitions + 1):
        rep_seed = cfg.seed + rep
        for hf_size in sorted(int(s) for s in cfg.hf_sizes):
            rng_rep = RngStream(rep_seed * 1_000_003 + hf_size)
            cell_warn = []
            lf, hf, nominal_values, hf_rest = _prepare_cell(
                cfg, spec, hf_size, rng_rep, cell_warn
            )
            x_test, y_test = _test_set(cfg, spec, RngStream(cfg.seed), hf_rest, cell_warn)
            if x_test is None:
                x_test, y_test = hf.X, hf.y
            cell = _CellData(
                lf=lf, hf=hf, nominal_values=nominal_values,
                x_test=x_test, y_test=y_test, warnings=cell_warn,
            )
            model_streams = rng_rep.split(len(MODEL_NAMES))
            for m_idx, model_name in enumerate(MODEL_NAMES):
                if model_name not in cfg.models:
                    continue
                key = (model_name, hf_size)
                row = {
                    "problem": spec.name, "model": model_name, "hf_size": hf_size,
                    "rep": rep, "seed": rep_seed,
                }
                if model_name in budget_exceeded:
                    row.update(r2=float("nan"), rmse=float("nan"), mnll=float("nan"),
                               train_seconds=0.0, max_jitter=0.0,
                               warnings="skipped-budget")
                    rows.append(row)
                    continue
                t0 = time.time()
                try:
                    mean, var, jit, warn = _fit_and_predict(
                        model_name, cfg, spec, cell, model_streams[m_idx]
                    )
                    trace = None
                    tags = []
                    for w in warn:
                        if isinstance(w, tuple) and w[0] == "trace":
                            trace = w[1]
                        else:
                            tags.append(w)
                    rep_metrics = compute_metrics(
                        cell.y_test, mean, np.maximum(var, _VAR_FLOOR), cfg.mnll_variant
                    )
                    elapsed = time.time() - t0
                    row.update(
                        r2=rep_metrics.r2, rmse=rep_metrics.rmse, mnll=rep_metrics.mnll,
                        train_seconds=elapsed if cfg.record_timing else 0.0,
                        max_jitter=jit,
                        warnings=";".join(cell_warn + tags),
                    )
                    if trace is not None:
                        _write_trace(out / "traces", model_name, hf_size, rep, trace)
                    if one_d:
                        _write_prediction_curve(
                            out / "predictions", model_name, hf_size, rep,
                            cell, (mean, var),
                        )
                except (MultifidError, np.linalg.LinAlgError) as exc:
                    elapsed = time.time() - t0
                    row.update(
                        r2=float("nan"), rmse=float("nan"), mnll=float("nan"),
                        train_seconds=elapsed if cfg.record_timing else 0.0,
                        max_jitter=0.0,
                        warnings=f"failed:{type(exc).__name__}",
                    )
                    n_failed += 1
                else:
                    if (
                        cfg.cell_budget_seconds is not None
                        and elapsed > cfg.cell_budget_seconds
                    ):
                        budget_exceeded.add(model_name)
                rows.append(row)

    rows.sort(key=lambda r: (r["problem"], r["model"], r["hf_size"], r["rep"]))
    results_path = out / "results.csv"
    with open(results_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    [
                        r["problem"], r["model"], str(r["hf_size"]), str(r["rep"]),
                        str(r["seed"]), _fmt(r["r2"]), _fmt(r["rmse"]), _fmt(r["mnll"]),
                        _fmt(r["train_seconds"]), _fmt(r["max_jitter"]),
                        '"%s"' % r["warnings"],
                    ]
                )
                + "\n"
            )
    _write_summary(rows, out)
    return {"results": str(results_path), "failed": n_failed, "total": len(rows)}


def _write_trace(folder, model_name, hf_size, rep, trace):
    path = folder / f"{model_name}_n{hf_size}_rep{rep}.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,elbo\n")
        for it, val in trace:
            fh.write(f"{it},{_fmt(float(val))}\n")


def _write_prediction_curve(folder, model_name, hf_size, rep, cell, mean_var):
    # reuse the shared test-set predictions (sorted) rather than refitting
    order = np.argsort(cell.x_test[:, 0])
    path = folder / f"{model_name}_n{hf_size}_rep{rep}.csv"
    mean, var = mean_var
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,mean,var,truth\n")
        for i in order:
            fh.write(
                f"{_fmt(float(cell.x_test[i, 0]))},{_fmt(float(mean[i]))},"
                f"{_fmt(float(var[i]))},{_fmt(float(cell.y_test[i]))}\n"
            )


def _aggregate(rows):
    """Per (problem, model, hf_size): mean/std of each metric over reps."""
    groups = {}
    for r in rows:
        groups.setdefault((r["problem"], r["model"], r["hf_size"]), []).append(r)
    summary = []
    for (prob, model, size), grp in sorted(groups.items()):
        ok = [g for g in grp if np.isfinite(g["rmse"])]
        entry = {"problem": prob, "model": model, "hf_size": size,
                 "reps": len(grp), "failed": len(grp) - len(ok)}
        for metric in ("r2", "rmse", "mnll"):
            vals = np.array([g[metric] for g in ok])
            if vals.size:
                entry[f"{metric}_mean"] = float(np.mean(vals))
                entry[f"{metric}_std"] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            else:
                entry[f"{metric}_mean"] = float("nan")
                entry[f"{metric}_std"] = float("nan")
        summary.append(entry)
    return summary


def _write_summary(rows, out: Path):
    summary = _aggregate(rows)
    with open(out / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "problem,model,hf_size,reps,failed,"
            "r2_mean,r2_std,rmse_mean,rmse_std,mnll_mean,mnll_std\n"
        )
        for e in summary:
            fh.write(
                f'{e["problem"]},{e["model"]},{e["hf_size"]},{e["reps"]},{e["failed"]},'
                f'{_fmt(e["r2_mean"])},{_fmt(e["r2_std"])},{_fmt(e["rmse_mean"])},'
                f'{_fmt(e["rmse_std"])},{_fmt(e["mnll_mean"])},{_fmt(e["mnll_std"])}\n'
            )
    from .report import summary_markdown

    with open(out / "summary.md", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_markdown(summary))
