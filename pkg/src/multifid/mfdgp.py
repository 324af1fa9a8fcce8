"""Deep multi-fidelity GP with embedded input-space mapping.

The model is a two-level deep GP.  The first level is a chain of
multi-output GP mapping layers that project each fidelity's inputs into the
next lower fidelity's input space; they are tied to the known nominal
mapped values of the training inputs through a Gaussian likelihood.  The
second level is a chain of fidelity layers: layer 0 is a plain SE-ARD SVGP
and every later layer uses the composite covariance
k_scale(x,x') * k_prev(f,f') + k_bias(x,x') over its original inputs
augmented with the previous layer's output.

With the mapping level disabled the model degenerates to the plain
multi-fidelity deep GP on a shared input space, and with a single fidelity
to an ordinary sparse variational GP.

Inducing inputs of layers >= 2 keep only their first d columns free; the
augmented last column is recomputed from the mean mapping / mean prediction
chain on every objective or prediction evaluation, so gradients only flow
into the free block and the column can never go stale.

Training maximizes a sampled evidence lower bound, alternating one Adam
step on the Euclidean parameters with one natural-gradient step on every
variational distribution.  Gradients come from jax (float64, CPU);
prediction and the natural-gradient algebra run on numpy through the same
backend-parameterized layer math.
"""
from __future__ import annotations

import json
import math
import time
import warnings as _warnings
from dataclasses import asdict, dataclass

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

from ._backend import NUMPY, jax_backend
from .data import FidelityDataset, IoTransform, scale_io
from .errors import DimensionMismatch, MissingNominalValues, NonFiniteElbo
from .optim import AdamState, adam_step
from .rng import RngStream
from .svgp import (
    conditional_from_parts,
    expectation_grads,
    expected_gauss_loglik,
    gaussian_kl_from_parts,
    gram,
    gram_diag,
    natural_step_block,
)

_JB = jax_backend()

_LOG_LS_FLOOR = math.log(1e-4)
_LOG_VAR_FLOOR = math.log(1e-8)
_LOG_NOISE_FLOOR = math.log(1e-6)

_NOISE_INIT = 1e-2
_MAP_NOISE_INIT = 1e-2
_WHITE_INIT = 1e-2
_Q_COV_INIT_SCALE = 1e-5


class UntrainedModelWarning(UserWarning):
    """Emitted when predicting from a model whose training loop never ran."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for the deep model.

    Training runs in two phases.  During the warmup fraction only the
    kernel hyperparameters receive Adam updates (inducing inputs, noises
    and all variational distributions stay at their initialization, which
    pins the variational means to the data and makes the KL term act as an
    exact marginal-likelihood objective for the kernels).  Afterwards
    everything is optimized jointly, with the natural-gradient step size
    ramped linearly from zero to ``nat_step`` over the ramp fraction.
    """

    iterations: int = 28000
    adam_step: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.99
    nat_step: float = 0.01
    train_samples: int = 1
    predict_samples: int = 100
    seed: int = 0
    warmup_fraction: float = 0.5
    nat_ramp_fraction: float = 0.1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("adam_step", "nat_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")


@dataclass(frozen=True)
class _Arch:
    """Static structure of a model; hashable so jit can key on it."""

    s: int
    dims: tuple[int, ...]
    n: tuple[int, ...]
    mapping: bool
    white: bool
    train_samples: int
    jitter: float
    prev_mean: bool = True  # previous-output-identity mean on layers >= 2


# ---------------------------------------------------------------------------
# Backend-parameterized model math (used by the jax objective and the numpy
# prediction path alike)


def _map_conditional(bk, m, U):
    kzx = gram(bk, "se", m["karr"], m["w"], U)
    kxx = gram_diag(bk, "se", m["karr"], U) + m["white"]
    zeros_x = bk.xp.zeros((U.shape[0], m["mu"].shape[1]))
    zeros_z = bk.xp.zeros(m["mu"].shape)
    return conditional_from_parts(bk, m["L"], kzx, kxx, m["mu"], m["S"], zeros_x, zeros_z)


def _fid_conditional(bk, fl, X, f):
    if fl["kind"] == "se":
        U = X
        h_x = bk.xp.zeros((X.shape[0], 1))
        h_z = bk.xp.zeros(fl["mu"].shape)
    else:
        U = bk.xp.concatenate([X, f], axis=1)
        if fl["prev_mean"]:
            h_x = f
            h_z = fl["aug"]
        else:
            h_x = bk.xp.zeros((X.shape[0], 1))
            h_z = bk.xp.zeros(fl["mu"].shape)
    kzx = gram(bk, fl["kind"], fl["karr"], fl["Z"], U)
    kxx = gram_diag(bk, fl["kind"], fl["karr"], U)
    return conditional_from_parts(bk, fl["L"], kzx, kxx, fl["mu"], fl["S"], h_x, h_z)


def _prepare(bk, euclid, vari, arch: _Arch):
    """Assemble per-layer working state: Gram factors, full inducing inputs
    (augmented column recomputed via the mean chain), and q blocks."""
    xp = bk.xp
    maps = []
    if arch.mapping:
        for l in range(arch.s - 1):
            e = euclid["map"][l]
            karr = (xp.exp(e["log_ls"]), xp.exp(e["log_var"]))
            white = xp.exp(e["log_white"]) if arch.white else 0.0
            w = e["w"]
            kww = gram(bk, "se", karr, w, w)
            kww = kww + (white + arch.jitter) * xp.eye(w.shape[0])
            maps.append(
                dict(
                    L=bk.cholesky(kww), w=w, karr=karr, white=white,
                    mu=vari["map"][l]["mu"], S=vari["map"][l]["S"],
                    noise=xp.exp(e["log_noise"]),
                )
            )

    fids = []
    for l in range(arch.s):
        e = euclid["fid"][l]
        if l == 0:
            kind, aug = "se", None
            karr = (xp.exp(e["log_ls"]), xp.exp(e["log_var"]))
            z_full = e["z"]
        else:
            kind = "composite"
            karr = (
                (xp.exp(e["log_ls_scale"]), xp.exp(e["log_var_scale"])),
                (
                    xp.exp(e["log_ls_prev"]),
                    xp.exp(e["log_var_prev"]),
                    xp.exp(e["log_var_prev_lin"]),
                ),
                (xp.exp(e["log_ls_bias"]), xp.exp(e["log_var_bias"])),
            )
            # constrained inducing inputs: map the free block down with the
            # mean mapping, then mean-propagate up through layers < l
            coords = {l: e["z_free"]}
            cur = e["z_free"]
            for j in range(l - 1, -1, -1):
                if arch.mapping:
                    cur = _map_conditional(bk, maps[j], cur)[0]
                coords[j] = cur
            g = None
            for j in range(l):
                g = _fid_conditional(bk, fids[j], coords[j], g)[0]
            aug = g
            z_full = xp.concatenate([e["z_free"], aug], axis=1)
        kzz = gram(bk, kind, karr, z_full, z_full) + arch.jitter * xp.eye(z_full.shape[0])
        fids.append(
            dict(
                kind=kind, karr=karr, L=bk.cholesky(kzz), Z=z_full, aug=aug,
                mu=vari["fid"][l]["mu"], S=vari["fid"][l]["S"],
                noise=xp.exp(e["log_noise"]), prev_mean=arch.prev_mean,
            )
        )
    return maps, fids


def _propagate_samples(bk, maps, fids, arch, X, t, eps_h, eps_f, sample_floor=1e-12):
    """Reparameterized passes of points X (fidelity-t space) up to layer t.

    The sample axis is flattened into the point axis, so ``eps_h[j]``
    (S, n, d_j) perturbs the mapping output at level j and ``eps_f[l]``
    (S, n, 1) the fidelity output at layers l < t; a single conditional per
    layer serves all S draws.  Returns the layer-t conditional moments with
    shape (S, n, 1).
    """
    xp = bk.xp
    n = X.shape[0]
    S = eps_f[0].shape[0] if eps_f else 1
    tiled = xp.tile(X, (S, 1))
    coords = {t: tiled}
    cur = tiled
    for j in range(t - 1, -1, -1):
        if arch.mapping:
            hm, hv = _map_conditional(bk, maps[j], cur)
            cur = hm + xp.sqrt(xp.maximum(hv, sample_floor)) * eps_h[j].reshape(S * n, -1)
        coords[j] = cur
    f = None
    mu = v = None
    for l in range(t + 1):
        mu, v = _fid_conditional(bk, fids[l], coords[l], f)
        if l < t:
            f = mu + xp.sqrt(xp.maximum(v, sample_floor)) * eps_f[l].reshape(S * n, 1)
    return mu.reshape(S, n, 1), v.reshape(S, n, 1)


def _elbo_impl(euclid, vari, data, eps, arch: _Arch):
    bk = _JB
    xp = bk.xp
    maps, fids = _prepare(bk, euclid, vari, arch)
    total = 0.0

    # (a) expected data log-likelihood per fidelity under sampled propagation
    for t in range(arch.s):
        y_t = data["y"][t][:, None]
        if t == 0:
            mu, v = _fid_conditional(bk, fids[0], data["x"][0], None)
            total = total + expected_gauss_loglik(bk, y_t, mu, v, fids[0]["noise"])
        else:
            mu, v = _propagate_samples(
                bk, maps, fids, arch, data["x"][t], t, list(eps[t][0]), list(eps[t][1])
            )
            total = total + expected_gauss_loglik(
                bk, y_t[None], mu, v, fids[t]["noise"]
            ) / arch.train_samples

    # (b) mapping outputs tied to the nominal mapped values
    if arch.mapping:
        for l in range(arch.s - 1):
            hm, hv = _map_conditional(bk, maps[l], data["x"][l + 1])
            total = total + expected_gauss_loglik(
                bk, data["nominal"][l], hm, hv, maps[l]["noise"]
            )

    # (c)+(d) KL of every variational block to its prior
    for fl in fids:
        if fl["kind"] == "composite" and fl["prev_mean"]:
            h_z = fl["aug"]
        else:
            h_z = xp.zeros(fl["mu"].shape)
        total = total - gaussian_kl_from_parts(bk, fl["L"], fl["mu"], fl["S"], h_z)
    for m in maps:
        total = total - gaussian_kl_from_parts(
            bk, m["L"], m["mu"], m["S"], xp.zeros(m["mu"].shape)
        )
    return total


_elbo_value = jax.jit(_elbo_impl, static_argnums=(4,))
_elbo_value_and_grads = jax.jit(
    jax.value_and_grad(_elbo_impl, argnums=(0, 1)), static_argnums=(4,)
)


# ---------------------------------------------------------------------------
# Model object


class MfDgpEmModel:
    """Assembled deep multi-fidelity model (see module docstring).

    Use :func:`build_model` to construct one; then :func:`train` and
    :func:`predict`.
    """

    def __init__(self, datasets, nominal, euclid, vari, arch, config, transform,
                 history=None, trained=False, warnings=None):
        self.datasets = list(datasets)          # raw (unscaled) data
        self.nominal_raw = nominal              # raw nominal values per t >= 1
        self.euclid = euclid                    # numpy pytree
        self.vari = vari                        # numpy pytree
        self.arch = arch
        self.config = config
        self.transform = transform
        self.history = list(history) if history else []   # (iteration, elbo)
        self.trained = trained
        self.warnings = list(warnings) if warnings else []
        self.rng = RngStream(config.seed)
        self.train_seconds = 0.0
        self._adam = None
        # scaled training data, fixed for the model's lifetime
        scaled, _ = self._scaled_datasets()
        self.data = {
            "x": tuple(np.asarray(ds.X) for ds in scaled),
            "y": tuple(np.asarray(ds.y) for ds in scaled),
            "nominal": tuple(
                self.transform.scale_x(t - 1, self.nominal_raw[t - 1])
                for t in range(1, arch.s)
            )
            if arch.mapping
            else (),
        }

    def _scaled_datasets(self):
        scaled = []
        for t, ds in enumerate(self.datasets):
            scaled.append(
                FidelityDataset(
                    X=self.transform.scale_x(t, ds.X),
                    y=self.transform.scale_y(ds.y),
                    bounds=np.column_stack(
                        [
                            np.minimum(self.transform.scale_x(t, ds.X).min(axis=0), 0.0),
                            np.maximum(self.transform.scale_x(t, ds.X).max(axis=0), 1.0),
                        ]
                    ),
                    fidelity=ds.fidelity,
                )
            )
        return scaled, self.transform

    @property
    def num_fidelities(self) -> int:
        return self.arch.s

    def elbo_trace(self):
        return list(self.history)


def _identity_transform(datasets) -> IoTransform:
    bounds = tuple(
        np.column_stack([np.zeros(ds.dim), np.ones(ds.dim)]) for ds in datasets
    )
    return IoTransform(input_bounds=bounds, y_mean=0.0, y_std=1.0)


def build_model(
    datasets,
    nominal_mapped_values=None,
    config: TrainConfig | None = None,
    *,
    mapping: bool = True,
    white_kernel: bool = False,
    scale: bool = True,
    jitter: float = 1e-6,
    prev_output_mean: bool = True,
) -> MfDgpEmModel:
    """Assemble a model from per-fidelity datasets (lowest fidelity first).

    ``nominal_mapped_values[t-1]`` must hold the nominal mapped coordinates
    of fidelity t's inputs in fidelity t-1's space, for every t >= 1, unless
    the mapping level is disabled (plain multi-fidelity deep GP; requires a
    shared input space and scales all fidelities by the top fidelity's
    bounds).  Initialization: inducing inputs at the training inputs,
    variational means at the outputs / nominal values, unit kernels, small
    isotropic variational covariances.
    """
    config = config or TrainConfig()
    datasets = list(datasets)
    s = len(datasets)
    if s < 1:
        raise DimensionMismatch("at least one fidelity dataset is required")
    dims = tuple(ds.dim for ds in datasets)
    if s == 1:
        mapping = False
    if mapping:
        nominal = [np.atleast_2d(np.asarray(v, dtype=float)) for v in (nominal_mapped_values or [])]
        if len(nominal) != s - 1:
            raise MissingNominalValues(
                f"expected {s - 1} nominal value blocks, got {len(nominal)}"
            )
        for t in range(1, s):
            if nominal[t - 1].shape != (datasets[t].n, dims[t - 1]):
                raise MissingNominalValues(
                    f"nominal block {t - 1} must be ({datasets[t].n}, {dims[t - 1]})"
                )
    else:
        nominal = []
        if len(set(dims)) != 1:
            raise DimensionMismatch(
                "disabling the mapping level requires a shared input space"
            )

    if scale:
        shared = datasets[-1].bounds if (not mapping and s > 1) else None
        _, transform = scale_io(datasets, shared_input_bounds=shared)
    else:
        transform = _identity_transform(datasets)

    arch = _Arch(
        s=s, dims=dims, n=tuple(ds.n for ds in datasets), mapping=mapping,
        white=white_kernel, train_samples=config.train_samples, jitter=float(jitter),
        prev_mean=prev_output_mean,
    )

    euclid = {"fid": [], "map": []}
    vari = {"fid": [], "map": []}
    for t, ds in enumerate(datasets):
        x01 = transform.scale_x(t, ds.X)
        y01 = transform.scale_y(ds.y)
        if t == 0:
            euclid["fid"].append(
                {
                    "log_ls": np.zeros(dims[t]),
                    "log_var": np.zeros(()),
                    "log_noise": np.full((), math.log(_NOISE_INIT)),
                    "z": x01.copy(),
                }
            )
            diag0 = 1.0
        else:
            euclid["fid"].append(
                {
                    "log_ls_scale": np.zeros(dims[t]),
                    "log_var_scale": np.zeros(()),
                    "log_ls_prev": np.zeros(1),
                    "log_var_prev": np.zeros(()),
                    "log_var_prev_lin": np.zeros(()),
                    "log_ls_bias": np.zeros(dims[t]),
                    "log_var_bias": np.zeros(()),
                    "log_noise": np.full((), math.log(_NOISE_INIT)),
                    "z_free": x01.copy(),
                }
            )
            diag0 = 2.0  # unit composite kernel: var_scale*var_prev + var_bias
        vari["fid"].append(
            {
                "mu": y01[:, None].copy(),
                "S": np.tile(_Q_COV_INIT_SCALE * diag0 * np.eye(ds.n), (1, 1, 1)),
            }
        )
    for t in range(1, s):
        if not mapping:
            break
        x01 = transform.scale_x(t, datasets[t].X)
        entry = {
            "log_ls": np.zeros(dims[t]),
            "log_var": np.zeros(()),
            "log_noise": np.full((), math.log(_MAP_NOISE_INIT)),
            "w": x01.copy(),
        }
        if white_kernel:
            entry["log_white"] = np.full((), math.log(_WHITE_INIT))
        euclid["map"].append(entry)
        nom01 = transform.scale_x(t - 1, nominal[t - 1])
        vari["map"].append(
            {
                "mu": nom01.copy(),
                "S": np.tile(
                    _Q_COV_INIT_SCALE * np.eye(datasets[t].n), (dims[t - 1], 1, 1)
                ),
            }
        )

    return MfDgpEmModel(
        datasets=datasets,
        nominal=nominal,
        euclid=euclid,
        vari=vari,
        arch=arch,
        config=config,
        transform=transform,
    )


# ---------------------------------------------------------------------------
# Operations


def _draw_eps(arch: _Arch, rng: RngStream | None, rows, samples: int):
    """Standard-normal reparameterization draws, or zeros when rng is None."""

    def draw(shape):
        return rng.standard_normal(shape) if rng is not None else np.zeros(shape)

    eps = []
    for t in range(arch.s):
        if t == 0 or rows[t] == 0:
            eps.append(((), ()))
            continue
        hs = (
            tuple(draw((samples, rows[t], arch.dims[j])) for j in range(t))
            if arch.mapping
            else ()
        )
        fs = tuple(draw((samples, rows[t], 1)) for _ in range(t))
        eps.append((hs, fs))
    return tuple(eps)


def _train_rows(arch: _Arch):
    return arch.n


def elbo_estimate(model: MfDgpEmModel, rng: RngStream | None = None) -> float:
    """Sampled evidence lower bound at the current parameters.

    Passing an explicit stream makes the value reproducible; the default
    consumes from (and advances) the model's own stream.
    """
    eps = _draw_eps(model.arch, rng or model.rng, _train_rows(model.arch),
                    model.arch.train_samples)
    val = _elbo_value(model.euclid, model.vari, model.data, eps, model.arch)
    val = float(val)
    if not math.isfinite(val):
        raise NonFiniteElbo("ELBO is not finite at the current parameters")
    return val


def elbo_with(model: MfDgpEmModel, euclid, vari, eps) -> float:
    """ELBO at explicitly supplied parameter pytrees (for gradient checks)."""
    return float(_elbo_value(euclid, vari, model.data, eps, model.arch))


def constrain_inducing(model: MfDgpEmModel):
    """Full inducing inputs per fidelity layer with the dependent column
    recomputed from the current mapping/fidelity chain (never cached)."""
    maps, fids = _prepare(NUMPY, model.euclid, model.vari, model.arch)
    return [np.asarray(fl["Z"]) for fl in fids]


def prepared_layers(model: MfDgpEmModel):
    """Numpy working state of all layers (diagnostic/test hook)."""
    return _prepare(NUMPY, model.euclid, model.vari, model.arch)


def _ravel_spec(euclid):
    spec = []
    for grp in ("fid", "map"):
        for i, entry in enumerate(euclid[grp]):
            for key in sorted(entry):
                spec.append((grp, i, key, np.asarray(entry[key]).shape))
    return spec


def _ravel(euclid, spec):
    return np.concatenate(
        [np.asarray(euclid[g][i][k], dtype=float).ravel() for g, i, k, _ in spec]
        or [np.zeros(0)]
    )


def _unravel(flat, spec):
    out = {"fid": [], "map": []}
    tmp = {"fid": {}, "map": {}}
    pos = 0
    for g, i, k, shape in spec:
        size = int(np.prod(shape)) if shape else 1
        tmp[g].setdefault(i, {})[k] = flat[pos : pos + size].reshape(shape)
        pos += size
    for g in ("fid", "map"):
        for i in sorted(tmp[g]):
            out[g].append(tmp[g][i])
    return out


def _clamp_euclid(euclid):
    for grp in ("fid", "map"):
        for entry in euclid[grp]:
            for key, val in entry.items():
                if key.startswith("log_ls"):
                    entry[key] = np.maximum(val, _LOG_LS_FLOOR)
                elif key.startswith("log_var") or key == "log_white":
                    entry[key] = np.maximum(val, _LOG_VAR_FLOOR)
                elif key == "log_noise":
                    entry[key] = np.maximum(val, _LOG_NOISE_FLOOR)
    return euclid


def _numpy_tree(tree):
    if isinstance(tree, dict):
        return {k: _numpy_tree(v) for k, v in tree.items()}
    if isinstance(tree, (list, tuple)):
        return type(tree)(_numpy_tree(v) for v in tree)
    return np.asarray(tree)


def _natural_update(model: MfDgpEmModel, g_vari, gamma: float):
    """Natural step on every variational block; returns PD-safeguard stats."""
    halvings = 0
    skipped = 0
    for grp in ("fid", "map"):
        for i, entry in enumerate(model.vari[grp]):
            g_mu = np.asarray(g_vari[grp][i]["mu"])
            g_S = np.asarray(g_vari[grp][i]["S"])
            mu, S = entry["mu"], entry["S"]
            new_mu = mu.copy()
            new_S = S.copy()
            for p in range(mu.shape[1]):
                g1, g2 = expectation_grads(
                    mu[:, p], S[p], g_mu[:, p], g_S[p]
                )
                m_new, s_new, h, ok = natural_step_block(mu[:, p], S[p], g1, g2, gamma)
                halvings = max(halvings, h)
                if ok:
                    new_mu[:, p] = m_new
                    new_S[p] = s_new
                else:
                    skipped += 1
            entry["mu"], entry["S"] = new_mu, new_S
    return halvings, skipped


def _freeze_warmup_grads(gtree):
    """During warmup only kernel hyperparameters move."""
    for grp in ("fid", "map"):
        for entry in gtree[grp]:
            for key in entry:
                if key in ("log_noise", "z", "z_free", "w"):
                    entry[key] = np.zeros_like(entry[key])
    return gtree


def _copy_vari(vari):
    return {
        grp: [{k: v.copy() for k, v in entry.items()} for entry in vari[grp]]
        for grp in ("fid", "map")
    }


def train(model: MfDgpEmModel, iterations: int | None = None) -> MfDgpEmModel:
    """Run the two-phase Adam / natural-gradient loop (see TrainConfig).

    Per joint iteration: fresh reparameterization draws; one ascending Adam
    step on the Euclidean parameters (kernels, noises, free inducing
    blocks), with positivity floors re-applied; then one natural-gradient
    step on every variational block, evaluated at the updated Euclidean
    point.  Both evaluations share the iteration's draws, so the ELBO
    before and after the natural step is directly comparable; a step that
    sends it off a numerical cliff (or out of positive definiteness) is
    retried with a halved step size and skipped, with a warning, if halving
    does not rescue it.  The ELBO is recorded every 100 iterations.  A
    non-finite objective aborts with the iteration index.
    """
    iterations = model.config.iterations if iterations is None else iterations
    if iterations == 0:
        return model
    cfg = model.config
    spec = _ravel_spec(model.euclid)
    if model._adam is None:
        model._adam = AdamState(
            step_size=cfg.adam_step, beta1=cfg.beta1, beta2=cfg.beta2
        )
    start = time.time()
    base_iter = model.history[-1][0] + 1 if model.history else 0
    total_planned = max(cfg.iterations, iterations)
    warm_end = int(cfg.warmup_fraction * total_planned)
    ramp = max(int(cfg.nat_ramp_fraction * total_planned), 1)
    for it in range(iterations):
        glob_it = base_iter + it
        eps = _draw_eps(model.arch, model.rng, _train_rows(model.arch),
                        model.arch.train_samples)
        val, (g_euclid, _) = _elbo_value_and_grads(
            model.euclid, model.vari, model.data, eps, model.arch
        )
        val = float(val)
        if not math.isfinite(val):
            raise NonFiniteElbo(
                f"ELBO became non-finite at iteration {glob_it}", iteration=glob_it
            )
        g_euclid = _numpy_tree(g_euclid)
        if glob_it < warm_end:
            g_euclid = _freeze_warmup_grads(g_euclid)
        flat = _ravel(model.euclid, spec)
        flat, _ = adam_step(model._adam, flat, _ravel(g_euclid, spec), maximize=True)
        model.euclid = _clamp_euclid(_unravel(flat, spec))

        if glob_it >= warm_end:
            val2, (_, g_vari) = _elbo_value_and_grads(
                model.euclid, model.vari, model.data, eps, model.arch
            )
            val2 = float(val2)
            g_vari = _numpy_tree(g_vari)
            gamma = cfg.nat_step * min(1.0, (glob_it - warm_end + 1) / ramp)
            saved = _copy_vari(model.vari)
            drop_tol = max(1e3, abs(val2))
            applied = False
            for _attempt in range(8):
                halvings, skipped = _natural_update(model, g_vari, gamma)
                val3 = float(
                    _elbo_value(model.euclid, model.vari, model.data, eps, model.arch)
                )
                if math.isfinite(val3) and val3 > val2 - drop_tol:
                    applied = True
                    break
                model.vari = _copy_vari(saved)
                gamma *= 0.5
            if not applied:
                model.warnings.append(
                    f"iteration {glob_it}: natural step skipped (objective guard)"
                )
            elif skipped:
                model.warnings.append(
                    f"iteration {glob_it}: natural step skipped on {skipped} block(s)"
                )
        if it % 100 == 0 or it == iterations - 1:
            model.history.append((glob_it, val))
    model.trained = True
    model.train_seconds = getattr(model, "train_seconds", 0.0) + (time.time() - start)
    return model


def predict(
    model: MfDgpEmModel,
    Xstar,
    fidelity: int | None = None,
    samples: int | None = None,
    rng: RngStream | None = None,
    deterministic: bool = False,
    return_samples: bool = False,
):
    """Mixture prediction at fidelity ``fidelity`` (default: highest).

    Draws ``samples`` joint propagations through the mapping level and the
    fidelity chain; the returned moments are those of the equal-weight
    Gaussian mixture: mean of the per-sample means, and mean of variances
    plus variance of means.  ``deterministic=True`` propagates means only
    (a single pass).  Inputs and outputs are in the raw (unscaled) spaces.
    """
    arch = model.arch
    t = arch.s - 1 if fidelity is None else int(fidelity)
    if not 0 <= t < arch.s:
        raise DimensionMismatch(f"fidelity {t} out of range")
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != arch.dims[t]:
        raise DimensionMismatch(
            f"query points have {Xstar.shape[1]} columns, fidelity {t} expects {arch.dims[t]}"
        )
    if not model.trained:
        _warnings.warn(
            "predicting from an untrained model", UntrainedModelWarning, stacklevel=2
        )
    k = 1 if deterministic else (samples or model.config.predict_samples)
    x01 = model.transform.scale_x(t, Xstar)

    maps, fids = _prepare(NUMPY, model.euclid, model.vari, arch)
    if t == 0:
        mu, v = _fid_conditional(NUMPY, fids[0], x01, None)
        mean01, var01 = mu[:, 0], v[:, 0]
        sample_means = mean01[None, :]
    else:
        if deterministic:
            eps_rng = None
        else:
            eps_rng = rng or RngStream(model.config.seed + 7919 * (t + 1))
        rows = [0] * arch.s
        rows[t] = Xstar.shape[0]
        eps = _draw_eps(arch, eps_rng, rows, k)
        mu, v = _propagate_samples(
            NUMPY, maps, fids, arch, x01, t, list(eps[t][0]), list(eps[t][1])
        )
        means = mu[..., 0]
        varis = v[..., 0]
        mean01 = means.mean(axis=0)
        var01 = varis.mean(axis=0) + means.var(axis=0)
        sample_means = means
    mean = model.transform.unscale_y(mean01)
    var = model.transform.unscale_var(var01)
    if return_samples:
        return mean, var, model.transform.unscale_y(sample_means)
    return mean, var


# ---------------------------------------------------------------------------
# Checkpointing

_CHECKPOINT_VERSION = 1


def _tree_to_jsonable(tree):
    if isinstance(tree, dict):
        return {k: _tree_to_jsonable(v) for k, v in tree.items()}
    if isinstance(tree, (list, tuple)):
        return [_tree_to_jsonable(v) for v in tree]
    arr = np.asarray(tree)
    return {"__array__": arr.tolist(), "shape": list(arr.shape)}


def _tree_from_jsonable(obj):
    if isinstance(obj, dict) and "__array__" in obj:
        return np.asarray(obj["__array__"], dtype=float).reshape(obj["shape"])
    if isinstance(obj, dict):
        return {k: _tree_from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_tree_from_jsonable(v) for v in obj]
    return obj


def save_checkpoint(model: MfDgpEmModel, path) -> None:
    """Write a self-describing JSON checkpoint (value-exact round trip)."""
    doc = {
        "schema_version": _CHECKPOINT_VERSION,
        "arch": asdict(model.arch),
        "config": asdict(model.config),
        "transform": {
            "input_bounds": [b.tolist() for b in model.transform.input_bounds],
            "y_mean": model.transform.y_mean,
            "y_std": model.transform.y_std,
        },
        "datasets": [
            {
                "X": ds.X.tolist(),
                "y": ds.y.tolist(),
                "bounds": ds.bounds.tolist(),
                "fidelity": ds.fidelity,
            }
            for ds in model.datasets
        ],
        "nominal": [np.asarray(v).tolist() for v in model.nominal_raw],
        "euclid": _tree_to_jsonable(model.euclid),
        "vari": _tree_to_jsonable(model.vari),
        "history": [[int(i), float(v)] for i, v in model.history],
        "trained": model.trained,
        "warnings": model.warnings,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> MfDgpEmModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('schema_version')}")
    arch = _Arch(
        s=doc["arch"]["s"],
        dims=tuple(doc["arch"]["dims"]),
        n=tuple(doc["arch"]["n"]),
        mapping=doc["arch"]["mapping"],
        white=doc["arch"]["white"],
        train_samples=doc["arch"]["train_samples"],
        jitter=doc["arch"]["jitter"],
        prev_mean=doc["arch"].get("prev_mean", True),
    )
    config = TrainConfig(**doc["config"])
    transform = IoTransform(
        input_bounds=tuple(np.asarray(b, dtype=float) for b in doc["transform"]["input_bounds"]),
        y_mean=doc["transform"]["y_mean"],
        y_std=doc["transform"]["y_std"],
    )
    datasets = [
        FidelityDataset(
            X=np.asarray(d["X"], dtype=float),
            y=np.asarray(d["y"], dtype=float),
            bounds=np.asarray(d["bounds"], dtype=float),
            fidelity=d["fidelity"],
        )
        for d in doc["datasets"]
    ]
    nominal = [np.asarray(v, dtype=float) for v in doc["nominal"]]
    euclid = _tree_from_jsonable(doc["euclid"])
    vari = _tree_from_jsonable(doc["vari"])
    model = MfDgpEmModel(
        datasets=datasets,
        nominal=nominal,
        euclid=euclid,
        vari=vari,
        arch=arch,
        config=config,
        transform=transform,
        history=[(int(i), float(v)) for i, v in doc["history"]],
        trained=doc["trained"],
        warnings=doc["warnings"],
    )
    return model
