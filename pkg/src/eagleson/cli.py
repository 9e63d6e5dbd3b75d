"""Experiment runner: ``eagleson run|validate|constant``.

A run reads a TOML config (grammar in docs/config.md), executes one
experiment pipeline and writes ``<kind>.csv`` plus ``report.jsonl`` (both
byte-reproducible for a fixed seed and worker count) and ``run_meta.json``
(timings).  Exit codes: 0 ok, 2 config error, 3 resource error, 4 a dominance
check embedded in the pipeline failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import esseen, mixing, models, spectral, sums, wip
from .errors import InvalidDensityError, InvalidModelError, ResourceError

log = logging.getLogger("eagleson")

FORMAT_VERSION = 1
KINDS = ("eagleson-convergence", "quant-bound", "centering", "variance", "wip",
         "mixing-audit", "constant")
COLUMNS = {
    "eagleson-convergence": ("n", "b_n", "dK_mu_nu", "mean_mu", "mean_nu"),
    "quant-bound": ("n", "b_n", "rho", "T", "dK_mu", "dK_nu_measured", "I_rho", "bound_total",
                    "bound_uncertainty", "slack", "holds"),
    "centering": ("n", "mean_gap", "mean_gap_se", "certificate", "b_n", "gap_over_b_n", "holds"),
    "variance": ("n", "b_mu", "b_nu", "std_ratio", "std_ratio_se", "variance_certificate",
                 "certificate_over_b2", "holds"),
    "wip": ("n", "b_n", "fdd_distance", "fdd_radius", "exceed_mu", "exceed_nu", "C", "eta_C",
            "transfer_bound", "holds"),
    "mixing-audit": ("n", "delta", "alpha_bruteforce", "alpha_kind", "alpha_dobrushin",
                     "covariance", "certificate", "holds"),
    "constant": ("c", "residual"),
}
EXIT_CONFIG, EXIT_RESOURCE, EXIT_CHECK = 2, 3, 4
DEFAULT_MEMORY = 2 << 30


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(eq=False)
class ExperimentConfig:
    kind: str
    seed: int
    count: int
    n_list: list
    model: object = None
    tilt: object = None
    tilt_knots: tuple | None = None
    observable: object = None
    normalizer: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    wip: dict = field(default_factory=dict)
    mixing: dict = field(default_factory=dict)
    memory_bytes: int = DEFAULT_MEMORY
    raw: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# config parsing


def _get(section, key, errors, path, kind, default=None, required=False):
    if key not in section:
        if required:
            errors.append(f"{path}.{key}: missing")
        return default
    val = section[key]
    ok = {"int": isinstance(val, int) and not isinstance(val, bool),
          "num": isinstance(val, (int, float)) and not isinstance(val, bool),
          "str": isinstance(val, str), "bool": isinstance(val, bool),
          "list": isinstance(val, list)}[kind]
    if not ok:
        errors.append(f"{path}.{key}: expected {kind}, got {type(val).__name__}")
        return default
    return val


def _build_model(sec, errors):
    kind = _get(sec, "type", errors, "model", "str", required=True)
    try:
        if kind == "expanding-map":
            slopes = _get(sec, "slopes", errors, "model", "list", required=True)
            if slopes is None:
                return None
            return models.SequentialExpandingMap(tuple(slopes), _get(sec, "periodic", errors, "model", "bool", True))
        if kind == "markov-chain":
            mats = _get(sec, "matrices", errors, "model", "list", required=True)
            init = _get(sec, "initial", errors, "model", "list", required=True)
            if mats is None or init is None:
                return None
            return models.InhomogeneousMarkovChain(mats, init, _get(sec, "periodic", errors, "model", "bool", True),
                                                   _get(sec, "state_values", errors, "model", "list"))
        if kind == "iid":
            support = _get(sec, "support", errors, "model", "list", required=True)
            probs = _get(sec, "probs", errors, "model", "list", required=True)
            if support is None or probs is None:
                return None
            return models.iid_model(support, probs)
    except (InvalidModelError, ValueError, TypeError) as exc:
        errors.append(f"model: {exc}")
        return None
    if kind is not None:
        errors.append(f"model.type: unknown {kind!r} (expected expanding-map, markov-chain, iid)")
    return None


def _build_tilt(sec, model, errors):
    kind = _get(sec, "type", errors, "tilt", "str", "identity")
    knots = None
    try:
        if kind == "identity":
            tilt = models.identity_tilt(model)
        elif kind == "cosine":
            tilt = models.cosine_tilt(_get(sec, "amplitude", errors, "tilt", "num", 0.5),
                                      _get(sec, "frequency", errors, "tilt", "int", 1))
        elif kind == "piecewise-linear":
            xs = _get(sec, "breakpoints", errors, "tilt", "list", required=True)
            vs = _get(sec, "values", errors, "tilt", "list", required=True)
            if xs is None or vs is None:
                return None, None
            tilt, knots = models.piecewise_linear_tilt(xs, vs), (tuple(xs), tuple(vs))
        elif kind == "vector":
            vals = _get(sec, "values", errors, "tilt", "list", required=True)
            if vals is None:
                return None, None
            p = _get(sec, "p", errors, "tilt", "num", math.inf)
            tilt = models.vector_tilt(vals, p)
        else:
            errors.append(f"tilt.type: unknown {kind!r} (expected identity, cosine, piecewise-linear, vector)")
            return None, None
        return models.validate_tilt(tilt, model), knots
    except (InvalidDensityError, ValueError, TypeError, IndexError) as exc:
        errors.append(f"tilt: {exc}")
        return None, None


def _build_observable(sec, model, errors):
    kind = _get(sec, "type", errors, "observable", "str", "cosine" if models.is_map(model) else "state-value")
    try:
        if kind == "cosine":
            return models.cosine_observable(_get(sec, "frequency", errors, "observable", "int", 1),
                                            _get(sec, "amplitude", errors, "observable", "num", 1.0))
        if kind == "trig":
            freqs = _get(sec, "freqs", errors, "observable", "list", required=True)
            cos = _get(sec, "cos", errors, "observable", "list", required=True)
            if freqs is None or cos is None:
                return None
            return models.trig_observable(freqs, cos, _get(sec, "sin", errors, "observable", "list"))
        if kind == "table":
            vals = _get(sec, "values", errors, "observable", "list", required=True)
            return None if vals is None else models.table_observable(vals)
        if kind == "state-value":
            if models.is_map(model):
                errors.append("observable.type: state-value needs a chain model")
                return None
            return models.state_value_observable(model)
    except (ValueError, TypeError) as exc:
        errors.append(f"observable: {exc}")
        return None
    errors.append(f"observable.type: unknown {kind!r} (expected cosine, trig, table, state-value)")
    return None


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    """Resolve a config document, collecting every error before raising."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"parse error: {exc}"]) from None
    errors: list[str] = []
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        errors.append(f"format_version: expected {FORMAT_VERSION}, got {version!r}")
    kind = _get(raw, "kind", errors, "", "str", required=True)
    if kind is not None and kind not in KINDS:
        errors.append(f"kind: unknown {kind!r}; valid kinds: {', '.join(KINDS)}")
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    seed = _get(raw, "seed", errors, "", "int", 0)
    if seed is not None and not 0 <= seed < 2**64:
        errors.append("seed: must be an unsigned 64-bit integer")
    count = _get(raw, "count", errors, "", "int", 100)
    if count is not None and count < 100:
        errors.append(f"count: must be >= 100, got {count}")
    n_list = _get(raw, "n_list", errors, "", "list", [] if kind == "constant" else None,
                  required=kind not in ("constant", None))
    if n_list is not None and kind != "constant":
        if not n_list or any(not isinstance(n, int) or n < 1 for n in n_list):
            errors.append("n_list: must be a non-empty list of positive integers")
        elif any(b <= a for a, b in zip(n_list, n_list[1:])):
            errors.append("n_list: must be strictly increasing")
    for name in ("model", "tilt", "observable", "normalizer", "bound", "wip", "mixing", "limits"):
        if name in raw and not isinstance(raw[name], dict):
            errors.append(f"{name}: expected a table")
            raw[name] = {}
    cfg = ExperimentConfig(kind, seed, count, n_list or [], raw=raw)
    if kind != "constant":
        if "model" not in raw:
            errors.append("model: missing")
        else:
            cfg.model = _build_model(raw["model"], errors)
        if cfg.model is not None:
            cfg.tilt, cfg.tilt_knots = _build_tilt(raw.get("tilt", {}), cfg.model, errors)
            cfg.observable = _build_observable(raw.get("observable", {}), cfg.model, errors)
            if cfg.n_list and max(cfg.n_list) > cfg.model.horizon:
                errors.append(f"n_list: exceeds the model horizon {cfg.model.horizon}")
    norm = dict(raw.get("normalizer", {}))
    rule = norm.setdefault("rule", "self")
    if rule not in ("self", "sqrt-n", "explicit"):
        errors.append(f"normalizer.rule: unknown {rule!r} (expected self, sqrt-n, explicit)")
    if rule == "explicit":
        vals = norm.get("values")
        if not isinstance(vals, list) or len(vals) != len(cfg.n_list) or any(
                not isinstance(v, (int, float)) or v <= 0 for v in vals):
            errors.append("normalizer.values: need one positive value per n")
    cfg.normalizer = norm
    bound = dict(raw.get("bound", {}))
    for key in ("T", "rho"):
        val = bound.setdefault(key, "auto")
        if val != "auto" and (not isinstance(val, (int, float)) or isinstance(val, bool) or val <= 0):
            errors.append(f"bound.{key}: expected \"auto\" or a positive number")
    if isinstance(bound.get("T"), (int, float)) and bound["T"] < 1:
        errors.append("bound.T: must be >= 1")
    bound.setdefault("T_max", 1e6)
    cfg.bound = bound
    w = dict(raw.get("wip", {}))
    w.setdefault("times", [0.5, 1.0])
    w.setdefault("grid_points", 257)
    w.setdefault("eps", 0.5)
    w.setdefault("delta", 0.0625)
    w.setdefault("freqs", [[a, b] for a in (-2.0, -1.0, 0.0, 1.0, 2.0) for b in (-2.0, -1.0, 0.0, 1.0, 2.0)])
    if not isinstance(w["grid_points"], int) or w["grid_points"] < 3:
        errors.append("wip.grid_points: need an integer >= 3")
    cfg.wip = w
    mx = dict(raw.get("mixing", {}))
    mx.setdefault("k", 0)
    mx.setdefault("depth", 1)
    cfg.mixing = mx
    limits = raw.get("limits", {})
    cfg.memory_bytes = _get(limits, "memory_bytes", errors, "limits", "int", DEFAULT_MEMORY)
    if errors:
        raise ConfigError(errors)
    return cfg


def validate_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, seed_override)


# --------------------------------------------------------------------------
# pipelines


@dataclass
class RunReport:
    kind: str
    rows: list
    reports: list
    config_echo: dict
    checks_passed: bool = True
    meta: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS[self.kind])
        for row in self.rows:
            w.writerow([_fmt(row.get(c, "")) for c in COLUMNS[self.kind]])
        return buf.getvalue()

    def jsonl_text(self) -> str:
        lines = [json.dumps({"type": "config", "format_version": FORMAT_VERSION,
                             "artifact_version": __version__, "config": self.config_echo},
                            sort_keys=True, default=_json_default)]
        for row in self.rows:
            lines.append(json.dumps({"type": "row", **row}, sort_keys=True, default=_json_default))
        for rep in self.reports:
            lines.append(json.dumps({"type": "bound", **rep}, sort_keys=True, default=_json_default))
        lines.append(json.dumps({"type": "summary", "checks_passed": self.checks_passed}, sort_keys=True))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _delta_profile(cfg, upto):
    if models.is_map(cfg.model):
        return mixing.delta_profile_expanding(cfg.model, upto)
    return mixing.delta_profile_dobrushin(cfg.model, upto, p=1.0)


def _normalizers(cfg, samples_mu):
    rule = cfg.normalizer["rule"]
    out = []
    for i, n in enumerate(cfg.n_list):
        if rule == "sqrt-n":
            out.append(math.sqrt(n))
        elif rule == "explicit":
            out.append(float(cfg.normalizer["values"][i]))
        else:
            b, degenerate = sums.self_normalizer(samples_mu[n])
            out.append(float(b[0]) if not degenerate else math.nan)
    return out


def _rho(cfg, n):
    rho = cfg.bound["rho"]
    if rho == "auto":
        rho = 2 * math.ceil(math.log2(max(n, 2)))
    return int(min(rho, n - 1))


def _simulate_pair(cfg, checkpoints, workers):
    need = 2 * cfg.count * len(set(checkpoints)) * cfg.observable.dim * 8
    if need > cfg.memory_bytes:
        raise ResourceError(f"run needs about {need} bytes, limit is {cfg.memory_bytes}")
    kw = dict(workers=workers, memory_limit=cfg.memory_bytes)
    run_mu = sums.simulate_sums(cfg.model, cfg.observable, checkpoints, cfg.count, cfg.seed, **kw)
    run_nu = sums.simulate_sums(cfg.model, cfg.observable, checkpoints, cfg.count, cfg.seed,
                                measure=models.NU, tilt=cfg.tilt, **kw)
    return run_mu, run_nu


def _scalar_check(cfg):
    if cfg.observable.dim != 1:
        raise ConfigError([f"{cfg.kind}: needs a scalar observable"])


def _centered_sups(cfg, n):
    """Bounds on |g_j - E_mu g_j|_inf for j < n."""
    obs = cfg.observable
    if not models.is_map(cfg.model):
        states = np.arange(cfg.model.state_count)
        out = np.empty(n)
        v = cfg.model.initial_distribution
        for j in range(n):
            g = obs(j, states)[:, 0]
            reach = v > 0
            out[j] = np.abs(g[reach] - v @ g).max()
            v = v @ cfg.model.matrix(j)
        return out
    if obs.trig is not None:
        freqs, coef = obs.trig
        live = freqs > 0
        amp = np.sqrt(coef[:, live, 0, 0] ** 2 + coef[:, live, 1, 0] ** 2).sum(axis=1)
        return amp[np.arange(n) % amp.size]
    return 2.0 * obs.sup_norm_array(n)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunReport:
    if cfg.kind == "constant":
        const = esseen.esseen_constant()
        row = {"c": const.c, "residual": const.residual}
        return RunReport(cfg.kind, [row], [], cfg.raw, const.residual <= 1e-10)
    pipeline = {"eagleson-convergence": _run_convergence, "quant-bound": _run_quant,
                "centering": _run_centering, "variance": _run_variance, "wip": _run_wip,
                "mixing-audit": _run_mixing}[cfg.kind]
    return pipeline(cfg, workers)


def _samples(cfg, workers, extra=()):
    ckpt = sorted(set(cfg.n_list) | set(extra))
    run_mu, run_nu = _simulate_pair(cfg, ckpt, workers)
    return run_mu, run_nu, {n: run_mu.sample(n) for n in ckpt}, {n: run_nu.sample(n) for n in ckpt}


def _run_convergence(cfg, workers):
    _scalar_check(cfg)
    _, _, smu, snu = _samples(cfg, workers)
    bns = _normalizers(cfg, smu)
    rows = []
    for n, b in zip(cfg.n_list, bns):
        a, c = smu[n].scalar(), snu[n].scalar()
        dk = esseen.kolmogorov_two_sample(a / b, c / b) if math.isfinite(b) else math.nan
        log.info("n=%d dK=%.6g", n, dk)
        rows.append({"n": n, "b_n": b, "dK_mu_nu": dk, "mean_mu": float(a.mean()), "mean_nu": float(c.mean())})
    return RunReport(cfg.kind, rows, [], cfg.raw)


def _run_quant(cfg, workers):
    _scalar_check(cfg)
    rhos = [_rho(cfg, n) for n in cfg.n_list]
    run_mu, _, smu, snu = _samples(cfg, workers, rhos)
    bns = _normalizers(cfg, smu)
    law = esseen.standard_normal()
    const = esseen.esseen_constant()
    profile = _delta_profile(cfg, max(rhos))
    norm_r = esseen.paired_norm(cfg.tilt, profile)
    rows, reports, ok = [], [], True
    for n, b, rho in zip(cfg.n_list, bns, rhos):
        center = smu[n].scalar().mean()
        dk_mu = esseen.kolmogorov_to_cdf((smu[n].scalar() - center) / b, law)
        dk_nu = esseen.kolmogorov_to_cdf((snu[n].scalar() - center) / b, law)
        if models.is_map(cfg.model):
            I_rho, I_se = sums.translation_integral(smu[rho], run_mu.initial, cfg.tilt)
        else:
            I_rho, I_se = spectral.exact_translation_integral(cfg.model, cfg.observable, cfg.tilt, rho), 0.0
        T = cfg.bound["T"]
        if T == "auto":
            T = esseen.select_T(2.0 * I_rho / b, 2.0 * law.density_sup * const.c**2, cfg.bound["T_max"]).T
        se = 0.5 / math.sqrt(cfg.count)
        rep = esseen.quant_eagleson_bound(dk_mu, I_rho, profile.value(rho), norm_r, b, float(T), law,
                                          const, dK_mu_se=se, I_rho_se=I_se)
        slack = rep.total - dk_nu
        holds = dk_nu <= rep.total + 3.0 * math.hypot(rep.uncertainty, se)
        ok &= holds
        rows.append({"n": n, "b_n": b, "rho": rho, "T": float(T), "dK_mu": dk_mu, "dK_nu_measured": dk_nu,
                     "I_rho": I_rho, "bound_total": rep.total, "bound_uncertainty": rep.uncertainty,
                     "slack": slack, "holds": bool(holds)})
        reports.append({"n": n, **rep.to_dict()})
    return RunReport(cfg.kind, rows, reports, cfg.raw, ok)


def _run_centering(cfg, workers):
    _scalar_check(cfg)
    _, _, smu, snu = _samples(cfg, workers)
    bns = _normalizers(cfg, smu)
    top = max(cfg.n_list)
    profile = _delta_profile(cfg, top)
    norm_r = esseen.paired_norm(cfg.tilt, profile)
    sup = cfg.observable.sup_norm_array(top)
    rows, reports, ok = [], [], True
    for n, b in zip(cfg.n_list, bns):
        gap = sums.empirical_gap(smu[n], snu[n])
        cert = sums.centering_gap_certificate(profile, sup[:n], (math.inf, math.inf, 1.0), n,
                                              norm_r=norm_r, scale=b)
        holds = gap.mean_gap <= cert.total + 3.0 * gap.mean_gap_se
        ok &= holds
        rows.append({"n": n, "mean_gap": gap.mean_gap, "mean_gap_se": gap.mean_gap_se,
                     "certificate": cert.total, "b_n": b, "gap_over_b_n": gap.mean_gap / b,
                     "holds": bool(holds)})
        reports.append({"n": n, "quantity": "M", "total": cert.total,
                        "truncation": cert.truncation, "levels": cert.levels})
    return RunReport(cfg.kind, rows, reports, cfg.raw, ok)


def variance_certificate(model, tilt, profile, centered_sups, n):
    """Bounded-observable variance certificate |r| sum_{k<=j} delta_k |G_j| |G_k|."""
    norm_r = esseen.paired_norm(tilt, profile)
    sup = np.asarray(centered_sups, dtype=float)
    return sums.variance_gap_certificate(profile, lambda k, js: sup[k] * sup[js],
                                         (math.inf, math.inf, 1.0), n, norm_r=norm_r)


def _run_variance(cfg, workers):
    _scalar_check(cfg)
    _, _, smu, snu = _samples(cfg, workers)
    top = max(cfg.n_list)
    profile = _delta_profile(cfg, top)
    csup = _centered_sups(cfg, top)
    rows, reports, ok = [], [], True
    for n in cfg.n_list:
        gap = sums.empirical_gap(smu[n], snu[n])
        b_mu = float(sums.self_normalizer(smu[n])[0][0])
        b_nu = float(sums.self_normalizer(snu[n])[0][0])
        cert = variance_certificate(cfg.model, cfg.tilt, profile, csup[:n], n)
        lhs = abs(b_nu**2 - b_mu**2)
        rhs = 2.0 * cert.total + gap.mean_gap**2 + 3.0 * 2.0 * gap.std_ratio_se * b_mu**2
        holds = bool(lhs <= rhs) if not gap.degenerate else False
        ok &= holds
        rows.append({"n": n, "b_mu": b_mu, "b_nu": b_nu, "std_ratio": gap.std_ratio,
                     "std_ratio_se": gap.std_ratio_se, "variance_certificate": cert.total,
                     "certificate_over_b2": cert.total / b_mu**2 if b_mu > 0 else math.inf,
                     "holds": holds})
        reports.append({"n": n, "quantity": "V", "total": cert.total, "per_k_truncation": cert.truncation})
    return RunReport(cfg.kind, rows, reports, cfg.raw, ok)


def _run_wip(cfg, workers):
    w = cfg.wip
    grid = np.linspace(0.0, 1.0, w["grid_points"])
    times = [float(s) for s in w["times"]]
    grid = np.unique(np.concatenate([grid, times]))
    fdd = wip.FddVector(times, np.asarray(w["freqs"], dtype=float))
    C = float(w.get("C", cfg.tilt.sup_bound if cfg.tilt.sup_bound is not None else 1.0))
    rows, reports, ok = [], [], True
    for i, n in enumerate(cfg.n_list):
        # one run per n keeps memory at count x grid rather than the union of grids
        ckpt = sorted(set(wip.step_indices(n, grid).tolist()))
        run_mu, run_nu = _simulate_pair(cfg, ckpt, workers)
        sub = ExperimentConfig(cfg.kind, cfg.seed, cfg.count, [n], normalizer=_one_normalizer(cfg, i))
        b = _normalizers(sub, {n: run_mu.sample(n)})[0]
        pm = wip.path_process_from_run(run_mu, n, b, grid)
        pn = wip.path_process_from_run(run_nu, n, b, grid)
        fd = wip.fdd_distance(pm, pn, fdd)
        tm = wip.tightness_diagnostic(pm, w["eps"], w["delta"])
        tn = wip.tightness_diagnostic(pn, w["eps"], w["delta"])
        tr = wip.nu_tightness_transfer(tm.exceedance, cfg.tilt, C, cfg.model)
        holds = tn.exceedance <= tr.best_bound + 3.0 * math.hypot(tn.standard_error, tr.best_C * tm.standard_error)
        ok &= holds
        rows.append({"n": n, "b_n": b, "fdd_distance": fd.distance, "fdd_radius": fd.radius,
                     "exceed_mu": tm.exceedance, "exceed_nu": tn.exceedance, "C": tr.best_C,
                     "eta_C": tr.best_eta, "transfer_bound": tr.best_bound, "holds": bool(holds)})
        reports.append({"n": n, "fdd_argmax": fd.argmax, "C_requested": C, "eta_requested": tr.eta,
                        "bound_requested": tr.bound})
    return RunReport(cfg.kind, rows, reports, cfg.raw, ok)


def _one_normalizer(cfg, i):
    norm = dict(cfg.normalizer)
    if norm["rule"] == "explicit":
        norm["values"] = [norm["values"][i]]
    return norm


def _run_mixing(cfg, workers):
    rows, ok = [], True
    n_list = cfg.n_list
    profile = _delta_profile(cfg, max(n_list))
    if models.is_map(cfg.model):
        if cfg.tilt_knots is None:
            raise ConfigError(["mixing-audit on maps needs a piecewise-linear tilt as the test density"])
        xs, vs = cfg.tilt_knots
        obs = cfg.observable
        for n in n_list:
            f = lambda y, n=n: obs(n, np.asarray(y))[..., 0]  # noqa: E731
            chk = mixing.correlation_certificate(cfg.model, xs, vs, f, obs.sup_norm(n), n)
            ok &= chk.holds
            rows.append({"n": n, "delta": profile.value(n), "covariance": chk.measured,
                         "certificate": chk.bound, "holds": bool(chk.holds)})
        return RunReport(cfg.kind, rows, [], cfg.raw, ok)
    k, depth = int(cfg.mixing["k"]), int(cfg.mixing["depth"])
    for n in n_list:
        res = mixing.alpha_bruteforce(cfg.model, k, n, depth, allow_fallback=True)
        upper = mixing.alpha_upper_dobrushin(cfg.model, n)
        holds = res.value <= upper + 1e-12
        ok &= holds
        rows.append({"n": n, "delta": profile.value(n), "alpha_bruteforce": res.value,
                     "alpha_kind": res.kind, "alpha_dobrushin": upper, "holds": bool(holds)})
    return RunReport(cfg.kind, rows, [], cfg.raw, ok)


# --------------------------------------------------------------------------
# entry point


def write_outputs(report: RunReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{report.kind}.csv"), "w", newline="") as fh:
        fh.write(report.csv_text())
    with open(os.path.join(out_dir, "report.jsonl"), "w") as fh:
        fh.write(report.jsonl_text())
    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump(report.meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eagleson", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("run", "validate", "constant"))
    p.add_argument("--config", help="experiment config (TOML)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.command == "constant":
        const = esseen.esseen_constant()
        print(f"c = {const.c!r}  residual = {const.residual:.3e}")
        return 0
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = validate_config(args.config, args.seed)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"ok: {cfg.kind}, n_list={cfg.n_list}, count={cfg.count}")
        return 0
    workers = args.workers
    started = time.perf_counter()
    try:
        report = run_experiment(cfg, workers)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    report.meta = {"wall_seconds": time.perf_counter() - started,
                   "workers": workers if workers is not None else (os.cpu_count() or 1),
                   "format_version": FORMAT_VERSION}
    write_outputs(report, args.out)
    if not report.checks_passed:
        print("dominance check failed; see the CSV 'holds' column", file=sys.stderr)
        return EXIT_CHECK
    return 0


if __name__ == "__main__":
    sys.exit(main())
