"""Batch front end: config-driven runs, band-structure caching, parameter
sweeps, and CSV/gnuplot artifacts.

Exit codes: 0 success, 2 configuration error, 3 convergence failure,
4 partial sweep failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bloch, cache
from .bloch import TE, TM, KPoint, Stack1D, ConvergenceError
from .constants import HBARC_EV_NM as HBARC
from .ionization import load_atoms, shifted_table
from .materials import (
    ConstantIndex,
    MaterialError,
    MetamaterialSpec,
    SellmeierTail,
    TabulatedIndex,
    build_effective_model,
    eval_index,
    load_index_table,
    load_hfo2_permittivity,
)
from .qed_mass import CutoffConfig, MassComputationError, compute_AB

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_PARTIAL = 4

SWEEP_AXES = ("a_nm", "g_nm", "d_h_nm", "d_l_nm", "index_scale")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    d_h_nm: float
    d_l_nm: float
    index_model: dict
    cutoff: dict
    n_l: float = 1.0
    atoms: str | None = None
    workers: int = 1
    figure: int | None = None
    sweep: dict | None = None
    config_dir: Path = field(default_factory=Path)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, config_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, config_dir=Path(".")) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        try:
            stack = raw["stack"]
            d_h = float(stack["d_h_nm"])
            d_l = float(stack["d_l_nm"])
            model = dict(raw["index_model"])
            cutoff = dict(raw["cutoff"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"missing or malformed config field: {exc}") from exc
        if d_h <= 0 or d_l <= 0:
            raise ConfigError("layer thicknesses must be positive")
        if "variant" not in model:
            raise ConfigError("index_model needs a 'variant' field")
        if "lambda_ev" not in cutoff:
            raise ConfigError("cutoff needs 'lambda_ev'")
        cfg = cls(
            d_h_nm=d_h,
            d_l_nm=d_l,
            index_model=model,
            cutoff=cutoff,
            n_l=float(raw.get("stack", {}).get("n_l", 1.0)),
            atoms=raw.get("atoms"),
            workers=int(raw.get("workers", 1)),
            figure=raw.get("figure"),
            sweep=raw.get("sweep"),
            config_dir=Path(config_dir),
        )
        if cfg.figure not in (None, 2, 3, 4):
            raise ConfigError(f"figure must be 2, 3 or 4, got {cfg.figure!r}")
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")
        if cfg.sweep is not None:
            if not isinstance(cfg.sweep, dict) or not cfg.sweep:
                raise ConfigError("sweep must be a non-empty object")
            for axis, values in cfg.sweep.items():
                if axis not in SWEEP_AXES:
                    raise ConfigError(f"unknown sweep axis {axis!r}")
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"sweep axis {axis!r} must be a non-empty list")
        for ref in (cfg.atoms, model.get("table")):
            if ref is not None and not (cfg.config_dir / ref).is_file():
                raise ConfigError(f"referenced file not found: {ref}")
        return cfg


def build_index_model(cfg: RunConfig, index_scale: float = 1.0):
    """Index model instance from its config description.  index_scale
    multiplies (n - 1), used by index-scaling sweeps."""
    spec = cfg.index_model
    variant = spec["variant"]
    try:
        if variant == "constant":
            return ConstantIndex(1.0 + index_scale * (float(spec["n"]) - 1.0))
        if variant == "sellmeier":
            return SellmeierTail(
                index_scale * float(spec["c1"]),
                index_scale * float(spec.get("c2", 0.0)),
            )
        if variant == "table":
            w, n = load_index_table(cfg.config_dir / spec["table"])
            return TabulatedIndex(
                w,
                1.0 + index_scale * (n - 1.0),
                float(spec["omega_roll_ev"]),
                float(spec.get("rolloff_exponent", 2.0)),
            )
        if variant == "metamaterial":
            meta = MetamaterialSpec(float(spec["a_nm"]), float(spec["g_nm"]))
            if spec.get("table") is not None:
                w, n = load_index_table(cfg.config_dir / spec["table"])
                eps = n**2
            else:
                w, eps = load_hfo2_permittivity()
            model = build_effective_model(
                meta,
                w,
                eps,
                float(spec["omega_roll_ev"]),
                float(spec.get("rolloff_exponent", 2.0)),
            )
            if index_scale != 1.0:
                model = TabulatedIndex(
                    model.omega_ev,
                    1.0 + index_scale * (model.n - 1.0),
                    model.omega_roll_ev,
                    model.rolloff_exponent,
                )
            return model
    except (KeyError, ValueError, MaterialError) as exc:
        raise ConfigError(f"invalid index model: {exc}") from exc
    raise ConfigError(f"unknown index model variant {variant!r}")


def build_cutoff(cfg: RunConfig) -> CutoffConfig:
    c = cfg.cutoff
    try:
        return CutoffConfig(
            lambda_ev=float(c["lambda_ev"]),
            n_z=int(c.get("n_z", 16)),
            n_rho=int(c.get("n_rho", 8)),
            m_max=int(c.get("m_max", 16)),
            k_rho_max=c.get("k_rho_max"),
            band_max=c.get("band_max"),
            refine=bool(c.get("refine", True)),
            pts_per_band=int(c.get("pts_per_band", 8)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid cutoff config: {exc}") from exc


def _model_payload(model) -> dict:
    if isinstance(model, ConstantIndex):
        return {"variant": "constant", "n": repr(model.n)}
    if isinstance(model, SellmeierTail):
        return {"variant": "sellmeier", "c1": repr(model.c1), "c2": repr(model.c2)}
    if isinstance(model, TabulatedIndex):
        return {
            "variant": "table",
            "omega_ev": [repr(float(w)) for w in model.omega_ev],
            "n": [repr(float(v)) for v in model.n],
            "omega_roll_ev": repr(model.omega_roll_ev),
            "rolloff_exponent": repr(model.rolloff_exponent),
        }
    raise ConfigError(f"unhashable index model {model!r}")


def _cache_payload(stack: Stack1D, cutoff: CutoffConfig) -> dict:
    return {
        "stack": {
            "d_h_nm": repr(stack.d_h),
            "d_l_nm": repr(stack.d_l),
            "n_l": repr(stack.n_l),
        },
        "index_model": _model_payload(stack.index_model),
        "cutoff": {
            "lambda_ev": repr(cutoff.lambda_ev),
            "n_z": cutoff.n_z,
            "n_rho": cutoff.n_rho,
            "m_max": cutoff.m_max,
            "k_rho_max": None if cutoff.k_rho_max is None else repr(cutoff.k_rho_max),
            "band_max": cutoff.band_max,
            "refine": cutoff.refine,
            "pts_per_band": cutoff.pts_per_band,
        },
    }


def _band_diagram_rows(stack: Stack1D, cutoff: CutoffConfig):
    """Band frequencies and projected Fourier coefficients on the k_rho = 0
    band-diagram line (33 k_z values), for the cache entry and figure data."""
    band_rows, coeff_rows = [], []
    kz_lim = np.pi / stack.period
    ms = np.arange(-4, 5)
    for pol in (TE, TM):
        for frac in range(1, 34):
            kz = kz_lim * frac / 33.0
            kp = KPoint(0.0, kz, pol)
            omegas = bloch.solve_bands(kp, stack, cutoff.lambda_ev)
            for n, w in enumerate(omegas):
                band_rows.append((0.0, kz, pol, n, float(w)))
            if omegas.size:
                layers, _ = bloch._mode_fields_batch(omegas, kp, stack)
                coeffs = bloch._coefficients_batch(layers, kp, stack, ms)
                # at k_rho = 0 the transverse projection is the y (TE) or
                # x (TM) component
                comp = 1 if pol == TE else 0
                for n in range(omegas.size):
                    for j, m in enumerate(ms):
                        c = coeffs[n, j, comp]
                        coeff_rows.append((0.0, kz, pol, n, int(m), c.real, c.imag))
    return band_rows, coeff_rows


def compute_point(stack: Stack1D, cutoff: CutoffConfig, workers: int,
                  cache_dir, log) -> tuple:
    """Mass coefficients for one parameter point, via the cache when warm.
    Returns (coeffs, cache_state)."""
    payload = _cache_payload(stack, cutoff)
    key = cache.cache_key(payload)
    cached = cache.load_entry(cache_dir, key)
    t0 = time.time()
    solves0 = bloch.solve_counter()
    if cached is not None:
        coeffs = compute_AB(stack, cutoff, workers=workers, cached_nodes=cached)
        state = "hit"
    else:
        coeffs = compute_AB(stack, cutoff, workers=workers)
        band_rows, coeff_rows = _band_diagram_rows(stack, cutoff)
        cache.store_entry(cache_dir, key, payload, coeffs.node_results,
                          band_rows, coeff_rows)
        state = "miss"
    log(
        stage="compute_AB",
        cache=state,
        key=key,
        dispersion_solves=bloch.solve_counter() - solves0,
        elapsed_s=round(time.time() - t0, 3),
        A_ev=coeffs.a_ev,
        B_ev=coeffs.b_ev,
        converged=coeffs.converged,
    )
    return coeffs, key


def _write_index_curve(path: Path, model, lambda_ev: float) -> None:
    omegas = np.linspace(0.0, 1.2 * lambda_ev, 601)
    ns = eval_index(model, omegas)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["omega_ev", "n"])
    for w, n in zip(omegas, np.atleast_1d(ns)):
        writer.writerow([repr(float(w)), repr(float(n))])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_band_diagram(path: Path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k_rho", "k_z", "pol", "n", "omega_ev"])
    for kr, kz, pol, n, w in rows:
        writer.writerow([repr(float(kr)), repr(float(kz)), pol, int(n), repr(float(w))])
    path.write_text(buf.getvalue(), encoding="utf-8")


_GNUPLOT = """\
# Static figure reproduction; run: gnuplot plot.gp
set datafile separator ','
set terminal pngcairo size 900,600
set key top right

set output 'index_curve.png'
set xlabel 'photon energy (eV)'
set ylabel 'effective refractive index'
plot 'index_curve.csv' skip 1 using 1:2 with lines title 'n_{eff}'

set output 'ionization_shifts.png'
set style data histogram
set style fill solid 0.6
set ylabel 'ionization energy shift (eV)'
plot 'ionization_report.csv' skip 1 using 3:xtic(1) title 'dE_{ion}'
"""


def run(cfg: RunConfig, out_dir, cache_dir=None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cache_dir) if cache_dir is not None else cache.default_cache_dir()
    log_path = out / "run_log.jsonl"
    log_file = log_path.open("w", encoding="utf-8")

    def log(**record):
        log_file.write(json.dumps(record, sort_keys=True) + "\n")
        log_file.flush()

    try:
        model = build_index_model(cfg)
        cutoff = build_cutoff(cfg)
        stack = Stack1D(cfg.d_h_nm, cfg.d_l_nm, model, n_l=cfg.n_l)
        coeffs, key = compute_point(stack, cutoff, cfg.workers, cache_dir, log)

        if cfg.figure in (None, 2):
            _write_index_curve(out / "index_curve.csv", model, cutoff.lambda_ev)
            entry = cache.entry_dir(cache_dir, key)
            if (entry / "bands.csv").is_file():
                _write_band_diagram(
                    out / "band_diagram.csv",
                    cache.read_band_cache(entry / "bands.csv"),
                )
        (out / "mass_coefficients.json").write_text(
            coeffs.to_json() + "\n", encoding="utf-8"
        )
        if cfg.figure in (None, 3, 4):
            atoms = load_atoms(cfg.config_dir / cfg.atoms if cfg.atoms else None)
            report = shifted_table(coeffs, atoms)
            (out / "ionization_report.csv").write_text(
                report.to_csv(), encoding="utf-8"
            )
        (out / "plot.gp").write_text(_GNUPLOT, encoding="utf-8")
        log(stage="artifacts", out=str(out))
        if not coeffs.converged:
            _write_error(out, "convergence",
                         f"refinement delta {coeffs.refinement_delta:.3g} > 0.05")
            return EXIT_CONVERGENCE
        return EXIT_OK
    except ConfigError as exc:
        _write_error(out, "config", str(exc))
        return EXIT_CONFIG
    except (ConvergenceError, MassComputationError) as exc:
        _write_error(out, "convergence", str(exc))
        return EXIT_CONVERGENCE
    finally:
        log_file.close()


def _write_error(out: Path, kind: str, message: str) -> None:
    (Path(out) / "error.json").write_text(
        json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def sweep(cfg: RunConfig, out_dir, cache_dir=None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cache_dir) if cache_dir is not None else cache.default_cache_dir()
    if cfg.sweep is None:
        _write_error(out, "config", "sweep requires a 'sweep' grid in the config")
        return EXIT_CONFIG
    log_path = out / "run_log.jsonl"
    log_file = log_path.open("w", encoding="utf-8")

    def log(**record):
        log_file.write(json.dumps(record, sort_keys=True) + "\n")
        log_file.flush()

    axes = [(axis, cfg.sweep[axis]) for axis in SWEEP_AXES if axis in cfg.sweep]
    rows = []
    failures = 0
    try:
        cutoff = build_cutoff(cfg)
    except ConfigError as exc:
        _write_error(out, "config", str(exc))
        log_file.close()
        return EXIT_CONFIG

    for values in itertools.product(*(vals for _, vals in axes)):
        point = dict(zip((a for a, _ in axes), values))
        params = {
            "a_nm": point.get("a_nm", cfg.index_model.get("a_nm")),
            "g_nm": point.get("g_nm", cfg.index_model.get("g_nm")),
            "d_h_nm": point.get("d_h_nm", cfg.d_h_nm),
            "d_l_nm": point.get("d_l_nm", cfg.d_l_nm),
            "index_scale": point.get("index_scale", 1.0),
        }
        try:
            model_spec = dict(cfg.index_model)
            if "a_nm" in point:
                model_spec["a_nm"] = point["a_nm"]
            if "g_nm" in point:
                model_spec["g_nm"] = point["g_nm"]
            sub = RunConfig(
                d_h_nm=params["d_h_nm"],
                d_l_nm=params["d_l_nm"],
                index_model=model_spec,
                cutoff=cfg.cutoff,
                n_l=cfg.n_l,
                atoms=cfg.atoms,
                workers=cfg.workers,
                config_dir=cfg.config_dir,
            )
            model = build_index_model(sub, index_scale=params["index_scale"])
            stack = Stack1D(sub.d_h_nm, sub.d_l_nm, model, n_l=cfg.n_l)
            coeffs, _ = compute_point(stack, cutoff, cfg.workers, cache_dir, log)
            atoms = load_atoms(cfg.config_dir / cfg.atoms if cfg.atoms else None)
            report = shifted_table(coeffs, atoms)
            d_e = report.rows[0][2]
            flag = "ok" if coeffs.converged else "unconverged"
            if not coeffs.converged:
                failures += 1
            rows.append((params, coeffs.a_ev, coeffs.b_ev, d_e, flag))
        except (ConfigError, ConvergenceError, MassComputationError,
                MaterialError) as exc:
            failures += 1
            log(stage="sweep_point", params=params, error=str(exc))
            rows.append((params, float("nan"), float("nan"), float("nan"), "failed"))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["a_nm", "g_nm", "d_h_nm", "d_l_nm", "index_scale",
         "A_ev", "B_ev", "dE_ion_ev", "flag"]
    )
    for params, a_ev, b_ev, d_e, flag in rows:
        writer.writerow(
            [
                "" if params["a_nm"] is None else repr(float(params["a_nm"])),
                "" if params["g_nm"] is None else repr(float(params["g_nm"])),
                repr(float(params["d_h_nm"])),
                repr(float(params["d_l_nm"])),
                repr(float(params["index_scale"])),
                repr(float(a_ev)),
                repr(float(b_ev)),
                repr(float(d_e)),
                flag,
            ]
        )
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    log(stage="sweep_done", points=len(rows), failures=failures)
    log_file.close()
    return EXIT_PARTIAL if failures else EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pcion",
        description="Photonic-crystal electron mass correction and "
        "ionization-energy shifts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        if name == "run":
            p.add_argument("--figure", type=int, choices=(2, 3, 4))
            p.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = RunConfig.from_file(args.config)
    except ConfigError as exc:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_error(out, "config", str(exc))
        return EXIT_CONFIG

    if args.command == "run":
        if args.figure is not None:
            cfg.figure = args.figure
        if args.workers is not None:
            cfg.workers = args.workers
        return run(cfg, args.out)
    return sweep(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
