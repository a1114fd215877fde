"""Command-line front end.

``kbrw <command> [--config FILE] [--set key=value]... [--out DIR] [--seed S] [--strict]``

Configuration is resolved as command defaults, then the config file, then
``--set`` overrides, then dedicated flags. Every value is validated before
any output is written. Exit codes: 0 success, 2 configuration error, 3
diagnostic raised under ``--strict``.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kbrw import __version__
from kbrw.displacement import FAMILIES, TWO_SIDED, DisplacementLaw, TailProfile
from kbrw.experiments import (
    PHASE_COLUMNS,
    check_counterexample_params,
    compare,
    counterexample,
    phase_rows,
)
from kbrw.frontdyn import (
    SlopeParams,
    allowed_slopes_ok,
    convergence_rate,
    in_T,
    perturbed_wave,
    traveling_wave,
)
from kbrw.io import write_csv
from kbrw.logprofile import PiecewiseProfile, evolve
from kbrw.particle_sim import SimParams, run_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STRICT = 3


class ConfigError(ValueError):
    pass


# Value parsing ---------------------------------------------------------------

def parse_float(s: str) -> float:
    t = s.strip().lower()
    if t in ("inf", "+inf", "infinity", "∞"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise ConfigError(f"not a number: {s!r}") from None
    if math.isnan(v):
        raise ConfigError("nan is not allowed")
    return v


def parse_int(s: str) -> int:
    t = s.strip()
    try:
        return int(t)
    except ValueError:
        pass
    # Accept forms such as 1e6 when they denote an integer exactly.
    v = parse_float(t)
    if not math.isfinite(v) or v != int(v):
        raise ConfigError(f"not an integer: {s!r}")
    return int(v)


def parse_float_list(s: str) -> list:
    """``a,b,c`` or ``start:stop:num`` (inclusive linspace)."""
    t = s.strip()
    if ":" in t:
        parts = t.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:num, got {s!r}")
        a, b, n = parse_float(parts[0]), parse_float(parts[1]), parse_int(parts[2])
        if n < 1:
            raise ConfigError("range needs at least one point")
        return [float(v) for v in np.linspace(a, b, n)]
    vals = [parse_float(p) for p in t.split(",") if p.strip()]
    if not vals:
        raise ConfigError("empty list")
    return vals


def parse_int_list(s: str) -> list:
    vals = [parse_int(p) for p in s.split(",") if p.strip()]
    if not vals:
        raise ConfigError("empty list")
    return vals


def parse_str(s: str) -> str:
    return s.strip()


LAW_KEYS = {
    "family": (parse_str, TWO_SIDED),
    "rho": (parse_float, "1"),
    "c_minus": (parse_float, "1"),
    "scale": (parse_float, "1"),
    "shift": (parse_float, "0"),
}

SCHEMAS = {
    "simulate": dict(LAW_KEYS, N=(parse_int, "100000"), gamma=(parse_float, "0.6"),
                     beta=(parse_float, "0.3"), T=(parse_int, "10"), init=(parse_str, "point"),
                     cells=(parse_int, "64")),
    "evolve": {"gamma": (parse_float, "0.6"), "beta": (parse_float, "0.3"),
               "c_minus": (parse_float, "inf"), "rho": (parse_float, "1"), "T": (parse_int, "10"),
               "init": (parse_str, "point")},
    "wave": {"gamma": (parse_float, "0.6"), "beta": (parse_float, "0.3"),
             "c_minus": (parse_float, "inf")},
    "phase-diagram": {"betas": (parse_float_list, "0.3,0.6,0.9"),
                      "gammas": (parse_float_list, "0.01:0.99:99")},
    "compare": dict(LAW_KEYS, N=(parse_int_list, "1000000"), gamma=(parse_float, "0.6"),
                    beta=(parse_float, "0.3"), T=(parse_int, "3"), init=(parse_str, "point"),
                    cell_width=(parse_float, "0.2"), threshold=(parse_float, "0.1"),
                    seeds=(parse_int_list, "")),
    "rate": {"gamma": (parse_float, "0.7"), "beta": (parse_float, "0.3"),
             "c_minus": (parse_float, "inf"), "T": (parse_int, "40"),
             "perturbation": (parse_float, "0.01"), "index": (parse_int, "1"),
             "delta": (parse_float, "0.05")},
    "counterexample": {"rho": (parse_float, "0.25"), "beta": (parse_float, "0.4"),
                       "gamma": (parse_float, "0.6"), "c_minus": (parse_float, "1"),
                       "step": (parse_float, "0.001"), "half_width": (parse_float, "1.5")},
}
COMMANDS = tuple(SCHEMAS)


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class RunConfig:
    command: str
    params: dict
    raw: dict
    out: Path
    seed: int
    strict: bool

    def metadata(self, **extra) -> dict:
        meta = {"command": self.command, "params": self.params, "config": self.raw, "seed": self.seed,
                "rng_algorithm": None, "N_eff": None, "c_N": None, "beta_N": None,
                "code_version": __version__}
        meta.update(extra)
        return meta


def resolve_config(command: str, config_file=None, sets=None, seed=None, out="out",
                   strict: bool = False) -> RunConfig:
    schema = SCHEMAS[command]
    raw = {k: d for k, (_, d) in schema.items()}
    raw["seed"] = "1"
    layers = []
    if config_file:
        layers.append(read_config_file(config_file))
    layers.append(parse_set(sets))
    for layer in layers:
        for k, v in layer.items():
            if k not in schema and k != "seed":
                raise ConfigError(f"unknown key {k!r} for {command}; known: {sorted(schema) + ['seed']}")
            raw[k] = v
    if seed is not None:
        raw["seed"] = str(seed)
    params = {}
    for k, (parse, _) in schema.items():
        if raw[k] == "" and parse is parse_int_list:
            params[k] = []
            continue
        try:
            params[k] = parse(raw[k])
        except ConfigError as exc:
            raise ConfigError(f"{k}: {exc}") from None
    seed_val = parse_int(raw["seed"])
    if seed_val < 0:
        raise ConfigError("seed must be non-negative")
    return RunConfig(command, params, raw, Path(out), seed_val, strict)


# Validation ------------------------------------------------------------------

def _check_gamma_beta(p):
    if not 0 < p["gamma"] < 1:
        raise ConfigError(f"gamma must lie in (0, 1), got {p['gamma']}")
    if not (p["beta"] > 0 and math.isfinite(p["beta"])):
        raise ConfigError(f"beta must be positive, got {p['beta']}")


def _check_c_minus(p):
    if not p["c_minus"] > 0:
        raise ConfigError(f"c_minus must be positive or inf, got {p['c_minus']}")


def _law(p) -> DisplacementLaw:
    if p["family"] not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}")
    try:
        return DisplacementLaw(p["family"], p["rho"], p["c_minus"], p["scale"], p["shift"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_init(p, allowed=("point", "wave")):
    if p["init"] not in allowed:
        raise ConfigError(f"init must be one of {allowed}, got {p['init']!r}")


def _check_T(p):
    if p["T"] < 0:
        raise ConfigError("T must be non-negative")


def validate(cfg: RunConfig):
    """Build the engine inputs or raise :class:`ConfigError`."""
    p = cfg.params
    c = cfg.command
    try:
        if c == "simulate":
            _check_gamma_beta(p)
            _check_T(p)
            _check_init(p)
            if p["cells"] < 1:
                raise ConfigError("cells must be positive")
            law = _law(p)
            if p["init"] == "wave" and law.rho != 1.0:
                raise ConfigError("init = wave needs rho = 1")
            return SimParams(p["N"], p["gamma"], p["beta"], law, cfg.seed, p["T"])
        if c == "evolve":
            _check_gamma_beta(p)
            _check_c_minus(p)
            _check_T(p)
            _check_init(p)
            if p["rho"] != 1.0:
                raise ConfigError("the deterministic engine supports rho = 1 only")
            return TailProfile(1.0, p["c_minus"])
        if c == "wave":
            _check_gamma_beta(p)
            _check_c_minus(p)
            return SlopeParams(p["beta"], p["c_minus"])
        if c == "phase-diagram":
            if any(not (b > 0 and math.isfinite(b)) for b in p["betas"]):
                raise ConfigError("betas must be positive")
            if any(not 0 < g < 1 for g in p["gammas"]):
                raise ConfigError("gammas must lie in (0, 1)")
            return None
        if c == "compare":
            _check_gamma_beta(p)
            _check_T(p)
            _check_init(p)
            law = _law(p)
            if law.rho != 1.0:
                raise ConfigError("compare needs rho = 1")
            if not p["cell_width"] > 0:
                raise ConfigError("cell_width must be positive")
            seeds = p["seeds"] or [cfg.seed]
            if any(s < 0 for s in seeds):
                raise ConfigError("seeds must be non-negative")
            return [SimParams(N, p["gamma"], p["beta"], law, s, p["T"]) for N in p["N"] for s in seeds]
        if c == "rate":
            _check_gamma_beta(p)
            _check_c_minus(p)
            if p["T"] < 3:
                raise ConfigError("rate needs T >= 3")
            if p["index"] < 1:
                raise ConfigError("index must be at least 1")
            if not p["delta"] > 0:
                raise ConfigError("delta must be positive")
            return SlopeParams(p["beta"], p["c_minus"])
        if c == "counterexample":
            check_counterexample_params(p["rho"], p["beta"], p["gamma"])
            if not (p["c_minus"] > 0 and math.isfinite(p["c_minus"])):
                raise ConfigError("c_minus must be finite and positive")
            if not (p["step"] > 0 and abs(round(1.0 / p["step"]) * p["step"] - 1.0) <= 1e-15):
                raise ConfigError("step must divide 1 exactly")
            if p["half_width"] < 1.0 + p["step"]:
                raise ConfigError("half_width must exceed 1")
            return None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown command {c!r}")


# Commands --------------------------------------------------------------------

def _profile_rows(g: PiecewiseProfile):
    return g.to_rows()


def _write_profile(path, g: PiecewiseProfile, gamma: float, meta: dict, t: int):
    extra = {"L": g.L, "U": g.U, "concave": g.concave, "gamma": gamma, "t": t}
    write_csv(path, "profile", ("piece", "x", "value"), _profile_rows(g), dict(meta, profile=extra))


def cmd_simulate(cfg: RunConfig, sim: SimParams) -> int:
    p = cfg.params
    wave = traveling_wave(p["gamma"], p["beta"], p["c_minus"]).G if p["init"] == "wave" else None
    tr = run_trajectory(sim, p["init"], wave, cells=p["cells"])
    meta = cfg.metadata(**{k: tr.metadata[k] for k in ("rng_algorithm", "N_eff", "c_N", "beta_N")})
    meta["sim"] = tr.metadata["params"]
    rows = [(r.step, r.sigma_star_N, r.back, r.front) for r in tr.records]
    write_csv(cfg.out / "trajectory.csv", "trajectory", ("step", "sigma_star_N", "back", "front"), rows, meta)
    for k, prof in enumerate(tr.profiles):
        write_csv(cfg.out / f"profile_t{k}.csv", "empirical-profile", ("cell_left", "cell_right", "logprofile"),
                  zip(prof.cell_left, prof.cell_right, prof.values), dict(meta, t=k))
    return EXIT_OK


def cmd_evolve(cfg: RunConfig, tail: TailProfile) -> int:
    p = cfg.params
    gamma, beta = p["gamma"], p["beta"]
    if p["init"] == "wave":
        g0 = traveling_wave(gamma, beta, p["c_minus"]).G
    else:
        g0 = PiecewiseProfile.point(0.0, gamma)
    states = evolve(g0, tail, gamma, beta, p["T"])
    params = SlopeParams(beta, p["c_minus"])
    meta = cfg.metadata()
    rows = []
    for s in states:
        _write_profile(cfg.out / f"profile_t{s.t}.csv", s.g, gamma, meta, s.t)
        sig = s.sigma_history[-1] if s.t > 0 else math.nan
        nonu = bool(s.nonunique[-1]) if s.t > 0 else False
        rows.append((s.t, sig, s.g.U, nonu, allowed_slopes_ok(s.g, params), in_T(s.g, params, gamma)))
    write_csv(cfg.out / "sigma.csv", "sigma", ("t", "sigma", "U", "nonunique", "slopes_allowed", "in_T"),
              rows, meta)
    if cfg.strict and any(r[3] for r in rows):
        print("strict: selection threshold not unique at some step", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_wave(cfg: RunConfig, params: SlopeParams) -> int:
    p = cfg.params
    w = traveling_wave(p["gamma"], p["beta"], p["c_minus"])
    meta = cfg.metadata(wave={"nu": w.nu, "chi": w.chi, "phase": w.phase, "gamma_c": w.gamma_c,
                              "residual": w.residual, "y": list(w.y.entries), "truncated": w.y.truncated,
                              "L": w.G.L, "U": w.G.U})
    rows = [(i, x, v) for i, (x, v) in enumerate(zip(w.G.breakpoints(), w.G(w.G.breakpoints())))]
    write_csv(cfg.out / "wave.csv", "wave", ("index", "x", "value"), rows, meta)
    return EXIT_OK


def cmd_phase_diagram(cfg: RunConfig, _) -> int:
    p = cfg.params
    write_csv(cfg.out / "phase.csv", "phase", PHASE_COLUMNS, phase_rows(p["betas"], p["gammas"]),
              cfg.metadata())
    return EXIT_OK


def cmd_compare(cfg: RunConfig, sims) -> int:
    p = cfg.params
    summary = []
    for sim in sims:
        rep = compare(sim, p["init"], p["cell_width"], p["threshold"])
        meta = cfg.metadata(**{k: rep.metadata[k] for k in ("rng_algorithm", "N_eff", "c_N", "beta_N")})
        meta.update(seed=sim.seed, N=sim.N, max_error=rep.max_error, t=rep.t, threshold=rep.threshold)
        name = "compare.csv" if len(sims) == 1 else f"compare_N{sim.N}_seed{sim.seed}.csv"
        rows = [row + (bool(c),) for row, c in zip(rep.rows(), rep.considered())]
        write_csv(cfg.out / name, "compare",
                  ("cell_left", "cell_right", "empirical", "deterministic", "abs_error", "considered"), rows, meta)
        summary.append((sim.N, sim.seed, rep.t, rep.max_error))
    write_csv(cfg.out / "compare_summary.csv", "compare-summary", ("N", "seed", "t", "max_error"), summary,
              cfg.metadata())
    return EXIT_OK


def cmd_rate(cfg: RunConfig, params: SlopeParams) -> int:
    p = cfg.params
    w = traveling_wave(p["gamma"], p["beta"], p["c_minus"], for_stability=True)
    g0 = perturbed_wave(w, p["perturbation"], p["index"])
    est = convergence_rate(p["gamma"], p["beta"], g0, p["T"], p["c_minus"], p["delta"])
    meta = cfg.metadata(rate={"r": est.rate, "r2": est.r2, "nongeometric": est.nongeometric,
                              "shift": est.shift, "nu": est.nu, "fitted_steps": est.fitted_steps})
    rows = [(t, phi, est.rate) for t, phi in enumerate(est.phis)]
    write_csv(cfg.out / "rate.csv", "rate", ("t", "phi", "fitted_r"), rows, meta)
    if cfg.strict and est.nongeometric:
        print(f"strict: decay is not geometric (r = {est.rate:.6g}, R^2 = {est.r2:.3g})", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_counterexample(cfg: RunConfig, _) -> int:
    p = cfg.params
    res = counterexample(p["rho"], p["beta"], p["gamma"], p["c_minus"], p["step"], p["half_width"])
    meta = cfg.metadata(counterexample={"sigma_star": res.sigma_star, "sigma_closed_form": res.sigma_closed_form,
                                        "a": res.a, "b": res.b, "isolated_zero": res.isolated_zero,
                                        "support_ok": res.support_ok})
    write_csv(cfg.out / "counterexample.csv", "counterexample", ("x", "r", "s"),
              zip(res.grid, res.r, res.s), meta)
    rows = [(i, lo, hi, mx, lo == hi) for i, (lo, hi, mx) in enumerate(res.components)]
    write_csv(cfg.out / "support.csv", "support", ("component", "x_first", "x_last", "max", "isolated"), rows, meta)
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "evolve": cmd_evolve,
    "wave": cmd_wave,
    "phase-diagram": cmd_phase_diagram,
    "compare": cmd_compare,
    "rate": cmd_rate,
    "counterexample": cmd_counterexample,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kbrw", description="Noisy branching random walk experiments.")
    ap.add_argument("--version", action="version", version=f"kbrw {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", help="random seed (overrides config)")
    ap.add_argument("--strict", action="store_true", help="exit 3 on diagnostics")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.set, args.seed, args.out, args.strict)
        inputs = validate(cfg)
    except ConfigError as exc:
        print(f"kbrw: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return HANDLERS[cfg.command](cfg, inputs)


if __name__ == "__main__":
    sys.exit(main())
