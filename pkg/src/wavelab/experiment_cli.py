"""Command-line runner: ``wavelab <mode> --config <path> [--out <dir>] [--workers N]``.

Config files are flat ``section.key = value`` lines with ``#`` comments.
Profiles are written as expressions in ``x`` (and ``t`` where it makes
sense) using ``pi``, ``sin``, ``cos``, ``exp``, ``sqrt``, ``abs`` and the
usual arithmetic, or as ``file:<path>`` pointing at a whitespace/comma
separated table.

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import ast
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .carleman_verify import (
    REPORT_COLUMNS,
    VARIANTS,
    band_limited_field,
    carleman_ratio,
    conjugate_decomposition_residual,
    poincare_ratio,
    random_potential,
    sweep,
    test_family,
    weighted_energy,
)
from .controllability import (
    SENSITIVITY_COLUMNS,
    ControlTarget,
    loglog_slope,
    sensitivity_experiment,
    solve_control,
)
from .domain_weights import (
    CarlemanParams,
    DomainConfig,
    GeometryError,
    ParameterRangeError,
    unit_weights,
    validate_geometry,
)
from .inversion import (
    ITERATION_COLUMNS,
    InverseData,
    InverseProblemSetup,
    generate_measurement,
    relative_weighted_error,
    run_algorithm1,
)
from .wave_ops import BlowUpError, FluxTrace, Potential, WaveData, leapfrog_solve

MODES = ("validate", "forward", "control", "invert", "verify")
DEFAULT_SEED = 20240101
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class ConfigError(ValueError):
    """Parse or validation errors, one message per offending line or rule."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ---------------------------------------------------------------------------
# safe expressions

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
          "tanh": np.tanh, "log": np.log}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}
_UNOPS = {ast.USub: np.negative, ast.UAdd: np.positive}


def _check_node(node, variables):
    if isinstance(node, ast.Expression):
        return _check_node(node.body, variables)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return
    if isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTS:
            raise ValueError(f"unknown name {node.id!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check_node(node.left, variables)
        _check_node(node.right, variables)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        _check_node(node.operand, variables)
        return
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        _check_node(node.args[0], variables)
        return
    raise ValueError(f"unsupported expression element {type(node).__name__}")


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, env))
    return _FUNCS[node.func.id](_eval(node.args[0], env))


@dataclass(frozen=True)
class Expr:
    """Parsed arithmetic expression in a fixed set of variables."""

    text: str
    variables: tuple

    def __post_init__(self):
        tree = ast.parse(self.text, mode="eval")
        _check_node(tree, self.variables)
        object.__setattr__(self, "_tree", tree)

    def __call__(self, *args):
        env = dict(zip(self.variables, (np.asarray(a, dtype=float) for a in args)))
        shape = np.broadcast(*env.values()).shape if env else ()
        return np.broadcast_to(np.asarray(_eval(self._tree, env), dtype=float), shape).copy()


@dataclass(frozen=True)
class Profile:
    """Expression or tabulated profile; tables are used on the grid as given."""

    text: str
    variables: tuple
    table: np.ndarray | None = None

    @classmethod
    def parse(cls, text: str, variables: tuple, base: Path) -> "Profile":
        text = text.strip()
        if text.startswith("file:"):
            path = Path(text[5:].strip())
            if not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ValueError(f"file not found: {path}")
            data = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=1)
            return cls(text, variables, np.asarray(data, dtype=float))
        Expr(text, variables)
        return cls(text, variables)

    def __call__(self, *args):
        if self.table is not None:
            shape = np.broadcast(*[np.asarray(a) for a in args]).shape
            if self.table.shape != shape and self.table.size != int(np.prod(shape)):
                raise ValueError(f"table {self.text} has {self.table.size} values, grid needs {shape}")
            return self.table.reshape(shape).copy()
        return Expr(self.text, self.variables)(*args)


# ---------------------------------------------------------------------------
# schema

def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple:
    return tuple(float(p) for p in v.replace(";", ",").split(",") if p.strip())


def _strs(v: str) -> tuple:
    return tuple(p.strip() for p in v.split(",") if p.strip())


def _opt_float(v: str):
    return None if v.strip().lower() in ("auto", "none") else float(v)


X, XT, T_ = ("x",), ("x", "t"), ("t",)

# key -> (kind, default); kinds: float, int, str, bool, floats, strs, optfloat, or a variable tuple
SCHEMA = {
    "run.mode": ("str", None),
    "run.seed": ("int", DEFAULT_SEED),
    "run.workers": ("int", 1),
    "domain.x_lo": ("float", 0.0),
    "domain.x_hi": ("float", 1.0),
    "domain.nx": ("int", 100),
    "domain.t_lo": ("float", -2.0),
    "domain.t_hi": ("float", 2.0),
    "domain.nt": ("int", 500),
    "domain.gamma0": ("str", "right"),
    "weight.x0": ("float", -0.3),
    "weight.beta": ("float", 0.75),
    "weight.lam": ("float", 0.3),
    "weight.s": ("float", 80.0),
    "weight.c0": ("optfloat", None),
    "weight.alpha": ("float", 1.0),
    "weight.eta": ("float", 0.1),
    "weight.eps": ("float", 0.05),
    "weight.m": ("float", 1.0),
    "solver.method": ("str", "direct"),
    "solver.tol": ("float", 1e-10),
    "solver.max_iter": ("int", 0),
    "solver.cfl_safety": ("float", 0.9),
    "forward.potential": (X, "0"),
    "forward.init_pos": (X, "sin(pi*x)"),
    "forward.init_vel": (X, "0"),
    "forward.source": (XT, "0"),
    "forward.bc_left": (T_, "0"),
    "forward.bc_right": (T_, "0"),
    "forward.start": ("str", "taylor"),
    "forward.dump_field": ("bool", True),
    "control.y0": (X, "sin(pi*x)"),
    "control.y1": (X, "0"),
    "control.potential": (X, "0"),
    "control.potential_b": (X, "none"),
    "control.s_list": ("floats", (80.0,)),
    "control.dump_field": ("bool", False),
    "invert.true_q": (X, "sin(2*pi*x)"),
    "invert.w0": (X, "2 + x"),
    "invert.w1": (X, "0"),
    "invert.bc_left": (T_, "2"),
    "invert.bc_right": (T_, "3"),
    "invert.alpha_pos": ("float", 1.0),
    "invert.max_iter": ("int", 20),
    "invert.stop_tol": ("float", 0.0),
    "invert.fine_factor": ("int", 1),
    "invert.flux_file": ("str", "none"),
    "invert.regularization": ("float", 0.0),
    "invert.q0": (X, "0"),
    "verify.s_list": ("floats", (40.0, 80.0, 160.0, 320.0)),
    "verify.variants": ("strs", VARIANTS),
    "verify.n_fields": ("int", 3),
    "verify.n_potentials": ("int", 10),
    "verify.modes": ("int", 8),
    "verify.poincare_t": ("float", 0.0),
    "verify.decomposition_lams": ("floats", (0.2, 0.3)),
}

# defaults that differ by mode (applied only when the key is absent)
MODE_DEFAULTS = {
    "control": {"weight.lam": "0.02"},
    "invert": {"domain.t_lo": "0", "domain.nt": "250", "weight.lam": "0.2"},
    "verify": {"domain.nt": "400", "weight.lam": "0.2"},
}


def _convert(key: str, raw: str, base: Path):
    kind, _ = SCHEMA[key]
    if isinstance(kind, tuple):
        if raw.strip().lower() == "none":
            return None
        return Profile.parse(raw, kind, base)
    if kind == "float":
        return float(raw)
    if kind == "int":
        val = float(raw)
        if val != int(val):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(val)
    if kind == "bool":
        return _bool(raw)
    if kind == "floats":
        return _floats(raw)
    if kind == "strs":
        return _strs(raw)
    if kind == "optfloat":
        return _opt_float(raw)
    return raw.strip()


@dataclass
class ExperimentConfig:
    mode: str
    domain: DomainConfig
    params: CarlemanParams
    values: dict
    raw: dict = field(default_factory=dict)
    source: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["run.seed"])

    def echo(self) -> list[str]:
        """Every effective setting as a config line, in schema order."""
        lines = [f"run.mode = {self.mode}"]
        for key in SCHEMA:
            if key == "run.mode":
                continue
            lines.append(f"{key} = {self.raw[key]}")
        return lines


def parse_lines(text: str) -> tuple[dict, list[str]]:
    """Split a config text into ``{key: (raw, line_no)}`` and collect syntax errors."""
    entries, errors = {}, []
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {no}: expected 'section.key = value', got {body!r}")
            continue
        key, _, val = body.partition("=")
        key, val = key.strip(), val.strip()
        if key not in SCHEMA:
            errors.append(f"line {no}: unknown key {key!r}")
            continue
        if key in entries:
            errors.append(f"line {no}: duplicate key {key!r} (first on line {entries[key][1]})")
            continue
        entries[key] = (val, no)
    return entries, errors


def _raw_default(key: str) -> str:
    kind, default = SCHEMA[key]
    if default is None:
        return "auto" if kind == "optfloat" else "none"
    if kind in ("floats", "strs"):
        return ", ".join(str(v) for v in default)
    if kind == "bool":
        return "true" if default else "false"
    return str(default)


def load_config(path, mode: str | None = None, seed_override: str | None = None) -> ExperimentConfig:
    """Parse, fill defaults and validate a config file.

    Raises ``ConfigError`` listing every problem found.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    entries, errors = parse_lines(path.read_text())
    file_mode = entries.get("run.mode", (None, 0))[0]
    if mode is None:
        mode = file_mode
    if mode not in MODES:
        errors.append(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
        raise ConfigError(errors)
    if file_mode is not None and file_mode != mode:
        errors.append(f"line {entries['run.mode'][1]}: run.mode = {file_mode} conflicts with command {mode}")

    raw = {key: _raw_default(key) for key in SCHEMA}
    raw.update(MODE_DEFAULTS.get(mode, {}))
    for key, (val, _) in entries.items():
        raw[key] = val
    if seed_override is not None:
        raw["run.seed"] = seed_override
    raw["run.mode"] = mode

    values, base = {}, path.parent
    for key in SCHEMA:
        try:
            values[key] = _convert(key, raw[key], base)
        except (ValueError, SyntaxError) as exc:
            where = f"line {entries[key][1]}" if key in entries else ("WAVELAB_SEED" if key == "run.seed"
                                                                       else "default")
            errors.append(f"{where}: {key}: {exc}")
    if errors:
        raise ConfigError(errors)

    try:
        domain = DomainConfig(values["domain.x_lo"], values["domain.x_hi"], values["domain.nx"],
                              values["domain.t_lo"], values["domain.t_hi"], values["domain.nt"],
                              values["domain.gamma0"])
    except ValueError as exc:
        raise ConfigError([f"domain: {exc}"]) from None
    params = CarlemanParams(values["weight.x0"], values["weight.beta"], values["weight.lam"],
                            values["weight.s"], values["weight.c0"], values["weight.alpha"],
                            values["weight.eta"], values["weight.eps"], values["weight.m"])
    cfg = ExperimentConfig(mode, domain, params, values, raw, path)
    errors = _semantic_errors(cfg, entries)
    if errors:
        raise ConfigError(errors)
    return cfg


def _semantic_errors(cfg: ExperimentConfig, entries: dict) -> list[str]:
    errs = []
    v, d = cfg.values, cfg.domain
    if v["run.workers"] < 1:
        errs.append("run.workers must be >= 1")
    if v["solver.method"] not in ("cg", "direct"):
        errs.append("solver.method must be 'cg' or 'direct'")
    if cfg.mode in ("forward", "control", "invert") and d.dt > v["solver.cfl_safety"] * d.dx:
        errs.append(f"CFL: dt/dx = {d.dt / d.dx:.4f} exceeds solver.cfl_safety = {v['solver.cfl_safety']}"
                    " (increase domain.nt)")
    if cfg.mode in ("validate", "control", "invert", "verify"):
        rep = validate_geometry(d, cfg.params)
        for c in rep.failed():
            errs.append(f"geometry: {c.name} fails with margin {c.margin:.6g} ({c.detail})")
    if cfg.mode == "forward" and v["forward.start"] not in ("taylor", "euler"):
        errs.append("forward.start must be 'taylor' or 'euler'")
    if cfg.mode == "control":
        s_list = v["control.s_list"]
        if not s_list or any(b <= a for a, b in zip(s_list, s_list[1:])):
            errs.append("control.s_list must be a non-empty increasing list")
    if cfg.mode == "invert":
        if abs(d.t_lo) > 0:
            errs.append("invert mode needs domain.t_lo = 0")
        if v["invert.fine_factor"] < 1:
            errs.append("invert.fine_factor must be >= 1")
        flux_file = v["invert.flux_file"]
        if flux_file.lower() != "none":
            p = Path(flux_file)
            p = p if p.is_absolute() else cfg.source.parent / p
            if not p.exists():
                errs.append(f"invert.flux_file: file not found: {p}")
        if v["invert.true_q"] is None and flux_file.lower() == "none":
            errs.append("invert mode needs invert.true_q or invert.flux_file")
    if cfg.mode == "verify":
        bad = [x for x in v["verify.variants"] if x not in VARIANTS]
        if bad:
            errs.append(f"verify.variants: unknown {bad}; choose from {VARIANTS}")
        if not 1 <= v["verify.modes"] <= 8:
            errs.append("verify.modes must be between 1 and 8")
    return errs


# ---------------------------------------------------------------------------
# runners; each returns (exit_code, list of output file names)

def _potential(cfg, key, domain, m=np.inf) -> Potential:
    prof = cfg[key]
    return Potential(np.zeros(domain.nx + 2) if prof is None else prof(domain.x), m)


def run_validate(cfg: ExperimentConfig, out: Path, workers: int):
    rep = validate_geometry(cfg.domain, cfg.params)
    (out / "validation.txt").write_text(rep.as_text())
    rows = [{"condition": c.name, "holds": c.holds, "margin": c.margin} for c in rep.conditions]
    lines = ["condition,holds,margin"] + [f"{r['condition']},{int(r['holds'])},{artifacts.fmt(r['margin'])}"
                                          for r in rows]
    (out / "validation.csv").write_text("\n".join(lines) + "\n")
    sys.stdout.write(rep.as_text())
    return (EXIT_OK if rep.valid else EXIT_VALIDATION), ["validation.txt", "validation.csv"]


def run_forward(cfg: ExperimentConfig, out: Path, workers: int):
    d = cfg.domain
    X, T = d.mesh()
    src = cfg["forward.source"](X, T)
    data = WaveData(cfg["forward.init_pos"](d.x), cfg["forward.init_vel"](d.x),
                    src if np.any(src) else None, cfg["forward.bc_left"](d.t), cfg["forward.bc_right"](d.t))
    q = _potential(cfg, "forward.potential", d)
    w, flux = leapfrog_solve(data, q, d, cfg["solver.cfl_safety"], cfg["forward.start"], sides=("left", "right"))
    energy = weighted_energy(w, weights=unit_weights(d))
    rows = [{"t": t, "flux_left": flux["left"].values[i], "flux_right": flux["right"].values[i],
             "energy": energy[i]} for i, t in enumerate(d.t)]
    files = [artifacts.write_csv(out / "forward.csv", ("t", "flux_left", "flux_right", "energy"), rows).name]
    if cfg["forward.dump_field"]:
        artifacts.dump_field(out / "field.f64", w.values, _bounds(d))
        files += ["field.f64", "field.f64.meta"]
    return EXIT_OK, files


def _bounds(d: DomainConfig) -> dict:
    return {"x_lo": d.x_lo, "x_hi": d.x_hi, "t_lo": d.t_lo, "t_hi": d.t_hi, "nx_interior": d.nx, "nt": d.nt}


CONTROL_COLUMNS = ("s", "terminal_energy", "initial_energy", "pairing", "obs_norm_sq",
                   "trajectory_mismatch", "cg_iterations", "converged")


def run_control(cfg: ExperimentConfig, out: Path, workers: int):
    d, params = cfg.domain, cfg.params
    target = ControlTarget(cfg["control.y0"](d.x), cfg["control.y1"](d.x))
    p = _potential(cfg, "control.potential", d, params.m)
    kw = dict(method=cfg["solver.method"], tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"] or None,
              cfl_safety=cfg["solver.cfl_safety"])
    rows, files, code = [], [], EXIT_OK
    for s in cfg["control.s_list"]:
        pair = solve_control(target, p, d, params, s=s, **kw)
        rep = pair.report
        rows.append({"s": s, "terminal_energy": pair.terminal_energy, "initial_energy": pair.initial_energy,
                     "pairing": pair.pairing, "obs_norm_sq": rep.obs_norm_sq,
                     "trajectory_mismatch": pair.trajectory_mismatch, "cg_iterations": rep.cg_iterations,
                     "converged": rep.converged})
        if not rep.converged:
            code = EXIT_NUMERICAL
        tag = artifacts.fmt(s)
        crow = [{"t": t, **{f"u_{side}": pair.U[side][i] for side in d.sides}} for i, t in enumerate(d.t)]
        files.append(artifacts.write_csv(out / f"control_s{tag}.csv",
                                         ("t",) + tuple(f"u_{side}" for side in d.sides), crow).name)
        if cfg["control.dump_field"]:
            artifacts.dump_field(out / f"state_s{tag}.f64", pair.Y.values, _bounds(d))
            files += [f"state_s{tag}.f64", f"state_s{tag}.f64.meta"]
    files.insert(0, artifacts.write_csv(out / "control.csv", CONTROL_COLUMNS, rows).name)

    if cfg["control.potential_b"] is not None:
        pb = _potential(cfg, "control.potential_b", d, params.m)
        srows = sensitivity_experiment(target, p, pb, cfg["control.s_list"], d, params, workers=workers, **kw)
        files.append(artifacts.write_csv(out / "sensitivity.csv", SENSITIVITY_COLUMNS, srows).name)
        ratios = np.array([r["ratio"] for r in srows], dtype=float)
        s_arr = np.array([r["s"] for r in srows], dtype=float)
        if np.all(np.isfinite(ratios)) and np.all(ratios > 0) and ratios.size >= 2:
            slope = loglog_slope(s_arr, ratios)
            (out / "sensitivity_slope.txt").write_text(f"loglog_slope = {artifacts.fmt(slope)}\n")
            files.append("sensitivity_slope.txt")
        elif not np.all(np.isfinite(ratios)):
            code = EXIT_NUMERICAL
    return code, files


def _measured_flux(cfg: ExperimentConfig, d: DomainConfig, data: InverseData) -> dict:
    flux_file = cfg["invert.flux_file"]
    if flux_file.lower() == "none":
        return generate_measurement(d, data, cfg["invert.true_q"], cfg["invert.fine_factor"],
                                    cfg["solver.cfl_safety"])
    p = Path(flux_file)
    p = p if p.is_absolute() else cfg.source.parent / p
    header, table = artifacts.read_csv(p)
    if table.shape[0] != d.nt + 1:
        raise ConfigError([f"invert.flux_file: {table.shape[0]} rows, grid has {d.nt + 1} time levels"])
    out = {}
    for side in d.sides:
        col = f"flux_{side}"
        if col not in header:
            raise ConfigError([f"invert.flux_file: missing column {col}"])
        out[side] = FluxTrace(side, table[:, header.index(col)], d.dt)
    return out


def run_invert(cfg: ExperimentConfig, out: Path, workers: int):
    d, params = cfg.domain, cfg.params
    prof = lambda key: (lambda arr: cfg[key](arr))  # noqa: E731
    data = InverseData(w0=prof("invert.w0"), w1=prof("invert.w1"), bc_left=prof("invert.bc_left"),
                       bc_right=prof("invert.bc_right"))
    measured = _measured_flux(cfg, d, data)
    true_q = Potential(cfg["invert.true_q"](d.x), params.m) if cfg["invert.true_q"] is not None else None
    setup = InverseProblemSetup(d, params, data, measured, m=params.m, alpha_pos=cfg["invert.alpha_pos"],
                                true_q=true_q, method=cfg["solver.method"], tol=cfg["solver.tol"],
                                max_cg=cfg["solver.max_iter"] or None,
                                regularization=cfg["invert.regularization"],
                                cfl_safety=cfg["solver.cfl_safety"])
    q0 = Potential(cfg["invert.q0"](d.x), params.m)
    records = run_algorithm1(setup, cfg["invert.max_iter"], cfg["invert.stop_tol"], q0=q0)
    rows = [{"k": r.k, "weighted_error_sq": r.weighted_error_sq, "contraction_ratio": r.contraction_ratio,
             "flux_misfit": r.flux_misfit, "cg_iterations": r.cg_iterations} for r in records]
    files = [artifacts.write_csv(out / "iterations.csv", ITERATION_COLUMNS, rows).name]
    qf = records[-1].qk
    prow = [{"x": x, "q_final": qf.values[i], "q_true": true_q.values[i] if true_q is not None else float("nan")}
            for i, x in enumerate(d.x)]
    files.append(artifacts.write_csv(out / "potential.csv", ("x", "q_final", "q_true"), prow).name)
    if true_q is not None:
        (out / "summary.txt").write_text(
            f"iterations = {records[-1].k}\n"
            f"relative_weighted_error = {artifacts.fmt(relative_weighted_error(qf, setup))}\n")
        files.append("summary.txt")
    return EXIT_OK, files


def _verify_cell(args):
    """One s value of the inequality sweeps (pure; safe to run in a worker)."""
    kind, s, params, payload = args
    p = params.with_s(s)
    if kind == "poincare":
        z0, t_slice, d = payload
        r = poincare_ratio(z0, p, t_slice, d)
    else:
        z, pot = payload
        r = carleman_ratio(z, pot, p, kind)
    return r


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def run_verify(cfg: ExperimentConfig, out: Path, workers: int):
    d, params = cfg.domain, cfg.params
    s_list = list(cfg["verify.s_list"])
    rng = np.random.default_rng(cfg.seed)
    files = []

    # decomposition identity
    lines = []
    worst = 0.0
    for fam in test_family():
        for lam in cfg["verify.decomposition_lams"]:
            for s in s_list:
                res = conjugate_decomposition_residual(fam, CarlemanParams(
                    params.x0, params.beta, lam, s, params.c0, params.alpha, params.eta, params.eps, params.m))
                worst = max(worst, res)
                lines.append(f"{'PASS' if res <= 1e-10 else 'FAIL'} {fam.family_id} lam={lam:g} s={s:g} "
                             f"residual={artifacts.fmt(res)}")
    lines.append(f"max_relative_residual = {artifacts.fmt(worst)}")
    (out / "decomposition.txt").write_text("\n".join(lines) + "\n")
    files.append("decomposition.txt")

    half = DomainConfig(d.x_lo, d.x_hi, d.nx, 0.0, d.t_hi, d.nt, d.gamma0)
    zero_full, zero_half = Potential.zero(d), Potential.zero(half)
    summary = []
    for variant in cfg["verify.variants"]:
        for j in range(cfg["verify.n_fields"]):
            if variant == "half_initial_velocity":
                z = band_limited_field(half, rng, cfg["verify.modes"], eta=params.eta, time_basis="sin")
                pot = zero_half
            else:
                z = band_limited_field(d, rng, cfg["verify.modes"], with_cutoff=(variant == "interval"),
                                       eta=params.eta)
                pot = zero_full
            cells = _map(_verify_cell, [(variant, s, params, (z, pot)) for s in s_list], workers)
            rep = sweep(variant, s_list, lambda s, _c=dict(zip(s_list, cells)): _c[s])
            name = f"inequality_{variant}_{j}.csv"
            files.append(artifacts.write_csv(out / name, REPORT_COLUMNS, rep.rows()).name)
            summary.append({"sweep": f"{variant}_{j}", "spread": rep.spread(), "stable": rep.stable})

    for j in range(cfg["verify.n_fields"]):
        z0 = band_limited_field(d, rng, cfg["verify.modes"], with_cutoff=False).values[d.time_index(0.0)]
        cells = _map(_verify_cell, [("poincare", s, params, (z0, cfg["verify.poincare_t"], d)) for s in s_list],
                     workers)
        rep = sweep("poincare", s_list, lambda s, _c=dict(zip(s_list, cells)): _c[s])
        files.append(artifacts.write_csv(out / f"poincare_{j}.csv", REPORT_COLUMNS, rep.rows()).name)
        summary.append({"sweep": f"poincare_{j}", "spread": rep.spread(), "stable": rep.stable})

    # uniformity over potentials in the m-ball
    z = band_limited_field(d, rng, cfg["verify.modes"], eta=params.eta)
    prow = []
    for i in range(cfg["verify.n_potentials"]):
        pot = random_potential(d, rng, params.m)
        for s in s_list:
            r = carleman_ratio(z, pot, params.with_s(s), "interval")
            prow.append({"potential": i, "s": s, "lhs": r.lhs, "rhs": r.rhs, "M": r.ratio})
    files.append(artifacts.write_csv(out / "potential_uniformity.csv", ("potential", "s", "lhs", "rhs", "M"),
                                     prow).name)
    for s in s_list:
        Ms = [r["M"] for r in prow if r["s"] == s]
        summary.append({"sweep": f"potentials_s{artifacts.fmt(s)}", "spread": max(Ms) / min(Ms),
                        "stable": max(Ms) / min(Ms) <= 2.0})
    sl = ["sweep,spread,stable"] + [f"{r['sweep']},{artifacts.fmt(r['spread'])},{int(r['stable'])}"
                                    for r in summary]
    (out / "verify_summary.csv").write_text("\n".join(sl) + "\n")
    files.append("verify_summary.csv")
    return EXIT_OK, files


RUNNERS = {"validate": run_validate, "forward": run_forward, "control": run_control,
           "invert": run_invert, "verify": run_verify}


def run(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> int:
    """Execute one configured experiment and write the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = int(workers or cfg["run.workers"])
    t0 = time.perf_counter()
    files: list[str] = []
    try:
        code, files = RUNNERS[cfg.mode](cfg, out, workers)
        status = {EXIT_OK: "ok", EXIT_VALIDATION: "validation failure"}.get(code, "numerical failure")
    except (ConfigError, GeometryError, ParameterRangeError) as exc:
        code, status = EXIT_VALIDATION, f"validation failure: {exc}"
    except (BlowUpError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code, status = EXIT_NUMERICAL, f"numerical failure: {exc}"
    if code != EXIT_OK:
        sys.stderr.write(status.splitlines()[0] + "\n")
    artifacts.write_manifest(out, cfg.mode, cfg.echo(), time.perf_counter() - t0, files, status.splitlines()[0])
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wavelab", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="config file (section.key = value lines)")
    ap.add_argument("--out", default=None, help="output directory (default: ./runs/<mode>)")
    ap.add_argument("--workers", type=int, default=None, help="parallel worker slots")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode, os.environ.get("WAVELAB_SEED"))
    except ConfigError as exc:
        for err in exc.errors:
            sys.stderr.write(f"config error: {err}\n")
        return EXIT_VALIDATION
    if args.workers is not None and args.workers < 1:
        sys.stderr.write("config error: --workers must be >= 1\n")
        return EXIT_VALIDATION
    out = Path(args.out) if args.out else Path("runs") / args.mode
    return run(cfg, out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
