"""Run configuration: a flat, sectioned ``key = value`` text format.

Grammar::

    # comment (also ';')
    [section]
    key = value            # trailing comments allowed

Lists are comma separated.  A 2-D noise mode index is written ``k1:k2``.
Every key is optional; see :data:`SCHEMA` for sections, keys and defaults.
Violations are collected and raised together as a :class:`ConfigError`
carrying line numbers (line 0 means a command-line override or a default).

Example::

    [grid]
    dim = 1
    n = 199

    [noise]
    mu = 1.0
    modes = 1

    [x0]
    profile = bump
    amplitude = 1.0
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import Grid, build_grid, eigenmode

__all__ = [
    "ConfigError",
    "ProfileSpec",
    "RunConfig",
    "SCHEMA",
    "parse_config",
    "serialize_config",
    "load_config",
    "config_hash",
    "build_profile",
]

PROFILES = ("scaled_e1", "bump", "constant", "custom")
SCHEMES = ("direct", "transformed", "both")

SCHEMA: dict[str, tuple[str, ...]] = {
    "run": ("t_end", "dt", "record_stride", "scheme", "seed", "paths", "out_dir"),
    "grid": ("dim", "n", "extent"),
    "model": ("lambda", "delta_crit"),
    "noise": ("N", "mu", "modes", "shape"),
    "x0": ("profile", "amplitude", "center", "width", "values", "file"),
    "xc": ("profile", "amplitude", "center", "width", "values", "file"),
    "compacts": ("inset", "inset_prime"),
    "solver": ("linear_solver",),
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(f"line {ln}: {msg}" for ln, msg in self.errors))


@dataclass(frozen=True)
class ProfileSpec:
    """Named initial/critical profile.

    ``center`` and ``width`` are in physical coordinates and only used by
    ``bump`` (the indicator of the box ``|x_i - center_i| <= width_i / 2``).
    ``custom`` takes either inline ``values`` (row-major) or a ``file``
    (``.npy`` or whitespace/comma separated text).
    """

    profile: str = "constant"
    amplitude: float = 0.0
    center: tuple[float, ...] = ()
    width: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    file: str = ""


@dataclass(frozen=True)
class RunConfig:
    dim: int = 1
    n: tuple[int, ...] = (199,)
    extent: tuple[float, ...] = (1.0,)
    lam: float = 1e-3
    dt: float = 1e-4
    t_end: float = 0.5
    record_stride: int = 10
    scheme: str = "transformed"
    noise_mu: tuple[float, ...] = (1.0,)
    noise_modes: tuple[tuple[int, ...], ...] = ((1,),)
    noise_shape: str = "eigen"
    x0: ProfileSpec = field(default_factory=lambda: ProfileSpec("bump", 1.0, (0.5,), (0.6,)))
    xc: ProfileSpec = field(default_factory=ProfileSpec)
    delta_crit: float = 1e-6
    inset: tuple[float, ...] = (0.25,)
    inset_prime: tuple[float, ...] = (0.15,)
    seed: int = 12345
    paths: int = 1
    out_dir: str = "runs"
    linear_solver: str = "direct"

    @property
    def N(self) -> int:
        return len(self.noise_mu)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def grid(self) -> Grid:
        return build_grid(self.dim, self.extent, self.n)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------- parsing


def _tokenize(text: str, errors: list) -> dict[tuple[str, str], tuple[str, int]]:
    raw: dict[tuple[str, str], tuple[str, int]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                errors.append((lineno, f"malformed section header {stripped!r}"))
                continue
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                errors.append((lineno, f"unknown section [{section}]"))
            continue
        if "=" not in stripped:
            errors.append((lineno, f"expected 'key = value', got {stripped!r}"))
            continue
        key, value = (s.strip() for s in stripped.split("=", 1))
        if section is None:
            errors.append((lineno, f"key {key!r} outside any section"))
            continue
        if section in SCHEMA and key not in SCHEMA[section]:
            errors.append((lineno, f"unknown key {key!r} in [{section}]"))
            continue
        if (section, key) in raw:
            errors.append((lineno, f"duplicate key {section}.{key}"))
            continue
        raw[(section, key)] = (value, lineno)
    return raw


class _Reader:
    def __init__(self, raw, errors):
        self.raw = raw
        self.errors = errors

    def has(self, sec, key):
        return (sec, key) in self.raw

    def line(self, sec, key):
        return self.raw.get((sec, key), ("", 0))[1]

    def _get(self, sec, key, conv, default):
        if (sec, key) not in self.raw:
            return default
        value, ln = self.raw[(sec, key)]
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            self.errors.append((ln, f"bad value for {sec}.{key}: {value!r} ({exc})"))
            return default

    def float(self, sec, key, default):
        return self._get(sec, key, float, default)

    def int(self, sec, key, default):
        return self._get(sec, key, int, default)

    def str(self, sec, key, default):
        return self._get(sec, key, str, default)

    def floats(self, sec, key, default):
        return self._get(sec, key, lambda v: tuple(float(s) for s in v.split(",") if s.strip()), default)

    def ints(self, sec, key, default):
        return self._get(sec, key, lambda v: tuple(int(s) for s in v.split(",") if s.strip()), default)

    def modes(self, sec, key, default):
        def conv(v):
            return tuple(tuple(int(p) for p in item.split(":")) for item in v.split(",") if item.strip())

        return self._get(sec, key, conv, default)


def _per_axis(values, dim, name, ln, errors, fill):
    if not values:
        return tuple(fill)
    if len(values) == 1:
        return tuple(values) * dim
    if len(values) != dim:
        errors.append((ln, f"{name} needs 1 or {dim} entries, got {len(values)}"))
        return tuple(fill)
    return tuple(values)


def _read_profile(r: _Reader, sec, dim, extent, default: ProfileSpec, errors):
    profile = r.str(sec, "profile", default.profile)
    if profile not in PROFILES:
        errors.append((r.line(sec, "profile"), f"unknown profile {profile!r}; expected one of {PROFILES}"))
    amplitude = r.float(sec, "amplitude", default.amplitude)
    # bump geometry defaults to a centred box; other profiles keep only what is given
    geometry = []
    for key, frac in (("center", 0.5), ("width", 0.6)):
        given = r.floats(sec, key, ())
        fallback = getattr(default, key)
        if profile == "bump" and len(fallback) != dim:
            fallback = tuple(frac * L for L in extent)
        geometry.append(_per_axis(given, dim, f"{sec}.{key}", r.line(sec, key), errors, fallback))
    center, width = geometry
    if profile == "bump" and (len(center) != dim or len(width) != dim):
        errors.append((r.line(sec, "profile"), f"[{sec}] bump needs {dim}-component center and width"))
    values = r.floats(sec, "values", default.values)
    file = r.str(sec, "file", default.file)
    if profile == "custom" and not values and not file:
        errors.append((r.line(sec, "profile"), f"[{sec}] custom profile needs 'values' or 'file'"))
    if any(w <= 0 for w in width):
        errors.append((r.line(sec, "width"), f"{sec}.width must be positive"))
    return ProfileSpec(profile, amplitude, center, width, values, file)


def parse_config(text: str, overrides: Mapping[str, str] | None = None, *, check_fields: bool = True) -> RunConfig:
    """Parse and validate configuration text.

    ``overrides`` maps ``"section.key"`` to a value string and replaces
    whatever the text says (used for command-line flags).  All problems are
    gathered and raised as one :class:`ConfigError`.
    """
    errors: list[tuple[int, str]] = []
    raw = _tokenize(text, errors)
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            errors.append((0, f"unknown override key {dotted!r}"))
            continue
        raw[(sec, key)] = (str(value), 0)
    r = _Reader(raw, errors)
    d = RunConfig()

    dim = r.int("grid", "dim", 1)
    if dim not in (1, 2):
        errors.append((r.line("grid", "dim"), f"unsupported dimension {dim}"))
        dim = 1
    n = _per_axis(r.ints("grid", "n", ()), dim, "grid.n", r.line("grid", "n"), errors,
                  (199,) if dim == 1 else (99, 99))
    if any(k < 3 for k in n):
        errors.append((r.line("grid", "n"), f"grid.n must be >= 3, got {n}"))
    extent = _per_axis(r.floats("grid", "extent", ()), dim, "grid.extent", r.line("grid", "extent"), errors,
                       (1.0,) * dim)
    if any(not (L > 0) for L in extent):
        errors.append((r.line("grid", "extent"), "grid.extent must be positive"))

    lam = r.float("model", "lambda", d.lam)
    if not (0.0 < lam < 1.0):
        errors.append((r.line("model", "lambda"), f"lambda out of (0,1): {lam}"))
    delta_crit = r.float("model", "delta_crit", d.delta_crit)
    if not delta_crit > 0:
        errors.append((r.line("model", "delta_crit"), "delta_crit must be positive"))

    dt = r.float("run", "dt", d.dt)
    if not dt > 0:
        errors.append((r.line("run", "dt"), f"dt must be positive, got {dt}"))
    t_end = r.float("run", "t_end", d.t_end)
    if not t_end >= 0:
        errors.append((r.line("run", "t_end"), "t_end must be non-negative"))
    elif dt > 0 and abs(t_end / dt - round(t_end / dt)) > 1e-6 * max(1.0, t_end / dt):
        errors.append((r.line("run", "t_end"), f"t_end={t_end} is not a whole number of steps dt={dt}"))
    record_stride = r.int("run", "record_stride", d.record_stride)
    if record_stride < 1:
        errors.append((r.line("run", "record_stride"), "record_stride must be >= 1"))
    scheme = r.str("run", "scheme", d.scheme)
    if scheme not in SCHEMES:
        errors.append((r.line("run", "scheme"), f"scheme must be one of {SCHEMES}"))
    seed = r.int("run", "seed", d.seed)
    if seed < 0:
        errors.append((r.line("run", "seed"), "seed must be non-negative"))
    paths = r.int("run", "paths", d.paths)
    if paths < 1:
        errors.append((r.line("run", "paths"), "paths must be >= 1"))
    out_dir = r.str("run", "out_dir", d.out_dir)

    shape = r.str("noise", "shape", d.noise_shape)
    if shape not in ("eigen", "global"):
        errors.append((r.line("noise", "shape"), f"noise.shape must be 'eigen' or 'global', got {shape!r}"))
    mu = r.floats("noise", "mu", d.noise_mu)
    default_mode = ((0,) * dim,) if shape == "global" else ((1,) * dim,)
    modes = r.modes("noise", "modes", default_mode if len(mu) == 1 else ())
    if len(modes) != len(mu):
        errors.append((r.line("noise", "modes") or r.line("noise", "mu"),
                       f"noise has {len(mu)} coefficients but {len(modes)} mode indices"))
    for k in modes:
        if len(k) != dim:
            errors.append((r.line("noise", "modes"), f"mode index {k} needs {dim} components"))
        elif shape == "eigen" and any(v < 1 or v > nk for v, nk in zip(k, n)):
            errors.append((r.line("noise", "modes"), f"eigen mode index {k} must satisfy 1 <= k_i <= n_i"))
        elif shape == "global" and any(v < 0 for v in k):
            errors.append((r.line("noise", "modes"), f"global mode index {k} must be >= 0"))
    if r.has("noise", "N"):
        N = r.int("noise", "N", len(mu))
        if N != len(mu):
            errors.append((r.line("noise", "N"), f"N={N} but {len(mu)} coefficients given"))

    x0 = _read_profile(r, "x0", dim, extent, ProfileSpec("bump", 1.0), errors)
    xc = _read_profile(r, "xc", dim, extent, ProfileSpec("constant", 0.0), errors)

    inset = r.floats("compacts", "inset", d.inset)
    inset_prime = r.floats("compacts", "inset_prime", d.inset_prime)
    if len(inset) != len(inset_prime):
        errors.append((r.line("compacts", "inset_prime"), "inset and inset_prime need the same length"))
    for a, b in zip(inset, inset_prime):
        if not (0.0 <= b <= a < 0.5) or (a > 0 and not b < a):
            errors.append((r.line("compacts", "inset"),
                           f"need 0 <= inset_prime < inset < 0.5 (or both 0), got {a}, {b}"))

    linear_solver = r.str("solver", "linear_solver", d.linear_solver)
    if linear_solver not in ("direct", "cg"):
        errors.append((r.line("solver", "linear_solver"), "linear_solver must be 'direct' or 'cg'"))

    if errors:
        raise ConfigError(errors)

    cfg = RunConfig(
        dim=dim, n=n, extent=extent, lam=lam, dt=dt, t_end=t_end, record_stride=record_stride,
        scheme=scheme, noise_mu=mu, noise_modes=modes, noise_shape=shape, x0=x0, xc=xc,
        delta_crit=delta_crit, inset=inset, inset_prime=inset_prime, seed=seed, paths=paths,
        out_dir=out_dir, linear_solver=linear_solver,
    )
    if check_fields:
        _check_fields(cfg, r)
    return cfg


def _check_fields(cfg: RunConfig, r: _Reader) -> None:
    from .solver import PreconditionError, shift_to_origin

    errors = []
    grid = cfg.grid()
    fields_ = {}
    for sec in ("x0", "xc"):
        try:
            fields_[sec] = build_profile(grid, getattr(cfg, sec))
        except (ValueError, OSError) as exc:
            errors.append((r.line(sec, "profile"), f"[{sec}] {exc}"))
    if not errors:
        try:
            shift_to_origin(fields_["x0"], fields_["xc"], grid)
        except PreconditionError as exc:
            errors.append((r.line("x0", "profile") or r.line("xc", "profile"), str(exc)))
    if errors:
        raise ConfigError(errors)


def load_config(path: str | Path, overrides: Mapping[str, str] | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _join(values) -> str:
    return ", ".join(_fmt(v) for v in values)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    lines = [
        "[run]",
        f"t_end = {_fmt(cfg.t_end)}",
        f"dt = {_fmt(cfg.dt)}",
        f"record_stride = {cfg.record_stride}",
        f"scheme = {cfg.scheme}",
        f"seed = {cfg.seed}",
        f"paths = {cfg.paths}",
        f"out_dir = {cfg.out_dir}",
        "",
        "[grid]",
        f"dim = {cfg.dim}",
        f"n = {_join(cfg.n)}",
        f"extent = {_join(cfg.extent)}",
        "",
        "[model]",
        f"lambda = {_fmt(cfg.lam)}",
        f"delta_crit = {_fmt(cfg.delta_crit)}",
        "",
        "[noise]",
        f"N = {cfg.N}",
        f"mu = {_join(cfg.noise_mu)}",
        f"modes = {', '.join(':'.join(str(v) for v in k) for k in cfg.noise_modes)}",
        f"shape = {cfg.noise_shape}",
    ]
    for sec in ("x0", "xc"):
        p: ProfileSpec = getattr(cfg, sec)
        lines += ["", f"[{sec}]", f"profile = {p.profile}", f"amplitude = {_fmt(p.amplitude)}",
                  f"center = {_join(p.center)}", f"width = {_join(p.width)}"]
        if p.values:
            lines.append(f"values = {_join(p.values)}")
        if p.file:
            lines.append(f"file = {p.file}")
    lines += [
        "",
        "[compacts]",
        f"inset = {_join(cfg.inset)}",
        f"inset_prime = {_join(cfg.inset_prime)}",
        "",
        "[solver]",
        f"linear_solver = {cfg.linear_solver}",
    ]
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def build_profile(grid: Grid, spec: ProfileSpec) -> np.ndarray:
    """Sample a named profile on the interior grid points."""
    if spec.profile == "constant":
        return np.full(grid.shape, float(spec.amplitude))
    if spec.profile == "scaled_e1":
        return spec.amplitude * eigenmode(grid, (1,) * grid.dim).e_k
    if spec.profile == "bump":
        out = np.ones(grid.shape, dtype=bool)
        for axis, (x, c, w) in enumerate(zip(grid.axes(), spec.center, spec.width)):
            inside = np.abs(x - c) <= 0.5 * w + 1e-12 * max(1.0, abs(c))
            shape = [1] * grid.dim
            shape[axis] = -1
            out = out & inside.reshape(shape)
        return spec.amplitude * out.astype(float)
    if spec.profile == "custom":
        if spec.values:
            data = np.asarray(spec.values, dtype=float)
        else:
            path = Path(spec.file)
            if path.suffix == ".npy":
                data = np.load(path)
            else:
                data = np.array(path.read_text().replace(",", " ").split(), dtype=float)
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size != grid.size:
            raise ValueError(f"custom profile has {data.size} values, grid has {grid.size} points")
        if not np.all(np.isfinite(data)):
            raise ValueError("custom profile contains non-finite values")
        return data.reshape(grid.shape)
    raise ValueError(f"unknown profile {spec.profile!r}")
