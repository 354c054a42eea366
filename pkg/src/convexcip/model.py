"""Geometry, grids, fields and run configuration shared by every stage."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

#: Speed of light expressed in the dimensionless length unit (10 cm) per second.
LIGHT_SPEED_DIMLESS = 2997924580.0


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


class DomainError(ValueError):
    """Argument outside the domain of a mathematical operation."""


class ShapeError(ValueError):
    """Array shapes or lattices do not line up."""


def wavenumber_from_frequency(f_hz: float) -> float:
    """Dimensionless wavenumber for a frequency in Hz (10 cm length unit)."""
    if not np.isfinite(f_hz) or f_hz <= 0:
        raise DomainError(f"frequency must be positive, got {f_hz!r}")
    return 2.0 * np.pi * f_hz / LIGHT_SPEED_DIMLESS


def frequency_from_wavenumber(k: float) -> float:
    if k <= 0:
        raise DomainError(f"wavenumber must be positive, got {k!r}")
    return k * LIGHT_SPEED_DIMLESS / (2.0 * np.pi)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped onto ``[a, b]``."""
    t, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return half * t + 0.5 * (a + b), half * w


@dataclass(frozen=True)
class DomainConfig:
    """Dimensionless geometry and method parameters.

    ``lambda_`` carries the Carleman parameter (``lambda`` is reserved).
    """

    R: float = 5.0
    b: float = 2.0
    d: float = 9.0
    a1: float = 0.1
    a2: float = 0.6
    D: float = 14.0
    theta: float = 4.0
    k: float = 6.62
    lambda_: float = 1.1
    N: int = 4
    n_src: int = 10
    h: float = 0.2
    h_z: float = 0.2

    def __post_init__(self):
        problems = []
        if not self.R > 0:
            problems.append("R > 0")
        if not self.b > 0:
            problems.append("b > 0")
        if not self.d > self.b:
            problems.append("d > b")
        if not self.D > self.b:
            problems.append("D > b")
        if not self.theta > self.b:
            problems.append("theta > b")
        if not self.a1 < self.a2:
            problems.append("a1 < a2")
        if not self.k > 0:
            problems.append("k > 0")
        if not self.lambda_ >= 1:
            problems.append("lambda >= 1")
        if not self.N >= 1:
            problems.append("N >= 1")
        if not self.n_src >= self.N:
            problems.append("n_src >= N")
        if not (self.h > 0 and self.h_z > 0):
            problems.append("h, h_z > 0")
        if problems:
            raise ConfigError("invalid domain configuration: need " + ", ".join(problems))

    @property
    def sources(self) -> np.ndarray:
        """Source abscissae: Gauss-Legendre nodes on ``[a1, a2]``."""
        return gauss_legendre(self.a1, self.a2, self.n_src)[0]

    @property
    def source_weights(self) -> np.ndarray:
        return gauss_legendre(self.a1, self.a2, self.n_src)[1]

    def grid(self) -> "Grid3D":
        return Grid3D.covering(self.R, self.b, self.h, self.h_z)


@dataclass(frozen=True)
class Grid3D:
    """Uniform lattice over ``[-R, R]^2 x [-b, b]``; axis order is (x, y, z).

    Node ``(p, q, s)`` maps to the flat index ``(p * ny + q) * nz + s``
    (C order).  The layer ``s = 0`` is the measurement face ``z = -b``.
    """

    nx: int
    ny: int
    nz: int
    origin: tuple[float, float, float]
    step: tuple[float, float, float]

    def __post_init__(self):
        if self.nx != self.ny:
            raise ShapeError("Grid3D requires nx == ny")
        if min(self.nx, self.nz) < 3:
            raise ShapeError("Grid3D needs at least 3 nodes per axis")

    @classmethod
    def covering(cls, R: float, b: float, h: float, h_z: float) -> "Grid3D":
        nx = _count(2 * R, h, "h")
        nz = _count(2 * b, h_z, "h_z")
        return cls(nx, nx, nz, (-R, -R, -b), (2 * R / (nx - 1), 2 * R / (nx - 1), 2 * b / (nz - 1)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def h(self) -> float:
        return self.step[0]

    @property
    def h_z(self) -> float:
        return self.step[2]

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.step[0] * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.step[1] * np.arange(self.ny)

    @property
    def z(self) -> np.ndarray:
        return self.origin[2] + self.step[2] * np.arange(self.nz)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    def flat_index(self, p, q, s):
        return np.ravel_multi_index((p, q, s), self.shape)

    def node(self, index):
        return np.unravel_index(index, self.shape)

    def gamma_mask(self) -> np.ndarray:
        """Boolean mask of the measurement face ``z = -b``."""
        m = np.zeros(self.shape, dtype=bool)
        m[:, :, 0] = True
        return m

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m


def _count(length: float, step: float, name: str) -> int:
    n = length / step
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigError(f"{name}={step} does not divide the domain length {length}")
    return int(round(n)) + 1


@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a grid with an optional trailing axis.

    ``axis`` names the meaning of the trailing axis: ``None`` for a plain
    field, ``"source"`` or ``"fourier"`` otherwise.
    """

    grid: Grid3D
    values: np.ndarray
    axis: Optional[str] = None

    def __post_init__(self):
        expected = self.grid.shape if self.axis is None else self.grid.shape + self.values.shape[3:4]
        if self.values.shape != expected or (self.axis is not None and self.values.ndim != 4):
            raise ShapeError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=complex)))


@dataclass(frozen=True)
class MeasurementSet:
    """Backscatter samples ``u_s(x, y, z_plane, alpha)``.

    ``samples`` has shape ``(n_src, nx, ny)``.
    """

    z_plane: float
    x: np.ndarray
    y: np.ndarray
    alphas: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        for name in ("x", "y"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1 or a.size < 2 or not np.allclose(np.diff(a), a[1] - a[0], rtol=1e-9, atol=1e-12):
                raise ShapeError(f"measurement lattice along {name} must be uniform")
            object.__setattr__(self, name, _frozen(a))
        alphas = np.asarray(self.alphas, dtype=float)
        samples = np.asarray(self.samples, dtype=complex)
        if samples.shape != (alphas.size, self.x.size, self.y.size):
            raise ShapeError(f"samples shape {samples.shape} != ({alphas.size}, {self.x.size}, {self.y.size})")
        if not np.all(np.isfinite(samples)):
            raise ValueError("measurement samples must be finite")
        object.__setattr__(self, "alphas", _frozen(alphas))
        object.__setattr__(self, "samples", _frozen(samples))

    @property
    def step(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def n_samples(self) -> int:
        return self.samples.size

    def with_samples(self, samples: np.ndarray) -> "MeasurementSet":
        return dataclasses.replace(self, samples=samples)


@dataclass(frozen=True)
class CauchyData:
    """Fourier coefficients of the Dirichlet/Neumann data on the face ``z = -b``.

    ``psi0`` and ``psi1`` have shape ``(N, nx, ny)``.
    """

    x: np.ndarray
    y: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray

    def __post_init__(self):
        psi0 = np.asarray(self.psi0, dtype=complex)
        psi1 = np.asarray(self.psi1, dtype=complex)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if psi0.shape != psi1.shape or psi0.ndim != 3 or psi0.shape[1:] != (x.size, y.size):
            raise ShapeError(f"Cauchy arrays {psi0.shape}/{psi1.shape} do not share the lattice {x.size}x{y.size}")
        if not (np.all(np.isfinite(psi0)) and np.all(np.isfinite(psi1))):
            raise ValueError("Cauchy data must be finite")
        for name, v in (("x", x), ("y", y), ("psi0", psi0), ("psi1", psi1)):
            object.__setattr__(self, name, _frozen(v))

    @property
    def N(self) -> int:
        return self.psi0.shape[0]


@dataclass(frozen=True)
class Inclusion:
    """Axis-aligned box or sphere with a constant dielectric value."""

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    c: float

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ConfigError(f"unknown inclusion kind {self.kind!r}")
        if self.c < 1:
            raise ConfigError("inclusion dielectric constant must be >= 1")

    def contains(self, X, Y, Z) -> np.ndarray:
        cx, cy, cz = self.center
        if self.kind == "box":
            sx, sy, sz = (0.5 * s + 1e-12 for s in self.size)
            return (np.abs(X - cx) <= sx) & (np.abs(Y - cy) <= sy) & (np.abs(Z - cz) <= sz)
        r = self.size[0] + 1e-12
        return (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= r * r

    @classmethod
    def parse(cls, text: str) -> "Inclusion":
        """Parse ``box center=x,y,z size=sx,sy,sz c=5`` or ``sphere center=.. radius=r c=..``."""
        parts = text.split()
        if not parts:
            raise ConfigError("empty inclusion specification")
        kind, kv = parts[0], {}
        for item in parts[1:]:
            if "=" not in item:
                raise ConfigError(f"bad inclusion token {item!r}")
            key, val = item.split("=", 1)
            kv[key] = [float(v) for v in val.split(",")]
        try:
            center = tuple(kv["center"])
            c = kv["c"][0]
            size = tuple(kv["size"]) if kind == "box" else (kv["radius"][0],) * 3
        except KeyError as exc:
            raise ConfigError(f"inclusion {text!r} lacks {exc.args[0]}") from None
        if len(center) != 3 or len(size) != 3:
            raise ConfigError(f"inclusion {text!r} needs 3 coordinates")
        return cls(kind, center, size, c)

    def format(self) -> str:
        """Inverse of :meth:`parse`; floats are written exactly."""
        c = ",".join(_num(v) for v in self.center)
        if self.kind == "box":
            return f"box center={c} size={','.join(_num(v) for v in self.size)} c={_num(self.c)}"
        return f"sphere center={c} radius={_num(self.size[0])} c={_num(self.c)}"


def _num(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs beyond the domain parameters."""

    domain: DomainConfig = field(default_factory=DomainConfig)
    seed: int = 0
    # forward simulation
    sim_h: float = 0.5
    sim_h_z: float = 0.2
    inclusions: tuple[Inclusion, ...] = ()
    noise: float = 0.0
    n_meas: int = 51
    meas_step: float = 0.2
    # propagation / preprocessing
    rho_modes: int = 51
    rho_step: Optional[float] = None
    kappa1: float = 0.4
    sigma: float = 1.0
    # basis
    quad_points: Optional[int] = None
    # inversion
    gamma0: float = 0.1
    max_iter: int = 10000
    tol_gamma: float = 1e-10
    tol_j: float = 1e-10
    neumann_order: int = 1
    omega1: bool = True
    # reconstruction
    smooth_sigma: float = 1.0
    iso_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.kappa1 < 1:
            raise ConfigError("kappa1 must lie in (0, 1)")
        if self.sigma <= 0 or self.smooth_sigma < 0:
            raise ConfigError("smoothing widths must be positive")
        if self.noise < 0:
            raise ConfigError("noise level must be non-negative")
        if self.neumann_order not in (1, 2):
            raise ConfigError("neumann_order must be 1 or 2")
        if not 0 < self.iso_fraction < 1:
            raise ConfigError("iso_fraction must lie in (0, 1)")

    @property
    def n_quad(self) -> int:
        return self.quad_points or max(64, 8 * self.domain.N)

    def measurement_lattice(self) -> np.ndarray:
        half = 0.5 * (self.n_meas - 1) * self.meas_step
        return np.linspace(-half, half, self.n_meas)

    def sim_grid(self) -> Grid3D:
        return Grid3D.covering(self.domain.R, self.domain.b, self.sim_h, self.sim_h_z)

    def with_overrides(self, **overrides) -> "RunConfig":
        return _apply(self, {k: v for k, v in overrides.items() if v is not None})


_DOMAIN_KEYS = {f.name: f.type for f in dataclasses.fields(DomainConfig)}
_RUN_KEYS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name not in ("domain", "inclusions")}
_ALIASES = {"lambda": "lambda_"}


def _coerce(key: str, value, annotation: str):
    if isinstance(value, str):
        text = value.strip()
        if "bool" in annotation:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {text!r}")
        if "Optional" in annotation and text.lower() in ("", "none", "auto"):
            return None
        try:
            return int(text) if "int" in annotation else float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return value


def _apply(cfg: RunConfig, values: dict) -> RunConfig:
    dom, run = {}, {}
    for raw_key, value in values.items():
        key = _ALIASES.get(raw_key, raw_key)
        if key in _DOMAIN_KEYS:
            dom[key] = _coerce(key, value, str(_DOMAIN_KEYS[key]))
        elif key in _RUN_KEYS:
            run[key] = _coerce(key, value, str(_RUN_KEYS[key]))
        elif key == "inclusions":
            run[key] = tuple(value)
        else:
            raise ConfigError(f"unknown configuration key {raw_key!r}")
    domain = dataclasses.replace(cfg.domain, **dom)
    return dataclasses.replace(cfg, domain=domain, **run)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; ``inclusion`` may repeat.

    Errors carry the line number and the column of the offending value.
    """
    values: dict = {}
    inclusions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}:1: expected 'key = value'")
        key, value = line.split("=", 1)
        col = len(key) + 2
        key = key.strip()
        try:
            if key == "inclusion" or key.startswith("inclusion."):
                inclusions.append(Inclusion.parse(value.strip()))
                continue
            if key in values:
                raise ConfigError(f"duplicate key {key!r}")
            values[key] = value.strip()
            _apply(RunConfig(), {key: value.strip()})
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}:{col}: {exc}") from None
    if inclusions:
        values["inclusions"] = inclusions
    return _apply(RunConfig(), values)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(cfg: RunConfig) -> str:
    """Render every resolved parameter as ``key = value`` lines."""
    lines = []
    for f in dataclasses.fields(DomainConfig):
        name = "lambda" if f.name == "lambda_" else f.name
        lines.append(f"{name} = {getattr(cfg.domain, f.name)!r}")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("domain", "inclusions"):
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)!r}")
    for inc in cfg.inclusions:
        lines.append(f"inclusion = {inc.format()}")
    return "\n".join(lines)
