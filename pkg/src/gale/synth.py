"""Analytic potential-flow cases around cylinders and Joukowski airfoils.

Flow is computed in the circle plane (zeta) as uniform flow past a cylinder
plus circulation, and carried to the physical plane through the Joukowski
map ``z = zeta + 1/zeta`` followed by a similarity transform that puts the
chord midpoint at the origin with the requested chord length.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .bundle import write_bundle
from .errors import ConfigError, DomainError, GaleError, GeometryError
from .graph import FlowGraph
from .mesh import Mesh, Patch, add_perimeter_edges, cells_to_graph, check_mesh, truncate_to_radius

RHO_AIR = 1.225
P_INF = 0.0
OUTER_RADIUS_CHORDS = 2.0
TRUNCATION_CHORDS = 1.0
# surface clustering: sector spacing near the leading edge is (1 - LE_CLUSTER) of uniform
LE_CLUSTER = 0.6

SAMPLING_RANGES = {
    "U_inf": (5.0, 50.0),
    "alpha": (-15.0, 15.0),
    "thickness": (0.02, 0.15),
    "camber": (-0.05, 0.1),
}
DATASET_VERSION = 1


@dataclass(frozen=True)
class PhysicalConstants:
    rho: float = RHO_AIR
    p_inf: float = P_INF


@dataclass(frozen=True)
class Cylinder:
    radius: float = 0.5

    @property
    def chord(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class Joukowski:
    thickness: float = 0.1
    camber: float = 0.0
    chord: float = 1.0


class _Body:
    """Circle-plane geometry of a shape and its map to the physical plane."""

    def __init__(self, shape):
        self.shape = shape
        if isinstance(shape, Cylinder):
            if shape.radius <= 0:
                raise ConfigError("cylinder radius must be positive")
            self.mapped = False
            self.zeta0 = 0j
            self.a = shape.radius
            self.scale = 1.0
            self.mid_raw = 0j
            self.theta_te = 0.0
        elif isinstance(shape, Joukowski):
            if shape.thickness <= 0 or shape.chord <= 0:
                raise ConfigError("Joukowski thickness and chord must be positive")
            self.mapped = True
            self.zeta0 = complex(-shape.thickness, shape.camber)
            self.a = abs(1.0 - self.zeta0)
            self.theta_te = math.atan2(-shape.camber, 1.0 + shape.thickness)
            th = np.linspace(0.0, 2.0 * np.pi, 20001)
            x = self._to_raw(self.zeta0 + self.a * np.exp(1j * th)).real
            # refine the leading edge with a golden-section search around the sampled minimum
            k = int(np.argmin(x))
            lo, hi = th[max(k - 1, 0)], th[min(k + 1, th.size - 1)]
            f = lambda t: self._to_raw(self.zeta0 + self.a * np.exp(1j * t)).real
            gr = (math.sqrt(5) - 1) / 2
            for _ in range(80):
                c1, c2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
                if f(c1) < f(c2):
                    hi = c2
                else:
                    lo = c1
            x_le = float(f(0.5 * (lo + hi)))
            x_te = 2.0
            self.scale = shape.chord / (x_te - x_le)
            self.mid_raw = complex(0.5 * (x_le + x_te), 0.0)
        else:
            raise ConfigError(f"unknown shape {shape!r}")

    def _to_raw(self, zeta):
        return zeta + 1.0 / zeta if self.mapped else zeta

    def to_physical(self, zeta):
        return self.scale * (self._to_raw(zeta) - self.mid_raw)

    def to_circle(self, z, tol=1e-9):
        """Inverse map; raises DomainError for points inside the body."""
        zr = np.asarray(z, dtype=complex) / self.scale + self.mid_raw
        if not self.mapped:
            zeta = zr
        else:
            root = np.sqrt(zr * zr - 4.0)
            z1, z2 = 0.5 * (zr + root), 0.5 * (zr - root)
            zeta = np.where(np.abs(z1 - self.zeta0) >= np.abs(z2 - self.zeta0), z1, z2)
        r = np.abs(zeta - self.zeta0)
        if np.any(r < self.a * (1.0 - tol)):
            raise DomainError("evaluation point lies inside the body")
        return zeta

    def circulation_raw(self, U, alpha_rad):
        if not self.mapped:
            return 0.0
        # Kutta condition: zero circle-plane velocity at the trailing-edge point
        beta = -self.theta_te
        return 4.0 * math.pi * self.a * U * math.sin(alpha_rad + beta)

    def circle_point(self, theta):
        return self.zeta0 + self.a * np.exp(1j * np.asarray(theta))


def circulation(shape, U_inf, alpha) -> float:
    """Physical-plane circulation (clockwise positive), m^2/s."""
    body = _Body(shape)
    return body.scale * body.circulation_raw(U_inf, math.radians(alpha))


def _velocity_circle(body, zeta, U, alpha_rad):
    gamma = body.circulation_raw(U, alpha_rad)
    d = zeta - body.zeta0
    dw = U * (np.exp(-1j * alpha_rad) - body.a ** 2 * np.exp(1j * alpha_rad) / d ** 2) \
        + 1j * gamma / (2.0 * np.pi * d)
    if body.mapped:
        dw = dw / (1.0 - 1.0 / zeta ** 2)
    return dw


def potential_velocity(shape, U_inf, alpha, point):
    """Velocity (ux, uy) of potential flow past ``shape`` at ``point``.

    ``point`` is a 2-vector or an (k, 2) array; ``alpha`` is in degrees.
    """
    body = _Body(shape)
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    zeta = body.to_circle(pts[:, 0] + 1j * pts[:, 1])
    w = _velocity_circle(body, zeta, U_inf, math.radians(alpha))
    out = np.column_stack([w.real, -w.imag])
    if not np.all(np.isfinite(out)):
        raise DomainError("velocity is singular at the requested point")
    return out[0] if single else out


def pressure_from_velocity(u, U_inf, rho=RHO_AIR):
    """Steady Bernoulli with zero farfield static pressure."""
    u = np.asarray(u, dtype=float)
    return 0.5 * rho * (U_inf ** 2 - np.sum(u * u, axis=-1))


# ---------------------------------------------------------------------------
# cases


@dataclass(frozen=True)
class CaseRecord:
    shape: Cylinder | Joukowski
    U_inf: float
    alpha: float
    TI_label: float = 0.0
    rho: float = RHO_AIR
    rings: int = 48
    sectors: int = 64
    seed: int = 0
    case_id: str = ""

    def __post_init__(self):
        if self.U_inf <= 0:
            raise ConfigError("U_inf must be positive")
        if self.rings < 2 or self.sectors < 8:
            raise ConfigError("need at least 2 rings and 8 sectors")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if abs(self.alpha) > 30.0:
            raise ConfigError("|alpha| must not exceed 30 degrees")

    def to_dict(self):
        d = asdict(self)
        d["shape"] = {"kind": type(self.shape).__name__.lower(), **asdict(self.shape)}
        return d


def sector_angles(body: _Body, S: int) -> np.ndarray:
    s = np.arange(S) / S
    if body.mapped:
        return body.theta_te + 2.0 * np.pi * s + LE_CLUSTER * np.sin(2.0 * np.pi * s)
    return 2.0 * np.pi * s


def ring_radii(body: _Body, R: int) -> np.ndarray:
    outer = OUTER_RADIUS_CHORDS * body.shape.chord / body.scale
    if outer <= body.a:
        raise ConfigError("outer radius must exceed the body radius")
    return body.a * (outer / body.a) ** (np.arange(R + 1) / R)


def build_mesh(rec: CaseRecord) -> Mesh:
    """O-grid of ``rings`` x ``sectors`` quads with analytic fields."""
    body = _Body(rec.shape)
    R, S = rec.rings, rec.sectors
    theta = sector_angles(body, S)
    radii = ring_radii(body, R)
    zeta = body.zeta0 + radii[:, None] * np.exp(1j * theta[None, :])
    z = body.to_physical(zeta).ravel()
    vertices = np.column_stack([z.real, z.imag])

    def v(i, j):
        return i * S + (j % S)

    cells = [np.array([v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)])
             for i in range(R) for j in range(S)]

    theta_next = np.append(theta[1:], theta[0] + 2.0 * np.pi)
    theta_mid = 0.5 * (theta + theta_next)
    alpha_rad = math.radians(rec.alpha)
    u_wall = _velocity_circle(body, body.circle_point(theta_mid), rec.U_inf, alpha_rad)
    p_wall = pressure_from_velocity(np.column_stack([u_wall.real, -u_wall.imag]), rec.U_inf, rec.rho)
    airfoil = Patch(np.array([[v(0, j), v(0, j + 1)] for j in range(S)]), p_wall)
    farfield = Patch(np.array([[v(R, j), v(R, j + 1)] for j in range(S)]))
    mesh = Mesh(vertices=vertices, cells=cells,
                patches={"airfoil": airfoil, "farfield": farfield})
    try:
        check_mesh(mesh)
    except GeometryError as exc:
        raise GeometryError(f"generated mesh is invalid: {exc}") from exc

    quad = np.array(cells)
    pts = vertices[quad]
    x, y = pts[..., 0], pts[..., 1]
    xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum(axis=1)
    cx = ((x + xn) * cross).sum(axis=1) / (6.0 * area)
    cy = ((y + yn) * cross).sum(axis=1) / (6.0 * area)
    u = potential_velocity(rec.shape, rec.U_inf, rec.alpha, np.column_stack([cx, cy]))
    p = pressure_from_velocity(u, rec.U_inf, rec.rho)
    mesh.fields = np.column_stack([p, u])
    return mesh


def generate_case(rec: CaseRecord) -> tuple[Mesh, FlowGraph]:
    mesh = build_mesh(rec)
    g = cells_to_graph(mesh, rec.shape.chord, global_true=(rec.U_inf, rec.alpha, rec.TI_label),
                       case_id=rec.case_id, rho=rec.rho)
    g = truncate_to_radius(g, TRUNCATION_CHORDS)
    return mesh, add_perimeter_edges(g)


# ---------------------------------------------------------------------------
# datasets


def split_counts(n: int, split) -> tuple[int, int, int]:
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {split} must be three non-negative numbers summing to 1")
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def sample_record(rng: np.random.Generator, index: int, rings: int, sectors: int) -> CaseRecord:
    r = SAMPLING_RANGES
    U = float(rng.uniform(*r["U_inf"]))
    alpha = float(rng.uniform(*r["alpha"]))
    eps = float(rng.uniform(*r["thickness"]))
    mu = float(rng.uniform(*r["camber"]))
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return CaseRecord(shape=Joukowski(thickness=eps, camber=mu, chord=1.0), U_inf=U, alpha=alpha,
                      rings=rings, sectors=sectors, seed=seed, case_id=f"case_{index:04d}")


@dataclass
class Dataset:
    root: Path
    manifest: dict = field(default_factory=dict)

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        try:
            manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise GaleError(f"{root} has no manifest.json") from exc
        return cls(root, manifest)

    def split(self, name) -> list[str]:
        try:
            return list(self.manifest["splits"][name])
        except KeyError as exc:
            raise GaleError(f"dataset has no split {name!r}") from exc

    def graphs(self, name) -> list[FlowGraph]:
        from .bundle import read_bundle

        return [read_bundle(self.root / cid) for cid in self.split(name)]


def make_dataset(n_cases: int, seed: int, out, split=(0.8, 0.1, 0.1),
                 rings: int = 48, sectors: int = 64) -> Dataset:
    """Write ``n_cases`` graph bundles plus a deterministic split manifest."""
    if n_cases < 10:
        raise ConfigError("a dataset needs at least 10 cases")
    counts = split_counts(n_cases, split)
    out = Path(out)
    rng = np.random.default_rng(seed)
    records = [sample_record(rng, i, rings, sectors) for i in range(n_cases)]
    order = rng.permutation(n_cases)
    ids = [records[i].case_id for i in order]
    splits = {
        "train": sorted(ids[:counts[0]]),
        "val": sorted(ids[counts[0]:counts[0] + counts[1]]),
        "test": sorted(ids[counts[0] + counts[1]:]),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        for rec in records:
            _, g = generate_case(rec)
            write_bundle(g, out / rec.case_id)
        manifest = {
            "format_version": DATASET_VERSION,
            "seed": seed,
            "n_cases": n_cases,
            "split_fractions": list(split),
            "splits": splits,
            "parameter_ranges": {k: list(v) for k, v in SAMPLING_RANGES.items()},
            "mesh": {"rings": rings, "sectors": sectors,
                     "outer_radius_chords": OUTER_RADIUS_CHORDS,
                     "truncation_chords": TRUNCATION_CHORDS},
            "rho": RHO_AIR,
            "cases": [rec.to_dict() for rec in records],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    except OSError as exc:
        raise GaleError(f"cannot write dataset to {out}: {exc}") from exc
    return Dataset(out, manifest)
