"""Forward map: point heat sources to boundary flux observations.

The temperature solves ``u_t - Lap u = sum_i w_i delta(x - x_i)`` on the
square with zero initial and boundary data.  Its eigenfunction expansion is

    u(x, t) = sum_{m,n} (1 - exp(-lam_mn t)) / lam_mn * phi_mn(x_src) phi_mn(x)

and the observable is the outward normal derivative at boundary sensors.
The time-independent part of the series converges slowly at the boundary,
so it is summed in closed form along the sensor edge (a single series with
hyperbolic factors, exponentially convergent); only the transient part,
which decays like ``exp(-lam_mn t)``, is truncated at ``modes`` per axis.

:func:`fd_oracle_flux` is an independent finite-difference time stepper used
to check the spectral evaluation.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .geometry import ConfigurationError, Domain, Mesh, ObservationPlan

logger = logging.getLogger(__name__)

DEFAULT_MODES = 60
MAX_MODES = 4000


class DomainError(ValueError):
    """A source location outside the open domain."""


class OracleFailure(RuntimeError):
    """The finite-difference oracle produced non-finite values."""


@dataclass(frozen=True, eq=False)
class PointSourceSet:
    """Finite set of ``(location, intensity)`` pairs."""

    locations: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    intensities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        w = np.asarray(self.intensities, dtype=float).reshape(-1)
        if len(loc) != len(w):
            raise ValueError("locations and intensities differ in length")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(loc)):
            raise ValueError("source locations and intensities must be finite")
        if len(loc) > 1 and len(np.unique(np.round(loc, 12), axis=0)) != len(loc):
            raise ValueError("duplicate source locations")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "intensities", w)

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "PointSourceSet":
        pairs = list(pairs)
        if not pairs:
            return cls()
        return cls(
            np.array([p[0] for p in pairs], dtype=float),
            np.array([p[1] for p in pairs], dtype=float),
        )

    @property
    def count(self) -> int:
        return len(self.intensities)

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointSourceSet):
            return NotImplemented
        return np.array_equal(self.locations, other.locations) and np.array_equal(
            self.intensities, other.intensities
        )

    __hash__ = None

    def __iter__(self):
        for loc, w in zip(self.locations, self.intensities):
            yield (float(loc[0]), float(loc[1])), float(w)

    def scaled(self, c: float) -> "PointSourceSet":
        return PointSourceSet(self.locations, c * self.intensities)

    def union(self, other: "PointSourceSet") -> "PointSourceSet":
        return PointSourceSet(
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.intensities, other.intensities]),
        )

    def node_weights(self, mesh: Mesh, snap: bool = False) -> np.ndarray:
        """Dense weight vector on the mesh (off-mesh points snapped when ``snap``)."""
        w = np.zeros(mesh.node_count)
        if self.count == 0:
            return w
        if snap:
            idx = mesh.nearest_index(self.locations)
        else:
            idx = np.array([mesh.index_of(p) for p in self.locations])
        np.add.at(w, idx, self.intensities)
        return w

    def to_records(self) -> list:
        return [{"x": x, "y": y, "intensity": w} for (x, y), w in self]


# --- spectral evaluation ---------------------------------------------------


def _edge_frame(sensor: np.ndarray, a: float):
    """Reflect/rotate so the sensor edge becomes ``X = L``.

    Returns ``(map_source, tangential)``: a function mapping source points to
    ``(X, Y)`` in ``[0, L]^2`` and the sensor's tangential coordinate ``Y``.
    """
    x, y = sensor
    if abs(x - a) <= 1e-12:
        return (lambda p: (p[..., 0] + a, p[..., 1] + a)), y + a
    if abs(x + a) <= 1e-12:
        return (lambda p: (a - p[..., 0], p[..., 1] + a)), y + a
    if abs(y - a) <= 1e-12:
        return (lambda p: (p[..., 1] + a, p[..., 0] + a)), x + a
    if abs(y + a) <= 1e-12:
        return (lambda p: (a - p[..., 1], p[..., 0] + a)), x + a
    raise ConfigurationError(f"sensor {tuple(sensor)} is not on the boundary")


def _steady_flux(X: np.ndarray, Y: np.ndarray, Ys: float, L: float) -> np.ndarray:
    """Outward flux at ``(L, Ys)`` of the steady Green's function, sources at ``(X, Y)``."""
    gap = np.min(L - X)
    n_terms = int(np.clip(np.ceil(45.0 * L / (np.pi * max(gap, 1e-300))), 64, 200000))
    k = np.arange(1, n_terms + 1) * np.pi / L
    Xc = X[:, None]
    # sinh(k X) / sinh(k L) without overflow
    ratio = np.exp(-k * (L - Xc)) * (-np.expm1(-2 * k * Xc)) / (-np.expm1(-2 * k * L))
    terms = (2.0 / L) * np.sin(k * Y[:, None]) * np.sin(k * Ys) * ratio
    return -terms.sum(axis=1)


def _transient_flux(
    X: np.ndarray, Y: np.ndarray, Ys: float, L: float, times: np.ndarray, modes: int
) -> np.ndarray:
    """Truncated transient part, shape ``(n_sources, n_times)``."""
    m = np.arange(1, modes + 1)
    k = m * np.pi / L
    lam = k[:, None] ** 2 + k[None, :] ** 2  # (m, n)
    sx = (2.0 / L) * np.sin(np.outer(X, k))  # (s, m)
    sy = np.sin(np.outer(Y, k))  # (s, n)
    dphi_m = (2.0 / L) * k * (-1.0) ** m  # normal derivative factor along X
    tang = np.sin(k * Ys)  # (n,)
    out = np.empty((len(X), len(times)))
    for ti, t in enumerate(times):
        decay = np.exp(-lam * t) / lam  # (m, n)
        coef = decay * dphi_m[:, None] * tang[None, :]
        out[:, ti] = np.einsum("sm,mn,sn->s", sx, coef, sy)
    return out


def _check_modes(modes: int, plan: ObservationPlan) -> None:
    if modes < 1:
        raise ConfigurationError("modes must be at least 1")
    if modes > MAX_MODES:
        raise ConfigurationError(f"modes={modes} exceeds the guard of {MAX_MODES}")
    L = plan.domain.side
    lam_cut = (np.pi / L) ** 2 * ((modes + 1) ** 2 + 1)
    tail = np.exp(-lam_cut * plan.times[0])
    if tail > 1e-10:
        logger.warning(
            "transient truncation at %d modes leaves exp(-lam t_min) = %.2e; raise modes",
            modes,
            tail,
        )


def spectral_flux_matrix(
    sources: np.ndarray, plan: ObservationPlan, modes: int = DEFAULT_MODES
) -> np.ndarray:
    """Unit-source flux responses, shape ``(obs_count, n_sources)``.

    Rows are ordered sensor-major, then time.
    """
    src = np.atleast_2d(np.asarray(sources, dtype=float))
    a = plan.domain.half_width
    if len(src) and not np.all(plan.domain.contains(src)):
        raise DomainError("point sources must lie strictly inside the domain")
    _check_modes(modes, plan)
    L = plan.domain.side
    out = np.empty((plan.obs_count, len(src)))
    nt = plan.n_times
    for si, sensor in enumerate(plan.sensors):
        to_frame, Ys = _edge_frame(sensor, a)
        X, Y = to_frame(src)
        steady = _steady_flux(X, Y, Ys, L)
        trans = _transient_flux(X, Y, Ys, L, plan.times, modes)
        out[si * nt : (si + 1) * nt, :] = (steady[:, None] - trans).T
    return out


def unit_source_flux(
    source_location, plan: ObservationPlan, modes: int = DEFAULT_MODES
) -> np.ndarray:
    """Flux vector (length ``obs_count``) produced by a unit source."""
    return spectral_flux_matrix(np.asarray(source_location, dtype=float)[None, :], plan, modes)[:, 0]


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """Column ``j`` holds the flux response of a unit source at mesh node ``j``."""

    entries: np.ndarray
    mesh: Mesh
    plan: ObservationPlan
    modes: int

    @property
    def shape(self):
        return self.entries.shape

    def apply(self, weights: np.ndarray) -> np.ndarray:
        return self.entries @ weights

    def apply_support(self, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``A[:, nodes] @ weights`` without forming the dense weight vector."""
        if len(nodes) == 0:
            return np.zeros(self.entries.shape[0])
        return self.entries[:, nodes] @ weights


def assemble_observation_matrix(
    mesh: Mesh, plan: ObservationPlan, modes: int = DEFAULT_MODES
) -> ObservationMatrix:
    entries = spectral_flux_matrix(mesh.nodes, plan, modes)
    entries.setflags(write=False)
    return ObservationMatrix(entries=entries, mesh=mesh, plan=plan, modes=modes)


def forward_flux(
    f: PointSourceSet,
    A: Union[ObservationMatrix, ObservationPlan],
    modes: int = DEFAULT_MODES,
) -> np.ndarray:
    """K(f): sum of weighted unit responses.

    With an :class:`ObservationMatrix` every location must be a mesh node;
    with an :class:`ObservationPlan` the series is evaluated directly, which
    also serves off-mesh ground truth.
    """
    if isinstance(A, ObservationMatrix):
        if f.count == 0:
            return np.zeros(A.entries.shape[0])
        nodes = np.array([A.mesh.index_of(p) for p in f.locations])
        return A.apply_support(nodes, f.intensities)
    if f.count == 0:
        return np.zeros(A.obs_count)
    return spectral_flux_matrix(f.locations, A, modes) @ f.intensities


# --- observation-matrix cache ----------------------------------------------
#
# File layout (little-endian):
#   8 bytes   magic b"HPOBSMAT"
#   uint32    format version (1)
#   uint32    rows
#   uint32    cols
#   32 bytes  sha256 key of (domain, mesh, plan, modes)
#   rows*cols float64, row-major

_MAGIC = b"HPOBSMAT"
_VERSION = 1


def cache_key(mesh: Mesh, plan: ObservationPlan, modes: int) -> bytes:
    h = hashlib.sha256()
    h.update(struct.pack("<dd", mesh.domain.half_width, mesh.spacing))
    h.update(np.ascontiguousarray(plan.sensors, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(plan.times, dtype="<f8").tobytes())
    h.update(struct.pack("<I", modes))
    return h.digest()


def save_observation_matrix(A: ObservationMatrix, path: Union[str, Path]) -> None:
    rows, cols = A.entries.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, rows, cols))
        fh.write(cache_key(A.mesh, A.plan, A.modes))
        fh.write(np.ascontiguousarray(A.entries, dtype="<f8").tobytes())


def load_observation_matrix(
    path: Union[str, Path], mesh: Mesh, plan: ObservationPlan, modes: int
) -> Optional[ObservationMatrix]:
    """Read a cached matrix; ``None`` when missing, corrupt or keyed differently."""
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    head = len(_MAGIC) + 12 + 32
    if len(raw) < head or raw[: len(_MAGIC)] != _MAGIC:
        return None
    version, rows, cols = struct.unpack("<III", raw[len(_MAGIC) : len(_MAGIC) + 12])
    key = raw[len(_MAGIC) + 12 : head]
    if version != _VERSION or key != cache_key(mesh, plan, modes):
        return None
    if len(raw) != head + 8 * rows * cols:
        return None
    entries = np.frombuffer(raw, dtype="<f8", offset=head).reshape(rows, cols).astype(float)
    entries.setflags(write=False)
    return ObservationMatrix(entries=entries, mesh=mesh, plan=plan, modes=modes)


def cached_observation_matrix(
    mesh: Mesh, plan: ObservationPlan, modes: int = DEFAULT_MODES, cache_dir=None
) -> ObservationMatrix:
    if cache_dir is None:
        return assemble_observation_matrix(mesh, plan, modes)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"obsmat-{cache_key(mesh, plan, modes).hex()[:16]}.bin"
    A = load_observation_matrix(path, mesh, plan, modes)
    if A is None:
        A = assemble_observation_matrix(mesh, plan, modes)
        save_observation_matrix(A, path)
    return A


# --- finite-difference oracle ------------------------------------------------


def _laplacian(n_int: int, h: float) -> sp.csc_matrix:
    main = -2.0 * np.ones(n_int)
    off = np.ones(n_int - 1)
    d1 = sp.diags([off, main, off], [-1, 0, 1]) / h**2
    eye = sp.identity(n_int)
    return (sp.kron(eye, d1) + sp.kron(d1, eye)).tocsc()


def _edge_flux(U: np.ndarray, h: float, a: float):
    """Second-order one-sided outward derivative along each edge.

    ``U`` is the full ``(N+1, N+1)`` grid indexed ``[iy, ix]`` with zero
    boundary values.  Returns a dict edge -> (tangential coords, flux).
    """
    N = U.shape[0] - 1
    t = -a + h * np.arange(N + 1)
    east = (3 * U[:, N] - 4 * U[:, N - 1] + U[:, N - 2]) / (2 * h)
    west = (3 * U[:, 0] - 4 * U[:, 1] + U[:, 2]) / (2 * h)
    north = (3 * U[N, :] - 4 * U[N - 1, :] + U[N - 2, :]) / (2 * h)
    south = (3 * U[0, :] - 4 * U[1, :] + U[2, :]) / (2 * h)
    for arr in (east, west, north, south):
        arr[0] = arr[-1] = 0.0  # flux vanishes at the corners
    return {"east": (t, east), "west": (t, west), "north": (t, north), "south": (t, south)}


def _sensor_edge(sensor, a):
    x, y = sensor
    if abs(x - a) <= 1e-12:
        return "east", y
    if abs(x + a) <= 1e-12:
        return "west", y
    if abs(y - a) <= 1e-12:
        return "north", x
    return "south", x


def fd_oracle_fluxes(
    cases: Sequence[PointSourceSet],
    plan: ObservationPlan,
    grid_n: int = 128,
    dt: float = 1e-3,
) -> np.ndarray:
    """Finite-difference fluxes for several source sets at once, ``(obs_count, n_cases)``.

    Crank-Nicolson in time with a short backward-Euler start (damps the
    oscillating high modes excited by the delta data), 5-point Laplacian in
    space, each delta deposited on the nearest grid node as ``w / h^2``.
    Sensors between grid nodes are served by cubic-spline interpolation of
    the edge flux.
    """
    if grid_n < 64:
        raise ConfigurationError("grid_n must be at least 64")
    if dt > 1e-3:
        raise ConfigurationError("dt must not exceed 1e-3")
    a = plan.domain.half_width
    h = 2 * a / grid_n
    n_int = grid_n - 1
    steps_at = plan.times / dt
    if np.any(np.abs(steps_at - np.rint(steps_at)) > 1e-6):
        raise ConfigurationError("observation times must be multiples of dt")
    steps_at = np.rint(steps_at).astype(int)

    F = np.zeros((n_int * n_int, len(cases)))
    for ci, f in enumerate(cases):
        if f.count == 0:
            continue
        if not np.all(plan.domain.contains(f.locations)):
            raise DomainError("point sources must lie strictly inside the domain")
        g = np.rint((f.locations + a) / h).astype(int) - 1
        g = np.clip(g, 0, n_int - 1)
        np.add.at(F[:, ci], g[:, 1] * n_int + g[:, 0], f.intensities / h**2)

    Lap = _laplacian(n_int, h)
    eye = sp.identity(n_int * n_int, format="csc")
    be_half = splu((eye - 0.5 * dt * Lap).tocsc())
    cn_lhs = be_half  # same operator: I - dt/2 Lap
    cn_rhs = (eye + 0.5 * dt * Lap).tocsr()

    U = np.zeros_like(F)
    n_start = 2  # two backward-Euler half steps cover the first dt
    obs = np.zeros((plan.n_sensors, plan.n_times, len(cases)))
    want = {int(s): k for k, s in enumerate(steps_at)}
    full = np.zeros((grid_n + 1, grid_n + 1))
    for step in range(1, int(steps_at[-1]) + 1):
        if step == 1:
            for _ in range(n_start):
                U = be_half.solve(U + 0.5 * dt * F)
        else:
            U = cn_lhs.solve(cn_rhs @ U + dt * F)
        if step in want:
            if not np.all(np.isfinite(U)):
                raise OracleFailure(f"non-finite state at step {step}")
            ti = want[step]
            for ci in range(len(cases)):
                full[1:-1, 1:-1] = U[:, ci].reshape(n_int, n_int)
                edges = _edge_flux(full, h, a)
                for si, sensor in enumerate(plan.sensors):
                    name, s = _sensor_edge(sensor, a)
                    coords, vals = edges[name]
                    obs[si, ti, ci] = CubicSpline(coords, vals)(s)
    return obs.reshape(plan.obs_count, len(cases))


def fd_oracle_flux(
    f: PointSourceSet, plan: ObservationPlan, grid_n: int = 128, dt: float = 1e-3
) -> np.ndarray:
    return fd_oracle_fluxes([f], plan, grid_n, dt)[:, 0]
