"""Square domain, interior candidate mesh and boundary sensor placement.

The domain is the open square ``(-a, a)^2``.  Candidate source locations
are the interior nodes of a regular grid with spacing ``h``; sensors sit on
the boundary, equally spaced along the perimeter starting at the midpoint
of the east edge and moving counterclockwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_TOL = 1e-9


class ConfigurationError(ValueError):
    """Raised for invalid geometry, sampler or experiment settings."""


@dataclass(frozen=True)
class Domain:
    half_width: float = 1.0

    def __post_init__(self):
        if not self.half_width > 0:
            raise ConfigurationError(f"half_width must be positive, got {self.half_width}")

    @property
    def side(self) -> float:
        return 2.0 * self.half_width

    @property
    def area(self) -> float:
        return self.side**2

    def contains(self, points) -> np.ndarray:
        """Strict interior test for an ``(n, 2)`` array (or a single point)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(np.abs(p) < self.half_width, axis=1)

    def on_boundary(self, points, atol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.abs(np.max(np.abs(p), axis=1) - self.half_width) <= atol


@dataclass(frozen=True, eq=False)
class Mesh:
    """Interior nodes of the regular grid, row-major (y outer, x inner).

    Node ``k`` sits at ``(-a + (i+1) h, -a + (j+1) h)`` with ``k = j * n + i``
    and ``n = 2a/h - 1`` nodes per axis.
    """

    domain: Domain
    spacing: float
    per_axis: int
    nodes: np.ndarray = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.per_axis**2

    def locate(self, index: int) -> np.ndarray:
        if not 0 <= index < self.node_count:
            raise IndexError(f"node index {index} out of range [0, {self.node_count})")
        return self.nodes[index].copy()

    def _grid_coords(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p + self.domain.half_width) / self.spacing - 1.0

    def nearest_index(self, points) -> np.ndarray:
        """Index of the nearest node for each point (ties resolved by rounding)."""
        g = np.clip(np.rint(self._grid_coords(points)), 0, self.per_axis - 1).astype(int)
        return g[:, 1] * self.per_axis + g[:, 0]

    def index_of(self, point) -> int:
        """Exact inverse of :meth:`locate`; raises ``KeyError`` for off-mesh points."""
        g = self._grid_coords(point)[0]
        r = np.rint(g)
        if np.any(np.abs(g - r) > 1e-7) or np.any(r < 0) or np.any(r >= self.per_axis):
            raise KeyError(f"{tuple(np.ravel(point))} is not a mesh node")
        return int(r[1]) * self.per_axis + int(r[0])

    def is_node(self, point) -> bool:
        try:
            self.index_of(point)
        except KeyError:
            return False
        return True


def build_mesh(domain: Domain, spacing: float = 0.125) -> Mesh:
    """Build the interior grid; ``spacing`` must divide the side length."""
    if not spacing > 0:
        raise ConfigurationError(f"mesh spacing must be positive, got {spacing}")
    cells = domain.side / spacing
    n_cells = int(round(cells))
    if abs(cells - n_cells) > _TOL * max(1.0, cells) or n_cells < 2:
        raise ConfigurationError(
            f"spacing {spacing} does not evenly divide side length {domain.side}"
        )
    per_axis = n_cells - 1
    a = domain.half_width
    ticks = np.array([-a + k * spacing for k in range(1, n_cells)])
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    nodes.setflags(write=False)
    return Mesh(domain=domain, spacing=float(spacing), per_axis=per_axis, nodes=nodes)


@dataclass(frozen=True, eq=False)
class ObservationPlan:
    domain: Domain
    sensors: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.sensors.ndim != 2 or self.sensors.shape[1] != 2 or len(self.sensors) == 0:
            raise ConfigurationError("sensors must be a non-empty (n, 2) array")
        if not np.all(self.domain.on_boundary(self.sensors)):
            raise ConfigurationError("every sensor must lie on the boundary")
        a = self.domain.half_width
        corner = np.all(np.abs(np.abs(self.sensors) - a) <= 1e-12, axis=1)
        if np.any(corner):
            raise ConfigurationError("sensors may not sit on a corner of the square")
        t = self.times
        if t.ndim != 1 or len(t) == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ConfigurationError("times must be positive and strictly increasing")

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def obs_count(self) -> int:
        return self.n_sensors * self.n_times


def perimeter_point(domain: Domain, s: float) -> np.ndarray:
    """Point at arc length ``s`` from the east-edge midpoint, counterclockwise."""
    a = domain.half_width
    s = s % (8 * a)
    if s < a:
        return np.array([a, s])
    if s < 3 * a:
        return np.array([a - (s - a), a])
    if s < 5 * a:
        return np.array([-a, a - (s - 3 * a)])
    if s < 7 * a:
        return np.array([-a + (s - 5 * a), -a])
    return np.array([a, -a + (s - 7 * a)])


def make_observation_plan(
    domain: Domain,
    n_sensors: int,
    fixed_time: Optional[float] = None,
    dt: Optional[float] = None,
    t_final: Optional[float] = None,
    sensors: Optional[Sequence[Sequence[float]]] = None,
) -> ObservationPlan:
    """Equally spaced boundary sensors observed at one time or on a uniform grid.

    Give either ``fixed_time`` or both ``dt`` and ``t_final``; the grid is
    ``t_i = i * dt`` for ``i = 1 .. t_final/dt``.  Explicit ``sensors``
    override the perimeter convention.
    """
    if sensors is not None:
        pts = np.asarray(sensors, dtype=float).reshape(-1, 2)
    else:
        if n_sensors < 1:
            raise ConfigurationError("n_sensors must be at least 1")
        a = domain.half_width
        spacing = 8 * a / n_sensors
        pts = np.array([perimeter_point(domain, k * spacing) for k in range(n_sensors)])
        # pin the edge coordinate exactly on the boundary
        edge = np.argmax(np.abs(pts), axis=1)
        pts[np.arange(len(pts)), edge] = np.sign(pts[np.arange(len(pts)), edge]) * a

    if fixed_time is not None:
        if dt is not None or t_final is not None:
            raise ConfigurationError("give either fixed_time or (dt, t_final), not both")
        times = np.array([float(fixed_time)])
    elif dt is not None and t_final is not None:
        if not (dt > 0 and t_final > 0):
            raise ConfigurationError("dt and t_final must be positive")
        steps = t_final / dt
        n_steps = int(round(steps))
        if abs(steps - n_steps) > 1e-9 * steps or n_steps < 1:
            raise ConfigurationError(f"dt={dt} does not divide t_final={t_final}")
        times = np.arange(1, n_steps + 1) * float(dt)
    else:
        raise ConfigurationError("time specification missing: need fixed_time or dt and t_final")
    return ObservationPlan(domain=domain, sensors=pts, times=times)
