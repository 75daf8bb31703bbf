"""Locating trapping sites and characterizing their secular motion.

A "field" is any object exposing ``energy(points)``, ``gradient(points)`` and
``hessian(points)`` over (..., 3) arrays of SI positions (``TotalPotential``
does; tests use synthetic analytic fields).  ``find_minima`` seeds quasi-Newton
refinement from the local minima of a coarse grid scan, polishes each
candidate with Newton steps to |grad U| < GRAD_TOL, merges duplicates, and
keeps only minima with positive-definite Hessians.

Pseudopotential minima where the local Mathieu stability parameter exceeds
``max_mathieu_q`` are discarded: the static pseudopotential is meaningless
there, so reporting them as trapping sites would be wrong.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .constants import UM, IonSpecies, MG24, angular_to_mhz
from .trapmodel import (ControlConfig, ElectrodeLayout, RfDrive, TotalPotential,
                        ChipPlaneError)

GRAD_TOL = 1e-22        # J/m, convergence threshold on |grad U|
MERGE_RADIUS = 1e-6     # m, duplicate-site merge distance
MAX_MATHIEU_Q = 0.5     # sites beyond this are not adiabatically trapped

_E_SCALE = 1.602176634e-22  # J per meV, conditioning scale for optimizers


class NotAMinimumError(ValueError):
    """Stationary point has non-positive curvature; carries the eigenvalues."""

    def __init__(self, message: str, eigenvalues: np.ndarray):
        super().__init__(message)
        self.eigenvalues = np.asarray(eigenvalues)


class PathRelaxationError(RuntimeError):
    """Elastic-path relaxation failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = float(residual)


@dataclass(frozen=True)
class TrapSite:
    """A located potential minimum with its secular mode structure."""

    label: str
    position: np.ndarray          # m, shape (3,)
    mode_frequencies: np.ndarray  # rad/s, ascending, shape (3,)
    mode_vectors: np.ndarray      # columns are unit mode directions, (3, 3)
    potential_value: float        # J
    mathieu_q: float = 0.0


@dataclass
class SiteSet:
    sites: list[TrapSite]
    config_name: str = ""
    drive_label: str = ""
    seeds_total: int = 0
    seeds_failed: int = 0

    def __iter__(self):
        return iter(self.sites)

    def __len__(self):
        return len(self.sites)

    def by_label(self, label: str) -> TrapSite:
        for s in self.sites:
            if s.label == label:
                return s
        raise KeyError(f"no site labelled '{label}'")


@dataclass(frozen=True)
class Barrier:
    site_a: str
    site_b: str
    saddle_position: np.ndarray
    height_a: float  # J, saddle minus minimum a
    height_b: float  # J, saddle minus minimum b


@dataclass(frozen=True)
class SearchBox:
    """Axis-aligned search region, SI metres; z range must be above the chip."""

    x: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float]

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.z):
            if not lo < hi:
                raise ValueError("search box bounds must satisfy lo < hi")
        if self.z[0] <= 0:
            raise ChipPlaneError("search box must lie above the chip plane")


def _grid_seed_points(box: SearchBox, spacing: float) -> np.ndarray:
    axes = []
    for lo, hi in (box.x, box.y, box.z):
        n = max(int(round((hi - lo) / spacing)) + 1, 2)
        axes.append(np.linspace(lo, hi, n))
    return axes


def _grid_local_minima(field, box: SearchBox, spacing: float) -> np.ndarray:
    xs, ys, zs = _grid_seed_points(box, spacing)
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    vals = field.energy(grid.reshape(-1, 3)).reshape(grid.shape[:3])
    v = vals
    interior = v[1:-1, 1:-1, 1:-1]
    neighbours = np.stack([
        v[:-2, 1:-1, 1:-1], v[2:, 1:-1, 1:-1],
        v[1:-1, :-2, 1:-1], v[1:-1, 2:, 1:-1],
        v[1:-1, 1:-1, :-2], v[1:-1, 1:-1, 2:]])
    is_min = np.all(interior[None] <= neighbours, axis=0)
    idx = np.argwhere(is_min) + 1
    if idx.size == 0:
        # fall back to the global grid minimum
        idx = np.array([np.unravel_index(np.argmin(v), v.shape)])
    seeds = grid[idx[:, 0], idx[:, 1], idx[:, 2]]
    order = np.lexsort((seeds[:, 0], seeds[:, 1], seeds[:, 2]))
    return seeds[order]


def _refine_seed(field, seed: np.ndarray, box: SearchBox, grad_tol: float):
    """L-BFGS-B in scaled units, then Newton polish to |grad| < grad_tol."""
    z_floor = max(box.z[0] * 0.5, 1e-7)

    def f_scaled(p_um):
        p = p_um * UM
        if p[2] <= z_floor:
            return 1e12
        return field.energy(p) / _E_SCALE

    def g_scaled(p_um):
        p = p_um * UM
        if p[2] <= z_floor:
            return np.zeros(3)
        return field.gradient(p) * (UM / _E_SCALE)

    res = minimize(f_scaled, seed / UM, jac=g_scaled, method="L-BFGS-B",
                   options={"maxiter": 500, "ftol": 1e-18, "gtol": 1e-10})
    p = res.x * UM
    if p[2] <= z_floor:
        return None
    # Newton polish with step clipping
    for _ in range(60):
        g = field.gradient(p)
        if np.linalg.norm(g) < grad_tol:
            break
        h = field.hessian(p)
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            return None
        norm = np.linalg.norm(step)
        if norm > 2e-6:
            step *= 2e-6 / norm
        p = p + step
        if p[2] <= z_floor:
            return None
    if np.linalg.norm(field.gradient(p)) >= grad_tol:
        return None
    return p


def find_minima(field, box: SearchBox, spacing: float, *,
                grad_tol: float = GRAD_TOL, merge_radius: float = MERGE_RADIUS,
                max_mathieu_q: float | None = MAX_MATHIEU_Q,
                mass: float | None = None, workers: int = 1) -> SiteSet:
    """Locate all potential minima of `field` inside `box`.

    Returns unlabelled sites (labels S1, S2, ... in deterministic position
    order).  Seeds that fail to converge are counted, not raised.
    """
    if spacing <= 0:
        raise ValueError("seed grid spacing must be positive")
    seeds = _grid_local_minima(field, box, spacing)

    def work(seed):
        return _refine_seed(field, seed, box, grad_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, seeds))
    else:
        results = [work(s) for s in seeds]

    candidates = [p for p in results if p is not None]
    failed = len(results) - len(candidates)

    # merge duplicates deterministically
    merged: list[np.ndarray] = []
    for p in sorted(candidates, key=lambda q: (q[2], q[1], q[0])):
        if not any(np.linalg.norm(p - m) < merge_radius for m in merged):
            merged.append(p)

    sites = []
    for p in merged:
        if not (box.x[0] - merge_radius <= p[0] <= box.x[1] + merge_radius
                and box.y[0] - merge_radius <= p[1] <= box.y[1] + merge_radius
                and box.z[0] - merge_radius <= p[2] <= box.z[1] + merge_radius):
            continue
        h = field.hessian(p)
        lam, vec = np.linalg.eigh(h)
        if np.any(lam <= 0):
            continue
        q_loc = _local_mathieu_q(field, p)
        if max_mathieu_q is not None and q_loc > max_mathieu_q:
            continue
        m = mass if mass is not None else getattr(field, "mass", None)
        omega = np.sqrt(lam / m) if m else np.full(3, np.nan)
        sites.append(TrapSite(label=f"S{len(sites) + 1}", position=p,
                              mode_frequencies=omega, mode_vectors=vec,
                              potential_value=float(field.energy(p)),
                              mathieu_q=q_loc))
    return SiteSet(sites=sites, seeds_total=len(seeds), seeds_failed=failed)


def _local_mathieu_q(field, point) -> float:
    fn = getattr(field, "mathieu_q", None)
    return float(fn(point)) if fn is not None else 0.0


class _BoundTotalPotential(TotalPotential):
    """TotalPotential with mass and local Mathieu-q helpers for site finding."""

    @property
    def mass(self) -> float:
        return self.species.mass

    def mathieu_q(self, point) -> float:
        h_rf = self.pseudo.rf.hessian(point)
        lam = np.linalg.eigvalsh(h_rf)
        return float(2.0 * self.species.charge * self.drive.u_rf
                     * np.max(np.abs(lam))
                     / (self.species.mass * self.drive.omega_rf ** 2))


def total_field(layout: ElectrodeLayout, drive: RfDrive, config: ControlConfig,
                species: IonSpecies = MG24) -> _BoundTotalPotential:
    return _BoundTotalPotential(layout, drive, config, species)


def find_sites(layout: ElectrodeLayout, drive: RfDrive, config: ControlConfig,
               species: IonSpecies, search_box: SearchBox,
               seed_grid_spacing: float, *, workers: int = 1,
               label_cell: bool = True) -> SiteSet:
    """Locate trapping sites of the total potential and analyse their modes."""
    tot = total_field(layout, drive, config, species)
    found = find_minima(tot, search_box, seed_grid_spacing,
                        mass=species.mass, workers=workers)
    found.config_name = config.name
    found.drive_label = (f"u_rf={drive.u_rf:g}V "
                         f"f_rf={drive.omega_rf / (2 * np.pi) / 1e6:g}MHz")
    if label_cell:
        found.sites = label_unit_cell(found.sites)
    return found


def mode_analysis(layout: ElectrodeLayout, drive: RfDrive, config: ControlConfig,
                  species: IonSpecies, position, *,
                  grad_tol: float = 1e3 * GRAD_TOL):
    """Secular mode frequencies (rad/s, ascending) and unit mode vectors.

    `position` must be a stationary point of the total potential.
    """
    tot = total_field(layout, drive, config, species)
    return field_mode_analysis(tot, position, species.mass, grad_tol=grad_tol)


def field_mode_analysis(field, position, mass: float, *,
                        grad_tol: float = 1e3 * GRAD_TOL):
    p = np.asarray(position, dtype=float)
    g = np.linalg.norm(field.gradient(p))
    if g > grad_tol:
        raise ValueError(f"position is not stationary: |grad U| = {g:.3e} J/m")
    h = field.hessian(p)
    lam, vec = np.linalg.eigh(h)
    if np.any(lam <= 0):
        raise NotAMinimumError(
            f"Hessian not positive definite (eigenvalues {lam})", lam)
    omega = np.sqrt(lam / mass)
    return omega, vec


def label_unit_cell(sites: list[TrapSite]) -> list[TrapSite]:
    """Assign unit-cell labels by geometry.

    Satellites T_0/T_1/T_2: the lowest-z equilateral-ish triple, labelled by
    azimuth.  Hub T_H: the lowest-potential site above the satellite plane
    lying laterally within the satellite circumradius of their centroid.
    Everything else keeps a generic label.
    """
    if len(sites) < 4:
        return _relabel_generic(sites)
    by_z = sorted(sites, key=lambda s: s.position[2])
    triple = by_z[:3]
    sides = [np.linalg.norm(triple[i].position - triple[j].position)
             for i, j in ((0, 1), (0, 2), (1, 2))]
    mean_side = np.mean(sides)
    if mean_side == 0 or (max(sides) - min(sides)) / mean_side > 0.25:
        return _relabel_generic(sites)
    centroid = np.mean([s.position for s in triple], axis=0)
    circumradius = float(np.mean(
        [np.linalg.norm(s.position[:2] - centroid[:2]) for s in triple]))
    z_plane = max(s.position[2] for s in triple)
    hub_candidates = [s for s in sites if s not in triple
                      and s.position[2] > z_plane
                      and np.linalg.norm(s.position[:2] - centroid[:2])
                      <= circumradius]
    if not hub_candidates:
        return _relabel_generic(sites)
    hub = min(hub_candidates, key=lambda s: s.potential_value)

    out = []
    target_az = {"T_0": 90.0, "T_1": 210.0, "T_2": 330.0}
    for s in triple:
        d = s.position[:2] - centroid[:2]
        az = np.degrees(np.arctan2(d[1], d[0])) % 360.0
        label = min(target_az,
                    key=lambda k: abs((az - target_az[k] + 180) % 360 - 180))
        target_az.pop(label)
        out.append(replace(s, label=label))
    out.append(replace(hub, label="T_H"))
    rest = [s for s in sites if s not in triple and s is not hub]
    for i, s in enumerate(sorted(rest, key=lambda s: (s.position[2],
                                                      s.position[1],
                                                      s.position[0]))):
        out.append(replace(s, label=f"S{i + 5}"))
    return out


def _relabel_generic(sites: list[TrapSite]) -> list[TrapSite]:
    ordered = sorted(sites, key=lambda s: (s.position[2], s.position[1],
                                           s.position[0]))
    return [replace(s, label=f"S{i + 1}") for i, s in enumerate(ordered)]


# ---------------------------------------------------------------------------
# Elastic-path barrier search (climbing-image nudged path)
# ---------------------------------------------------------------------------

def barrier_between(field, site_a: TrapSite, site_b: TrapSite, *,
                    n_nodes: int = 33, spring: float | None = None,
                    max_iter: int = 4000, force_tol: float | None = None,
                    climb: bool = True) -> Barrier:
    """Barrier along the minimum-energy path between two minima of `field`.

    Discretized elastic-path (nudged) relaxation with a climbing highest
    image; heights are saddle energy minus each minimum energy.
    """
    pa = np.asarray(site_a.position, dtype=float)
    pb = np.asarray(site_b.position, dtype=float)
    if np.linalg.norm(pa - pb) < MERGE_RADIUS:
        e = float(field.energy(pa))
        return Barrier(site_a.label, site_b.label, pa.copy(), 0.0, 0.0)
    if n_nodes < 8:
        raise ValueError("need at least 8 path nodes")

    ts = np.linspace(0.0, 1.0, n_nodes)[:, None]
    path = pa[None, :] * (1 - ts) + pb[None, :] * ts

    length = np.linalg.norm(pb - pa)
    h_mid = field.hessian(0.5 * (pa + pb))
    k_scale = float(np.max(np.abs(np.linalg.eigvalsh(h_mid))))
    k_spring = spring if spring is not None else 0.5 * k_scale
    # force scale: typical |grad| for a displacement of one node spacing
    f_scale = k_scale * (length / (n_nodes - 1))
    f_tol = force_tol if force_tol is not None else 1e-4 * f_scale

    step0 = 0.02 * length / (n_nodes - 1) / f_scale
    step = step0
    prev_res = np.inf
    residual = np.inf
    for it in range(max_iter):
        energies = field.energy(path)
        grads = field.gradient(path)
        imax = int(np.argmax(energies[1:-1])) + 1
        forces = np.zeros_like(path)
        for i in range(1, n_nodes - 1):
            t_fwd = path[i + 1] - path[i]
            t_bwd = path[i] - path[i - 1]
            tangent = t_fwd if energies[i + 1] > energies[i - 1] else t_bwd
            tn = np.linalg.norm(tangent)
            if tn == 0:
                continue
            tangent = tangent / tn
            g = grads[i]
            g_par = np.dot(g, tangent) * tangent
            if climb and i == imax:
                forces[i] = -(g - 2.0 * g_par)
            else:
                f_spring = k_spring * (np.linalg.norm(t_fwd)
                                       - np.linalg.norm(t_bwd)) * tangent
                forces[i] = -(g - g_par) + f_spring
        residual = float(np.max(np.linalg.norm(forces[1:-1], axis=1)))
        if residual < f_tol:
            break
        if residual > prev_res * 1.5:
            step = max(step * 0.5, 0.01 * step0)
        elif residual < prev_res:
            step = min(step * 1.05, 20 * step0)
        prev_res = residual
        move = step * forces
        norms = np.linalg.norm(move, axis=1, keepdims=True)
        cap = length / (n_nodes - 1)
        move = np.where(norms > cap, move * (cap / np.maximum(norms, 1e-300)), move)
        path[1:-1] += move[1:-1]
    else:
        raise PathRelaxationError(
            f"elastic path did not converge in {max_iter} iterations", residual)

    energies = field.energy(path)
    i_saddle = int(np.argmax(energies))
    e_saddle = float(energies[i_saddle])
    return Barrier(site_a.label, site_b.label, path[i_saddle].copy(),
                   e_saddle - float(field.energy(pa)),
                   e_saddle - float(field.energy(pb)))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def siteset_to_csv(siteset: SiteSet) -> str:
    """Site table as CSV text: positions in um, frequencies in MHz."""
    lines = ["label,x_um,y_um,z_um,f1_MHz,f2_MHz,f3_MHz,"
             "v1x,v1y,v1z,v2x,v2y,v2z,v3x,v3y,v3z,mathieu_q"]
    for s in siteset.sites:
        p = s.position / UM
        f = angular_to_mhz(s.mode_frequencies)
        v = s.mode_vectors
        comps = ",".join(f"{v[r, c]:.6f}" for c in range(3) for r in range(3))
        lines.append(f"{s.label},{p[0]:.4f},{p[1]:.4f},{p[2]:.4f},"
                     f"{f[0]:.6f},{f[1]:.6f},{f[2]:.6f},{comps},"
                     f"{s.mathieu_q:.4f}")
    return "\n".join(lines) + "\n"
