"""Trap geometry and field evaluation for a gapless-plane surface-electrode trap.

The chip is modelled as a perfectly tiled conducting plane at z = 0.  Each
electrode is a union of axis-aligned rectangular patches; the potential of a
patch held at 1 V (all else grounded) has the closed form

    phi(x, y, z) = (1/2pi) sum_{i,j} s_ij atan( u_i v_j / (z R_ij) ),

with u_i = x - x_i, v_j = y - y_j over the four corners, R_ij the distance to
the corner, and s_ij = +1 for (lo,lo),(hi,hi) and -1 otherwise.  Gradients and
Hessians are analytic; only the pseudopotential Hessian falls back to central
finite differences of the analytic pseudopotential gradient.

A biased metal sheet at `sheet_height` above the chip is modelled as a uniform
vertical field, V_sheet * z / sheet_height.

All lengths are metres, voltages volts, energies joules.  File I/O converts
from micrometres / millimetres at the boundary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import MG24, UM, MM, IonSpecies

TWO_PI = 2.0 * np.pi

# Step for finite-difference Hessians (pseudopotential only); metres.
HESSIAN_FD_STEP = 1e-8

N_CONTROL_CHANNELS = 31  # el1..el30 + metal_sheet
CONTROL_CHANNEL_NAMES = tuple(f"el{i}" for i in range(1, 31)) + ("metal_sheet",)
AWG_VOLTAGE_RANGE = (-10.0, 10.0)

VOLTAGE_TABLE_COLUMNS = ("phi_0", "phi_1", "phi_2", "phi_H", "phi_HL", "phi_pyramid")


class ChipPlaneError(ValueError):
    """Raised for evaluation points on or below the chip plane (z <= 0)."""


class ConfigurationError(ValueError):
    """Raised for inconsistent layouts, unknown electrode names, or bad files."""


@dataclass(frozen=True)
class RectPatch:
    """Axis-aligned rectangular electrode patch in the chip plane."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    electrode_id: int

    def __post_init__(self) -> None:
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ConfigurationError("patch corners must satisfy lo < hi")


@dataclass(frozen=True)
class RfDrive:
    """RF drive parameters: angular frequency and zero-to-peak amplitude."""

    omega_rf: float = TWO_PI * 52.4e6  # rad/s
    u_rf: float = 200.0                # V, zero-to-peak

    def __post_init__(self) -> None:
        if self.omega_rf <= 0:
            raise ConfigurationError("omega_rf must be positive")
        if self.u_rf < 0:
            raise ConfigurationError("u_rf must be non-negative")


@dataclass(frozen=True)
class ControlConfig:
    """Named vector of 31 control voltages, ordered el1..el30, metal_sheet."""

    name: str
    voltages: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.voltages, dtype=float)
        object.__setattr__(self, "voltages", v)
        if v.shape != (N_CONTROL_CHANNELS,):
            raise ConfigurationError(
                f"config '{self.name}' needs {N_CONTROL_CHANNELS} voltages, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError(f"config '{self.name}' has non-finite voltages")
        lo, hi = AWG_VOLTAGE_RANGE
        chip = v[:-1]
        if np.any(chip < lo) or np.any(chip > hi):
            raise ConfigurationError(
                f"config '{self.name}' has chip-electrode voltages outside [{lo}, {hi}] V")

    def __add__(self, other: "ControlConfig") -> "ControlConfig":
        return ControlConfig(f"{self.name}+{other.name}", self.voltages + other.voltages)


class ElectrodeLayout:
    """Electrode geometry: named patch sets plus the patch-free metal sheet.

    Exactly one electrode is named "rf" (both rails share it), thirty are
    named "el1".."el30", and one "metal_sheet" carries no patches.
    """

    def __init__(self, patches: list[RectPatch], electrode_names: list[str],
                 sheet_height: float = 7e-3):
        self.patches = list(patches)
        self.electrode_names = list(electrode_names)
        self.sheet_height = float(sheet_height)
        self._validate()
        self._build_arrays()

    def _validate(self) -> None:
        names = self.electrode_names
        if names.count("rf") != 1:
            raise ConfigurationError("layout needs exactly one 'rf' electrode")
        if names.count("metal_sheet") != 1:
            raise ConfigurationError("layout needs exactly one 'metal_sheet'")
        expected = {f"el{i}" for i in range(1, 31)}
        present = set(names) - {"rf", "metal_sheet"}
        if present != expected:
            raise ConfigurationError("layout needs exactly el1..el30 control electrodes")
        if len(names) != 32:
            raise ConfigurationError("layout must have exactly 32 electrode names")
        if self.sheet_height <= 0:
            raise ConfigurationError("sheet_height must be positive")
        sheet_id = names.index("metal_sheet")
        for p in self.patches:
            if not (0 <= p.electrode_id < len(names)):
                raise ConfigurationError(f"patch electrode_id {p.electrode_id} unresolvable")
            if p.electrode_id == sheet_id:
                raise ConfigurationError("metal_sheet must not carry patches")
        self._check_overlaps()

    def _check_overlaps(self) -> None:
        # Patches of the same electrode may not overlap (open-interior test).
        by_el: dict[int, list[RectPatch]] = {}
        for p in self.patches:
            by_el.setdefault(p.electrode_id, []).append(p)
        for plist in by_el.values():
            for i, a in enumerate(plist):
                for b in plist[i + 1:]:
                    if (a.x_lo < b.x_hi and b.x_lo < a.x_hi
                            and a.y_lo < b.y_hi and b.y_lo < a.y_hi):
                        raise ConfigurationError(
                            "overlapping patches on electrode "
                            f"'{self.electrode_names[a.electrode_id]}'")

    def _build_arrays(self) -> None:
        n = max(len(self.patches), 1)
        self.x_lo = np.zeros(n)
        self.x_hi = np.ones(n)
        self.y_lo = np.zeros(n)
        self.y_hi = np.ones(n)
        self.patch_electrode = np.zeros(n, dtype=np.int64)
        for k, p in enumerate(self.patches):
            self.x_lo[k], self.x_hi[k] = p.x_lo, p.x_hi
            self.y_lo[k], self.y_hi[k] = p.y_lo, p.y_hi
            self.patch_electrode[k] = p.electrode_id
        if not self.patches:
            self.patch_electrode = np.full(1, -1, dtype=np.int64)
        rf_id = self.electrode_names.index("rf")
        self.rf_mask = self.patch_electrode == rf_id
        # Map each patch to its control channel (index into ControlConfig),
        # -1 for rf patches.
        chan_of_name = {nm: i for i, nm in enumerate(CONTROL_CHANNEL_NAMES)}
        self.patch_channel = np.array(
            [chan_of_name.get(self.electrode_names[e], -1) if e >= 0 else -1
             for e in self.patch_electrode], dtype=np.int64)

    def electrode_id(self, name: str) -> int:
        try:
            return self.electrode_names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown electrode '{name}'") from None


# ---------------------------------------------------------------------------
# Closed-form patch fields (vectorized over points x patches)
# ---------------------------------------------------------------------------

def _check_points(point) -> tuple[np.ndarray, tuple[int, ...]]:
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1] != 3:
        raise ValueError("points must have shape (..., 3)")
    shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    if np.any(pts[:, 2] <= 0.0):
        raise ChipPlaneError("evaluation requires z > 0 (above the chip plane)")
    return pts, shape


def _corner_uv(pts: np.ndarray, x_lo, x_hi, y_lo, y_hi):
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    z = pts[:, 2:3]
    u = (x - x_lo[None, :], x - x_hi[None, :])
    v = (y - y_lo[None, :], y - y_hi[None, :])
    return u, v, z


def _phi_terms(u, v, z):
    """Sum over the four signed corner terms of atan(u v / (z R)) / 2pi."""
    out = 0.0
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            s = 1.0 if i == j else -1.0
            r = np.sqrt(ui * ui + vj * vj + z * z)
            out = out + s * np.arctan2(ui * vj, z * r)
    return out / TWO_PI


def _grad_terms(u, v, z):
    gx = 0.0
    gy = 0.0
    gz = 0.0
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            s = 1.0 if i == j else -1.0
            r2 = ui * ui + vj * vj + z * z
            r = np.sqrt(r2)
            uz = ui * ui + z * z
            vz = vj * vj + z * z
            gx = gx + s * z * vj / (r * uz)
            gy = gy + s * z * ui / (r * vz)
            gz = gz - s * ui * vj * (r2 + z * z) / (r * uz * vz)
    return gx / TWO_PI, gy / TWO_PI, gz / TWO_PI


def _hess_terms(u, v, z):
    hxx = 0.0
    hyy = 0.0
    hxy = 0.0
    hxz = 0.0
    hyz = 0.0
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            s = 1.0 if i == j else -1.0
            r2 = ui * ui + vj * vj + z * z
            r = np.sqrt(r2)
            r3 = r * r2
            uz = ui * ui + z * z
            vz = vj * vj + z * z
            lat2 = ui * ui + vj * vj
            hxx = hxx - s * z * vj * ui * (uz + 2.0 * r2) / (r3 * uz * uz)
            hyy = hyy - s * z * ui * vj * (vz + 2.0 * r2) / (r3 * vz * vz)
            hxy = hxy + s * z / r3
            hxz = hxz + s * vj * (lat2 * uz - 2.0 * z * z * r2) / (r3 * uz * uz)
            hyz = hyz + s * ui * (lat2 * vz - 2.0 * z * z * r2) / (r3 * vz * vz)
    return (hxx / TWO_PI, hyy / TWO_PI, hxy / TWO_PI, hxz / TWO_PI, hyz / TWO_PI)


def _stack_hessian(hxx, hyy, hxy, hxz, hyz):
    hzz = -hxx - hyy  # Laplace equation closes the diagonal
    h = np.empty(hxx.shape + (3, 3))
    h[..., 0, 0] = hxx
    h[..., 1, 1] = hyy
    h[..., 2, 2] = hzz
    h[..., 0, 1] = h[..., 1, 0] = hxy
    h[..., 0, 2] = h[..., 2, 0] = hxz
    h[..., 1, 2] = h[..., 2, 1] = hyz
    return h


def patch_basis_potential(patch: RectPatch, point):
    """Potential (per volt) of a single patch at 1 V in a grounded plane."""
    pts, shape = _check_points(point)
    u, v, z = _corner_uv(pts, np.array([patch.x_lo]), np.array([patch.x_hi]),
                         np.array([patch.y_lo]), np.array([patch.y_hi]))
    phi = _phi_terms(u, v, z)[:, 0]
    return phi.reshape(shape) if shape else float(phi[0])


def patch_basis_gradient(patch: RectPatch, point):
    """Analytic gradient of `patch_basis_potential`, in 1/m."""
    pts, shape = _check_points(point)
    u, v, z = _corner_uv(pts, np.array([patch.x_lo]), np.array([patch.x_hi]),
                         np.array([patch.y_lo]), np.array([patch.y_hi]))
    gx, gy, gz = _grad_terms(u, v, z)
    g = np.stack([gx[:, 0], gy[:, 0], gz[:, 0]], axis=-1)
    return g.reshape(shape + (3,)) if shape else g[0]


def patch_basis_hessian(patch: RectPatch, point):
    """Analytic Hessian of `patch_basis_potential`, in 1/m^2."""
    pts, shape = _check_points(point)
    u, v, z = _corner_uv(pts, np.array([patch.x_lo]), np.array([patch.x_hi]),
                         np.array([patch.y_lo]), np.array([patch.y_hi]))
    terms = [t[:, 0] for t in _hess_terms(u, v, z)]
    h = _stack_hessian(*terms)
    return h.reshape(shape + (3, 3)) if shape else h[0]


class _PatchSetField:
    """Unit-voltage field of a set of patches, summed with per-patch weights."""

    def __init__(self, layout: ElectrodeLayout, mask: np.ndarray):
        self._xlo = layout.x_lo[mask]
        self._xhi = layout.x_hi[mask]
        self._ylo = layout.y_lo[mask]
        self._yhi = layout.y_hi[mask]

    def phi(self, pts: np.ndarray, weights=None) -> np.ndarray:
        u, v, z = _corner_uv(pts, self._xlo, self._xhi, self._ylo, self._yhi)
        per_patch = _phi_terms(u, v, z)
        if weights is None:
            return per_patch.sum(axis=1)
        return per_patch @ weights

    def gradient(self, pts: np.ndarray, weights=None) -> np.ndarray:
        u, v, z = _corner_uv(pts, self._xlo, self._xhi, self._ylo, self._yhi)
        gx, gy, gz = _grad_terms(u, v, z)
        if weights is None:
            return np.stack([gx.sum(axis=1), gy.sum(axis=1), gz.sum(axis=1)], axis=-1)
        return np.stack([gx @ weights, gy @ weights, gz @ weights], axis=-1)

    def hessian(self, pts: np.ndarray, weights=None) -> np.ndarray:
        u, v, z = _corner_uv(pts, self._xlo, self._xhi, self._ylo, self._yhi)
        terms = _hess_terms(u, v, z)
        if weights is None:
            terms = [t.sum(axis=1) for t in terms]
        else:
            terms = [t @ weights for t in terms]
        return _stack_hessian(*terms)


class RfBasisField:
    """Unit-voltage basis potential of the rf electrode (all its patches)."""

    def __init__(self, layout: ElectrodeLayout):
        if not np.any(layout.rf_mask):
            raise ConfigurationError("layout rf electrode has no patches")
        self._field = _PatchSetField(layout, layout.rf_mask)

    def phi(self, point):
        pts, shape = _check_points(point)
        out = self._field.phi(pts)
        return out.reshape(shape) if shape else float(out[0])

    def gradient(self, point):
        pts, shape = _check_points(point)
        out = self._field.gradient(pts)
        return out.reshape(shape + (3,)) if shape else out[0]

    def hessian(self, point):
        pts, shape = _check_points(point)
        out = self._field.hessian(pts)
        return out.reshape(shape + (3, 3)) if shape else out[0]


class ControlField:
    """Control potential of a layout under a named voltage configuration."""

    def __init__(self, layout: ElectrodeLayout, config: ControlConfig):
        self.layout = layout
        self.config = config
        mask = layout.patch_channel >= 0
        self._field = _PatchSetField(layout, mask)
        self._weights = config.voltages[layout.patch_channel[mask]]
        self._sheet_slope = config.voltages[-1] / layout.sheet_height  # V/m

    def potential(self, point):
        pts, shape = _check_points(point)
        out = self._field.phi(pts, self._weights) + self._sheet_slope * pts[:, 2]
        return out.reshape(shape) if shape else float(out[0])

    def gradient(self, point):
        pts, shape = _check_points(point)
        out = self._field.gradient(pts, self._weights)
        out[:, 2] += self._sheet_slope
        return out.reshape(shape + (3,)) if shape else out[0]

    def hessian(self, point):
        pts, shape = _check_points(point)
        out = self._field.hessian(pts, self._weights)
        return out.reshape(shape + (3, 3)) if shape else out[0]


class PseudopotentialField:
    """Ponderomotive pseudopotential q^2 U^2 |grad phi_rf|^2 / (4 m Omega^2)."""

    def __init__(self, layout: ElectrodeLayout, drive: RfDrive,
                 species: IonSpecies = MG24):
        self.rf = RfBasisField(layout)
        self.drive = drive
        self.species = species
        self.scale = (species.charge ** 2 * drive.u_rf ** 2
                      / (4.0 * species.mass * drive.omega_rf ** 2))  # J m^2

    def energy(self, point):
        g = self.rf.gradient(point)
        return self.scale * np.sum(np.square(g), axis=-1)

    def gradient(self, point):
        pts, shape = _check_points(point)
        g = self.rf.gradient(pts)
        h = self.rf.hessian(pts)
        out = 2.0 * self.scale * np.einsum("...ij,...j->...i", h, g)
        return out.reshape(shape + (3,)) if shape else out[0]

    def hessian(self, point, step: float = HESSIAN_FD_STEP):
        pts, shape = _check_points(point)
        h = np.empty((pts.shape[0], 3, 3))
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = step
            gp = self.gradient(pts + dp)
            gm = self.gradient(pts - dp)
            h[:, :, k] = (gp - gm) / (2.0 * step)
        h = 0.5 * (h + np.swapaxes(h, 1, 2))
        return h.reshape(shape + (3, 3)) if shape else h[0]


class TotalPotential:
    """Total trapping potential: rf pseudopotential plus q x control potential."""

    def __init__(self, layout: ElectrodeLayout, drive: RfDrive, config: ControlConfig,
                 species: IonSpecies = MG24):
        self.layout = layout
        self.drive = drive
        self.config = config
        self.species = species
        self.pseudo = PseudopotentialField(layout, drive, species)
        self.control = ControlField(layout, config)

    def energy(self, point):
        return self.pseudo.energy(point) + self.species.charge * self.control.potential(point)

    def gradient(self, point):
        return (self.pseudo.gradient(point)
                + self.species.charge * self.control.gradient(point))

    def hessian(self, point, step: float = HESSIAN_FD_STEP):
        return (self.pseudo.hessian(point, step=step)
                + self.species.charge * self.control.hessian(point))


# Spec-facing functional wrappers ------------------------------------------------

def control_potential(layout: ElectrodeLayout, config: ControlConfig, point):
    """Control potential (V) at a point, including the metal-sheet field."""
    return ControlField(layout, config).potential(point)


def rf_pseudopotential(layout: ElectrodeLayout, drive: RfDrive, species: IonSpecies,
                       point):
    """Pseudopotential energy (J) of `species` in the rf field at a point."""
    return PseudopotentialField(layout, drive, species).energy(point)


def total_potential(layout: ElectrodeLayout, drive: RfDrive, config: ControlConfig,
                    species: IonSpecies, point):
    """Total potential energy (J): pseudopotential + q * control potential."""
    return TotalPotential(layout, drive, config, species).energy(point)


# ---------------------------------------------------------------------------
# File I/O: layout files (um / mm at the boundary) and voltage tables (V)
# ---------------------------------------------------------------------------

def save_layout(layout: ElectrodeLayout, path) -> None:
    lines = ["# ionshuttle electrode layout",
             f"sheet_height_mm = {layout.sheet_height / MM:.6g}"]
    for eid, name in enumerate(layout.electrode_names):
        lines.append(f"electrode {name}")
        for p in layout.patches:
            if p.electrode_id == eid:
                lines.append("  patch_um = "
                             f"{p.x_lo / UM:.6f} {p.x_hi / UM:.6f} "
                             f"{p.y_lo / UM:.6f} {p.y_hi / UM:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_layout(path) -> ElectrodeLayout:
    text = Path(path).read_text(encoding="utf-8")
    sheet_height = 7e-3
    names: list[str] = []
    patches: list[RectPatch] = []
    current: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"sheet_height_mm\s*=\s*([-\d.eE+]+)", line)
        if m:
            sheet_height = float(m.group(1)) * MM
            continue
        m = re.fullmatch(r"electrode\s+(\S+)", line)
        if m:
            name = m.group(1)
            if name in names:
                raise ConfigurationError(f"{path}:{lineno}: duplicate electrode '{name}'")
            names.append(name)
            current = len(names) - 1
            continue
        m = re.fullmatch(r"patch_um\s*=\s*(.+)", line)
        if m:
            if current is None:
                raise ConfigurationError(f"{path}:{lineno}: patch before any electrode")
            vals = [float(t) for t in m.group(1).split()]
            if len(vals) != 4:
                raise ConfigurationError(f"{path}:{lineno}: patch needs 4 corner values")
            patches.append(RectPatch(vals[0] * UM, vals[1] * UM,
                                     vals[2] * UM, vals[3] * UM, current))
            continue
        raise ConfigurationError(f"{path}:{lineno}: unrecognized line '{line}'")
    return ElectrodeLayout(patches, names, sheet_height)


def save_voltage_table(configs: dict[str, ControlConfig], path) -> None:
    for col in VOLTAGE_TABLE_COLUMNS:
        if col not in configs:
            raise ConfigurationError(f"voltage table needs config '{col}'")
    lines = ["electrode," + ",".join(VOLTAGE_TABLE_COLUMNS)]
    for row, chan in enumerate(CONTROL_CHANNEL_NAMES):
        vals = ",".join(f"{configs[col].voltages[row]:.4f}" for col in VOLTAGE_TABLE_COLUMNS)
        lines.append(f"{chan},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_voltage_table(path) -> dict[str, ControlConfig]:
    """Load the 31-row control-voltage CSV into named ControlConfigs."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = rows[0].split(",")
    if header[0] != "electrode":
        raise ConfigurationError(f"{path}: first column must be 'electrode'")
    col_names = header[1:]
    body = rows[1:]
    if len(body) != N_CONTROL_CHANNELS:
        raise ConfigurationError(
            f"{path}: expected {N_CONTROL_CHANNELS} electrode rows, got {len(body)}")
    table = np.empty((N_CONTROL_CHANNELS, len(col_names)))
    for i, row in enumerate(body):
        parts = row.split(",")
        if parts[0] != CONTROL_CHANNEL_NAMES[i]:
            raise ConfigurationError(
                f"{path}: row {i + 2} must be '{CONTROL_CHANNEL_NAMES[i]}', got '{parts[0]}'")
        table[i] = [float(x) for x in parts[1:]]
    return {name: ControlConfig(name, table[:, j]) for j, name in enumerate(col_names)}
