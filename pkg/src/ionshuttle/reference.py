"""Parametric reference trap layout and the published unit-cell geometry.

The reference layout is a stand-in for the (proprietary) production chip.  Its
rf electrode is a plate with a circular opening; three circular rf discs
inside the opening pin three satellite trapping sites above themselves, and
the structure's upper layer of minima supplies the hub site, anchored by a
fixed bias electrode (el7).  Transport electrodes occupy the open corridors
near the unit cell.  The vertical pull of the biased metal sheet is cancelled
at the cell by eight large positive-biased pads outside the plate, sized so
each contributes the same downward field (which also cancels their lateral
components pairwise).  Electrodes with negative static bias are parked far
outside, where their fields are negligible.

`paper_unit_cell` is independent of the layout: it returns the published site
coordinates (40 um equilateral triangle at z = 40 um, hub over the centroid at
z = 53 um) used for geometry arithmetic and Ramsey route geometry.
"""

from __future__ import annotations

import math

import numpy as np

from .constants import UM
from .trapmodel import ElectrodeLayout, RectPatch

# Published unit-cell geometry (um)
TRIANGLE_SIDE_UM = 40.0
SATELLITE_Z_UM = 40.0
HUB_Z_UM = 53.0

# Reference-layout rf geometry (um)
RF_OPENING_RADIUS = 135.0
RF_DISC_RADIUS = 34.0
RF_DISC_CENTER_RADIUS = 44.0
RF_PLATE_HALF_WIDTH = 400.0
SATELLITE_AZIMUTHS_DEG = (90.0, 210.0, 330.0)
_OPENING_RASTER_UM = 6.0
_DISC_RASTER_UM = 2.5

# Transport / bias islands near the unit cell: name -> (cx, cy, side) in um.
TRANSPORT_ISLANDS = {
    "el5": (0.0, 0.0, 12.0),       # central island: hub release
    "el7": (0.0, -50.0, 7.0),      # hub anchor bias (static)
    "el14": (-88.8, -51.3, 45.0),  # attractor beyond T_1 (azimuth 210)
    "el21": (0.0, -70.0, 18.0),    # repeller opposite T_0 (azimuth 90)
}

# Sheet compensation: pad extents in mm, solved so that each pad's static
# voltage times its vertical field slope at the cell is the listed share of
# the -3.5 V / 7 mm sheet slope (500 V/m total).
_PAD_INNER_MM = 0.42
_PAD_OUTER_MM = 4.0
_QUADRANT_PADS = (  # (name, outer_mm, (sign_x, sign_y))
    ("el11", 1.916, (1, 1)),
    ("el16", 2.639, (-1, 1)),
    ("el25", 3.735, (-1, -1)),
    ("el28", 5.631, (1, -1)),
)
_CARDINAL_PADS = (  # (name, width_mm, axis unit vector)
    ("el8", 0.597, (0, 1)),
    ("el4", 0.707, (0, -1)),
    ("el27", 0.311, (1, 0)),
    ("el6", 0.383, (-1, 0)),
)

# Everything else parked far outside (negligible field at the cell).
_PARKED_RADIUS_MM = 6.3
_PARKED_SIDE = 60.0
_PARKED = ("el29", "el18", "el30", "el9", "el10", "el26", "el19", "el3",
           "el24", "el2", "el22", "el20", "el15", "el1", "el13", "el12",
           "el17", "el23")


def satellite_azimuths_rad() -> tuple[float, float, float]:
    return tuple(math.radians(a) for a in SATELLITE_AZIMUTHS_DEG)


def paper_unit_cell() -> dict[str, np.ndarray]:
    """Published site coordinates (m): hub over the centroid, satellites on a
    40 um equilateral triangle."""
    r_c = TRIANGLE_SIDE_UM / math.sqrt(3.0)
    sites = {"T_H": np.array([0.0, 0.0, HUB_Z_UM]) * UM}
    for label, az in zip(("T_0", "T_1", "T_2"), satellite_azimuths_rad()):
        sites[label] = np.array([r_c * math.cos(az), r_c * math.sin(az),
                                 SATELLITE_Z_UM]) * UM
    return sites


def hub_satellite_distance() -> float:
    """Distance (m) between the published hub and any satellite."""
    cell = paper_unit_cell()
    return float(np.linalg.norm(cell["T_H"] - cell["T_1"]))


def _raster_disc(cx: float, cy: float, radius: float, step: float):
    """Rasterize a disc into mirror-symmetric row strips (units um)."""
    rects = []
    n_rows = int(math.floor(2.0 * radius / step))
    y0 = cy - 0.5 * n_rows * step
    for i in range(n_rows):
        y_lo = y0 + i * step
        y_mid = y_lo + 0.5 * step
        dy = abs(y_mid - cy)
        if dy >= radius:
            continue
        half = math.sqrt(radius * radius - dy * dy)
        rects.append((cx - half, cx + half, y_lo, y_lo + step))
    return rects


def _plate_rows(half_width: float, opening_radius: float, step: float):
    """Plate with a circular opening, decomposed into row strips (um)."""
    boundaries = {-half_width, half_width}
    n_rows = int(math.ceil(2.0 * opening_radius / step))
    y0 = -0.5 * n_rows * step
    for i in range(n_rows + 1):
        boundaries.add(y0 + i * step)
    ys = sorted(b for b in boundaries if -half_width <= b <= half_width)
    rects = []
    for y_lo, y_hi in zip(ys[:-1], ys[1:]):
        y_mid = 0.5 * (y_lo + y_hi)
        x = -half_width
        if abs(y_mid) < opening_radius:
            half = math.sqrt(opening_radius ** 2 - y_mid ** 2)
            rects.append((x, -half, y_lo, y_hi))
            x = half
        rects.append((x, half_width, y_lo, y_hi))
    return rects


def _compensation_pads() -> dict[str, tuple[float, float, float, float]]:
    """Pad rectangles (x_lo, x_hi, y_lo, y_hi) in um."""
    pads = {}
    a = _PAD_INNER_MM * 1e3
    b_max = _PAD_OUTER_MM * 1e3
    for name, outer, (sx, sy) in _QUADRANT_PADS:
        b = outer * 1e3
        x = sorted((sx * a, sx * b))
        y = sorted((sy * a, sy * b))
        pads[name] = (x[0], x[1], y[0], y[1])
    for name, width, (ux, uy) in _CARDINAL_PADS:
        w = width * 1e3 / 2.0
        if ux == 0:
            y = sorted((uy * a, uy * b_max))
            pads[name] = (-w, w, y[0], y[1])
        else:
            x = sorted((ux * a, ux * b_max))
            pads[name] = (x[0], x[1], -w, w)
    return pads


def build_reference_layout(sheet_height: float = 7e-3) -> ElectrodeLayout:
    """Construct the reference layout (all 32 electrodes, SI units)."""
    names = ["rf"] + [f"el{i}" for i in range(1, 31)] + ["metal_sheet"]
    name_id = {n: i for i, n in enumerate(names)}
    patches: list[RectPatch] = []

    def add(rects_um, electrode: str) -> None:
        eid = name_id[electrode]
        for (xl, xh, yl, yh) in rects_um:
            patches.append(RectPatch(xl * UM, xh * UM, yl * UM, yh * UM, eid))

    add(_plate_rows(RF_PLATE_HALF_WIDTH, RF_OPENING_RADIUS, _OPENING_RASTER_UM),
        "rf")
    for az in satellite_azimuths_rad():
        cx = RF_DISC_CENTER_RADIUS * math.cos(az)
        cy = RF_DISC_CENTER_RADIUS * math.sin(az)
        add(_raster_disc(cx, cy, RF_DISC_RADIUS, _DISC_RASTER_UM), "rf")

    for name, (cx, cy, side) in TRANSPORT_ISLANDS.items():
        h = side / 2.0
        add([(cx - h, cx + h, cy - h, cy + h)], name)
    for name, rect in _compensation_pads().items():
        add([rect], name)
    r_park = _PARKED_RADIUS_MM * 1e3
    for i, name in enumerate(_PARKED):
        a = math.radians(360.0 * i / len(_PARKED) + 11.0)
        cx, cy = r_park * math.cos(a), r_park * math.sin(a)
        h = _PARKED_SIDE / 2.0
        add([(cx - h, cx + h, cy - h, cy + h)], name)

    return ElectrodeLayout(patches, names, sheet_height)
