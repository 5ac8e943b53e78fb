"""Wing shape parametrization and surface panel mesh.

The wing is described by NACA 4-digit sections placed linearly along the
half span.  Each section may be twisted and scaled about its quarter-chord
point.  The half-span description is mirrored about the root plane (y = 0)
to obtain the closed full-span surface used by the panel method.

Coordinates: x chordwise (downstream), y spanwise, z up.  Twist is positive
nose up.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

PARAM_NAMES = ("twist", "chord")


# ---------------------------------------------------------------------------
# Airfoil sections
# ---------------------------------------------------------------------------

def naca4_thickness(x, t):
    """Half thickness of a NACA 4-digit profile with a closed trailing edge."""
    x = np.asarray(x, dtype=float)
    return 5.0 * t * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2
                      + 0.2843 * x**3 - 0.1036 * x**4)


def naca4_camber(x, m, p):
    """Camber line and its slope."""
    x = np.asarray(x, dtype=float)
    if m == 0.0:
        return np.zeros_like(x), np.zeros_like(x)
    fore = x <= p
    yc = np.where(fore, m / p**2 * (2 * p * x - x**2),
                  m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * x - x**2))
    dyc = np.where(fore, 2 * m / p**2 * (p - x), 2 * m / (1 - p) ** 2 * (p - x))
    return yc, dyc


def naca4_profile(m, p, t, n_chord, spacing="cosine"):
    """Closed NACA 4-digit coordinate loop in chord units.

    The loop starts at the trailing edge, runs along the lower surface to
    the leading edge and back along the upper surface.  It has
    ``n_chord + 1`` points; the first and last coincide at (1, 0).

    Args:
        m: maximum camber (fraction of chord).
        p: position of maximum camber (fraction of chord).
        t: maximum thickness (fraction of chord).
        n_chord: number of segments around the loop (even, >= 10).
        spacing: only ``"cosine"`` is supported.
    """
    for name, value in (("m", m), ("p", p), ("t", t)):
        if not np.isfinite(value):
            raise ValueError(f"non-finite NACA parameter {name}={value}")
    if t <= 0:
        raise ValueError("thickness must be positive")
    if m != 0.0 and not 0.0 < p < 1.0:
        raise ValueError("camber position must lie in (0, 1) for a cambered profile")
    if spacing != "cosine":
        raise ValueError(f"unsupported spacing {spacing!r}")
    if n_chord < 10 or n_chord % 2:
        raise ValueError("n_chord must be an even number >= 10")

    half = n_chord // 2
    xc = 0.5 * (1.0 - np.cos(np.pi * np.arange(half + 1) / half))
    yt = naca4_thickness(xc, t)
    yc, dyc = naca4_camber(xc, m, p)
    theta = np.arctan(dyc)
    xu, zu = xc - yt * np.sin(theta), yc + yt * np.cos(theta)
    xl, zl = xc + yt * np.sin(theta), yc - yt * np.cos(theta)
    # pin the end points exactly
    xu[0] = xl[0] = 0.0
    zu[0] = zl[0] = 0.0
    xu[-1] = xl[-1] = 1.0
    zu[-1] = zl[-1] = 0.0

    x = np.concatenate([xl[::-1], xu[1:]])
    z = np.concatenate([zl[::-1], zu[1:]])
    return np.column_stack([x, z])


@dataclass(frozen=True)
class AirfoilSection:
    """One spanwise section; ``twist`` in degrees, lengths in metres."""

    m: float
    p: float
    t: float
    chord: float
    twist: float
    quarter_chord: tuple[float, float, float]

    def __post_init__(self):
        if self.t <= 0 or self.chord <= 0:
            raise ValueError("section thickness and chord must be positive")

    def coordinates(self, n_chord):
        """3D loop points (n_chord unique points, closing point dropped)."""
        loop = naca4_profile(self.m, self.p, self.t, n_chord)[:-1]
        return section_points(loop, self.chord, self.twist, self.quarter_chord)


def section_points(loop, chord, twist_deg, quarter_chord):
    """Place a chord-unit profile loop in space."""
    a = np.deg2rad(twist_deg)
    dx = chord * (loop[:, 0] - 0.25)
    dz = chord * loop[:, 1]
    ca, sa = np.cos(a), np.sin(a)
    x0, y0, z0 = quarter_chord
    pts = np.empty((loop.shape[0], 3))
    pts[:, 0] = x0 + ca * dx + sa * dz
    pts[:, 1] = y0
    pts[:, 2] = z0 - sa * dx + ca * dz
    return pts


# ---------------------------------------------------------------------------
# Shape design variables
# ---------------------------------------------------------------------------

@dataclass
class ShapeDesign:
    """Normalized per-section shape variables.

    ``d`` has one row per half-span section and one column per entry of
    ``PARAM_NAMES``.  Columns not listed in ``active`` are held fixed.
    """

    d: np.ndarray
    twist_bounds: tuple[float, float] = (-7.0, 10.0)
    chord_bounds: tuple[float, float] = (0.1, 1.64)
    filter_radius: float = 1.65
    active: tuple[str, ...] = ("twist",)

    def __post_init__(self):
        self.d = np.array(self.d, dtype=float)
        if self.d.ndim != 2 or self.d.shape[1] != len(PARAM_NAMES):
            raise ValueError("d must have shape (n_sections, 2)")
        if np.any(self.d < 0) or np.any(self.d > 1):
            raise ValueError("shape variables must lie in [0, 1]")
        if not self.twist_bounds[0] < self.twist_bounds[1]:
            raise ValueError("twist bounds must be increasing")
        if not 0 < self.chord_bounds[0] < self.chord_bounds[1]:
            raise ValueError("chord bounds must satisfy 0 < c_min < c_max")
        if self.filter_radius <= 0:
            raise ValueError("filter radius must be positive")
        unknown = set(self.active) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown shape parameters {sorted(unknown)}")

    @property
    def n_sections(self):
        return self.d.shape[0]

    @property
    def active_columns(self):
        return [PARAM_NAMES.index(name) for name in PARAM_NAMES if name in self.active]

    @property
    def gaps(self):
        return np.array([self.twist_bounds[1] - self.twist_bounds[0],
                         self.chord_bounds[1] - self.chord_bounds[0]])

    def vector(self):
        """Active variables, section-major."""
        return self.d[:, self.active_columns].ravel()

    def with_vector(self, x):
        d = self.d.copy()
        d[:, self.active_columns] = np.asarray(x, dtype=float).reshape(self.n_sections, -1)
        return replace(self, d=np.clip(d, 0.0, 1.0))

    @classmethod
    def from_values(cls, n_sections, twist, chord, **kwargs):
        """Uniform design from physical twist (deg) and chord (m)."""
        tb = kwargs.get("twist_bounds", cls.twist_bounds)
        cb = kwargs.get("chord_bounds", cls.chord_bounds)
        d = np.empty((n_sections, 2))
        d[:, 0] = (twist - tb[0]) / (tb[1] - tb[0])
        d[:, 1] = (chord - cb[0]) / (cb[1] - cb[0])
        return cls(d=d, **kwargs)


def filter_matrix(span_positions, radius):
    """Row-normalized hat-kernel filter matrix over spanwise sections."""
    if radius <= 0:
        raise ValueError("filter radius must be positive")
    y = np.asarray(span_positions, dtype=float)
    if np.any(np.diff(y) <= 0):
        raise ValueError("span positions must be strictly increasing")
    w = np.maximum(0.0, radius - np.abs(y[:, None] - y[None, :]))
    return w / w.sum(axis=1, keepdims=True)


def filter_shape(d_raw, radius, span_positions):
    """Spanwise hat-filter of per-section shape variables (columns filtered independently)."""
    F = filter_matrix(span_positions, radius)
    return F @ np.asarray(d_raw, dtype=float)


def map_design(d_filtered, twist_bounds, chord_bounds):
    """Normalized variables to physical twist (deg) and chord (m) per section."""
    d = np.asarray(d_filtered, dtype=float)
    twist = twist_bounds[0] + d[:, 0] * (twist_bounds[1] - twist_bounds[0])
    chord = chord_bounds[0] + d[:, 1] * (chord_bounds[1] - chord_bounds[0])
    return twist, chord


# ---------------------------------------------------------------------------
# Wing planform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WingSpec:
    """Fixed planform data: airfoil, half span and section layout."""

    naca: tuple[float, float, float] = (0.02, 0.4, 0.12)
    half_span: float = 4.95
    n_sections: int = 40
    n_chord: int = 100
    quarter_chord_x: float = 0.41
    quarter_chord_z: float = 0.0
    wake_length: float = 164.0

    @property
    def span_positions(self):
        return np.linspace(0.0, self.half_span, self.n_sections)


class Wing:
    """Wing geometry generated from a ``WingSpec`` and a ``ShapeDesign``.

    Holds the filtered design, the physical twist/chord per half-span
    section and the full-span section list (mirrored about y = 0).
    """

    def __init__(self, spec: WingSpec, design: ShapeDesign):
        if design.n_sections != spec.n_sections:
            raise ValueError("design and wing spec disagree on the section count")
        self.spec = spec
        self.design = design
        self.filter = filter_matrix(spec.span_positions, design.filter_radius)
        self.d_filtered = self.filter @ design.d
        self.twist, self.chord = map_design(self.d_filtered, design.twist_bounds,
                                            design.chord_bounds)

    @classmethod
    def from_params(cls, spec, twist, chord, design=None):
        """Wing with explicitly given (already filtered) twist/chord per section."""
        obj = cls.__new__(cls)
        obj.spec = spec
        obj.design = design
        obj.filter = None
        obj.d_filtered = None
        obj.twist = np.asarray(twist, dtype=float) * np.ones(spec.n_sections)
        obj.chord = np.asarray(chord, dtype=float) * np.ones(spec.n_sections)
        return obj

    def half_sections(self):
        m, p, t = self.spec.naca
        return [AirfoilSection(m, p, t, c, a, (self.spec.quarter_chord_x, y,
                                               self.spec.quarter_chord_z))
                for y, a, c in zip(self.spec.span_positions, self.twist, self.chord)]

    def sections(self):
        """Full-span sections ordered by increasing y."""
        half = self.half_sections()
        mirrored = [replace(s, quarter_chord=(s.quarter_chord[0], -s.quarter_chord[1],
                                              s.quarter_chord[2]))
                    for s in half[1:][::-1]]
        return mirrored + half

    def panel_mesh(self, wake_direction=(1.0, 0.0, 0.0)):
        return build_panel_mesh(self.sections(), self.spec.n_chord,
                                self.spec.wake_length, wake_direction)

    def perturbed(self, section, param, step):
        """Copy with the filtered variable ``param`` of half-span ``section`` moved by ``step``."""
        twist, chord = self.twist.copy(), self.chord.copy()
        gaps = self.design.gaps if self.design is not None else np.array([1.0, 1.0])
        if param == 0:
            twist[section] += step * gaps[0]
        else:
            chord[section] += step * gaps[1]
        return Wing.from_params(self.spec, twist, chord, self.design)


# ---------------------------------------------------------------------------
# Panel mesh
# ---------------------------------------------------------------------------

@dataclass
class PanelMesh:
    """Quadrilateral surface panels plus a fixed straight wake.

    Panels ``0 .. n_strips*n_chord-1`` are the structured surface panels
    (strip-major, chordwise index running lower TE -> LE -> upper TE),
    followed by the two tip caps.  Degenerate quads (triangles) repeat a
    node index.
    """

    nodes: np.ndarray            # (n_nodes, 3)
    quads: np.ndarray            # (n_panels, 4) node indices
    n_chord: int
    n_strips: int
    strip_y: np.ndarray          # section y positions, length n_strips + 1
    neighbors: np.ndarray        # (n_panels, 4): chord-, chord+, span-, span+ (-1 = none)
    te_lower: np.ndarray         # (n_strips,) panel index of the lower TE panel
    te_upper: np.ndarray         # (n_strips,) panel index of the upper TE panel
    wake_nodes: np.ndarray       # (2*(n_strips+1), 3): TE nodes then far nodes
    wake_quads: np.ndarray       # (n_strips, 4) indices into wake_nodes
    wake_direction: np.ndarray
    centroids: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    frames: np.ndarray = field(init=False)   # (n_panels, 3, 3) rows l, m, n

    def __post_init__(self):
        tri_a, tri_b = self.triangles()
        (ca, aa, na), (cb, ab, nb) = _tri_props(tri_a), _tri_props(tri_b)
        self.areas = aa + ab
        bad = np.flatnonzero(self.areas <= 1e-14)
        if bad.size:
            strip = self.panel_strip(bad[0])
            raise ValueError(f"degenerate panel {bad[0]} in strip {strip}")
        self.centroids = (ca * aa[:, None] + cb * ab[:, None]) / self.areas[:, None]
        n = na * aa[:, None] + nb * ab[:, None]
        self.normals = n / np.linalg.norm(n, axis=1, keepdims=True)
        q = self.nodes[self.quads]
        chord_dir = 0.5 * (q[:, 1] + q[:, 2]) - 0.5 * (q[:, 0] + q[:, 3])
        chord_dir -= np.sum(chord_dir * self.normals, axis=1)[:, None] * self.normals
        lvec = chord_dir / np.linalg.norm(chord_dir, axis=1, keepdims=True)
        mvec = np.cross(self.normals, lvec)
        self.frames = np.stack([lvec, mvec, self.normals], axis=1)

    @property
    def n_panels(self):
        return self.quads.shape[0]

    @property
    def n_wake(self):
        return self.wake_quads.shape[0]

    @property
    def n_surface(self):
        return self.n_strips * self.n_chord

    def panel_strip(self, panel):
        """Spanwise strip of a panel (-1/-2 for the tip caps)."""
        if panel < self.n_surface:
            return panel // self.n_chord
        return -1 if panel < self.n_surface + (self.n_chord // 2) else -2

    def triangles(self):
        """Each quad split along the 0-2 diagonal: two (n_panels, 3, 3) arrays."""
        q = self.nodes[self.quads]
        return q[:, [0, 1, 2]], q[:, [0, 2, 3]]

    def wake_triangles(self):
        q = self.wake_nodes[self.wake_quads]
        return q[:, [0, 1, 2]], q[:, [0, 2, 3]]

    def with_wake(self, direction):
        """Same surface with the wake re-aligned to ``direction``."""
        wn, wq, wd = _build_wake(self.nodes, self.n_chord, self.n_strips,
                                 self.wake_length, direction)
        return replace(self, wake_nodes=wn, wake_quads=wq, wake_direction=wd)

    @property
    def wake_length(self):
        return float(np.linalg.norm(self.wake_nodes[self.n_strips + 1] - self.wake_nodes[0]))

    def triangle_soup(self):
        """Closed surface as a (n_tri, 3, 3) array with zero-area triangles removed."""
        a, b = self.triangles()
        tris = np.concatenate([a, b])
        area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
        return tris[area > 1e-16]


def _tri_props(tri):
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    return tri.mean(axis=1), area, cross


def _build_wake(nodes, n_chord, n_strips, wake_length, direction):
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    te = nodes[np.arange(n_strips + 1) * n_chord]
    far = te + wake_length * direction
    wake_nodes = np.concatenate([te, far])
    j = np.arange(n_strips)
    n0 = n_strips + 1
    # ordered so the wake normal points from the lower towards the upper side
    wake_quads = np.column_stack([j, n0 + j, n0 + j + 1, j + 1])
    return wake_nodes, wake_quads, direction


def build_panel_mesh(sections: Sequence[AirfoilSection], n_chord, wake_length,
                     wake_direction=(1.0, 0.0, 0.0)):
    """Panel mesh between consecutive sections, tip caps and a straight wake.

    ``sections`` must be ordered by increasing y.  Each pair of adjacent
    sections gives one spanwise strip of ``n_chord`` quadrilaterals.  Both
    end sections are closed by a flat cap whose quads join matching lower
    and upper surface points.
    """
    if len(sections) < 2:
        raise ValueError("at least two sections are required")
    ys = np.array([s.quarter_chord[1] for s in sections])
    if np.any(np.diff(ys) <= 0):
        raise ValueError("sections must be ordered by strictly increasing y")
    n_sec = len(sections)
    n_strips = n_sec - 1
    nodes = np.concatenate([s.coordinates(n_chord) for s in sections])

    s_idx, k_idx = np.meshgrid(np.arange(n_strips), np.arange(n_chord), indexing="ij")
    s_idx, k_idx = s_idx.ravel(), k_idx.ravel()
    k_next = (k_idx + 1) % n_chord
    quads = np.column_stack([s_idx * n_chord + k_idx, s_idx * n_chord + k_next,
                             (s_idx + 1) * n_chord + k_next, (s_idx + 1) * n_chord + k_idx])

    n_surf = n_strips * n_chord
    half = n_chord // 2
    nb = -np.ones((n_surf + 2 * half, 4), dtype=np.int64)
    p = np.arange(n_surf)
    ks, ss = p % n_chord, p // n_chord
    # chordwise neighbours do not connect across the trailing edge
    nb[p, 0] = np.where(ks > 0, p - 1, -1)
    nb[p, 1] = np.where(ks < n_chord - 1, p + 1, -1)
    nb[p, 2] = np.where(ss > 0, p - n_chord, -1)
    nb[p, 3] = np.where(ss < n_strips - 1, p + n_chord, -1)

    caps = []
    for end, sec in ((0, 0), (1, n_sec - 1)):
        base = sec * n_chord
        k = np.arange(half)
        lower0, lower1 = base + k, base + k + 1
        upper1, upper0 = base + (n_chord - k - 1) % n_chord, base + (n_chord - k) % n_chord
        cap = np.column_stack([lower0, lower1, upper1, upper0])
        if end == 0:
            cap = cap[:, ::-1]   # outward normal towards -y
        caps.append(cap)
        first = n_surf + end * half
        cid = first + k
        nb[cid, 0] = np.where(k > 0, cid - 1, -1)
        nb[cid, 1] = np.where(k < half - 1, cid + 1, -1)
        strip = 0 if end == 0 else n_strips - 1
        nb[cid, 2] = strip * n_chord + k                    # lower surface panel
        nb[cid, 3] = strip * n_chord + (n_chord - 1 - k)    # upper surface panel
        # surface panels in the end strips see the cap as their outer neighbour
        side = 2 if end == 0 else 3
        nb[strip * n_chord + k, side] = cid
        nb[strip * n_chord + (n_chord - 1 - k), side] = cid
    quads = np.concatenate([quads] + caps)

    te_lower = np.arange(n_strips) * n_chord
    te_upper = te_lower + n_chord - 1
    wn, wq, wd = _build_wake(nodes, n_chord, n_strips, wake_length, wake_direction)
    return PanelMesh(nodes=nodes, quads=quads, n_chord=n_chord, n_strips=n_strips,
                     strip_y=ys, neighbors=nb, te_lower=te_lower, te_upper=te_upper,
                     wake_nodes=wn, wake_quads=wq, wake_direction=wd)


# ---------------------------------------------------------------------------
# Geometry derivatives
# ---------------------------------------------------------------------------

def geometry_jacobian(wing: Wing, section, param):
    """d(node positions)/d(filtered design variable) for one half-span section.

    The derivative covers the section itself and its mirror image, and is
    scaled by the bound gap so it applies to the normalized variable.
    Returns an array shaped like ``wing.panel_mesh().nodes``.
    """
    spec = wing.spec
    n_sec_half = spec.n_sections
    if not 0 <= section < n_sec_half:
        raise IndexError(f"section {section} out of range")
    if param not in (0, 1):
        raise IndexError(f"parameter index {param} out of range")
    gaps = wing.design.gaps if wing.design is not None else np.array([1.0, 1.0])
    loop = naca4_profile(*spec.naca, spec.n_chord)[:-1]
    a = np.deg2rad(wing.twist[section])
    c = wing.chord[section]
    dx = loop[:, 0] - 0.25
    dz = loop[:, 1]
    ca, sa = np.cos(a), np.sin(a)
    local = np.zeros((loop.shape[0], 3))
    if param == 0:
        # d/d(alpha) of the rotation, alpha in radians per degree of gap
        scale = gaps[0] * np.pi / 180.0
        local[:, 0] = c * (-sa * dx + ca * dz) * scale
        local[:, 2] = c * (-ca * dx - sa * dz) * scale
    else:
        local[:, 0] = (ca * dx + sa * dz) * gaps[1]
        local[:, 2] = (-sa * dx + ca * dz) * gaps[1]

    n_full = 2 * n_sec_half - 1
    jac = np.zeros((n_full * spec.n_chord, 3))
    n = spec.n_chord
    for full_index in {n_sec_half - 1 + section, n_sec_half - 1 - section}:
        jac[full_index * n:(full_index + 1) * n] = local
    return jac


def affected_strips(n_sections_half, section):
    """Full-span strip indices whose panels move with a half-span section."""
    mid = n_sections_half - 1
    n_strips = 2 * (n_sections_half - 1)
    strips = set()
    for full in {mid + section, mid - section}:
        for s in (full - 1, full):
            if 0 <= s < n_strips:
                strips.add(s)
    return sorted(strips)


def affected_panels(mesh: PanelMesh, n_sections_half, section):
    """Panels (including tip caps) whose nodes move with a half-span section."""
    strips = affected_strips(n_sections_half, section)
    panels = [np.arange(s * mesh.n_chord, (s + 1) * mesh.n_chord) for s in strips]
    half = mesh.n_chord // 2
    if section == n_sections_half - 1:
        panels.append(mesh.n_surface + np.arange(2 * half))
    return np.concatenate(panels)
