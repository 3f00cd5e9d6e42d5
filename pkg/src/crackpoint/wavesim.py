"""2D mass-spring lattice wave simulator with crack-damaged bonds.

The plate is a rectangular grid of point masses connected by axial
(horizontal/vertical) and diagonal linear springs. Small-displacement Hookean
forces give a linear system f = -K u, integrated with velocity-Verlet, so the
undamped dynamics conserve energy to integrator accuracy. A crack is a line
segment (with optional width) whose intersected bonds lose stiffness, which
scatters and shadows the propagating wave. Displacements are recorded at a
9x9 sensor grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .util import make_rng, segment_rect_distance, segment_segment_distance

N_SENSOR_SIDE = 9
N_SENSORS = N_SENSOR_SIDE * N_SENSOR_SIDE


class UnstableTimestepError(ValueError):
    """dt violates the explicit-integration stability bound."""


class CrackOutsidePlateError(ValueError):
    """A present crack rasterized to zero lattice bonds."""


class SimulationBlowupError(RuntimeError):
    """Displacements exceeded the blow-up guard during integration."""

    def __init__(self, step: int, value: float):
        super().__init__(f"displacement blow-up at step {step}: max |u| = {value:.3e}")
        self.step = step


@dataclass(frozen=True)
class CrackSpec:
    """Line-segment crack in normalized plate coordinates [0,1]^2."""

    p0: tuple[float, float] = (0.3, 0.5)
    p1: tuple[float, float] = (0.7, 0.5)
    width: float = 0.0
    present: bool = True

    def __post_init__(self):
        if self.width < 0.0:
            raise ValueError("crack width must be >= 0")

    @property
    def crack_size(self) -> float:
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))

    NONE = None  # replaced below with the canonical "no crack" spec


CrackSpec.NONE = CrackSpec(present=False)


@dataclass(frozen=True)
class SourceSpec:
    """Point-force excitation at the nearest lattice node."""

    position: tuple[float, float] = (0.5, 0.0)
    wavelet: str = "ricker"
    center_frequency: float = 0.1
    amplitude: float = 1.0
    axis: str = "y"

    def __post_init__(self):
        if self.center_frequency <= 0.0:
            raise ValueError("center_frequency must be > 0")
        if self.wavelet not in ("ricker", "sine_burst"):
            raise ValueError(f"unknown wavelet {self.wavelet!r}")
        if self.axis not in ("x", "y"):
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")

    @property
    def delay(self) -> float:
        # Ricker peak delay; also used as the sine-burst ramp center.
        return 1.5 / self.center_frequency

    @property
    def decay_time(self) -> float:
        """Time after which |s(t)| < 1e-6 of the peak amplitude."""
        if self.wavelet == "ricker":
            # |(1 - 2a) exp(-a)| with a = (pi f tau)^2, tau = 1.4/f is ~ 1.6e-7
            return self.delay + 1.4 / self.center_frequency
        return self.delay + 1.5 / self.center_frequency

    def time_series(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        f = self.center_frequency
        tau = t - self.delay
        if self.wavelet == "ricker":
            a = (np.pi * f * tau) ** 2
            s = (1.0 - 2.0 * a) * np.exp(-a)
        else:
            # Hann-windowed 3-cycle tone burst centred on the delay.
            half = 1.5 / f
            w = np.where(np.abs(tau) < half, 0.5 * (1.0 + np.cos(np.pi * tau / half)), 0.0)
            s = w * np.sin(2.0 * np.pi * f * tau)
        return self.amplitude * s


@dataclass
class LatticeConfig:
    grid_nx: int = 64
    grid_ny: int = 64
    node_mass: float = 1.0
    stiffness_axial: float = 1.0
    stiffness_diag: float = 0.5
    dt: float = 0.05
    n_steps: int = 2000
    damping: float = 0.0
    seed: int = 0
    crack_stiffness_factor: float = 0.0
    label_h: int = 16
    label_w: int = 16

    def __post_init__(self):
        if self.grid_nx < 16 or self.grid_ny < 16:
            raise ValueError("grid_nx and grid_ny must be >= 16")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        if self.node_mass <= 0.0:
            raise ValueError("node_mass must be > 0")
        limit = self.stable_dt_limit()
        if self.dt >= limit:
            raise UnstableTimestepError(
                f"dt = {self.dt} >= stability limit {limit:.6g} "
                f"(2/omega_max for the assembled per-node stiffness)"
            )

    def stable_dt_limit(self) -> float:
        # Interior node: 4 axial + 4 diagonal bonds; each bond contributes at
        # most 2k to the row sum of K, so omega_max^2 <= k_node_total / m.
        k_node_total = 2.0 * (4.0 * self.stiffness_axial + 4.0 * self.stiffness_diag)
        omega_max = np.sqrt(k_node_total / self.node_mass)
        return 2.0 / omega_max

    @property
    def n_nodes(self) -> int:
        return self.grid_nx * self.grid_ny

    @property
    def spacing(self) -> tuple[float, float]:
        return 1.0 / (self.grid_nx - 1), 1.0 / (self.grid_ny - 1)

    def node_positions(self) -> np.ndarray:
        """(n_nodes, 2) normalized positions, node index = iy * nx + ix."""
        ix, iy = np.meshgrid(np.arange(self.grid_nx), np.arange(self.grid_ny))
        x = ix.ravel() / (self.grid_nx - 1)
        y = iy.ravel() / (self.grid_ny - 1)
        return np.stack([x, y], axis=1)

    def sensor_indices(self) -> np.ndarray:
        """Flat node indices of the 9x9 sensor grid, row-major over (y, x)."""
        ix = np.rint(np.arange(N_SENSOR_SIDE) * (self.grid_nx - 1) / (N_SENSOR_SIDE - 1)).astype(int)
        iy = np.rint(np.arange(N_SENSOR_SIDE) * (self.grid_ny - 1) / (N_SENSOR_SIDE - 1)).astype(int)
        cols, rows = np.meshgrid(ix, iy)
        return (rows * self.grid_nx + cols).ravel()

    def nearest_node(self, pos: tuple[float, float]) -> int:
        ix = int(np.clip(round(pos[0] * (self.grid_nx - 1)), 0, self.grid_nx - 1))
        iy = int(np.clip(round(pos[1] * (self.grid_ny - 1)), 0, self.grid_ny - 1))
        return iy * self.grid_nx + ix


@dataclass
class LatticeState:
    cfg: LatticeConfig
    crack: CrackSpec
    positions: np.ndarray          # (n_nodes, 2)
    bond_i: np.ndarray             # (n_bonds,)
    bond_j: np.ndarray             # (n_bonds,)
    bond_k: np.ndarray             # (n_bonds,) effective stiffness
    bond_k_nominal: np.ndarray     # (n_bonds,) undamaged stiffness
    bond_dir: np.ndarray           # (n_bonds, 2) unit direction
    damaged: np.ndarray            # (n_bonds,) bool
    stiffness: sp.csr_matrix = dc_field(repr=False, default=None)

    @property
    def n_bonds(self) -> int:
        return self.bond_i.size


@dataclass
class WaveSample:
    field: np.ndarray              # (n_steps, 81, 2)
    mask: np.ndarray               # (label_h, label_w) uint8
    crack: CrackSpec
    sensor_layout: np.ndarray      # (81,) flat node indices
    energy: Optional[np.ndarray] = None


def _bond_table(cfg: LatticeConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx, ny = cfg.grid_nx, cfg.grid_ny
    idx = np.arange(nx * ny).reshape(ny, nx)
    pairs = []
    ks = []
    # horizontal and vertical
    pairs.append((idx[:, :-1].ravel(), idx[:, 1:].ravel()))
    ks.append(np.full((nx - 1) * ny, cfg.stiffness_axial))
    pairs.append((idx[:-1, :].ravel(), idx[1:, :].ravel()))
    ks.append(np.full(nx * (ny - 1), cfg.stiffness_axial))
    # diagonals: down-right and down-left
    pairs.append((idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()))
    ks.append(np.full((nx - 1) * (ny - 1), cfg.stiffness_diag))
    pairs.append((idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()))
    ks.append(np.full((nx - 1) * (ny - 1), cfg.stiffness_diag))
    bi = np.concatenate([p[0] for p in pairs])
    bj = np.concatenate([p[1] for p in pairs])
    return bi, bj, np.concatenate(ks)


def _assemble_stiffness(n_nodes, bi, bj, k, d) -> sp.csr_matrix:
    """Global K such that spring force on the assembled system is -K u."""
    rows, cols, vals = [], [], []
    for a in range(2):
        for b in range(2):
            block = k * d[:, a] * d[:, b]
            rows += [2 * bi + a, 2 * bj + a, 2 * bi + a, 2 * bj + a]
            cols += [2 * bi + b, 2 * bj + b, 2 * bj + b, 2 * bi + b]
            vals += [block, block, -block, -block]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n_nodes, 2 * n_nodes),
    )
    return K.tocsr()


def build_lattice(cfg: LatticeConfig, crack: CrackSpec) -> LatticeState:
    pos = cfg.node_positions()
    bi, bj, k_nom = _bond_table(cfg)
    delta = pos[bj] - pos[bi]
    length = np.linalg.norm(delta, axis=1)
    d = delta / length[:, None]

    damaged = np.zeros(bi.size, dtype=bool)
    if crack.present:
        dist = segment_segment_distance(pos[bi], pos[bj], np.array(crack.p0), np.array(crack.p1))
        damaged = dist <= crack.width / 2.0
        if not damaged.any():
            raise CrackOutsidePlateError(
                f"present crack {crack.p0}->{crack.p1} (width {crack.width}) "
                "intersects no lattice bond"
            )
    k_eff = np.where(damaged, k_nom * cfg.crack_stiffness_factor, k_nom)

    K = _assemble_stiffness(cfg.n_nodes, bi, bj, k_eff, d)
    return LatticeState(
        cfg=cfg, crack=crack, positions=pos,
        bond_i=bi, bond_j=bj, bond_k=k_eff, bond_k_nominal=k_nom,
        bond_dir=d, damaged=damaged, stiffness=K,
    )


def rasterize_mask(crack: CrackSpec, h: int, w: int) -> np.ndarray:
    """Binary (h, w) grid; pixel = 1 iff the crack region touches its cell.

    Row r spans y in [r/h, (r+1)/h), column c spans x in [c/w, (c+1)/w).
    """
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be >= 1")
    if not crack.present:
        return np.zeros((h, w), dtype=np.uint8)
    c = np.arange(w)
    r = np.arange(h)
    cc, rr = np.meshgrid(c, r)
    d = segment_rect_distance(
        np.array(crack.p0), np.array(crack.p1),
        cc / w, rr / h, (cc + 1) / w, (rr + 1) / h,
    )
    return (d <= crack.width / 2.0).astype(np.uint8)


def crack_reach_step(state: LatticeState, src: SourceSpec) -> int:
    """Steps before which cracked and intact runs are provably identical.

    Explicit integration moves information at most one bond hop per step, so
    the runs cannot differ until the wavefront has had time to reach a damaged
    bond: the hop distance (Chebyshev, since diagonals exist) from the source
    node to the nearest damaged-bond endpoint.
    """
    cfg = state.cfg
    src_node = cfg.nearest_node(src.position)
    sx, sy = src_node % cfg.grid_nx, src_node // cfg.grid_nx
    nodes = np.unique(np.concatenate([state.bond_i[state.damaged], state.bond_j[state.damaged]]))
    if nodes.size == 0:
        return state.cfg.n_steps
    nxs = nodes % cfg.grid_nx
    nys = nodes // cfg.grid_nx
    return int(np.min(np.maximum(np.abs(nxs - sx), np.abs(nys - sy))))


def simulate(
    state: LatticeState,
    src: SourceSpec,
    cfg: Optional[LatticeConfig] = None,
    sensor_indices: Optional[np.ndarray] = None,
    record_energy: bool = False,
) -> WaveSample:
    """Integrate the lattice for cfg.n_steps and record sensor displacements.

    The recorded field row k holds the displacements after step k+1, i.e. at
    time (k+1) * dt.
    """
    cfg = cfg if cfg is not None else state.cfg
    if sensor_indices is None:
        sensor_indices = cfg.sensor_indices()
    sensor_indices = np.asarray(sensor_indices)
    if sensor_indices.max() >= cfg.n_nodes:
        raise ValueError("sensor index outside the lattice")

    K = state.stiffness
    m = cfg.node_mass
    n_dof = 2 * cfg.n_nodes
    u = np.zeros(n_dof)
    v = np.zeros(n_dof)

    src_node = cfg.nearest_node(src.position)
    src_dof = 2 * src_node + (0 if src.axis == "x" else 1)
    # Force sampled at full-step times t_k = k * dt.
    s = src.time_series(np.arange(cfg.n_steps + 1) * cfg.dt)

    field = np.empty((cfg.n_steps, sensor_indices.size, 2))
    energy = np.empty(cfg.n_steps) if record_energy else None
    sdof = np.stack([2 * sensor_indices, 2 * sensor_indices + 1], axis=1)

    f = -(K @ u)
    f[src_dof] += s[0]
    a = f / m
    if cfg.damping != 0.0:
        a -= cfg.damping * v
    dt = cfg.dt
    for step in range(cfg.n_steps):
        v_half = v + 0.5 * dt * a
        u = u + dt * v_half
        f = -(K @ u)
        f[src_dof] += s[step + 1]
        a = f / m
        if cfg.damping != 0.0:
            a -= cfg.damping * v_half
        v = v_half + 0.5 * dt * a
        field[step] = u[sdof]
        if record_energy:
            energy[step] = 0.5 * m * float(v @ v) + 0.5 * float(u @ (K @ u))
        if step % 50 == 49 or step == cfg.n_steps - 1:
            peak = float(np.max(np.abs(u)))
            if not np.isfinite(peak) or peak > 1e6:
                raise SimulationBlowupError(step, peak)

    mask = rasterize_mask(state.crack, cfg.label_h, cfg.label_w)
    return WaveSample(
        field=field, mask=mask, crack=state.crack,
        sensor_layout=sensor_indices, energy=energy,
    )


@dataclass
class CrackSampler:
    """Random crack generator for dataset synthesis."""

    length_range: tuple[float, float] = (0.15, 0.45)
    width_range: tuple[float, float] = (0.015, 0.03)
    center_margin: float = 0.18
    present_prob: float = 1.0

    def sample(self, rng: np.random.Generator) -> CrackSpec:
        if rng.random() >= self.present_prob:
            return CrackSpec.NONE
        length = rng.uniform(*self.length_range)
        width = rng.uniform(*self.width_range)
        angle = rng.uniform(0.0, np.pi)
        m = self.center_margin
        cx = rng.uniform(m, 1.0 - m)
        cy = rng.uniform(m, 1.0 - m)
        dx = 0.5 * length * np.cos(angle)
        dy = 0.5 * length * np.sin(angle)
        lo, hi = 0.02, 0.98
        p0 = (float(np.clip(cx - dx, lo, hi)), float(np.clip(cy - dy, lo, hi)))
        p1 = (float(np.clip(cx + dx, lo, hi)), float(np.clip(cy + dy, lo, hi)))
        return CrackSpec(p0=p0, p1=p1, width=float(width))


def synthesize_sample(
    cfg: LatticeConfig,
    sampler: CrackSampler,
    sample_seed: int,
    source: Optional[SourceSpec] = None,
) -> WaveSample:
    """Sample a crack, run the simulation, and normalize the field to [-1, 1]."""
    rng = make_rng(sample_seed)
    source = source if source is not None else SourceSpec()
    for _ in range(100):
        crack = sampler.sample(rng)
        try:
            state = build_lattice(cfg, crack)
        except CrackOutsidePlateError:
            continue
        break
    else:
        raise RuntimeError("crack sampler failed to produce a rasterizable crack")
    sample = simulate(state, source, cfg)
    peak = float(np.max(np.abs(sample.field)))
    if peak > 0.0:
        sample.field = sample.field / peak
    return sample
