"""Master-equation evolution and two-time correlation grids.

The density matrix is vectorized (column stacking) and marched segment
by segment over a uniform time grid with an adaptive embedded RK pair;
the integrator sub-steps inside a segment whenever accuracy demands it,
so the storage grid only has to resolve the correlation structure, not
the stiffest rate.  Two-time grids come from the regression theorem:
seed M(t_i, t_i) = C rho(t_i) A on the diagonal, drag every seeded row
forward with the same one-segment propagators, and read off
Tr{B M(t_i, t_j)} for j >= i.  One propagator per segment serves the
whole batch of rows, which keeps the n x n grid affordable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CalibrationError, GridError, IntegrationError, ModelError
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, integrate_to, propagator
from .model import (
    Operator,
    SourceSystem,
    drive_fwhm,
    liouvillian_parts,
    scale_drive,
)

# default sampling rules for auto-built windows
DT_MAX = 0.05
MIN_POINTS = 401
DECAY_TAIL = 14.0
PULSE_PAD = 5.0

TRACE_TOL = 1e-8
HERM_TOL = 1e-10
EIG_TOL = 1e-8


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n points on [t_start, t_end]."""

    t_start: float
    t_end: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise GridError("grid endpoints must be finite")
        if self.t_end <= self.t_start:
            raise GridError(f"need t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if self.n < 16:
            raise GridError(f"need at least 16 grid points, got {self.n}")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / (self.n - 1)

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(self.t_start, self.t_end, self.n)
        t.flags.writeable = False
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights; w @ f integrates f over the grid."""
        w = np.full(self.n, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        w.flags.writeable = False
        return w

    def refined(self) -> "TimeGrid":
        """Same window with the spacing halved (shares every old point)."""
        return TimeGrid(self.t_start, self.t_end, 2 * self.n - 1)


def pulse_window(fwhm: float, gamma_emission: float = 1.0, *,
                 dt_max: float = DT_MAX, min_points: int = MIN_POINTS,
                 tail: float = DECAY_TAIL) -> tuple[float, TimeGrid]:
    """Standard simulation window for a gaussian pulse of the given width.

    Returns (pulse center, grid).  The pulse is centered late enough that
    its leading tail is negligible at t=0, and the window runs long enough
    past the pulse for the emitter to decay back down (residual excitation
    below ~1e-6 for tail=14 lifetimes).
    """
    if fwhm <= 0.0 or gamma_emission <= 0.0:
        raise GridError("fwhm and gamma_emission must be positive")
    sigma = fwhm / (2.0 * np.sqrt(np.log(2.0)))
    center = max(PULSE_PAD * sigma, 1.0 / gamma_emission)
    t_end = center + PULSE_PAD * sigma + tail / gamma_emission
    dt = min(dt_max / gamma_emission, sigma / 4.0)
    n = max(min_points, int(np.ceil(t_end / dt)) + 1)
    return center, TimeGrid(0.0, t_end, n)


def refine_for_rates(grid: TimeGrid, system: SourceSystem,
                     cap: float = 0.5) -> TimeGrid:
    """Shrink dt until dt * (fastest system rate) <= cap.

    Used by the Monte Carlo layer, where segment boundaries limit how
    precisely a jump can be located between stored points.
    """
    rate = system.max_rate()
    if grid.dt * rate <= cap:
        return grid
    n = int(np.ceil((grid.t_end - grid.t_start) * rate / cap)) + 1
    return TimeGrid(grid.t_start, grid.t_end, max(n, grid.n))


@dataclass(frozen=True)
class StateTrajectory:
    """Density matrices rho(t_i) over a TimeGrid."""

    grid: TimeGrid
    states: np.ndarray  # (n, dim, dim) complex

    def __post_init__(self):
        s = np.asarray(self.states, dtype=complex)
        if s.ndim != 3 or s.shape[0] != self.grid.n or s.shape[1] != s.shape[2]:
            raise GridError(f"states must be (n, d, d) with n={self.grid.n}, "
                            f"got {s.shape}")
        object.__setattr__(self, "states", s)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def expect(self, op: Operator | np.ndarray) -> np.ndarray:
        """Tr(op rho(t_i)) for every grid point."""
        m = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
        if m.shape != (self.dim, self.dim):
            raise ModelError(f"operator shape {m.shape} does not match dim {self.dim}")
        return np.einsum("ab,nba->n", m, self.states)

    def validate(self, trace_tol: float = TRACE_TOL, herm_tol: float = HERM_TOL,
                 eig_tol: float = EIG_TOL) -> None:
        """Raise IntegrationError if any state stopped being physical."""
        tr = np.einsum("naa->n", self.states)
        defect = np.abs(tr - 1.0).max()
        if defect > trace_tol:
            raise IntegrationError(f"trace drifted by {defect:.3e} (tol {trace_tol:g})")
        herm = np.abs(self.states - self.states.conj().transpose(0, 2, 1)).max()
        if herm > herm_tol:
            raise IntegrationError(f"hermiticity defect {herm:.3e} (tol {herm_tol:g})")
        sym = 0.5 * (self.states + self.states.conj().transpose(0, 2, 1))
        lam_min = np.linalg.eigvalsh(sym).min()
        if lam_min < -eig_tol:
            raise IntegrationError(f"negative population {lam_min:.3e} (tol {eig_tol:g})")


def _vec(rho: np.ndarray) -> np.ndarray:
    # column stacking, consistent with the superoperator convention
    return rho.reshape(-1, order="F")


def _unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim, order="F")


def evolve(system: SourceSystem, grid: TimeGrid,
           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
           validate: bool = True) -> StateTrajectory:
    """Integrate the master equation from rho0 across the grid.

    Each grid segment is integrated with adaptive sub-steps, so accuracy
    does not depend on the grid spacing; dt only sets where states are
    stored.  Keep dt small enough to resolve the drive for quadrature.
    """
    parts = liouvillian_parts(system)
    rhs = lambda t, y: parts.at(t) @ y
    times = grid.times
    dt = grid.dt
    d = system.dim
    states = np.empty((grid.n, d, d), dtype=complex)
    y = _vec(system.rho0.astype(complex))
    states[0] = system.rho0
    for j in range(grid.n - 1):
        y = integrate_to(rhs, times[j], times[j + 1], y,
                         rtol=rtol, atol=atol, first_step=dt)
        states[j + 1] = _unvec(y, d)
    traj = StateTrajectory(grid=grid, states=states)
    if validate:
        traj.validate()
    return traj


def expectation(op: Operator | np.ndarray, rho: np.ndarray) -> complex:
    """Tr(op rho) for a single density matrix."""
    m = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if m.shape != rho.shape or m.ndim != 2:
        raise ModelError(f"shape mismatch: op {m.shape} vs rho {rho.shape}")
    return complex(np.trace(m @ rho))


def emission_flux(system: SourceSystem, traj: StateTrajectory) -> np.ndarray:
    """Photon flux gamma <a^dag a>(t) of the emission channel, real."""
    a = system.emission_channel.operator.matrix
    n_op = a.conj().T @ a
    return system.emission_rate * traj.expect(n_op).real


def mean_photon_number(system: SourceSystem, traj: StateTrajectory) -> float:
    """Integrated emission flux: photons emitted over the window."""
    return float(traj.grid.weights @ emission_flux(system, traj))


def _auto_calibration_grid(system: SourceSystem) -> TimeGrid:
    fwhm = drive_fwhm(system)
    sigma = fwhm / (2.0 * np.sqrt(np.log(2.0)))
    pulse = system.pulse if system.pulse is not None else None
    if pulse is not None and pulse.kind == "gaussian":
        center = pulse.center
    else:
        for ch in system.channels:
            if ch.envelope is not None and ch.envelope.kind == "gaussian":
                center = ch.envelope.center
                break
        else:
            raise CalibrationError("cannot build a grid for a sampled drive; "
                                   "pass grid= explicitly")
    gamma = system.emission_rate
    t_end = center + PULSE_PAD * sigma + DECAY_TAIL / gamma
    dt = min(DT_MAX / gamma, sigma / 4.0)
    n = max(MIN_POINTS, int(np.ceil(t_end / dt)) + 1)
    return TimeGrid(0.0, t_end, n)


def calibrate_amplitude(system: SourceSystem, target: float = 1.0,
                        bracket: tuple[float, float] | None = None,
                        grid: TimeGrid | None = None, tol: float = 1e-3,
                        rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                        ) -> float:
    """Smallest drive amplitude whose mean emitted photon number hits target.

    Bisects |<M>(amplitude) - target| <= tol at fixed pulse shape.  Without
    an explicit bracket the amplitude axis is scanned geometrically from a
    quarter of the pi-pulse heuristic, which lands below the first Rabi
    node; saturating sources (mean photon number bounded by the target) are
    accepted when they come within tol of it.
    """
    if target < 0.0:
        raise CalibrationError(f"target must be non-negative, got {target}")
    if grid is None:
        grid = _auto_calibration_grid(system)

    def measure(amp: float) -> float:
        traj = evolve(scale_drive(system, amp), grid,
                      rtol=rtol, atol=atol, validate=False)
        return mean_photon_number(scale_drive(system, amp), traj)

    if bracket is not None:
        lo, hi = float(bracket[0]), float(bracket[1])
        if not 0.0 <= lo < hi:
            raise CalibrationError(f"bad bracket ({lo}, {hi})")
        f_lo, f_hi = measure(lo), measure(hi)
    else:
        # pi-pulse area heuristic locates the scale of the first crossing
        unit_area = _drive_unit_area(system)
        amp = float(np.pi / unit_area) * 0.25
        f = measure(amp)
        shrink = 0
        while f > target and shrink < 40:
            amp *= 0.5
            f = measure(amp)
            shrink += 1
        if f > target:
            raise CalibrationError("mean photon number exceeds target at "
                                   "vanishing drive")
        if target > 0.0 and f >= target - tol:
            # heuristic start already saturated inside the tolerance band;
            # the knee lies below it, so bracket down to zero
            lo, f_lo = 0.0, measure(0.0)
            hi, f_hi = amp, f
        else:
            lo, f_lo = amp, f
            best_amp, best_f = amp, f
            drops = 0
            found = False
            for _ in range(220):
                prev_f = f
                amp *= 1.07
                f = measure(amp)
                if f >= target:
                    hi, f_hi = amp, f
                    found = True
                    break
                if f >= target - tol and f - prev_f <= 0.25 * tol:
                    # saturating drive: the climb flattened inside the band
                    hi, f_hi = amp, f
                    lo, f_lo = 0.0, measure(0.0)
                    found = True
                    break
                lo, f_lo = amp, f
                if f > best_f:
                    best_amp, best_f = amp, f
                drops = drops + 1 if f < prev_f else 0
                if drops >= 2:
                    # past the first Rabi node with no crossing in sight
                    break
            if not found:
                if target - best_f <= tol:
                    hi, f_hi = best_amp, best_f
                    lo = best_amp / 1.07
                    f_lo = measure(lo)
                else:
                    raise CalibrationError(
                        f"no amplitude reaches target={target:g}; best mean "
                        f"photon number {best_f:.6g} at amplitude {best_amp:.6g}")

    if abs(f_lo - target) <= tol:
        return lo  # smallest root, covers target 0 at zero drive
    if f_lo > target:
        raise CalibrationError(f"bracket bottom already above target "
                               f"({f_lo:.6g} > {target:g})")
    if f_hi < target - tol:
        raise CalibrationError(f"bracket does not straddle target: "
                               f"[{f_lo:.6g}, {f_hi:.6g}] vs {target:g}")
    # crossing level; pulled inside the bracket for saturating sources
    level = target if f_hi >= target else 0.5 * (max(target - tol, f_lo) + f_hi)

    f_mid = f_hi
    mid = hi
    for _ in range(200):
        if hi - lo <= 1e-12 + 1e-9 * hi:
            break
        mid = 0.5 * (lo + hi)
        f_mid = measure(mid)
        if abs(f_mid - target) <= 0.25 * tol:
            return mid
        if f_mid < level:
            lo = mid
        else:
            hi = mid
    if abs(f_mid - target) <= tol:
        return mid
    raise CalibrationError(f"bisection stalled; best amplitude {mid:.6g} gives "
                           f"mean photon number {f_mid:.6g} (target {target:g})")


def _drive_unit_area(system: SourceSystem) -> float:
    if system.pulse is not None:
        return system.pulse.with_amplitude(1.0).area()
    for ch in system.channels:
        if ch.envelope is not None and ch.envelope_is_amplitude:
            return ch.envelope.with_amplitude(1.0).area()
    raise CalibrationError("system has no drive to calibrate")


@dataclass(frozen=True)
class CorrelationGrid:
    """Two-time correlation values on the (t, t') product of a TimeGrid.

    kind "g1" declares conjugate symmetry across the diagonal, "g2"
    declares mirror symmetry with non-negative real values.
    """

    grid: TimeGrid
    values: np.ndarray  # (n, n) complex
    kind: str

    def __post_init__(self):
        if self.kind not in ("g1", "g2"):
            raise GridError(f"kind must be 'g1' or 'g2', got {self.kind!r}")
        v = np.asarray(self.values, dtype=complex)
        n = self.grid.n
        if v.shape != (n, n):
            raise GridError(f"values must be {n}x{n}, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.grid.n

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.values).copy()

    def symmetry_defect(self) -> float:
        """Largest deviation from the declared cross-diagonal symmetry."""
        worst = 0.0
        step = 256
        for i0 in range(0, self.n, step):
            i1 = min(i0 + step, self.n)
            block = self.values[i0:i1, :]
            mirror = self.values[:, i0:i1].T
            other = mirror.conj() if self.kind == "g1" else mirror
            worst = max(worst, float(np.abs(block - other).max()))
        return worst

    def validate(self, tol: float = 1e-8) -> None:
        """Check the stored grid against its declared kind."""
        scale = max(float(np.abs(self.values).max()), 1e-300)
        defect = self.symmetry_defect()
        if defect > tol * max(scale, 1.0):
            raise GridError(f"{self.kind} symmetry defect {defect:.3e}")
        if self.kind == "g2":
            if float(np.abs(self.values.imag).max()) > tol * scale:
                raise GridError("g2 grid has an imaginary part")
            if float(self.values.real.min()) < -tol * scale:
                raise GridError("g2 grid has negative values")


def two_time_grid(system: SourceSystem, grid: TimeGrid,
                  a_op: Operator, b_op: Operator, c_op: Operator,
                  kind: str = "g1",
                  rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                  ) -> CorrelationGrid:
    """Regression-theorem grid of <A(t) B(t') C(t)> for t' >= t.

    Row i is seeded with C rho(t_i) A at t' = t_i and propagated forward
    under the full generator; entries below the diagonal are completed by
    the symmetry the declared kind implies.  One propagator per segment
    advances all live rows at once.
    """
    d = system.dim
    if not (a_op.dim == b_op.dim == c_op.dim == d):
        raise ModelError("correlation operators must match the system dimension")
    parts = liouvillian_parts(system)
    times = grid.times
    dt = grid.dt
    n = grid.n
    d2 = d * d

    a, b, c = a_op.matrix, b_op.matrix, c_op.matrix
    # Tr(B M) = b_row @ vec(M) with column-stacked vec
    b_row = b.reshape(-1, order="C")

    values = np.empty((n, n), dtype=complex)
    live = np.empty((d2, n), dtype=complex, order="F")
    rho = system.rho0.astype(complex)
    rho_v = _vec(rho)

    for j in range(n):
        seed = c @ _unvec(rho_v, d) @ a
        live[:, j] = _vec(seed)
        values[j, j] = b_row @ live[:, j]
        if j == n - 1:
            break
        u = propagator(parts.at, times[j], times[j + 1], d2,
                       rtol=rtol, atol=atol, first_step=dt)
        live[:, : j + 1] = u @ live[:, : j + 1]
        rho_v = u @ rho_v
        values[: j + 1, j + 1] = b_row @ live[:, : j + 1]

    if kind == "g1":
        for i in range(1, n):
            values[i, :i] = values[:i, i].conj()
    else:
        for i in range(1, n):
            values[i, :i] = values[:i, i]
    return CorrelationGrid(grid=grid, values=values, kind=kind)


def g1_grid(system: SourceSystem, grid: TimeGrid,
            rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
            ) -> CorrelationGrid:
    """First-order field correlation gamma <a^dag(t) a(t')> (flux units)."""
    a = system.emission_channel.operator
    ident = Operator(np.eye(system.dim))
    corr = two_time_grid(system, grid, a.dag(), a, ident, kind="g1",
                         rtol=rtol, atol=atol)
    return CorrelationGrid(grid=grid, values=system.emission_rate * corr.values,
                           kind="g1")


def g2_grid(system: SourceSystem, grid: TimeGrid,
            rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
            ) -> CorrelationGrid:
    """Time-ordered intensity correlation gamma^2 <a^dag(t) n(t') a(t)>."""
    a = system.emission_channel.operator
    n_op = Operator(a.matrix.conj().T @ a.matrix)
    corr = two_time_grid(system, grid, a.dag(), n_op, a, kind="g2",
                         rtol=rtol, atol=atol)
    scale = system.emission_rate ** 2
    return CorrelationGrid(grid=grid, values=scale * corr.values, kind="g2")


# ---------------------------------------------------------------------------
# grid export / import

_MAGIC = b"SPSGRID1"
_KIND_CODE = {"g1": 1, "g2": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_grid_binary(corr: CorrelationGrid, path) -> None:
    """Compact dump: 8-byte magic, little-endian header, raw complex128.

    Header after the magic: uint32 kind code (1=g1, 2=g2), uint32 zero,
    uint64 n, float64 t_start, t_end, dt; then n*n row-major complex
    values (real, imag interleaved doubles).
    """
    g = corr.grid
    header = struct.pack("<IIQddd", _KIND_CODE[corr.kind], 0, g.n,
                         g.t_start, g.t_end, g.dt)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header)
        fh.write(np.ascontiguousarray(corr.values).astype("<c16").tobytes())


def load_grid_binary(path) -> CorrelationGrid:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise GridError(f"not a correlation grid dump: magic {magic!r}")
        kind_code, _, n, t_start, t_end, dt = struct.unpack("<IIQddd", fh.read(40))
        if kind_code not in _CODE_KIND:
            raise GridError(f"unknown grid kind code {kind_code}")
        raw = fh.read(16 * n * n)
    if len(raw) != 16 * n * n:
        raise GridError("truncated grid dump")
    values = np.frombuffer(raw, dtype="<c16").reshape(n, n).astype(complex)
    grid = TimeGrid(t_start, t_end, int(n))
    if abs(grid.dt - dt) > 1e-12 * max(abs(dt), 1.0):
        raise GridError("header dt is inconsistent with endpoints")
    corr = CorrelationGrid(grid=grid, values=values, kind=_CODE_KIND[kind_code])
    corr.validate()
    return corr


def save_grid_csv(corr: CorrelationGrid, path) -> None:
    """Matrix CSV: one row per t, two columns (re, im) per t' entry."""
    g = corr.grid
    n = g.n
    out = np.empty((n, 2 * n))
    out[:, 0::2] = corr.values.real
    out[:, 1::2] = corr.values.imag
    header = (f"kind={corr.kind} n={n} t_start={float(g.t_start)!r} "
              f"t_end={float(g.t_end)!r} dt={float(g.dt)!r}")
    np.savetxt(path, out, delimiter=",", fmt="%.17g", header=header)


def load_grid_csv(path) -> CorrelationGrid:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise GridError("missing grid header line")
    meta = dict(item.split("=", 1) for item in first[1:].split())
    try:
        kind = meta["kind"]
        n = int(meta["n"])
        grid = TimeGrid(float(meta["t_start"]), float(meta["t_end"]), n)
    except (KeyError, ValueError) as exc:
        raise GridError(f"bad grid header: {first.strip()!r}") from exc
    flat = np.loadtxt(path, delimiter=",", comments="#")
    flat = np.atleast_2d(flat)
    if flat.shape != (n, 2 * n):
        raise GridError(f"expected {n}x{2 * n} numbers, got {flat.shape}")
    values = flat[:, 0::2] + 1j * flat[:, 1::2]
    corr = CorrelationGrid(grid=grid, values=values, kind=kind)
    corr.validate(tol=1e-6)  # text round-trip loses a little precision
    return corr
