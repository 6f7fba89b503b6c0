"""Model layer: pulse envelopes, operators, collapse channels, source systems.

Everything here is a plain immutable value.  Time units are set by the
emission lifetime (gamma = 1 by convention in the builders), hbar = 1, and
drives are written in the rotating frame of the laser so envelopes are real.

The three prototype emitters are built by :func:`two_level_system`,
:func:`ladder_system` and :func:`lambda_system`.  Their Lindblad generator
is assembled by :func:`liouvillian` using column-stacking vectorization,
vec(A rho B) = (B^T kron A) vec(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError

# FWHM here always refers to the squared envelope (the pulse "intensity"):
# Omega(t0 +- fwhm/2)^2 = Omega(t0)^2 / 2, hence sigma = fwhm / (2 sqrt(ln 2)).
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(math.log(2.0)))

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PulseEnvelope:
    """Real drive envelope Omega(t), either Gaussian or sampled.

    Gaussian: value(t) = amplitude * exp(-(t - center)^2 / (2 sigma^2)) with
    sigma = fwhm * FWHM_TO_SIGMA.  Sampled: linear interpolation through
    (times, values), zero outside the sampled range.
    """

    kind: str = "gaussian"
    amplitude: float = 0.0
    center: float = 0.0
    fwhm: float = 1.0
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.fwhm <= 0.0:
                raise ModelError(f"pulse fwhm must be positive, got {self.fwhm}")
        elif self.kind == "sampled":
            if self.times is None or self.values is None:
                raise ModelError("sampled envelope needs times and values")
            t = np.array(self.times, dtype=float)
            v = np.array(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2:
                raise ModelError("sampled envelope needs matching 1-d arrays, length >= 2")
            if np.any(np.diff(t) <= 0):
                raise ModelError("sampled envelope times must be strictly increasing")
            t.flags.writeable = False
            v.flags.writeable = False
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", v)
        else:
            raise ModelError(f"unknown envelope kind {self.kind!r}")

    @property
    def sigma(self) -> float:
        if self.kind != "gaussian":
            raise ModelError("sigma is defined for gaussian envelopes only")
        return self.fwhm * FWHM_TO_SIGMA

    def value(self, t):
        """Envelope at time t (scalar or array)."""
        if self.kind == "gaussian":
            u = (np.asarray(t, dtype=float) - self.center) / self.sigma
            return self.amplitude * np.exp(-0.5 * u * u)
        return np.interp(np.asarray(t, dtype=float), self.times, self.values,
                         left=0.0, right=0.0)

    def area(self) -> float:
        """Pulse area integral Omega(t) dt (analytic for gaussian)."""
        if self.kind == "gaussian":
            return self.amplitude * self.sigma * math.sqrt(2.0 * math.pi)
        return float(np.trapezoid(self.values, self.times))

    def with_amplitude(self, amplitude: float) -> "PulseEnvelope":
        """Same envelope shape rescaled to a new peak amplitude."""
        if self.kind == "gaussian":
            return replace(self, amplitude=amplitude)
        peak = float(np.max(np.abs(self.values)))
        if peak == 0.0:
            raise ModelError("cannot rescale an identically zero sampled envelope")
        return replace(self, values=self.values * (amplitude / peak))


def gaussian_pulse(amplitude: float, center: float, fwhm: float) -> PulseEnvelope:
    return PulseEnvelope(kind="gaussian", amplitude=amplitude, center=center, fwhm=fwhm)


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex operator on the truncated emitter Hilbert space."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelError(f"operator matrix must be square, got shape {m.shape}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T)

    def hermitian_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermitian_defect() <= tol


def transition(dim: int, lower: int, upper: int) -> Operator:
    """Lowering operator |lower><upper| on a dim-level system."""
    if not (0 <= lower < dim and 0 <= upper < dim):
        raise ModelError(f"transition indices ({lower},{upper}) out of range for dim {dim}")
    m = np.zeros((dim, dim), dtype=complex)
    m[lower, upper] = 1.0
    return Operator(m)


def projector(dim: int, level: int) -> Operator:
    if not 0 <= level < dim:
        raise ModelError(f"projector level {level} out of range for dim {dim}")
    m = np.zeros((dim, dim), dtype=complex)
    m[level, level] = 1.0
    return Operator(m)


@dataclass(frozen=True, eq=False)
class CollapseChannel:
    """One Lindblad channel C_n = sqrt(rate_n(t)) * operator.

    The rate is either the constant ``rate`` or derived from ``envelope``:
    with ``envelope_is_amplitude`` (the default, used by the incoherent
    ladder pump C = Omega(t) sigma_23) the rate is envelope(t)^2; otherwise
    the envelope is read directly as a rate profile.
    Exactly one channel per system carries ``is_emission=True``: its clicks
    are the simulated photodetections.
    """

    operator: Operator
    rate: float | None = None
    envelope: PulseEnvelope | None = None
    envelope_is_amplitude: bool = True
    is_emission: bool = False

    def __post_init__(self):
        if (self.rate is None) == (self.envelope is None):
            raise ModelError("channel needs exactly one of rate or envelope")
        if self.rate is not None and self.rate < 0.0:
            raise ModelError(f"channel rate must be nonnegative, got {self.rate}")

    @property
    def is_constant(self) -> bool:
        return self.envelope is None

    def rate_at(self, t):
        if self.envelope is None:
            return self.rate if np.isscalar(t) else np.full(np.shape(t), self.rate)
        v = self.envelope.value(t)
        return v * v if self.envelope_is_amplitude else v


@dataclass(frozen=True, eq=False)
class SourceSystem:
    """A pulsed emitter: drift Hamiltonian, drive, collapse channels, rho0.

    H(t) = h_static + (pulse(t)/2) * h_drive in the rotating frame of the
    drive; every operator acts on the same dim-level space.
    """

    dim: int
    h_static: Operator | None
    h_drive: Operator | None
    pulse: PulseEnvelope | None
    channels: tuple[CollapseChannel, ...]
    rho0: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.dim < 2:
            raise ModelError(f"system dimension must be >= 2, got {self.dim}")
        for name, op in (("h_static", self.h_static), ("h_drive", self.h_drive)):
            if op is not None:
                if op.dim != self.dim:
                    raise ModelError(f"{name} has dim {op.dim}, system has {self.dim}")
                if not op.is_hermitian():
                    raise ModelError(f"{name} is not Hermitian within {HERMITIAN_TOL}")
        if (self.h_drive is None) != (self.pulse is None):
            raise ModelError("h_drive and pulse must be supplied together")
        if not self.channels:
            raise ModelError("system needs at least one collapse channel")
        for ch in self.channels:
            if ch.operator.dim != self.dim:
                raise ModelError("collapse operator dimension mismatch")
        n_emission = sum(ch.is_emission for ch in self.channels)
        if n_emission != 1:
            raise ModelError(f"exactly one emission channel required, got {n_emission}")
        rho = np.array(self.rho0, dtype=complex)
        if rho.shape != (self.dim, self.dim):
            raise ModelError(f"rho0 must be {self.dim}x{self.dim}")
        if np.abs(rho - rho.conj().T).max() > HERMITIAN_TOL:
            raise ModelError("rho0 is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > HERMITIAN_TOL or abs(np.trace(rho).imag) > HERMITIAN_TOL:
            raise ModelError("rho0 must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise ModelError("rho0 must be positive semidefinite")
        rho.flags.writeable = False
        object.__setattr__(self, "rho0", rho)

    @property
    def emission_channel(self) -> CollapseChannel:
        return next(ch for ch in self.channels if ch.is_emission)

    @property
    def emission_rate(self) -> float:
        """Constant rate of the emission channel (flux normalization)."""
        ch = self.emission_channel
        if not ch.is_constant:
            raise ModelError("emission channel must have a constant rate")
        return float(ch.rate)

    def hamiltonian(self, t) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        if self.h_static is not None:
            h = h + self.h_static.matrix
        if self.h_drive is not None:
            h = h + (0.5 * self.pulse.value(t)) * self.h_drive.matrix
        return h

    def max_rate(self) -> float:
        """Fastest rate in the model: peak drive, detunings, total decay."""
        rates = [sum(ch.rate for ch in self.channels if ch.is_constant)]
        if self.pulse is not None:
            rates.append(abs(self.pulse.amplitude) if self.pulse.kind == "gaussian"
                         else float(np.max(np.abs(self.pulse.values))))
        for ch in self.channels:
            if ch.envelope is not None:
                peak = (abs(ch.envelope.amplitude) if ch.envelope.kind == "gaussian"
                        else float(np.max(np.abs(ch.envelope.values))))
                rates.append(peak * peak if ch.envelope_is_amplitude else peak)
        if self.h_static is not None:
            rates.append(float(np.abs(self.h_static.matrix).max()))
        return max(rates)


def scale_drive(system: SourceSystem, amplitude: float) -> SourceSystem:
    """New system with the drive envelope(s) rescaled to a peak amplitude.

    Rescales the coherent-drive pulse and any channel envelope that encodes
    a drive amplitude (the ladder pump); direct rate profiles are left alone.
    """
    pulse = system.pulse.with_amplitude(amplitude) if system.pulse is not None else None
    channels = tuple(
        replace(ch, envelope=ch.envelope.with_amplitude(amplitude))
        if (ch.envelope is not None and ch.envelope_is_amplitude) else ch
        for ch in system.channels
    )
    return replace(system, pulse=pulse, channels=channels)


def drive_fwhm(system: SourceSystem) -> float:
    """FWHM of the system's drive envelope (coherent pulse or pump)."""
    if system.pulse is not None:
        return system.pulse.fwhm
    for ch in system.channels:
        if ch.envelope is not None and ch.envelope.kind == "gaussian":
            return ch.envelope.fwhm
    raise ModelError("system has no drive envelope")


# ---------------------------------------------------------------------------
# prototype sources


def two_level_system(gamma: float = 1.0, detuning: float = 0.0,
                     pulse: PulseEnvelope | None = None) -> SourceSystem:
    """Driven two-level emitter, levels (|g>, |e>), emission on sigma = |g><e|.

    Rotating frame of the drive: H = detuning |e><e| + (Omega(t)/2)(sigma + sigma^dag).
    """
    if gamma <= 0.0:
        raise ModelError(f"emission rate gamma must be positive, got {gamma}")
    sm = transition(2, 0, 1)
    h_static = Operator(detuning * projector(2, 1).matrix) if detuning != 0.0 else None
    h_drive = Operator(sm.matrix + sm.dag().matrix) if pulse is not None else None
    rho0 = projector(2, 0).matrix
    return SourceSystem(
        dim=2, h_static=h_static, h_drive=h_drive, pulse=pulse,
        channels=(CollapseChannel(operator=sm, rate=gamma, is_emission=True),),
        rho0=rho0, label="two_level",
    )


def ladder_system(gamma: float = 1.0, pump: PulseEnvelope | None = None) -> SourceSystem:
    """Incoherently pumped three-level cascade |3> -> |2> -> |1>.

    Levels are indexed (|1>, |2>, |3>) = (0, 1, 2), starting in |3>.  The
    pump is a collapse channel C = Omega(t) sigma_23 (rate Omega^2), the
    emission channel is sqrt(gamma) sigma_12.
    """
    if gamma <= 0.0:
        raise ModelError(f"emission rate gamma must be positive, got {gamma}")
    if pump is None:
        raise ModelError("ladder system needs a pump envelope")
    sigma_23 = transition(3, 1, 2)
    sigma_12 = transition(3, 0, 1)
    rho0 = projector(3, 2).matrix
    return SourceSystem(
        dim=3, h_static=None, h_drive=None, pulse=None,
        channels=(
            CollapseChannel(operator=sigma_23, envelope=pump, envelope_is_amplitude=True),
            CollapseChannel(operator=sigma_12, rate=gamma, is_emission=True),
        ),
        rho0=rho0, label="ladder",
    )


def lambda_system(gamma_emission: float = 1.0, gamma_spont: float = 0.0,
                  detuning: float = 0.0, pulse: PulseEnvelope | None = None) -> SourceSystem:
    """Lambda emitter: drive |1> <-> |3>, Raman emission |3> -> |2>.

    Levels are indexed (|1>, |2>, |3>) = (0, 1, 2), starting in |1>.  The
    source is an ideal single-photon emitter when gamma_spont (the |3> -> |1>
    leak back to the initial state) is zero.
    """
    if gamma_emission <= 0.0:
        raise ModelError(f"emission rate must be positive, got {gamma_emission}")
    if gamma_spont < 0.0:
        raise ModelError(f"spontaneous rate must be nonnegative, got {gamma_spont}")
    if pulse is None:
        raise ModelError("lambda system needs a drive pulse")
    sigma_13 = transition(3, 0, 2)
    sigma_23 = transition(3, 1, 2)
    h_static = Operator(detuning * projector(3, 2).matrix) if detuning != 0.0 else None
    h_drive = Operator(sigma_13.matrix + sigma_13.dag().matrix)
    channels = [CollapseChannel(operator=sigma_23, rate=gamma_emission, is_emission=True)]
    # keep the leak channel even at zero rate so its presence is explicit
    channels.append(CollapseChannel(operator=sigma_13, rate=gamma_spont))
    rho0 = projector(3, 0).matrix
    return SourceSystem(
        dim=3, h_static=h_static, h_drive=h_drive, pulse=pulse,
        channels=tuple(channels), rho0=rho0, label="lambda",
    )


def add_dephasing(system: SourceSystem, level: int, rate) -> SourceSystem:
    """Append a pure-dephasing channel C = sqrt(gamma_d(t)) |level><level|.

    ``rate`` is a constant or a PulseEnvelope read directly as gamma_d(t).
    A zero constant rate returns the system unchanged.
    """
    if not 0 <= level < system.dim:
        raise ModelError(f"dephasing level {level} out of range for dim {system.dim}")
    proj = projector(system.dim, level)
    if isinstance(rate, PulseEnvelope):
        ch = CollapseChannel(operator=proj, envelope=rate, envelope_is_amplitude=False)
    else:
        rate = float(rate)
        if rate < 0.0:
            raise ModelError(f"dephasing rate must be nonnegative, got {rate}")
        if rate == 0.0:
            return system
        ch = CollapseChannel(operator=proj, rate=rate)
    return replace(system, channels=system.channels + (ch,))


def split_emission(system: SourceSystem, fractions) -> SourceSystem:
    """Split the emission channel into parallel channels with rate weights.

    fractions must be positive and sum to 1; the Liouvillian is unchanged.
    The first fragment keeps is_emission (it is the monitored output port).
    """
    w = np.asarray(fractions, dtype=float)
    if w.ndim != 1 or w.size < 1 or np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
        raise ModelError("fractions must be positive and sum to one")
    em = system.emission_channel
    rate = system.emission_rate
    fragments = tuple(
        CollapseChannel(operator=em.operator, rate=rate * wi, is_emission=(i == 0))
        for i, wi in enumerate(w)
    )
    channels = tuple(ch for ch in system.channels if not ch.is_emission) + fragments
    return replace(system, channels=channels)


# ---------------------------------------------------------------------------
# Liouvillian assembly (column-stacking convention)


def _dissipator_superop(op: np.ndarray) -> np.ndarray:
    """Unit-rate dissipator: C rho C^dag - (C^dag C rho + rho C^dag C)/2."""
    d = op.shape[0]
    eye = np.eye(d, dtype=complex)
    cdc = op.conj().T @ op
    return (np.kron(op.conj(), op)
            - 0.5 * np.kron(eye, cdc)
            - 0.5 * np.kron(cdc.T, eye))


def _commutator_superop(h: np.ndarray) -> np.ndarray:
    d = h.shape[0]
    eye = np.eye(d, dtype=complex)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


@dataclass(frozen=True, eq=False)
class LiouvillianParts:
    """Precomputed pieces of L(t) = static + Omega(t) drive + sum rate_k(t) D_k."""

    dim: int
    static: np.ndarray
    drive: np.ndarray | None
    pulse: PulseEnvelope | None
    envelope_terms: tuple = ()  # (channel, unit dissipator) pairs

    def at(self, t: float) -> np.ndarray:
        out = self.static.copy()
        if self.drive is not None:
            out += self.pulse.value(t) * self.drive
        for ch, dsup in self.envelope_terms:
            out += ch.rate_at(t) * dsup
        return out


def liouvillian_parts(system: SourceSystem) -> LiouvillianParts:
    d = system.dim
    static = np.zeros((d * d, d * d), dtype=complex)
    if system.h_static is not None:
        static += _commutator_superop(system.h_static.matrix)
    drive = None
    if system.h_drive is not None:
        # coefficient Omega(t)/2 on h_drive; fold the 1/2 into the part
        drive = 0.5 * _commutator_superop(system.h_drive.matrix)
    envelope_terms = []
    for ch in system.channels:
        dsup = _dissipator_superop(ch.operator.matrix)
        if ch.is_constant:
            static += ch.rate * dsup
        else:
            envelope_terms.append((ch, dsup))
    return LiouvillianParts(dim=d, static=static, drive=drive,
                            pulse=system.pulse, envelope_terms=tuple(envelope_terms))


def liouvillian(system: SourceSystem, t: float) -> np.ndarray:
    """Lindblad generator as a dim^2 x dim^2 matrix at time t."""
    return liouvillian_parts(system).at(t)


def trace_defect(liouv: np.ndarray) -> float:
    """Max violation of trace preservation: vec(I)^dag L should vanish."""
    d = int(round(math.sqrt(liouv.shape[0])))
    tr_vec = np.eye(d, dtype=complex).reshape(-1, order="F")
    return float(np.abs(tr_vec @ liouv).max())
