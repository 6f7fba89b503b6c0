"""Quantum-jump Monte Carlo: click records, photocounts, HBT histograms.

The unraveling marches a whole batch of trial states through one segment
propagator of the non-Hermitian effective Hamiltonian at a time (segments
never straddle grid points, so narrow pulses cannot be skipped).  Inside a
segment the survival-probability crossing is located on a cubic Hermite
interpolant of the propagator, then the post-jump state is re-integrated
to the segment end; every trial owns an independent, replayable RNG stream
keyed by (seed, trial), which makes the records bit-identical no matter
how trials are batched or scheduled.

Detection is classical post-processing of the emission clicks: efficiency
thinning, Bernoulli routing onto two detectors, per-period binary click
variables, coincidence histograms, and the ratio estimator with its
counting-statistics error bar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import TimeGrid
from .errors import EstimateError, ModelError
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, integrate_to, propagator
from .model import SourceSystem

M_MAX = 16
NORM_TOL = 1e-10  # bisection tolerance on the survival-probability crossing


@dataclass(frozen=True)
class DetectionModel:
    """Detector chain: efficiency, HBT routing fraction, pulse train shape."""

    efficiency: float = 1.0
    splitter: float = 0.5
    t_r: float = 20.0
    n_periods: int = 1 << 30

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise EstimateError(f"efficiency {self.efficiency} outside [0, 1]")
        if not 0.0 <= self.splitter <= 1.0:
            raise EstimateError(f"splitter fraction {self.splitter} outside [0, 1]")
        if self.t_r <= 0.0 or self.n_periods < 1:
            raise EstimateError("need a positive period and at least one period")


@dataclass(frozen=True)
class ClickRecord:
    """Emission clicks of one trial; detector 'u' means not yet routed."""

    trial: int
    clicks: tuple  # of (time, detector) pairs

    def __post_init__(self):
        times = [t for t, _ in self.clicks]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise EstimateError(f"trial {self.trial}: click times must increase")

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.clicks], dtype=float)


@dataclass(frozen=True)
class Histogram:
    """Coincidence counts by period separation k."""

    bins: dict
    mode: str  # "full" | "start_stop"

    def __post_init__(self):
        if self.mode not in ("full", "start_stop"):
            raise EstimateError(f"unknown histogram mode {self.mode!r}")
        if any(c < 0 for c in self.bins.values()):
            raise EstimateError("negative coincidence count")

    def count(self, k: int) -> int:
        return self.bins.get(k, 0)

    def sorted_items(self) -> list:
        return sorted(self.bins.items())


@dataclass(frozen=True)
class PhotocountDistribution:
    """Per-pulse photocount probabilities P_m, m = 0..m_max."""

    probabilities: np.ndarray
    n_trials: int
    overflow: bool = False

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise EstimateError("need probabilities for at least m=0, 1")
        if p.min() < 0.0 or abs(p.sum() - 1.0) > 1e-12:
            raise EstimateError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", p)

    def moment(self, power: int) -> float:
        m = np.arange(self.probabilities.size, dtype=float)
        return float((m ** power) @ self.probabilities)


# ---------------------------------------------------------------------------
# the unraveling


def _rng_for_trial(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(trial,)))


class _EffectiveGenerator:
    """G(t) = -i H(t) - (1/2) sum_k rate_k(t) A_k^dag A_k on pure states."""

    def __init__(self, system: SourceSystem):
        d = system.dim
        static = np.zeros((d, d), dtype=complex)
        if system.h_static is not None:
            static += -1j * system.h_static.matrix
        self.drive = (-0.5j * system.h_drive.matrix
                      if system.h_drive is not None else None)
        self.pulse = system.pulse
        self.env_terms = []
        for ch in system.channels:
            aa = ch.operator.matrix.conj().T @ ch.operator.matrix
            if ch.is_constant:
                static += -0.5 * ch.rate * aa
            else:
                self.env_terms.append((ch, -0.5 * aa))
        self.static = static
        self.dim = d

    def at(self, t: float) -> np.ndarray:
        out = self.static.copy()
        if self.drive is not None:
            out += self.pulse.value(t) * self.drive
        for ch, half_aa in self.env_terms:
            out += ch.rate_at(t) * half_aa
        return out


def _hermite_eval(s, parts):
    """Cubic Hermite propagator interpolant applied to per-trial vectors.

    parts = (v0, v1, v2, v3) holding psi, h*G(t0)psi, U psi, h*G(t1)U psi
    for each crossing trial; s is the fractional position in the segment.
    """
    v0, v1, v2, v3 = parts
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return (h00[:, None] * v0 + h10[:, None] * v1
            + h01[:, None] * v2 + h11[:, None] * v3)


def _locate_crossings(s_lo, s_hi, parts, thresholds):
    """Vectorized bisection for the first norm^2 = r crossing per trial.

    Runs a fixed 60 halvings (resolution 2^-60 of a segment, far below
    the 1e-10 norm tolerance) so a trial's result never depends on which
    other trials happen to share the batch.
    """
    for _ in range(60):
        s_mid = 0.5 * (s_lo + s_hi)
        psi = _hermite_eval(s_mid, parts)
        norm2 = np.einsum("ij,ij->i", psi.conj(), psi).real
        high = norm2 > thresholds
        s_lo = np.where(high, s_mid, s_lo)
        s_hi = np.where(high, s_hi, s_mid)
    s_mid = 0.5 * (s_lo + s_hi)
    return s_mid, _hermite_eval(s_mid, parts)


def _resolve_jump_chain(gen, channels, rng, psi, t_jump, t_end, rtol, atol):
    """Apply the jump at t_jump, then evolve to t_end, chasing re-crossings.

    psi is the (not normalized) state at the crossing time.  Returns the
    state at t_end, the live threshold, and the emission click times.
    """
    rhs = lambda t, y: gen.at(t) @ y
    clicks = []
    while True:
        # channel selection proportional to the instantaneous jump rates
        weights = []
        jumped = []
        for ch, a in channels:
            v = a @ psi
            weights.append(ch.rate_at(t_jump) * float((v.conj() @ v).real))
            jumped.append(v)
        total = sum(weights)
        if total <= 0.0:
            raise EstimateError("norm crossed threshold with no open channel")
        u = rng.random() * total
        acc = 0.0
        pick = len(weights) - 1
        for idx, w in enumerate(weights):
            acc += w
            if u < acc:
                pick = idx
                break
        psi_post = jumped[pick]
        psi_post = psi_post / np.sqrt(float((psi_post.conj() @ psi_post).real))
        if channels[pick][0].is_emission:
            clicks.append(t_jump)
        threshold = rng.random()

        if t_jump >= t_end:
            return psi_post, threshold, clicks
        psi = integrate_to(rhs, t_jump, t_end, psi_post, rtol=rtol, atol=atol,
                           first_step=t_end - t_jump)
        if float((psi.conj() @ psi).real) >= threshold:
            return psi, threshold, clicks
        # another crossing before the segment ends (rare); bisect the jump
        # time by integrating from the post-jump state each probe
        lo, hi = t_jump, t_end
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            probe = integrate_to(rhs, t_jump, mid, psi_post,
                                 rtol=rtol, atol=atol,
                                 first_step=max(mid - t_jump, 1e-12))
            n2 = float((probe.conj() @ probe).real)
            if n2 > threshold:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13 * max(1.0, abs(t_end)) or \
                    abs(n2 - threshold) < NORM_TOL:
                break
        t_next = 0.5 * (lo + hi)
        psi = integrate_to(rhs, t_jump, t_next, psi_post, rtol=rtol, atol=atol,
                           first_step=max(t_next - t_jump, 1e-12))
        t_jump = t_next


def run_trajectories(system: SourceSystem, grid: TimeGrid, n_trials: int,
                     seed: int, rtol: float = DEFAULT_RTOL,
                     atol: float = DEFAULT_ATOL) -> list:
    """Simulate n_trials quantum-jump unravelings; emission jumps are clicks.

    The initial state must be pure (the unraveling propagates state
    vectors).  Returns one ClickRecord per trial, detector tag 'u'.
    """
    if n_trials < 1:
        raise EstimateError(f"need at least one trial, got {n_trials}")
    d = system.dim
    vals, vecs = np.linalg.eigh(system.rho0)
    if vals.max() < 1.0 - 1e-10:
        raise ModelError("trajectory unraveling needs a pure initial state")
    psi0 = vecs[:, int(np.argmax(vals))].astype(complex)

    gen = _EffectiveGenerator(system)
    channels = [(ch, ch.operator.matrix) for ch in system.channels]
    times = grid.times
    dt = grid.dt

    rngs = [_rng_for_trial(seed, i) for i in range(n_trials)]
    thresholds = np.array([r.random() for r in rngs])
    states = np.tile(psi0, (n_trials, 1))
    clicks = [[] for _ in range(n_trials)]

    for j in range(grid.n - 1):
        t0, t1 = times[j], times[j + 1]
        u = propagator(gen.at, t0, t1, d, rtol=rtol, atol=atol, first_step=dt)
        new_states = states @ u.T
        norm2 = np.einsum("ij,ij->i", new_states.conj(), new_states).real
        crossed = np.flatnonzero(norm2 < thresholds)
        if crossed.size:
            g0 = gen.at(t0)
            g1 = gen.at(t1)
            psi_j = states[crossed]
            parts = (psi_j,
                     dt * (psi_j @ g0.T),
                     new_states[crossed],
                     dt * (new_states[crossed] @ g1.T))
            s_star, psi_star = _locate_crossings(
                np.zeros(crossed.size), np.ones(crossed.size),
                parts, thresholds[crossed])
            for row, idx in enumerate(crossed):
                t_jump = t0 + s_star[row] * dt
                psi_end, thr, seg_clicks = _resolve_jump_chain(
                    gen, channels, rngs[idx], psi_star[row], t_jump, t1,
                    rtol, atol)
                new_states[idx] = psi_end
                thresholds[idx] = thr
                clicks[idx].extend(seg_clicks)
        states = new_states

    return [ClickRecord(trial=i, clicks=tuple((float(t), "u") for t in clicks[i]))
            for i in range(n_trials)]


# ---------------------------------------------------------------------------
# detection post-processing


def photocount_distribution(records, efficiency: float, seed: int = 0,
                            m_max: int = M_MAX) -> PhotocountDistribution:
    """Thin each click with the detection efficiency and tabulate P_m."""
    if not 0.0 <= efficiency <= 1.0:
        raise EstimateError(f"efficiency {efficiency} outside [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(0xDE7EC7,)))
    counts = np.zeros(m_max + 1, dtype=np.int64)
    overflow = False
    for rec in records:
        m = int(np.count_nonzero(rng.random(len(rec.clicks)) < efficiency)) \
            if rec.clicks else 0
        if m > m_max:
            m = m_max
            overflow = True
        counts[m] += 1
    n = len(records)
    if n == 0:
        raise EstimateError("no trials to tabulate")
    return PhotocountDistribution(probabilities=counts / n, n_trials=n,
                                  overflow=overflow)


def g2_from_photocounts(p: PhotocountDistribution) -> float:
    """Second factorial moment over the squared mean; efficiency drops out."""
    s1 = p.moment(1)
    if s1 <= 0.0:
        raise EstimateError("zero mean photocount: g2 undefined")
    s2 = p.moment(2) - s1
    return s2 / s1 ** 2


def photocount_g2_stats(p: PhotocountDistribution) -> tuple:
    """(g2 estimate, delta-method standard error) from one distribution."""
    s1 = p.moment(1)
    if s1 <= 0.0:
        raise EstimateError("zero mean photocount: g2 undefined")
    m2 = p.moment(2)
    y_mean = m2 - s1  # E[m(m-1)]
    g2 = y_mean / s1 ** 2
    # covariance of the sample means of X=m and Y=m(m-1)
    m3, m4 = p.moment(3), p.moment(4)
    var_x = m2 - s1 ** 2
    var_y = (m4 - 2 * m3 + m2) - y_mean ** 2
    cov = (m3 - m2) - s1 * y_mean
    gx = -2.0 * y_mean / s1 ** 3
    gy = 1.0 / s1 ** 2
    var = (gx * gx * var_x + gy * gy * var_y + 2.0 * gx * gy * cov) / p.n_trials
    return g2, float(np.sqrt(max(var, 0.0)))


def route_clicks(records, model: DetectionModel, seed: int = 0) -> list:
    """Efficiency-thin and Bernoulli-route clicks onto detectors c and d."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(0x40073,)))
    routed = []
    for rec in records:
        kept = []
        for t, _ in rec.clicks:
            keep = rng.random() < model.efficiency
            to_c = rng.random() < model.splitter
            if keep:
                kept.append((t, "c" if to_c else "d"))
        routed.append(ClickRecord(trial=rec.trial, clicks=tuple(kept)))
    return routed


def _binary_marks(records, model: DetectionModel) -> tuple:
    n = min(len(records), model.n_periods)
    # int64 marks: integer dot products accumulate in the array dtype, and
    # coincidence counts overflow int8/int32 for long trains
    mc = np.zeros(n, dtype=np.int64)
    md = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for t, det in records[i].clicks:
            if t > model.t_r:
                raise EstimateError(
                    f"click at t={t:g} exceeds the repetition period {model.t_r:g}")
            if det == "c":
                mc[i] = 1
            elif det == "d":
                md[i] = 1
            else:
                raise EstimateError("route clicks through a detector first")
    return mc, md


def hbt_histogram(records, model: DetectionModel, mode: str = "full",
                  k_max: int = 10, seed: int = 0) -> Histogram:
    """Coincidence histogram of an HBT measurement over a pulse train.

    Trials are consecutive periods; each period contributes binary click
    marks per detector.  Full mode correlates all period pairs out to
    |k| <= k_max; start-stop only counts a stop in period n+k when
    detector d stayed silent for the k periods in between.
    """
    routed = records
    if any(det == "u" for rec in records for _, det in rec.clicks):
        routed = route_clicks(records, model, seed=seed)
    mc, md = _binary_marks(routed, model)
    n = mc.size
    bins = {}
    if mode == "full":
        for k in range(-k_max, k_max + 1):
            if k >= 0:
                bins[k] = int(mc[: n - k] @ md[k:]) if k < n else 0
            else:
                bins[k] = int(mc[-k:] @ md[: n + k]) if -k < n else 0
    elif mode == "start_stop":
        # for each start on c, the stop is the first d click at or after it
        stop_idx = np.flatnonzero(md)
        starts = np.flatnonzero(mc)
        pos = np.searchsorted(stop_idx, starts)
        bins = {k: 0 for k in range(k_max + 1)}
        valid = pos < stop_idx.size
        gaps = stop_idx[pos[valid]] - starts[valid]
        for k in gaps[gaps <= k_max].tolist():
            bins[int(k)] += 1
    else:
        raise EstimateError(f"unknown histogram mode {mode!r}")
    return Histogram(bins=bins, mode=mode)


def ratio_estimate_g2(h0: int, href: int) -> tuple:
    """g2 estimate from the zero-delay and reference coincidence counts.

    Counting statistics give a relative error of sqrt(1/h0 + 1/href); a
    zero numerator returns the conservative one-count bound.
    """
    if href <= 0:
        raise EstimateError("reference peak has no counts")
    if h0 < 0:
        raise EstimateError("negative coincidence count")
    if h0 == 0:
        return 0.0, 1.0 / href
    est = h0 / href
    return est, est * float(np.sqrt(1.0 / h0 + 1.0 / href))


# ---------------------------------------------------------------------------
# exports


def click_records_to_csv(records, path) -> None:
    """Rows of (trial, time, detector), one click per row."""
    with open(path, "w") as fh:
        fh.write("trial,time,detector\n")
        for rec in records:
            for t, det in rec.clicks:
                fh.write(f"{rec.trial},{t!r},{det}\n")


def histogram_to_csv(hist: Histogram, path) -> None:
    with open(path, "w") as fh:
        fh.write("k,count\n")
        for k, c in hist.sorted_items():
            fh.write(f"{k},{c}\n")
