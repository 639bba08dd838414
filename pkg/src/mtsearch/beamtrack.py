"""Beam tracking of moving transmitters with a uniform planar array.

Angles of arrival live on ``[0, pi] x [0, pi/2]`` and move with wrapping
(modulo) boundaries. Dividing azimuth by ``pi`` and elevation by ``pi/2`` maps
the problem onto the unit square, where the core search runs unchanged with
``nM`` azimuth cells and ``nM/2`` elevation cells, so every cell spans
``pi/(nM)`` radians in both directions.

The physical mode replaces the abstract query channel by a 1-bit power
detector behind a region-matched beamformer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from threadpoolctl import threadpool_limits

from . import montecarlo as mc
from . import trajectory as tr
from .channel import QueryChannel
from .codebook import Codebook, generate, oracle_responses
from .decoder import DecodeConfig, decode_single_threshold
from .errors import ConfigurationError, DomainError
from .trajectory import TargetState, TrajectoryGrid

AZ_SPAN = math.pi
EL_SPAN = math.pi / 2.0
ABSTRACT = "abstract"
PHYSICAL = "physical"


@dataclass(frozen=True)
class ArrayGeometry:
    R1: int = 4
    R2: int = 4
    g: float = 0.5
    wavelength: float = 1.0

    def __post_init__(self) -> None:
        if self.R1 < 1 or self.R2 < 1:
            raise DomainError("antenna counts must be positive")
        if self.g <= 0 or self.wavelength <= 0:
            raise DomainError("spacing and wavelength must be positive")


@dataclass(frozen=True)
class BeamTarget:
    phi_az: float
    phi_el: float
    v_az: float = 0.0
    v_el: float = 0.0


@dataclass(frozen=True)
class RxModel:
    power_scale: float = 1.0
    alpha: complex = 1.0 + 0.0j
    noise_var: float = 0.01
    threshold: float = 0.25
    max_beam_cells: int = 64

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise DomainError("power threshold must be positive")
        if self.noise_var < 0:
            raise DomainError("noise variance must be nonnegative")


def steering_vector(geom: ArrayGeometry, phi_az: float, phi_el: float) -> NDArray[np.complex128]:
    """Unit-norm UPA response; entry ``(r1, r2)`` sits at position ``r1 * R2 + r2``."""
    kw = 2.0 * math.pi * geom.g / geom.wavelength
    r1 = np.arange(geom.R1)[:, None]
    r2 = np.arange(geom.R2)[None, :]
    phase = r1 * math.sin(phi_az) * math.cos(phi_el) + r2 * math.sin(phi_el)
    return (np.exp(-1j * kw * phase) / math.sqrt(geom.R1 * geom.R2)).ravel()


def angle_step(target: BeamTarget, i: int | NDArray) -> tuple[NDArray, NDArray]:
    """Wrapped angles at time ``i``."""
    i = np.asarray(i, dtype=float)
    if np.any(i < 0):
        raise DomainError("time index must be nonnegative")
    return np.mod(target.phi_az + i * target.v_az, AZ_SPAN), np.mod(target.phi_el + i * target.v_el, EL_SPAN)


def _cell(x: NDArray, cells: int) -> NDArray[np.int64]:
    return np.clip(np.ceil(np.asarray(x) * cells), 1, cells).astype(np.int64)


def _check_even(n: int, M: int) -> int:
    if (n * M) % 2:
        raise ConfigurationError("n*M must be even so that elevation has n*M/2 cells")
    return n * M


def quantize_angles(phi_az, phi_el, n: int, M: int):
    """Literal index ``(j_az - 1) nM + j_el``; injective, ranging up to ``n^2 M^2 - nM/2``."""
    nm = _check_even(n, M)
    ja = _cell(np.asarray(phi_az) / AZ_SPAN, nm)
    je = _cell(np.asarray(phi_el) / EL_SPAN, nm // 2)
    out = (ja - 1) * nm + je
    return int(out) if out.ndim == 0 else out


def quantize_angles_compact(phi_az, phi_el, n: int, M: int):
    """Row-major index ``(j_az - 1) nM/2 + j_el``; a bijection onto ``1 .. n^2 M^2 / 2``.

    This is the codebook column the core search uses for the cell.
    """
    nm = _check_even(n, M)
    ja = _cell(np.asarray(phi_az) / AZ_SPAN, nm)
    je = _cell(np.asarray(phi_el) / EL_SPAN, nm // 2)
    out = (ja - 1) * (nm // 2) + je
    return int(out) if out.ndim == 0 else out


def normalize(target: BeamTarget) -> TargetState:
    return TargetState(
        np.array([target.phi_az / AZ_SPAN, target.phi_el / EL_SPAN]),
        np.array([target.v_az / AZ_SPAN, target.v_el / EL_SPAN]),
    )


def denormalize(state: TargetState) -> BeamTarget:
    s, v = state.s, state.v
    return BeamTarget(float(s[0] * AZ_SPAN), float(s[1] * EL_SPAN), float(v[0] * AZ_SPAN), float(v[1] * EL_SPAN))


def cell_centers(flat: NDArray[np.int64], n: int, M: int) -> tuple[NDArray, NDArray]:
    """Angular centers of compact cell indices."""
    nm = _check_even(n, M)
    f = np.asarray(flat) - 1
    ja, je = f // (nm // 2), f % (nm // 2)
    return (ja + 0.5) * AZ_SPAN / nm, (je + 0.5) * EL_SPAN / (nm // 2)


def region_beam(geom: ArrayGeometry, az: NDArray, el: NDArray, cap: int) -> NDArray[np.complex128] | None:
    """Normalized sum of steering vectors at up to ``cap`` region cell centers."""
    m = len(az)
    if m == 0:
        return None
    if m > cap:
        pick = np.unique(np.linspace(0, m - 1, cap).round().astype(np.int64))
        az, el = az[pick], el[pick]
    w = np.zeros(geom.R1 * geom.R2, dtype=complex)
    for a, e in zip(az, el):
        w += steering_vector(geom, float(a), float(e))
    nrm = np.linalg.norm(w)
    if nrm < 1e-12:
        return None
    return w / nrm


def received_sample(
    geom: ArrayGeometry, rx: RxModel, w: NDArray | None, angles: Sequence[tuple[float, float]], rng: np.random.Generator
) -> complex:
    """``sqrt(P) w^H sum_t alpha a(phi_t) + w^H noise``; ``w = None`` leaves only noise."""
    noise = math.sqrt(rx.noise_var / 2.0) * complex(rng.standard_normal(), rng.standard_normal())
    if w is None:
        return noise
    h = np.zeros(geom.R1 * geom.R2, dtype=complex)
    for az, el in angles:
        h += rx.alpha * steering_vector(geom, az, el)
    return complex(rx.power_scale * np.vdot(w, h)) + noise


def simulate_rx_bit(
    geom: ArrayGeometry,
    rx: RxModel,
    angles: Sequence[tuple[float, float]],
    region_az: NDArray,
    region_el: NDArray,
    rng: np.random.Generator,
) -> tuple[int, bool]:
    """1-bit power decision for one query; the flag is True when the region beam is empty."""
    w = region_beam(geom, np.asarray(region_az), np.asarray(region_el), rx.max_beam_cells)
    y = received_sample(geom, rx, w, angles, rng)
    return int(abs(y) ** 2 > rx.threshold), w is None


def calibrate_threshold(rx: RxModel, false_alarm: float) -> float:
    """Threshold giving noise-only false-alarm probability ``false_alarm`` (|noise|^2 is exponential)."""
    if not 0.0 < false_alarm < 1.0:
        raise DomainError("false-alarm probability must lie in (0, 1)")
    return rx.noise_var * math.log(1.0 / false_alarm)


# ---------------------------------------------------------------- tracking runs


@dataclass(frozen=True)
class BeamSpec:
    channel: QueryChannel
    n: int
    k: int = 2
    M: int = 2
    v_plus: float = 0.0
    p: float | None = None
    gamma: float | None = None
    gamma_rule: str = mc.GAMMA_COUNT
    design_epsilon: float = 0.3
    trials: int = 100
    seed: int = 0
    geometry: ArrayGeometry = ArrayGeometry()
    rx: RxModel = RxModel()
    cap: int = tr.DEFAULT_CAP

    def core(self) -> mc.ExperimentSpec:
        """The equivalent unit-square experiment (velocities in normalized units)."""
        nm = _check_even(self.n, self.M)
        return mc.ExperimentSpec(
            channel=self.channel, n=self.n, k=self.k, d=2, v_plus=self.v_plus, M=self.M, p=self.p,
            gamma=self.gamma, gamma_rule=self.gamma_rule, design_epsilon=self.design_epsilon,
            trials=self.trials, seed=self.seed, mode=tr.FREE, motion=tr.WRAP, cap=self.cap,
            cells=(nm, nm // 2),
        )


@dataclass
class BeamRecord:
    index: int
    accepted: bool
    excess: bool
    angular_error: float
    wrapped: bool
    empty_beams: int
    truth: list[BeamTarget]
    estimates: list[BeamTarget]


@dataclass
class BeamSummary:
    trials: int
    excess_count: int
    excess_probability: float
    ci_low: float
    ci_high: float
    acceptance_rate: float
    wrapped_trials: int
    angular_tolerance: float


def angular_error(true: BeamTarget, est: BeamTarget, n: int) -> float:
    """Largest sup-norm angle difference over times ``0..n`` (plain difference of wrapped angles)."""
    t = np.arange(n + 1)
    a1, e1 = angle_step(true, t)
    a2, e2 = angle_step(est, t)
    return float(max(np.max(np.abs(a1 - a2)), np.max(np.abs(e1 - e2))))


def wraps(target: BeamTarget, n: int) -> bool:
    t = np.arange(n + 1)
    a = np.floor((target.phi_az + t * target.v_az) / AZ_SPAN)
    e = np.floor((target.phi_el + t * target.v_el) / EL_SPAN)
    return bool(np.ptp(a) > 0 or np.ptp(e) > 0)


def _physical_responses(
    spec: BeamSpec, cb: Codebook, truth: Sequence[BeamTarget], rng: np.random.Generator
) -> tuple[NDArray, int]:
    y = np.empty(spec.n, dtype=np.int8)
    empty = 0
    for i in range(spec.n):
        az, el = cell_centers(cb.region(i), spec.n, spec.M)
        angles = [tuple(float(x) for x in angle_step(t, i + 1)) for t in truth]
        y[i], flag = simulate_rx_bit(spec.geometry, spec.rx, angles, az, el, rng)
        empty += flag
    return y, empty


def beam_trial(spec: BeamSpec, res: mc.Resolved, index: int, mode: str = ABSTRACT) -> BeamRecord:
    if mode not in (ABSTRACT, PHYSICAL):
        raise DomainError(f"unknown beam-tracking mode {mode!r}")
    core = spec.core()
    if mode == PHYSICAL and not spec.channel.is_bsc:
        raise ConfigurationError("physical mode decodes 1-bit decisions and needs a BSC decoder channel")
    with threadpool_limits(1):
        r_tgt, r_cb, r_noise = mc.trial_streams(spec.seed, index)
        inst = mc._build_instance(core, res, r_tgt)
        grid: TrajectoryGrid = inst.grids
        cb = generate(spec.n, grid.columns, res.p, r_cb)
        truth = [denormalize(t[0]) for t in inst.truth]
        if mode == ABSTRACT:
            _, y, _ = oracle_responses(cb, inst.true_flats[0], spec.channel, r_noise)
            empty = 0
        else:
            y, empty = _physical_responses(spec, cb, truth, r_noise)
        cfg = DecodeConfig(spec.channel, res.p, spec.k, res.gamma, tr.FREE, fallback_s=0.5, fallback_v=0.0)
        out = decode_single_threshold(grid, cb, y, cfg)
    est = [denormalize(e) for e in out.estimates]
    err = max(min(angular_error(t, e, spec.n) for e in est) for t in truth)
    tol = AZ_SPAN * res.delta
    return BeamRecord(index, out.accepted, err > tol, err, any(wraps(t, spec.n) for t in truth), empty, truth, est)


def run_beam_tracking(
    spec: BeamSpec, mode: str = ABSTRACT, workers: int = 1
) -> tuple[mc.Resolved, BeamSummary, list[BeamRecord]]:
    """Trials of the unit-square search mapped to angles; tolerance ``pi * 2/M`` radians."""
    res = mc.resolve(spec.core())
    idx = list(range(spec.trials))
    if workers <= 1:
        recs = [beam_trial(spec, res, i, mode) for i in idx]
    else:
        from concurrent.futures import ProcessPoolExecutor

        nb = min(len(idx), workers * 4)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_beam_batch, [(spec, res, idx[j::nb], mode) for j in range(nb)])
            recs = sorted((r for part in parts for r in part), key=lambda r: r.index)
    x = sum(r.excess for r in recs)
    lo, hi = mc.wilson_interval(x, len(recs))
    summary = BeamSummary(
        len(recs), x, x / len(recs), lo, hi, sum(r.accepted for r in recs) / len(recs),
        sum(r.wrapped for r in recs), AZ_SPAN * res.delta,
    )
    return res, summary, recs


def _beam_batch(args) -> list[BeamRecord]:
    spec, res, idx, mode = args
    return [beam_trial(spec, res, i, mode) for i in idx]


# ---------------------------------------------------------------- sweep baseline


COARSE_SECTORS = 8


@dataclass
class SweepResult:
    resolution: float
    fine_beams: int
    estimates: list[BeamTarget]
    errors: list[float]
    found: list[bool]


def beam_sweep_baseline(
    n: int,
    k: int,
    targets: Sequence[BeamTarget],
    geom: ArrayGeometry,
    rx: RxModel,
    rng: np.random.Generator,
    measurement: str = PHYSICAL,
    beam_cells: int = 8,
) -> SweepResult:
    """Two-stage azimuth sweep: 8 coarse sectors, then ``floor((n-8)/k)`` fine beams per chosen sector.

    Ranking uses analog received power. Targets are treated as static at
    their initial angles; elevation is not resolved and reported at the
    middle of its range. ``measurement='abstract'`` replaces the array by
    "number of targets inside the beam plus Gaussian noise".
    """
    if n <= COARSE_SECTORS:
        raise ConfigurationError("the sweep baseline needs n > 8 measurements")
    if k < 1:
        raise ConfigurationError("k must be positive")
    if measurement not in (ABSTRACT, PHYSICAL):
        raise DomainError(f"unknown measurement model {measurement!r}")
    fine = (n - COARSE_SECTORS) // k
    if fine < 1:
        raise ConfigurationError("fewer than one fine beam per selected sector")
    width = AZ_SPAN / COARSE_SECTORS
    el_grid = (np.arange(beam_cells) + 0.5) * EL_SPAN / beam_cells
    angles = [(t.phi_az, t.phi_el) for t in targets]

    def power(lo: float, hi: float) -> float:
        if measurement == ABSTRACT:
            inside = sum(lo <= a < hi or (hi >= AZ_SPAN and a == AZ_SPAN) for a, _ in angles)
            return inside + math.sqrt(rx.noise_var) * float(rng.standard_normal())
        az = np.repeat((lo + hi) / 2.0, beam_cells)
        w = region_beam(geom, az, el_grid, rx.max_beam_cells)
        return abs(received_sample(geom, rx, w, angles, rng)) ** 2

    coarse = np.array([power(j * width, (j + 1) * width) for j in range(COARSE_SECTORS)])
    chosen = np.argsort(-coarse, kind="stable")[:k]
    fw = width / fine
    est = []
    for j in chosen:
        lo = j * width
        p = np.array([power(lo + f * fw, lo + (f + 1) * fw) for f in range(fine)])
        best = int(np.argmax(p))
        est.append(BeamTarget(lo + (best + 0.5) * fw, EL_SPAN / 2.0))
    errs = [min(abs(t.phi_az - e.phi_az) for e in est) for t in targets]
    return SweepResult(fw, fine, est, errs, [e <= fw for e in errs])
