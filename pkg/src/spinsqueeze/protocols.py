"""Squeezing protocols as alternating Gaussian maps, plus readout isometries.

Each protocol composes the Faraday symplectic with homodyne detection and
optical pumping over small steps of gamma_s*dt. Times are in units of
1/gamma_s throughout. The metrological squeezing parameter is evaluated by
mapping the run's basis onto a chosen readout preparation (scs, yurke or
half_yurke) and contracting the tracked covariances with that preparation's
coefficients.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .gaussian_core import (
    append_fresh_light,
    apply_map,
    faraday_symplectic,
    homodyne_update,
    rotation_map,
    partial_trace,
    vacuum_state,
    waveplate_map,
)
from .optical_pumping import PumpModel, build_updates
from .spin_algebra import embedded_basis_for

CHI_GUARD = 0.1
DT_GUARD = 1e-2
ALPHA_FLOOR = 1e-6
OD_CONSISTENCY_RTOL = 1e-9

PROTOCOLS = ("qnd", "double_pass", "eraser", "phase_matching")
TARGETS = ("scs", "yurke", "half_yurke")


@dataclass(frozen=True)
class ProtocolParams:
    """Physical run parameters and the derived coupling constants.

    Any two of (od, n_a, sigma0_over_a) determine the third; giving all
    three requires consistency. n_l_pulse records the experiment's photon
    number per probe pulse for manifests; the simulation itself uses the
    per-step photon number n_l implied by dt_gamma. xi_step short-circuits
    the coupling for unit-normalized coherent runs.
    """

    f: float
    od: float = None
    n_a: float = None
    sigma0_over_a: float = None
    gamma_over_delta: float = 1e-3
    dt_gamma: float = 1e-3
    g_f: float = None
    n_l_pulse: float = None
    xi_step: float = None
    basis: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError("f must be positive")
        if not 0 < self.dt_gamma <= DT_GUARD:
            raise ValueError(
                f"dt_gamma = {self.dt_gamma} outside (0, {DT_GUARD}]")
        given = [x is not None for x in (self.od, self.n_a, self.sigma0_over_a)]
        if sum(given) >= 2:
            od, n_a, s = self.od, self.n_a, self.sigma0_over_a
            if od is None:
                od = n_a * s
            elif n_a is None:
                n_a = od / s
            elif s is None:
                s = od / n_a
            elif abs(od - n_a * s) > OD_CONSISTENCY_RTOL * max(od, 1.0):
                raise ValueError(
                    f"od = {od} inconsistent with n_a*sigma0_over_a = {n_a * s}")
            object.__setattr__(self, "od", float(od))
            object.__setattr__(self, "n_a", float(n_a))
            object.__setattr__(self, "sigma0_over_a", float(s))
            if not (od > 0 and n_a > 0 and s > 0 and self.gamma_over_delta > 0):
                raise ValueError("physical parameters must be positive")
            if self.chi >= CHI_GUARD:
                raise ValueError(
                    f"chi = {self.chi:.3e} outside the dispersive regime "
                    f"(requires chi < {CHI_GUARD})")
        elif self.xi_step is None:
            raise ValueError(
                "need two of (od, n_a, sigma0_over_a), or xi_step for "
                "unit-normalized runs")

    @property
    def g(self):
        return self.g_f if self.g_f is not None else 1.0 / self.f

    @property
    def chi(self):
        return self.g * self.sigma0_over_a * self.gamma_over_delta / 6.0

    @property
    def n_l(self):
        """Photons per simulation step at the chosen dt_gamma."""
        return 4.0 * self.dt_gamma / (self.sigma0_over_a
                                      * self.gamma_over_delta ** 2)

    @property
    def kappa_over_gamma(self):
        return self.g ** 2 * self.sigma0_over_a / 9.0

    def xi_for(self, basis):
        """Per-step Faraday coupling for the given embedded basis."""
        if self.xi_step is not None:
            return self.xi_step
        return self.chi ** 2 * self.n_l * self.n_a * basis.var_up

    def with_basis(self, basis):
        return replace(self, basis=basis)


@dataclass
class Trajectory:
    """Recorded observables of one protocol run on the gamma_s*t grid."""

    t: np.ndarray
    var_xdu: np.ndarray
    var_xwd: np.ndarray
    cov: np.ndarray
    n_up: np.ndarray
    n_dn: np.ndarray
    n_wr: np.ndarray
    zeta_m: np.ndarray
    zeta_q: np.ndarray = None
    alpha: np.ndarray = None
    protocol: str = ""
    prep: str = ""
    target: str = "scs"
    keep_transfer: bool = False
    params: ProtocolParams = None

    @property
    def zeta_m_db(self):
        with np.errstate(divide="ignore"):
            return -10.0 * np.log10(self.zeta_m)

    @property
    def peak_db(self):
        return float(np.max(self.zeta_m_db))

    @property
    def t_peak(self):
        return float(self.t[int(np.argmin(self.zeta_m))])

    def to_csv(self, path):
        """Write the trajectory table; columns match the CLI contract."""
        header = "t_gamma,varXdu,varXwd,cov,N_up,N_down,N_wr,zeta_m,zeta_m_dB"
        cols = np.column_stack([
            self.t, self.var_xdu, self.var_xwd, self.cov,
            self.n_up, self.n_dn, self.n_wr, self.zeta_m, self.zeta_m_db])
        np.savetxt(path, cols, fmt="%.12e", delimiter=",", header=header,
                   comments="")


def _observables(state):
    """(Var X_du, Var X_wd, cov, N_up, N_dn, N_wr) from a population state."""
    i = state.index("X_du")
    v = state.sigma[i, i]
    if "X_wd" in state.labels:
        j = state.index("X_wd")
        w, c = state.sigma[j, j], state.sigma[i, j]
    else:
        w, c = 0.0, 0.0
    pops = tuple(state.populations) + (0.0,) * (3 - len(state.populations))
    return (v, w, c) + pops


def _scalar_min(fun, lo, hi, n_coarse=24, xtol=1e-6):
    """Coarse bracket followed by golden-section refinement."""
    grid = np.linspace(lo, hi, n_coarse)
    vals = [fun(x) for x in grid]
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_coarse - 1)]
    res = optimize.minimize_scalar(fun, bounds=(a, b), method="bounded",
                                   options={"xatol": xtol})
    if res.fun <= vals[k]:
        return float(res.x), float(res.fun)
    return float(grid[k]), float(vals[k])


def zeta_from_moments(f, v, w, c, n_up, n_dn, n_wr, target, keep,
                      alpha=None):
    """zeta_m from scalar covariances and populations.

    v, w, c are Var(X_du), Var(X_wd) and their covariance in population
    units; keep=False applies the transfer-eliminated substitution
    (W -> N_dn/2, C -> 0, N_wr -> 0). For the yurke and half_yurke targets,
    alpha is optimized numerically when not supplied.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown readout target {target!r}")
    if not keep:
        w, c, n_wr = n_dn / 2.0, 0.0, 0.0
    total = n_up + n_dn + n_wr

    if target == "scs":
        quad = f * v + 2.0 * math.sqrt(f * (2 * f - 1)) * c + (2 * f - 1) * w
        mean = f * n_up + (f - 1) * n_dn + (f - 2) * n_wr
        return 2.0 * f * total * quad / mean ** 2

    if target == "yurke":
        if f < 1 or f != round(f):
            raise ValueError("yurke readout requires integer f >= 1")
        denom_scale = f * (f + 1)
    else:
        if f < 1.5 or (f - 0.5) != round(f - 0.5):
            raise ValueError("half_yurke readout requires half-integer "
                             "f >= 3/2")
        denom_scale = (math.sqrt((f + 1.5) * (f - 0.5)) + f + 0.5) ** 2 / 4.0

    def zeta(a):
        sa, ca = math.sin(a), math.cos(a)
        quad = sa ** 2 * v + 2.0 * sa * ca * c + ca ** 2 * w
        return (2.0 * f * total * quad
                / (denom_scale * sa ** 2 * ca ** 2 * n_up ** 2))

    if alpha is not None:
        if alpha == 0.0:
            if w > 1e-300 or abs(c) > 1e-300:
                warnings.warn("anti-squeezed coupled-state terms diverge at "
                              "alpha = 0; returning inf")
                return math.inf
            return 2.0 * f * total * v / (denom_scale * n_up ** 2)
        return zeta(alpha)
    return _scalar_min(zeta, ALPHA_FLOOR, math.pi / 2 - ALPHA_FLOOR)[1]


def squeezing_parameter(state, basis_in, target, keep_transfer=None,
                        alpha=None):
    """Metrological squeezing parameter after a readout partial isometry.

    The run's fiducial/coupled/transfer states are mapped onto the target
    preparation and zeta_m is evaluated from the tracked covariances and
    populations. keep_transfer=None keeps the transfer state whenever the
    state still tracks the wd mode.
    """
    if state.normalization != "population":
        raise ValueError("squeezing parameter requires population "
                         "normalization")
    v, w, c, n_up, n_dn, n_wr = _observables(state)
    has_wd = "X_wd" in state.labels
    keep = has_wd if keep_transfer is None else bool(keep_transfer)
    if keep and not has_wd:
        raise ValueError("state does not track the wd mode; cannot keep "
                         "the transfer state at readout")
    return zeta_from_moments(basis_in.f, v, w, c, n_up, n_dn, n_wr, target,
                             keep, alpha)


def optimal_alpha(state, basis_in, target):
    """The alpha minimizing zeta_m for a yurke-type readout target."""
    if target not in ("yurke", "half_yurke"):
        raise ValueError("alpha applies to yurke-type targets only")
    def zeta(a):
        return squeezing_parameter(state, basis_in, target, alpha=a)
    return _scalar_min(zeta, ALPHA_FLOOR, math.pi / 2 - ALPHA_FLOOR)[0]


def pump_step(state, updates):
    """One optical-pumping step: sigma <- M sigma M^T + N, pops <- J pops."""
    nq = updates.m_a.shape[0]
    dim = state.sigma.shape[0]
    if state.has_light and dim != nq + 2:
        raise ValueError(f"update block ({nq} quads) does not match state")
    m_full = np.eye(dim)
    m_full[:nq, :nq] = updates.m_a
    n_full = np.zeros((dim, dim))
    n_full[:nq, :nq] = updates.noise_matrix(state.populations)
    out = apply_map(state, m_full, n_full)
    pops = np.array(state.populations)
    k = updates.j.shape[0]
    pops[:k] = updates.j @ pops[:k]
    return out.replace(populations=tuple(pops))


def qnd_step(state, params):
    """One QND iteration: Faraday pass, homodyne of X_y, fresh light."""
    basis = params.basis
    s = faraday_symplectic(
        params, basis, state.normalization,
        populations=np.array(state.populations), n_l=state.n_l)
    out = apply_map(state, s)
    out = homodyne_update(out, "X_y")
    fresh = 1.0 if state.normalization == "unit" else params.n_l
    return append_fresh_light(out, fresh)


def double_pass_step(state, params, eraser, updates=None):
    """Two Faraday passes with a waveplate between them.

    updates supplies the pumping channel applied before each pass; None
    runs the coherent version. The light is measured along (X_y - Y_y)/sqrt(2)
    when eraser is true and traced out otherwise, and a fresh pulse is
    appended either way.
    """
    basis = params.basis
    n_modes = len(state.labels) // 2
    for i in range(2):
        if updates is not None:
            state = pump_step(state, updates)
        s = faraday_symplectic(
            params, basis, state.normalization,
            populations=np.array(state.populations), n_l=state.n_l)
        state = apply_map(state, s)
        if i == 0:
            state = apply_map(state, waveplate_map(n_modes))
    if eraser:
        state = apply_map(state, rotation_map(np.pi / 4.0, ("light",),
                                              n_modes))
        state = homodyne_update(state, "X_y")
    else:
        state = partial_trace(state, "light")
    fresh = 1.0 if state.normalization == "unit" else params.n_l
    return append_fresh_light(state, fresh)


def _du_rotation(theta, state):
    return rotation_map(theta, ("du",), len(state.labels) // 2)


def phase_matching_run(state, params, n_steps, updates=None, theta=None,
                       record=None):
    """Alternate eraser double passes with a phase-plane rotation.

    theta=None optimizes the angle each iteration by minimizing the
    smallest principal variance of the du phase plane after one look-ahead
    double pass; a float applies the same fixed angle every iteration.
    record, when given, is called with (step_index, state) after each
    iteration. Minimizing the post-step Var(X_du) instead of the principal
    variance stalls at algebraic scaling, since the rotation must track
    the hyperbolic axes of the pass-to-pass shear.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    for k in range(n_steps):
        state = double_pass_step(state, params, eraser=True, updates=updates)
        if theta is None:
            i_x = state.index("X_du")

            def lookahead(angle):
                trial = apply_map(state, _du_rotation(angle, state))
                trial = double_pass_step(trial, params, eraser=True,
                                         updates=updates)
                block = trial.sigma[i_x:i_x + 2, i_x:i_x + 2]
                return np.linalg.eigvalsh(block)[0]

            best, _ = _scalar_min(lookahead, -math.pi / 2, math.pi / 2,
                                  n_coarse=16, xtol=1e-6)
        else:
            best = theta
        state = apply_map(state, _du_rotation(best, state))
        if record is not None:
            record(k, state)
    return state


def _align_readout(state, basis_in, target, keep_transfer, alpha):
    """Rotate the du plane to the angle minimizing zeta_m before readout.

    Double-pass protocols leave the squeezed quadrature tilted in the du
    phase plane; the tilt is removed by one final free rotation, so the
    reported zeta_m is evaluated on the aligned state.
    """
    def objective(angle):
        trial = apply_map(state, _du_rotation(angle, state))
        return squeezing_parameter(trial, basis_in, target, keep_transfer,
                                   alpha)
    best, _ = _scalar_min(objective, -math.pi / 2, math.pi / 2)
    return apply_map(state, _du_rotation(best, state))


def simulate(protocol, prep, params, t_max, target="scs", keep_transfer=None,
             alpha=None, record_every=1, gamma_s=1.0):
    """Run a full protocol with pumping and return the trajectory.

    protocol is one of qnd, double_pass, eraser, phase_matching. The time
    step is params.dt_gamma per Faraday pass, so double-pass protocols
    advance 2*dt_gamma per iteration. zeta_m is evaluated at every recorded
    step for the requested readout target. gamma_s=0 turns pumping off for
    coherent-limit runs while keeping the same time axis.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if gamma_s < 0:
        raise ValueError("gamma_s must be >= 0")
    basis = embedded_basis_for(prep, params.f)
    params = params.with_basis(basis)
    model = PumpModel(basis, gamma_s=gamma_s)
    updates = build_updates(basis, model, params.dt_gamma, keep_transfer)
    keep = updates.keep_transfer
    state = vacuum_state(params.n_a, params.n_l,
                         include_transfer=basis.has_transfer)

    dt_iter = params.dt_gamma if protocol == "qnd" else 2.0 * params.dt_gamma
    n_steps = max(1, int(round(t_max / dt_iter)))

    rows = []
    alphas = []

    align = protocol != "qnd"

    def push(t_now, s):
        if align:
            s = _align_readout(s, basis, target, keep, alpha)
        v, w, c, n_up, n_dn, n_wr = _observables(s)
        if target in ("yurke", "half_yurke"):
            a = optimal_alpha(s, basis, target) if alpha is None else alpha
            z = squeezing_parameter(s, basis, target, keep, a)
            alphas.append(a)
        else:
            z = squeezing_parameter(s, basis, target, keep)
        rows.append((t_now, v, w, c, n_up, n_dn, n_wr, z))

    push(0.0, state)
    if protocol == "phase_matching":
        def record(k, s):
            if (k + 1) % record_every == 0:
                push((k + 1) * dt_iter, s)
        state = phase_matching_run(state, params, n_steps, updates=updates,
                                   record=record)
    else:
        for k in range(n_steps):
            if protocol == "qnd":
                state = pump_step(state, updates)
                state = qnd_step(state, params)
            else:
                state = double_pass_step(state, params,
                                         eraser=(protocol == "eraser"),
                                         updates=updates)
            if (k + 1) % record_every == 0:
                push((k + 1) * dt_iter, state)

    cols = np.array(rows).T
    total = cols[4] + cols[5] + cols[6]
    if params.f > 0.5 and np.any(np.diff(total) > 1e-9 * total[0]):
        raise RuntimeError("total population increased during the run")
    return Trajectory(
        t=cols[0], var_xdu=cols[1], var_xwd=cols[2], cov=cols[3],
        n_up=cols[4], n_dn=cols[5], n_wr=cols[6], zeta_m=cols[7],
        alpha=np.array(alphas) if alphas else None,
        protocol=protocol, prep=prep, target=target, keep_transfer=keep,
        params=params)
