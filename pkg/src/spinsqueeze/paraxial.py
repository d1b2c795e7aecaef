"""Paraxial-probe extension: a focused TEM00 beam over a Gaussian cloud.

With a focused probe the coupling and the scattering rate vary across the
ensemble, so collective operators are coarse-grained into longitudinal
slices and expanded over l=0 Laguerre-Gauss radial orders. Products of mode
intensities close under that expansion, which turns the spatially resolved
dynamics into ODEs for per-slice effective populations and spin-wave
covariances. Time is in units of 1/gamma_0 with gamma_0 the peak scattering
rate at the focus; the measurement rate kappa is quoted per gamma_0 with the
waist-plane mode area A = pi*w0^2/2. All lengths are in centimeters.

The stored covariance matrix is Hermitian, cov[a, b] = <dX_a^dag dX_b>_sym
over the flat index a = (slice k, quadrature theta, radial order p), which
absorbs the Gouy phases of the complex mode weights. Radial integrals of
Laguerre-Gauss products against the Gaussian cloud reduce to Laplace
transforms of Laguerre polynomials and are evaluated exactly by
Gauss-Laguerre quadrature; longitudinal integrals use adaptive quadrature.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import eval_genlaguerre, eval_laguerre

from .optical_pumping import PumpModel, operator_tables, qutrit_operator_basis
from .spin_algebra import embedded_basis_for

LAMBDA_D2 = 852e-7
GL_ORDER = 48
Z_SPAN_SIGMAS = 3.0
NEFF_RTOL = 1e-9
SECTOR_TOL = 1e-10
DT_CAP = 2e-3
DT_SAFETY = 0.1
ATOM_CONSISTENCY_RTOL = 1e-9

_GL_X, _GL_W = np.polynomial.laguerre.laggauss(GL_ORDER)


@dataclass(frozen=True)
class BeamGeometry:
    """Focused TEM00 probe, defined by its waist and wavelength."""

    w0: float
    wavelength: float = LAMBDA_D2

    def __post_init__(self):
        if self.w0 <= 0 or self.wavelength <= 0:
            raise ValueError("w0 and wavelength must be positive")

    @property
    def k0(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def z_r(self):
        return 0.5 * self.k0 * self.w0 ** 2

    @property
    def area(self):
        return 0.5 * math.pi * self.w0 ** 2

    @property
    def sigma0(self):
        """Resonant scattering cross-section 3*lambda^2/(2*pi)."""
        return 1.5 * self.wavelength ** 2 / math.pi

    def width(self, z):
        return self.w0 * np.sqrt(1.0 + (np.asarray(z) / self.z_r) ** 2)

    def gouy(self, z):
        return np.arctan(np.asarray(z) / self.z_r)


@dataclass(frozen=True)
class CloudGeometry:
    """Cylindrical Gaussian cloud: peak density and 1/e^2 widths."""

    eta0: float
    sigma_perp: float
    sigma_z: float
    n_a: float = None

    def __post_init__(self):
        if min(self.eta0, self.sigma_perp, self.sigma_z) <= 0:
            raise ValueError("cloud parameters must be positive")
        n_a = (self.eta0 * (0.5 * math.pi) ** 1.5
               * self.sigma_perp ** 2 * self.sigma_z)
        if self.n_a is None:
            object.__setattr__(self, "n_a", n_a)
        elif abs(self.n_a - n_a) > ATOM_CONSISTENCY_RTOL * n_a:
            raise ValueError(
                f"n_a = {self.n_a} inconsistent with the geometry ({n_a})")

    @property
    def aspect_ratio(self):
        return self.sigma_z / self.sigma_perp

    @classmethod
    def from_atom_number(cls, n_a, eta0, aspect_ratio):
        """Widths from atom number, peak density and AR = sigma_z/sigma_perp."""
        s3 = n_a / (eta0 * (0.5 * math.pi) ** 1.5 * aspect_ratio)
        sp = s3 ** (1.0 / 3.0)
        return cls(eta0, sp, aspect_ratio * sp, n_a=float(n_a))

    def density(self, r_perp, z):
        return self.eta0 * np.exp(
            -2.0 * (np.asarray(r_perp) / self.sigma_perp) ** 2
            - 2.0 * (np.asarray(z) / self.sigma_z) ** 2)


def mode_function(p, l, r_perp, z, beam, phi=0.0):
    """Laguerre-Gauss amplitude u_pl with transverse norm A = pi*w0^2/2."""
    if p < 0:
        raise ValueError("radial order p must be >= 0")
    la = abs(l)
    w = beam.width(z)
    r = np.asarray(r_perp, dtype=float)
    t = 2.0 * r ** 2 / w ** 2
    norm = math.sqrt(math.factorial(p) / math.factorial(p + la))
    amp = (norm * (beam.w0 / w) * t ** (0.5 * la)
           * eval_genlaguerre(p, la, t) * np.exp(-0.5 * t))
    # curvature phase via 1/R = z/(z^2 + z_R^2), finite at the focus
    inv_r = z / (z * z + beam.z_r ** 2)
    phase = (0.5 * beam.k0 * r ** 2 * inv_r + l * phi
             - (2 * p + la + 1) * beam.gouy(z))
    return amp * np.exp(1j * phase)


def _lag_pair(s, p_max):
    """J[p,q] = int_0^inf exp(-s*t) L_p(t) L_q(t) dt, exact for s > 0."""
    vals = eval_laguerre(np.arange(p_max + 1)[:, None], _GL_X[None, :] / s)
    return np.einsum("i,pi,qi->pq", _GL_W, vals, vals) / s


def _lag_triple(s, p_max):
    """T[q,p,r] = int_0^inf exp(-s*t) L_q L_p L_r dt, exact for s > 0."""
    vals = eval_laguerre(np.arange(p_max + 1)[:, None], _GL_X[None, :] / s)
    return np.einsum("i,qi,pi,ri->qpr", _GL_W, vals, vals, vals) / s


def _lag_single(s, orders):
    """int_0^inf exp(-s*t) L_q(t) dt = (s-1)^q / s^(q+1)."""
    return (s - 1.0) ** orders / s ** (orders + 1.0)


def projection_tables(beam, z, p_max):
    """Mode-projection tables c[p,p'] and G[p,p',q] at height z (l=0).

    c decomposes the intensity-weighted product beta_00*beta_p over the
    beta basis; G does the same for beta_00*beta_p*beta_p'. Both carry
    Gouy-phase factors and the local intensity falloff.
    """
    if p_max < 0:
        raise ValueError("p_max must be >= 0")
    zeta = z / beam.z_r
    phi = math.atan(zeta)
    fall = 1.0 / (1.0 + zeta ** 2)
    pr = np.arange(p_max + 1)
    pair = 2.0 * _lag_pair(2.0, p_max)
    c = 0.5 * fall * pair * np.exp(2j * phi * (pr[:, None] - pr[None, :]))
    tri = np.transpose(_lag_triple(3.0, p_max), (1, 2, 0))
    gouy = pr[:, None, None] + pr[None, :, None] - pr[None, None, :]
    g = fall ** 2 * tri * np.exp(2j * phi * gouy)
    return {"c": c, "G": g}


def effective_atom_numbers(cloud, beam, pl=(0, 0), power=1):
    """K-th effective atom number, the cloud integral of beta_pl^K.

    The radial integral is exact per slice (Gaussian times polynomial);
    the longitudinal direction uses adaptive quadrature. The imaginary
    part vanishes by the mirror symmetry of the cloud and is dropped.
    """
    p, l = pl
    if power not in (1, 2, 3):
        raise ValueError("power must be 1, 2 or 3")
    if l != 0:
        return 0.0
    w0, z_r = beam.w0, beam.z_r
    sp2 = cloud.sigma_perp ** 2

    def slice_value(z):
        w2 = w0 ** 2 * (1.0 + (z / z_r) ** 2)
        s = power + w2 / sp2
        lag = eval_laguerre(p, _GL_X / s)
        radial = (_GL_W @ lag ** power) / s
        pref = beam.area * (w0 ** 2 / w2) ** (power - 1)
        gouy = math.cos(2.0 * p * power * math.atan(z / z_r))
        return (pref * radial * gouy * cloud.eta0
                * math.exp(-2.0 * (z / cloud.sigma_z) ** 2))

    span = 8.0 * cloud.sigma_z
    val, _ = quad(slice_value, -span, span, epsrel=NEFF_RTOL, limit=200)
    return val


def od_eff(cloud, beam):
    """Effective optical density seen by the fundamental mode."""
    n2 = effective_atom_numbers(cloud, beam, (0, 0), 2)
    return n2 * beam.sigma0 / beam.area


@dataclass
class SpinWaveLattice:
    """Per-slice spin-wave state over l=0 radial orders.

    pops[s, p, k] are complex effective populations of the embedded state
    s in radial order p at slice k; cov is the Hermitian covariance of the
    x_du (and x_wd when a transfer state exists) spin waves with flat
    index a = (k*n_theta + theta)*(p_max+1) + p.
    """

    z: np.ndarray
    dz: float
    p_max: int
    basis: object
    pops: np.ndarray
    cov: np.ndarray
    c_tables: np.ndarray
    g_tables: np.ndarray
    t: float = 0.0

    @property
    def n_slices(self):
        return self.z.size

    @property
    def n_theta(self):
        return 2 if self.basis.has_transfer else 1

    @property
    def block(self):
        return self.n_theta * (self.p_max + 1)

    @property
    def dim(self):
        return self.n_slices * self.block

    def flat_index(self, k, theta, p):
        return (k * self.n_theta + theta) * (self.p_max + 1) + p

    def fundamental_selectors(self):
        """Indicator vectors of the p=0 du (and wd) waves, all slices."""
        e_du = np.zeros(self.dim)
        e_du[[self.flat_index(k, 0, 0) for k in range(self.n_slices)]] = 1.0
        if self.n_theta == 1:
            return e_du, None
        e_wd = np.zeros(self.dim)
        e_wd[[self.flat_index(k, 1, 0) for k in range(self.n_slices)]] = 1.0
        return e_du, e_wd


def _pair_moments(basis):
    """Symmetrized second moments of (x_du[, x_wd]) in the fiducial state."""
    ops, labels = qutrit_operator_basis(basis)
    idx = [labels.index("x_du")]
    if basis.has_transfer:
        idx.append(labels.index("x_wd"))
    up = basis.up
    m = np.empty((len(idx), len(idx)))
    for a, ia in enumerate(idx):
        for b, ib in enumerate(idx):
            prod = 0.5 * (ops[ia] @ ops[ib] + ops[ib] @ ops[ia])
            m[a, b] = np.real(np.vdot(up, prod @ up))
    return m


def lattice_init(cloud, beam, n_slices, p_max, basis):
    """Slice grid, initial populations and covariances, projection tables.

    Slices span +-3 sigma_z with midpoint centers; the fiducial occupies
    the up state everywhere, so only the up population waves and the
    x_du covariance block are nonzero at t=0, diagonal in the slice index.
    """
    if n_slices < 1 or p_max < 0:
        raise ValueError("need n_slices >= 1 and p_max >= 0")
    dz = 2.0 * Z_SPAN_SIGMAS * cloud.sigma_z / n_slices
    z = (-Z_SPAN_SIGMAS * cloud.sigma_z
         + dz * (np.arange(n_slices) + 0.5))
    p_arr = np.arange(p_max + 1)
    n_pop = 3 if basis.has_transfer else 2
    n_theta = 2 if basis.has_transfer else 1
    block = n_theta * (p_max + 1)

    pops = np.zeros((n_pop, p_max + 1, n_slices), dtype=complex)
    cov = np.zeros((n_slices * block, n_slices * block), dtype=complex)
    c_tables = np.empty((n_slices, p_max + 1, p_max + 1), dtype=complex)
    g_tables = np.empty((n_slices, p_max + 1, p_max + 1, p_max + 1),
                        dtype=complex)
    x2 = _pair_moments(basis)

    for k, zk in enumerate(z):
        w2 = beam.w0 ** 2 * (1.0 + (zk / beam.z_r) ** 2)
        phik = math.atan(zk / beam.z_r)
        dens = cloud.eta0 * math.exp(-2.0 * (zk / cloud.sigma_z) ** 2)
        s1 = 1.0 + w2 / cloud.sigma_perp ** 2
        pops[0, :, k] = (dz * dens * beam.area * _lag_single(s1, p_arr)
                         * np.exp(2j * p_arr * phik))
        s2 = 2.0 + w2 / cloud.sigma_perp ** 2
        pair = (_lag_pair(s2, p_max)
                * np.exp(-2j * phik * (p_arr[:, None] - p_arr[None, :])))
        weight = dz * dens * 0.5 * math.pi * beam.w0 ** 4 / w2
        blk = np.kron(x2, weight * pair)
        cov[k * block:(k + 1) * block, k * block:(k + 1) * block] = blk
        tabs = projection_tables(beam, zk, p_max)
        c_tables[k] = tabs["c"]
        g_tables[k] = tabs["G"]

    return SpinWaveLattice(z=z, dz=dz, p_max=p_max, basis=basis, pops=pops,
                           cov=cov, c_tables=c_tables, g_tables=g_tables)


@dataclass(frozen=True)
class ParaxialCoefficients:
    """Immutable slice tables and spin-sector constants for the lattice ODE."""

    ck: np.ndarray
    drift_blocks: np.ndarray
    ghat: np.ndarray
    noise_xx: np.ndarray
    pop_gen: np.ndarray
    probe: np.ndarray
    v: float
    w: float
    kappa: float
    n1_eff: float
    n2_eff: float

    @property
    def n_slices(self):
        return self.ck.shape[0]


def build_coefficients(lattice, cloud, beam, g_f=None, pumping=True):
    """Assemble the evolution tables for one lattice and probe geometry.

    The x_du/x_wd sector must close under the pumping drift (true for the
    stretched, flat and cat fiducials); preparations that couple it to the
    y or up-wr quadratures are refused. kappa is g^2*(sigma0/A)/9 per
    gamma_0, with A the waist-plane mode area.
    """
    basis = lattice.basis
    f = basis.sys.f
    g = g_f if g_f is not None else 1.0 / f
    tables = operator_tables(basis, PumpModel(basis), quads="map")
    labels = tables["quad_labels"]
    idx = [labels.index("x_du")]
    if basis.has_transfer:
        idx.append(labels.index("x_wd"))
    rest = [i for i in range(len(labels)) if i not in idx]
    leak = np.abs(tables["drift"][np.ix_(idx, rest)])
    if rest and leak.max() > SECTOR_TOL:
        raise ValueError(
            "pumping couples the measured quadratures outside the x sector "
            f"(max leak {leak.max():.2e}); this preparation needs the full "
            "quadrature set")
    drift_xx = tables["drift"][np.ix_(idx, idx)]
    noise_xx = tables["noise"][np.ix_(range(tables["noise"].shape[0]),
                                      idx, idx)]
    if not pumping:
        drift_xx = np.zeros_like(drift_xx)
        noise_xx = np.zeros_like(noise_xx)
        pop_gen = np.zeros_like(tables["pop_gen"])
    else:
        pop_gen = tables["pop_gen"]

    # conjugate-first-index variant of the G table: same radial values,
    # Gouy phase exp(-2i*(q + p - p')*Phi_k) instead of +2i*(p + p' - q)
    p_arr = np.arange(lattice.p_max + 1)
    phi_k = np.arctan(lattice.z / beam.z_r)
    ghat = lattice.g_tables * np.exp(
        -4j * phi_k[:, None, None, None] * p_arr[None, :, None, None])

    drift_blocks = np.stack([np.kron(drift_xx, lattice.c_tables[k].conj())
                             for k in range(lattice.n_slices)])
    e_du, e_wd = lattice.fundamental_selectors()
    probe = basis.v_up * e_du
    if e_wd is not None:
        probe = probe + basis.w_up * e_wd
    kappa = g ** 2 * (beam.sigma0 / beam.area) / 9.0
    n1 = effective_atom_numbers(cloud, beam, (0, 0), 1)
    n2 = effective_atom_numbers(cloud, beam, (0, 0), 2)
    return ParaxialCoefficients(
        ck=lattice.c_tables, drift_blocks=drift_blocks, ghat=ghat,
        noise_xx=noise_xx, pop_gen=pop_gen, probe=probe,
        v=basis.v_up, w=basis.w_up, kappa=kappa, n1_eff=n1, n2_eff=n2)


def spinwave_rhs(lattice, coeffs):
    """Time derivatives (dcov, dpops) of the lattice state, per gamma_0."""
    return _rhs(lattice.cov, lattice.pops, coeffs, lattice.block)


def _rhs(cov, pops, cf, block):
    n_slices = cf.n_slices
    dim = cov.shape[0]
    g = cov @ cf.probe
    dcov = (-cf.kappa) * np.outer(g, g.conj())
    m = np.matmul(cf.drift_blocks, cov.reshape(n_slices, block, dim))
    m = m.reshape(dim, dim)
    dcov += m + m.conj().T
    s = np.einsum("kabq,sqk->ksab", cf.ghat, pops)
    blocks = np.einsum("sxy,ksab->kxayb", cf.noise_xx, s)
    blocks = blocks.reshape(n_slices, block, block)
    for k in range(n_slices):
        sl = slice(k * block, (k + 1) * block)
        dcov[sl, sl] += blocks[k]
    dpops = np.einsum("sf,kpq,fqk->spk", cf.pop_gen, cf.ck, pops)
    return dcov, dpops


def _zeta_pair(cov, pops, cf, lattice, target):
    """(keep, drop) squeezing parameters of the fundamental measurement."""
    e_du, e_wd = lattice.fundamental_selectors()
    t_du = cov @ e_du
    s_du = float(np.real(e_du @ t_du))
    if e_wd is not None:
        s_wd = float(np.real(e_wd @ (cov @ e_wd)))
        s_cross = 2.0 * float(np.real(e_wd @ t_du))
    else:
        s_wd = s_cross = 0.0
    pop00 = np.real(pops[:, 0, :].sum(axis=1))
    n_up = pop00[0]
    n_dn = pop00[1] if pop00.size > 1 else 0.0
    n_wr = pop00[2] if pop00.size > 2 else 0.0

    f = lattice.basis.sys.f
    tb = (lattice.basis if target is None
          else embedded_basis_for(target, f))
    fx_wr = tb.fx_wr if tb.has_transfer else 0.0
    fx = (tb.fx_up, tb.fx_down, fx_wr)
    pref = 2.0 * f * cf.n1_eff ** 2 / cf.n2_eff

    quad_keep = (tb.v_up ** 2 * s_du + tb.v_up * tb.w_up * s_cross
                 + tb.w_up ** 2 * s_wd)
    mean_keep = fx[0] * n_up + fx[1] * n_dn + fx[2] * n_wr
    quad_drop = tb.v_up ** 2 * s_du + tb.w_up ** 2 * 0.5 * n_dn
    mean_drop = fx[0] * n_up + fx[1] * n_dn

    def ratio(quad, mean):
        if abs(mean) < 1e-300:
            return np.inf
        return pref * quad / mean ** 2

    return ratio(quad_keep, mean_keep), ratio(quad_drop, mean_drop)


def paraxial_zeta(lattice, cloud, beam, f, target=None, keep=None):
    """Metrological squeezing of the fundamental-mode measurement.

    Normalized to the initial coherent-state projection-noise resolution,
    2f*(N1_eff)^2/N2_eff * Var(F_z^00)/<F_x^00>^2. keep selects the
    readout form; None takes the better of keeping or dropping the
    transfer coherence.
    """
    if abs(lattice.basis.sys.f - f) > 1e-12:
        raise ValueError(f"lattice basis has f = {lattice.basis.sys.f}")
    cf = build_coefficients(lattice, cloud, beam)
    zk, zd = _zeta_pair(lattice.cov, lattice.pops, cf, lattice, target)
    if keep is True:
        return zk if lattice.basis.has_transfer else zd
    if keep is False:
        return zd
    return min(zk, zd)


@dataclass
class ParaxialRun:
    """Recorded fundamental-mode observables on the gamma_0*t grid."""

    t: np.ndarray
    zeta_m: np.ndarray
    zeta_keep: np.ndarray
    zeta_drop: np.ndarray
    var_fund: np.ndarray
    mean_fx: np.ndarray
    lattice: SpinWaveLattice
    cloud: CloudGeometry = None
    beam: BeamGeometry = None
    prep: str = ""
    dt: float = 0.0

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
        """Write the run table; columns match the CLI contract."""
        header = "t_gamma0,varFz00,meanFx00,zeta_m,zeta_m_dB"
        cols = np.column_stack([self.t, self.var_fund, self.mean_fx,
                                self.zeta_m, self.zeta_m_db])
        np.savetxt(path, cols, fmt="%.12e", delimiter=",", header=header,
                   comments="")


def evolve_lattice(lattice, coeffs, t_max, dt=None, target=None):
    """Integrate the slice ODEs with fixed-step RK4, recording every step.

    The step is capped by the initial measurement rate so the early
    Riccati contraction of the fundamental variance is resolved; the
    covariance is re-Hermitized once per step to pin the invariant.
    """
    cov = lattice.cov.copy()
    pops = lattice.pops.copy()
    block = lattice.block
    if dt is None:
        rate = coeffs.kappa * float(
            np.real(coeffs.probe @ (cov @ coeffs.probe)))
        dt = min(DT_CAP, DT_SAFETY / max(rate, 1.0))
    n_steps = max(int(math.ceil(t_max / dt)), 50)
    dt = t_max / n_steps

    e_du, _ = lattice.fundamental_selectors()
    ts = np.empty(n_steps + 1)
    keep = np.empty(n_steps + 1)
    drop = np.empty(n_steps + 1)
    var_f = np.empty(n_steps + 1)
    mean_f = np.empty(n_steps + 1)

    basis = lattice.basis
    fx = (basis.fx_up, basis.fx_down,
          basis.fx_wr if basis.has_transfer else 0.0)

    def record(i, t, cov, pops):
        ts[i] = t
        zk, zd = _zeta_pair(cov, pops, coeffs, lattice, target)
        keep[i] = zk
        drop[i] = zd
        var_f[i] = float(np.real(coeffs.probe @ (cov @ coeffs.probe)))
        pop00 = np.real(pops[:, 0, :].sum(axis=1))
        mean_f[i] = sum(fx[s] * pop00[s] for s in range(pop00.size))

    record(0, 0.0, cov, pops)
    for i in range(1, n_steps + 1):
        k1c, k1p = _rhs(cov, pops, coeffs, block)
        k2c, k2p = _rhs(cov + 0.5 * dt * k1c, pops + 0.5 * dt * k1p,
                        coeffs, block)
        k3c, k3p = _rhs(cov + 0.5 * dt * k2c, pops + 0.5 * dt * k2p,
                        coeffs, block)
        k4c, k4p = _rhs(cov + dt * k3c, pops + dt * k3p, coeffs, block)
        cov = cov + (dt / 6.0) * (k1c + 2.0 * (k2c + k3c) + k4c)
        pops = pops + (dt / 6.0) * (k1p + 2.0 * (k2p + k3p) + k4p)
        cov = 0.5 * (cov + cov.conj().T)
        record(i, i * dt, cov, pops)

    final = SpinWaveLattice(
        z=lattice.z, dz=lattice.dz, p_max=lattice.p_max, basis=basis,
        pops=pops, cov=cov, c_tables=lattice.c_tables,
        g_tables=lattice.g_tables, t=t_max)
    zeta = (np.minimum(keep, drop) if basis.has_transfer else drop)
    return ParaxialRun(t=ts, zeta_m=zeta, zeta_keep=keep, zeta_drop=drop,
                       var_fund=var_f, mean_fx=mean_f, lattice=final, dt=dt)


def simulate_paraxial(cloud, beam, f, prep="scs", target=None, t_max=3.0,
                      p_max=6, n_slices=61, dt=None, g_f=None, pumping=True):
    """One full paraxial run: build the lattice, integrate, record zeta."""
    basis = prep if hasattr(prep, "up") else embedded_basis_for(prep, f)
    lattice = lattice_init(cloud, beam, n_slices, p_max, basis)
    coeffs = build_coefficients(lattice, cloud, beam, g_f=g_f,
                                pumping=pumping)
    run = evolve_lattice(lattice, coeffs, t_max, dt=dt, target=target)
    run.cloud = cloud
    run.beam = beam
    run.prep = prep if isinstance(prep, str) else "custom"
    return run


def _scan_point(payload):
    (ar, w0, n_a, eta0, f, prep, t_max, p_max, n_slices, dt,
     wavelength) = payload
    cloud = CloudGeometry.from_atom_number(n_a, eta0, ar)
    beam = BeamGeometry(w0, wavelength)
    run = simulate_paraxial(cloud, beam, f, prep=prep, t_max=t_max,
                            p_max=p_max, n_slices=n_slices, dt=dt)
    return {"aspect_ratio": ar, "w0_um": 1e4 * w0,
            "od_eff": od_eff(cloud, beam), "peak_db": run.peak_db,
            "t_peak_gamma0": run.t_peak}


def geometry_scan(aspect_ratios, waists, n_a, eta0, f, prep="scs",
                  t_max=3.0, p_max=3, n_slices=31, dt=None,
                  wavelength=LAMBDA_D2, workers=None):
    """Peak squeezing over an (AR, w0) grid at fixed N_A and eta0.

    The cloud volume follows from the fixed atom number and peak density
    at each aspect ratio. One task per grid point; rows come back sorted
    by (AR, w0).
    """
    jobs = [(float(ar), float(w0), float(n_a), float(eta0), f, prep,
             t_max, p_max, n_slices, dt, wavelength)
            for ar in aspect_ratios for w0 in waists]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_scan_point, jobs))
    else:
        rows = [_scan_point(j) for j in jobs]
    return rows


def scan_to_csv(rows, path):
    """Write geometry-scan rows; columns match the CLI contract."""
    header = "AR,w0_um,OD_eff,peak_dB,t_peak_gamma0"
    cols = np.array([[r["aspect_ratio"], r["w0_um"], r["od_eff"],
                      r["peak_db"], r["t_peak_gamma0"]] for r in rows])
    np.savetxt(path, cols, fmt="%.12e", delimiter=",", header=header,
               comments="")
