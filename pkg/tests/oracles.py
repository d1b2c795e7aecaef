"""Reference constructions and closed forms the package is tested against.

Nothing here imports from spinsqueeze. Spin matrices come from the explicit
ladder recursion, embedded triples from a direct Gram-Schmidt, the pumping
update tables from the closed-form matrices below, the f=1 benchmark from
its own fixed-step integrator, and the beam-overlap integrals from direct
quadrature of independently written mode functions. Tests import from this
module and compare.
"""

import math

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import quad


# ---------------------------------------------------------------- spin algebra

def ladder_spin(f):
    """(fx, fy, fz) in the m_z = f..-f ordering, built entry by entry."""
    dim = int(round(2 * f)) + 1
    m = f - np.arange(dim)
    fz = np.diag(m.astype(complex))
    fp = np.zeros((dim, dim), dtype=complex)
    for i in range(dim - 1):
        # f_+ |f, m> = sqrt(f(f+1) - m(m+1)) |f, m+1>; source column i+1
        mm = m[i + 1]
        fp[i, i + 1] = math.sqrt(f * (f + 1) - mm * (mm + 1))
    fx = (fp + fp.conj().T) / 2.0
    fy = (fp - fp.conj().T) / 2.0j
    return fx, fy, fz


def scs_state(f):
    """|f, m_x=f> in the z basis: binomial amplitudes, all positive."""
    dim = int(round(2 * f)) + 1
    amps = [math.sqrt(math.comb(dim - 1, k)) for k in range(dim)]
    return np.array(amps, dtype=complex) / 2.0 ** f


def mx0_state(f):
    """|f, m_x=0> from the eigendecomposition of fx (integer f)."""
    fx, _, _ = ladder_spin(f)
    vals, vecs = np.linalg.eigh(fx)
    vec = vecs[:, int(np.argmin(np.abs(vals)))]
    lead = vec[np.argmax(np.abs(vec))]
    return vec * (abs(lead) / lead)


def cat_state(f):
    dim = int(round(2 * f)) + 1
    vec = np.zeros(dim, dtype=complex)
    vec[0] = vec[-1] = 1.0 / math.sqrt(2.0)
    return vec


def yurke_state(f, alpha):
    dim = int(round(2 * f)) + 1
    m = f - np.arange(dim)
    vec = np.zeros(dim, dtype=complex)
    s, c = math.sin(alpha), math.cos(alpha)
    vec[np.argmin(np.abs(m - 1))] = s / math.sqrt(2.0)
    vec[np.argmin(np.abs(m))] = c
    vec[np.argmin(np.abs(m + 1))] = s / math.sqrt(2.0)
    return vec


def embedded_triple(psi, f):
    """up/down/wr by direct Gram-Schmidt on (psi, fz psi, fz^2 psi).

    Returns the scalars the embedded basis carries; wr entries are None
    when the transfer weight vanishes.
    """
    fx, _, fz = ladder_spin(f)
    psi = np.asarray(psi, dtype=complex)
    up = psi / np.linalg.norm(psi)
    fz_up = np.real(np.vdot(up, fz @ up))
    d = fz @ up - fz_up * up
    amp = np.linalg.norm(d)
    down = d / amp
    fz_dn = np.real(np.vdot(down, fz @ down))
    t = fz @ down - fz_dn * down - amp * up
    t_norm = np.linalg.norm(t)
    out = {
        "up": up, "down": down,
        "var_up": amp ** 2, "v_up": math.sqrt(2.0) * amp,
        "w_up": math.sqrt(2.0) * t_norm,
        "var_down": np.real(np.vdot(fz @ down, fz @ down)) - fz_dn ** 2,
        "fz_up": fz_up, "fz_down": fz_dn,
        "fx_up": np.real(np.vdot(up, fx @ up)),
        "fx_down": np.real(np.vdot(down, fx @ down)),
        "wr": None, "fz_wr": None, "fx_wr": None,
    }
    if t_norm > 1e-9:
        wr = t / t_norm
        out["wr"] = wr
        out["fz_wr"] = np.real(np.vdot(wr, fz @ wr))
        out["fx_wr"] = np.real(np.vdot(wr, fx @ wr))
    return out


# Closed scalars of the named preparations.
SCS_VAR_UP = lambda f: f / 2.0          # noqa: E731
CAT_VAR_UP = lambda f: f ** 2           # noqa: E731
YURKE_ZETA_UP = lambda f, a: 1.0 / ((f + 1.0) * math.cos(a) ** 2)  # noqa: E731


# ------------------------------------------------------------ pump generators
# Per-unit-gamma_s generators of the first-order pumping updates:
# quad_gen is the damping matrix on (x_du, y_du[, x_wd, y_wd]); noise_up and
# noise_dn multiply the up/down populations in the injected noise; pop_gen
# generates the (n_up, n_down) flow. Entries are exact rationals in f.

def _sym4(d0, d1, d2, d3, off02, off13):
    m = np.diag([d0, d1, d2, d3])
    m[0, 2] = m[2, 0] = off02
    m[1, 3] = m[3, 1] = off13
    return m


def scs_pop_gen(f):
    return np.array([
        [-1.0 / 6.0, 1.0 / (12 * f)],
        [1.0 / (12 * f), -(3 * f ** 2 + 2 * f - 1) / (18 * f ** 2)],
    ])


def scs_quad_gen(f):
    r = math.sqrt(f * (2 * f - 1))
    return _sym4(-(6 * f + 1) / (36 * f), -(2 * f + 1) / (12 * f),
                 -(6 * f ** 2 + 4 * f - 3) / (36 * f ** 2),
                 -(6 * f ** 2 + 8 * f - 5) / (36 * f ** 2),
                 r / (12 * f ** 2), r / (12 * f ** 2))


def scs_noise_up(f):
    r = math.sqrt(f * (2 * f - 1))
    return _sym4((6 * f + 5) / (72 * f), (2 * f + 3) / (24 * f),
                 1.0 / (24 * f), 1.0 / (24 * f),
                 -r / (24 * f ** 2), -r / (24 * f ** 2))


def scs_noise_dn(f):
    r = math.sqrt(f * (2 * f - 1))
    return _sym4((6 * f ** 2 + f + 2) / (72 * f ** 2),
                 (6 * f ** 2 + 5 * f + 2) / (72 * f ** 2),
                 (6 * f ** 2 + 10 * f - 7) / (72 * f ** 2),
                 (6 * f ** 2 + 18 * f - 11) / (72 * f ** 2),
                 -5 * r / (72 * f ** 2), -7 * r / (72 * f ** 2))


def cat_pop_gen():
    return np.array([[-2.0 / 9.0, 1.0 / 9.0], [1.0 / 9.0, -2.0 / 9.0]])


def cat_quad_gen():
    return np.diag([-1.0 / 9.0, -1.0 / 3.0])


def cat_noise():
    """Same table for the up and down weights."""
    return np.diag([1.0 / 18.0, 5.0 / 18.0])


def mx0_pop_gen(f):
    o = (f + 1) / (18 * f)
    return np.array([[-2.0 / 9.0, o], [o, -2.0 / 9.0]])


def _mx0_q(f):
    return math.sqrt(f * (f + 1) * (f - 1) * (f + 2) / 2.0)


def mx0_quad_gen(f):
    q = _mx0_q(f)
    return _sym4(-(3 * f - 1) / (18 * f), -(5 * f + 1) / (18 * f),
                 -(7 * f ** 2 - f + 2) / (36 * f ** 2),
                 -(9 * f ** 2 + f - 2) / (36 * f ** 2),
                 q / (18 * f ** 2), q / (18 * f ** 2))


def mx0_noise_up(f):
    q = _mx0_q(f)
    return _sym4((3 * f - 1) / (36 * f), (7 * f + 3) / (36 * f),
                 (f + 1) / (36 * f), (f + 1) / (36 * f),
                 -q / (36 * f ** 2), -q / (36 * f ** 2))


def mx0_noise_dn(f):
    q = _mx0_q(f)
    return _sym4((3 * f - 1) / (36 * f), (7 * f + 3) / (36 * f),
                 (7 * f ** 2 - f + 2) / (72 * f ** 2),
                 (11 * f ** 2 + 3 * f - 6) / (72 * f ** 2),
                 -q / (36 * f ** 2), -q / (12 * f ** 2))


def pump_tables(prep, f):
    """Generator tables for one preparation, sized to its quadrature set.

    Degeneracies: at f=1/2 the cat state is a spin coherent state, so the
    SCS tables apply; at f=1 the m_x=0 state is a cat, so the cat tables
    apply. Transfer-free cases restrict to the (x_du, y_du) block.
    """
    if prep == "scs" or (prep == "cat" and f == 0.5):
        if f == 0.5:
            return {"quad_gen": scs_quad_gen(f)[:2, :2],
                    "noise_up": scs_noise_up(f)[:2, :2],
                    "noise_dn": scs_noise_dn(f)[:2, :2],
                    "pop_gen": scs_pop_gen(f)}
        return {"quad_gen": scs_quad_gen(f), "noise_up": scs_noise_up(f),
                "noise_dn": scs_noise_dn(f), "pop_gen": scs_pop_gen(f)}
    if prep == "cat" or (prep == "mx0" and f == 1.0):
        return {"quad_gen": cat_quad_gen(), "noise_up": cat_noise(),
                "noise_dn": cat_noise(), "pop_gen": cat_pop_gen()}
    if prep == "mx0":
        return {"quad_gen": mx0_quad_gen(f), "noise_up": mx0_noise_up(f),
                "noise_dn": mx0_noise_dn(f), "pop_gen": mx0_pop_gen(f)}
    raise ValueError(prep)


# ------------------------------------------------------------- coherent forms

def qnd_coherent_zeta(xi_total):
    return 1.0 / (1.0 + xi_total)


def double_pass_variances(xi):
    """(squeezed, anti-squeezed) du eigen-variances of one coherent double
    pass with per-pass coupling xi, in units of the initial variance."""
    root = xi * math.sqrt(xi ** 2 + 4 * xi + 8)
    return ((2 + 2 * xi + xi ** 2 - root) / 4.0,
            (2 + 2 * xi + xi ** 2 + root) / 4.0)


def eraser_asymptote(xi_total):
    return 1.0 / xi_total ** 2


def phase_matching_asymptote(xi_total):
    return math.exp(-xi_total)


# ------------------------------------------------------- exact f=1 benchmark

def f1_reference(kappa, n_a, t_max, dt=2.5e-4):
    """Fixed-step RK4 of the f=1 conditioned-variance system.

    Variables: full Delta F_z^2 and the three m_x sublevel numbers.
    Returns (t, zeta) on the step grid.
    """

    def rhs(y):
        v, n1, n0, nm = y
        total = n1 + n0 + nm
        return np.array([
            -kappa * v * v - (2.0 / 9.0) * v + total / 9.0,
            -n1 / 9.0 + n0 / 18.0,
            -2.0 * n0 / 9.0 + (n1 + nm) / 18.0,
            -nm / 9.0 + n0 / 18.0,
        ])

    n_steps = int(round(t_max / dt))
    y = np.array([n_a / 2.0, n_a, 0.0, 0.0])
    t = np.linspace(0.0, n_steps * dt, n_steps + 1)
    out = np.empty((n_steps + 1, 4))
    out[0] = y
    for k in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    v = out[:, 0]
    total = out[:, 1:].sum(axis=1)
    fx = n_a * np.exp(-t / 6.0)
    return t, 2.0 * total * v / fx ** 2


# ------------------------------------------------------------- paraxial forms

def lg_mode(p, r, z, w0, zr):
    """l=0 Laguerre-Gauss mode, area-normalized (u_p(0,0)=1 for p=0)."""
    w = w0 * math.sqrt(1.0 + (z / zr) ** 2)
    gouy = math.atan2(z, zr)
    k0 = 2.0 * zr / w0 ** 2
    x = 2.0 * r ** 2 / w ** 2
    curve = k0 * r ** 2 * z / (2.0 * (z ** 2 + zr ** 2))
    return ((w0 / w) * np.polynomial.laguerre.lagval(x, [0.0] * p + [1.0])
            * math.exp(-r ** 2 / w ** 2)
            * np.exp(1j * (curve - (2 * p + 1) * gouy)))


def c_entry_brute(p, q, z, w0, zr):
    """(1/A) Int d^2r |u00|^2 u_p^* u_q by adaptive radial quadrature."""
    area = math.pi * w0 ** 2 / 2.0

    def part(r, which):
        val = (abs(lg_mode(0, r, z, w0, zr)) ** 2
               * np.conj(lg_mode(p, r, z, w0, zr))
               * lg_mode(q, r, z, w0, zr)) / area
        return (val.real if which == 0 else val.imag) * 2 * math.pi * r

    hi = 60.0 * w0 * math.sqrt(1.0 + (z / zr) ** 2)
    re, _ = quad(part, 0, hi, args=(0,), limit=300)
    im, _ = quad(part, 0, hi, args=(1,), limit=300)
    return re + 1j * im


def g_entry_brute(p, q, s, z, w0, zr):
    """(1/A) Int d^2r u_s |u00|^2 u00 u_p^* u_q^* by radial quadrature."""
    area = math.pi * w0 ** 2 / 2.0

    def part(r, which):
        u0 = lg_mode(0, r, z, w0, zr)
        val = (lg_mode(s, r, z, w0, zr) * abs(u0) ** 2 * u0
               * np.conj(lg_mode(p, r, z, w0, zr))
               * np.conj(lg_mode(q, r, z, w0, zr))) / area
        return (val.real if which == 0 else val.imag) * 2 * math.pi * r

    hi = 60.0 * w0 * math.sqrt(1.0 + (z / zr) ** 2)
    re, _ = quad(part, 0, hi, args=(0,), limit=300)
    im, _ = quad(part, 0, hi, args=(1,), limit=300)
    return re + 1j * im


def c_closed(p, q, z, zr):
    """Closed form of the two-mode overlap table entry."""
    zeta = z / zr
    return (0.5 ** (p + q + 1) * math.comb(p + q, p)
            * np.exp(2j * (p - q) * math.atan(zeta)) / (1.0 + zeta ** 2))


def laplace_laguerre(s, q):
    """Int_0^inf e^{-s t} L_q(t) dt = (s-1)^q / s^(q+1)."""
    return (s - 1.0) ** q / s ** (q + 1)


def _laguerre_coeffs(n):
    """Monomial coefficients of L_n, exact in float for small n."""
    return npoly.polyfromroots([])[:0].tolist() if False else [
        (-1) ** k * math.comb(n, k) / math.factorial(k) for k in range(n + 1)
    ]


def laguerre_product_integral(s, orders):
    """Int_0^inf e^{-s t} prod_i L_{orders[i]}(t) dt via monomial expansion.

    Exact apart from float rounding: the product is a polynomial and
    Int t^k e^{-s t} = k!/s^(k+1).
    """
    poly = np.array([1.0])
    for n in orders:
        poly = npoly.polymul(poly, np.array(_laguerre_coeffs(n)))
    return sum(a * math.factorial(k) / s ** (k + 1)
               for k, a in enumerate(poly))


def neff_brute(p, power, w0, zr, eta0, sigma_perp, sigma_z):
    """Effective atom number by direct 2D quadrature over the cloud."""

    def dens(r, z):
        return eta0 * math.exp(-r ** 2 / sigma_perp ** 2
                               - z ** 2 / sigma_z ** 2)

    def inner(z):
        def igr(r):
            b = (np.conj(lg_mode(p, r, z, w0, zr))
                 * lg_mode(0, r, z, w0, zr)) ** power
            return (dens(r, z) * b).real * 2 * math.pi * r
        hi = 30.0 * max(w0 * math.sqrt(1 + (z / zr) ** 2), sigma_perp)
        val, _ = quad(igr, 0, hi, limit=200)
        return val

    val, _ = quad(inner, -8 * sigma_z, 8 * sigma_z, limit=200)
    return val
