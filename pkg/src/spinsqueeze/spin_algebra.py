"""Spin-f operators, fiducial state preparations, and the embedded qutrit basis."""

import numpy as np

ORTHO_TOL = 1e-12
W_THRESHOLD = 1e-9


class SpinError(ValueError):
    """Invalid spin argument or degenerate state preparation."""


def _as_half_integer(f):
    two_f = 2.0 * float(f)
    if f <= 0 or abs(two_f - round(two_f)) > 1e-12:
        raise SpinError(f"f must be a positive half-integer, got {f!r}")
    return round(two_f) / 2.0


def _is_integer_spin(f):
    return abs(f - round(f)) < 1e-12


class SpinSystem:
    """Angular-momentum matrices for a single spin f.

    Matrices live in the f_z eigenbasis ordered m_z = f ... -f, so index
    i holds m = f - i. The Lande factor defaults to the upper hyperfine
    branch 1/f; pass g_f explicitly (e.g. 1/(f+1)) for the lower branch.
    """

    def __init__(self, f, g_f=None):
        self.f = _as_half_integer(f)
        self.dim = int(round(2 * self.f)) + 1
        m = self.f - np.arange(self.dim)
        self.m_values = m
        self.fz = np.diag(m.astype(complex))
        # f_+ |f,m> = sqrt(f(f+1) - m(m+1)) |f,m+1>; column index is the source m
        raise_amp = np.sqrt(self.f * (self.f + 1) - m[1:] * (m[1:] + 1))
        fp = np.zeros((self.dim, self.dim), dtype=complex)
        fp[np.arange(self.dim - 1), np.arange(1, self.dim)] = raise_amp
        self.fx = (fp + fp.conj().T) / 2.0
        self.fy = (fp - fp.conj().T) / 2.0j
        self.g_f = (1.0 / self.f) if g_f is None else float(g_f)

    def index_of_m(self, m):
        """Basis index of |f, m_z=m>."""
        idx = round(self.f - m)
        if abs(self.f - m - idx) > 1e-12 or not 0 <= idx < self.dim:
            raise SpinError(f"m={m} is not a valid projection for f={self.f}")
        return int(idx)


def spin_matrices(f, g_f=None):
    """Spin system for quantum number f (fx, fy, fz and metadata)."""
    return SpinSystem(f, g_f=g_f)


def rotation_from_generator(generator, angle):
    """exp(-i*angle*G) for Hermitian G via exact eigendecomposition."""
    vals, vecs = np.linalg.eigh(generator)
    return (vecs * np.exp(-1j * angle * vals)) @ vecs.conj().T


def x_eigenstate(sys, m):
    """|f, m_x=m> obtained by rotating the z eigenstate with exp(-i pi/2 f_y)."""
    u = rotation_from_generator(sys.fy, np.pi / 2.0)
    vec = np.zeros(sys.dim, dtype=complex)
    vec[sys.index_of_m(m)] = 1.0
    return u @ vec


def prepare_fiducial(name, f, alpha=None):
    """Normalized fiducial state vector in the z basis (m_z = f ... -f).

    Supported names: scs, cat, mx0, yurke (integer f), half_yurke
    (half-integer f). The Yurke family takes the mixing angle alpha.
    """
    sys = spin_matrices(f)
    f = sys.f
    integer_f = _is_integer_spin(f)
    vec = np.zeros(sys.dim, dtype=complex)

    if name == "scs":
        return x_eigenstate(sys, f)
    if name == "cat":
        vec[sys.index_of_m(f)] = 1.0
        vec[sys.index_of_m(-f)] = 1.0
        return vec / np.sqrt(2.0)
    if name == "mx0":
        if not integer_f:
            raise SpinError("mx0 needs integer f (m_x=0 does not exist otherwise)")
        return x_eigenstate(sys, 0)
    if name == "yurke":
        if alpha is None:
            raise SpinError("yurke requires the mixing angle alpha")
        if not integer_f:
            raise SpinError("yurke needs integer f; use half_yurke instead")
        s, c = np.sin(alpha), np.cos(alpha)
        vec[sys.index_of_m(1)] = s / np.sqrt(2.0)
        vec[sys.index_of_m(0)] = c
        vec[sys.index_of_m(-1)] = s / np.sqrt(2.0)
        return vec
    if name == "half_yurke":
        if alpha is None:
            raise SpinError("half_yurke requires the mixing angle alpha")
        if integer_f:
            raise SpinError("half_yurke needs half-integer f; use yurke instead")
        s, c = np.sin(alpha), np.cos(alpha)
        vec[sys.index_of_m(1.5)] = s / np.sqrt(2.0)
        vec[sys.index_of_m(0.5)] = c
        vec[sys.index_of_m(-0.5)] = s / np.sqrt(2.0)
        return vec
    raise SpinError(f"unknown preparation {name!r}")


class EmbeddedBasis:
    """Fiducial/coupled/transfer triple for one spin with its derived scalars.

    up, down, wr are orthonormal vectors in the (2f+1)-dimensional space
    (wr is None when the preparation has no transfer state). v_up and w_up
    are the f_z ladder amplitudes; fz_*/fx_* are single-spin means and
    zeta_up is the single-spin metrological squeezing parameter.
    """

    def __init__(self, sys, up, down, wr, v_up, w_up, var_up, var_down,
                 fz_means, fx_means, zeta_up):
        self.sys = sys
        self.f = sys.f
        self.up = up
        self.down = down
        self.wr = wr
        self.v_up = v_up
        self.w_up = w_up
        self.var_up = var_up
        self.var_down = var_down
        self.fz_up, self.fz_down, self.fz_wr = fz_means
        self.fx_up, self.fx_down, self.fx_wr = fx_means
        self.zeta_up = zeta_up

    @property
    def has_transfer(self):
        return self.wr is not None

    def states(self):
        """List of the embedded states, two or three entries."""
        if self.wr is None:
            return [self.up, self.down]
        return [self.up, self.down, self.wr]


def build_embedded_basis(up, sys):
    """Embed a fiducial state: coupled state from f_z action, then transfer.

    down ~ (f_z - <f_z>_up)|up>; wr ~ component of f_z|down> orthogonal to
    the pair, absent when its weight w_up falls below 1e-9 (cat case).
    """
    up = np.asarray(up, dtype=complex)
    norm = np.linalg.norm(up)
    if abs(norm - 1.0) > 1e-9:
        raise SpinError("fiducial state must be normalized")
    up = up / norm

    fz, fx = sys.fz, sys.fx
    fz_up = np.real(np.vdot(up, fz @ up))
    d = fz @ up - fz_up * up
    amp = np.linalg.norm(d)
    var_up = amp ** 2
    if amp < W_THRESHOLD:
        raise SpinError(
            "no coupled state exists when the fiducial state is an eigenstate")
    down = d / amp

    fz_down = np.real(np.vdot(down, fz @ down))
    var_down = np.real(np.vdot(fz @ down, fz @ down)) - fz_down ** 2
    # residual of f_z|down> outside span{up, down}; its weight is w_up/sqrt(2)
    t = fz @ down - fz_down * down - amp * up
    t_norm = np.linalg.norm(t)
    w_up = np.sqrt(2.0) * t_norm
    if w_up >= W_THRESHOLD:
        wr = t / t_norm
        fz_wr = np.real(np.vdot(wr, fz @ wr))
        fx_wr = np.real(np.vdot(wr, fx @ wr))
    else:
        wr, w_up = None, 0.0
        fz_wr = fx_wr = np.nan

    fx_up = np.real(np.vdot(up, fx @ up))
    fx_down = np.real(np.vdot(down, fx @ down))
    zeta_up = 2.0 * sys.f * var_up / fx_up ** 2 if abs(fx_up) > 1e-300 else np.inf

    return EmbeddedBasis(
        sys, up, down, wr,
        v_up=np.sqrt(2.0 * var_up), w_up=w_up,
        var_up=var_up, var_down=var_down,
        fz_means=(fz_up, fz_down, fz_wr),
        fx_means=(fx_up, fx_down, fx_wr),
        zeta_up=zeta_up,
    )


def embedded_basis_for(name, f, alpha=None):
    """Convenience: prepare_fiducial then build_embedded_basis."""
    sys = spin_matrices(f)
    return build_embedded_basis(prepare_fiducial(name, f, alpha=alpha), sys)


def collective_coupling_xi(basis, params):
    """Collective coupling xi = chi^2 N_L N_A (Delta f_z^2)_up for one pulse."""
    return params.chi ** 2 * params.n_l * params.n_a * basis.var_up
