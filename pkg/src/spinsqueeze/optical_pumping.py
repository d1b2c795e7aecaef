"""Optical-pumping master equation, rates, and Gaussian update matrices.

Everything here is numeric: the rotating-frame dissipator is applied as a
matrix superoperator and all update coefficients are Hilbert-Schmidt
projections onto the orthonormal qutrit operator basis. Closed-form tables
exist only in the test suite, as oracles.

Rates are in units of gamma_s unless a PumpModel carries another value.
"""

from dataclasses import dataclass

import numpy as np

GAMMA_OP_COEFF = 2.0 / 3.0
MODE_CONDITION_TOL = 1e-10
STEP_GUARD = 1e-2


class UnsupportedPreparationError(ValueError):
    """Fiducial state violates the single-mode coherence condition."""


def jump_operators(axis, sys, gamma_s=1.0):
    """Lab-frame jump operators {plus, zero, minus} for a quantization axis.

    axis='parallel': quantization along the probe polarization x, ladder
    operators built from f_y +- i f_z. axis='perpendicular': quantization
    along z. Both sets reconstruct the same lab-frame master equation.
    """
    g = sys.g_f
    eye = np.eye(sys.dim, dtype=complex)
    if axis == "parallel":
        f_minus_x = sys.fy - 1j * sys.fz
        f_plus_x = sys.fy + 1j * sys.fz
        return {
            "plus": (g / 3.0) * np.sqrt(gamma_s / 2.0) * f_minus_x,
            "zero": (2.0 / 3.0) * np.sqrt(gamma_s) * eye,
            "minus": (g / 3.0) * np.sqrt(gamma_s / 2.0) * f_plus_x,
        }
    if axis == "perpendicular":
        return {
            "plus": np.sqrt(gamma_s / 2.0) * ((2.0 / 3.0) * eye - (g / 3.0) * sys.fz),
            "zero": (g / 3.0) * np.sqrt(gamma_s) * sys.fy,
            "minus": np.sqrt(gamma_s / 2.0) * ((2.0 / 3.0) * eye + (g / 3.0) * sys.fz),
        }
    raise ValueError(f"unknown quantization axis {axis!r}")


def rotating_jump_operators(sys, gamma_s=1.0):
    """Jump decomposition of the rotating-frame dissipator (four operators)."""
    g = sys.g_f
    eye = np.eye(sys.dim, dtype=complex)
    return [
        (2.0 / 3.0) * np.sqrt(gamma_s) * eye,
        (g / 3.0) * np.sqrt(gamma_s) * sys.fz,
        (g / 3.0) * np.sqrt(gamma_s / 2.0) * sys.fy,
        (g / 3.0) * np.sqrt(gamma_s / 2.0) * sys.fx,
    ]


class PumpModel:
    """Rotating-frame pumping model tied to one embedded basis.

    Carries the dissipator, the jump sets, the qutrit projector P, and the
    projection flag (microwave removal of states leaking out of the qutrit;
    disabling it reproduces the uncontrolled dynamics).
    """

    def __init__(self, basis, gamma_s=1.0, axis="parallel", project=True):
        self.basis = basis
        self.sys = basis.sys
        self.gamma_s = float(gamma_s)
        self.axis = axis
        self.project = project
        self.lab_jumps = jump_operators(axis, self.sys, gamma_s=gamma_s)
        self.rotating_jumps = rotating_jump_operators(self.sys, gamma_s=gamma_s)
        proj = np.zeros((self.sys.dim, self.sys.dim), dtype=complex)
        for vec in basis.states():
            proj += np.outer(vec, vec.conj())
        self.qutrit_projector = proj

    @property
    def gamma_op(self):
        return GAMMA_OP_COEFF * self.gamma_s

    def dissipator(self, op):
        """Rotating-frame D(op), per unit gamma_s (self-adjoint form)."""
        g2 = self.sys.g_f ** 2
        fx, fy, fz = self.sys.fx, self.sys.fy, self.sys.fz
        return (-(2.0 / 9.0) * op
                + (g2 / 9.0) * (fz @ op @ fz
                                + 0.5 * (fy @ op @ fy)
                                + 0.5 * (fx @ op @ fx)))

    def dissipator_projected(self, op):
        """D with the qutrit projection applied to the output when enabled."""
        out = self.dissipator(op)
        if self.project:
            p = self.qutrit_projector
            out = p @ out @ p
        return out

    def noise_superop(self, op_a, op_b):
        """Ito noise bilinear: (1/2)D({a,b}) - (1/2){D(a),b} - (1/2){a,D(b)}."""
        d = self.dissipator_projected
        anti = op_a @ op_b + op_b @ op_a
        da, db = d(op_a), d(op_b)
        return 0.5 * (d(anti) - (da @ op_b + op_b @ da) - (op_a @ db + db @ op_a))

    def lab_lindblad_superop(self, jumps):
        """Matrix of rho -> sum_q W rho W^dag - Gamma_op rho on vec(rho)."""
        dim = self.sys.dim
        out = -self.gamma_op * np.eye(dim * dim, dtype=complex)
        for w in jumps:
            out += np.kron(w, w.conj())
        return out


def qutrit_operator_basis(basis):
    """Hilbert-Schmidt orthonormal operator basis of the embedded space.

    Ordering: x_du, y_du[, x_wd, y_wd, x_uw, y_uw], n_up, n_down[, n_wr].
    The quadrature pairs come first so table slices map directly onto the
    Gaussian quadrature ordering.
    """
    up, dn, wr = basis.up, basis.down, basis.wr

    def pair(a, b):
        lower = np.outer(a, b.conj())     # |a><b|
        x = (lower + lower.conj().T) / np.sqrt(2.0)
        y = 1j * (lower - lower.conj().T) / np.sqrt(2.0)
        return x, y

    x_du, y_du = pair(dn, up)
    ops = [x_du, y_du]
    labels = ["x_du", "y_du"]
    if wr is not None:
        x_wd, y_wd = pair(wr, dn)
        x_uw, y_uw = pair(up, wr)
        ops += [x_wd, y_wd, x_uw, y_uw]
        labels += ["x_wd", "y_wd", "x_uw", "y_uw"]
    ops += [np.outer(up, up.conj()), np.outer(dn, dn.conj())]
    labels += ["n_up", "n_down"]
    if wr is not None:
        ops.append(np.outer(wr, wr.conj()))
        labels.append("n_wr")
    return ops, labels


def _hs(a, b):
    """Hilbert-Schmidt coefficient Tr(a b) for Hermitian a, b."""
    return float(np.real(np.trace(a @ b)))


def rates(basis, model):
    """Scattering, flip, and loss rates from the rotating-frame jump set.

    gamma_loss_* follow the matrix-element convention (they count spin flips
    as departures); net_loss_* are the true trace losses out of the ground
    manifold, which vanish identically at f = 1/2.
    """
    up, dn = basis.up, basis.down
    jumps = model.rotating_jumps
    diag_up = sum(abs(np.vdot(up, w @ up)) ** 2 for w in jumps)
    diag_dn = sum(abs(np.vdot(dn, w @ dn)) ** 2 for w in jumps)
    norm_up = sum(np.real(np.vdot(w @ up, w @ up)) for w in jumps)
    norm_dn = sum(np.real(np.vdot(w @ dn, w @ dn)) for w in jumps)
    return {
        "gamma_op": model.gamma_op,
        "gamma_flip": sum(abs(np.vdot(dn, w @ up)) ** 2 for w in jumps),
        "gamma_loss_up": model.gamma_op - diag_up,
        "gamma_loss_down": model.gamma_op - diag_dn,
        "net_loss_up": model.gamma_op - norm_up,
        "net_loss_down": model.gamma_op - norm_dn,
    }


def coherence_diagnostics(basis, model):
    """Pump-induced coherence scalars of the raw (unprojected) dissipator.

    C: rate at which down-up correlations weighted by Delta f_z develop.
    T: transfer-of-coherence rate into the wr state (None without wr).
    N: direct fiducial -> wr feeding rate, must vanish for the qutrit
    picture. mode_condition: pairwise up-wr coherence growth, must vanish.
    keep_transfer: T > 0 with negligible N.
    """
    up, dn, wr = basis.up, basis.down, basis.wr
    gs = model.gamma_s
    d = model.dissipator

    dfz = basis.sys.fz - basis.fz_up * np.eye(basis.sys.dim)
    adj = d(dfz) + GAMMA_OP_COEFF * dfz     # channel adjoint applied to dfz
    c_up = 2.0 * np.sqrt(basis.var_up) * np.real(np.vdot(up, adj @ dn)) * gs

    if wr is None:
        return {"C": c_up, "T": None, "N": None,
                "mode_condition": None, "keep_transfer": False}

    t_up = np.real(np.vdot(wr, d(np.outer(dn, up.conj())) @ dn)) * gs
    n_up = np.real(np.vdot(wr, d(np.outer(up, up.conj())) @ wr)) * gs
    mode = np.real(np.vdot(up, d(np.outer(up, dn.conj())) @ wr)) * gs
    return {
        "C": c_up,
        "T": t_up,
        "N": n_up,
        "mode_condition": mode,
        "keep_transfer": bool(t_up > 0.0 and n_up < 1e-12 * gs),
    }


@dataclass
class PumpUpdates:
    """First-order Gaussian channel for one pumping step of gamma_s*dt.

    m_a acts on the quadrature vector, j on the populations. The noise
    matrix is population weighted, so the per-state tables are stored and
    evaluated against the populations current at application time.
    """

    m_a: np.ndarray
    j: np.ndarray
    noise_up: np.ndarray
    noise_down: np.ndarray
    noise_wr: np.ndarray
    gen_m: np.ndarray
    gen_j: np.ndarray
    dt_gamma: float
    keep_transfer: bool
    quad_labels: tuple

    def noise_matrix(self, populations):
        """N_A for the given populations; the wr weight is out of model."""
        n_up, n_dn = populations[0], populations[1]
        return self.dt_gamma * (n_up * self.noise_up + n_dn * self.noise_down)


def operator_tables(basis, model, quads):
    """Drift, per-state noise, and population generators over the qutrit ops.

    quads='map' uses the (x_du, y_du, x_wd, y_wd) block tracked by the
    Gaussian channel; quads='full' adds (x_uw, y_uw) for the direct
    covariance ODEs. Entries are per unit gamma_s*t.
    """
    ops, labels = qutrit_operator_basis(basis)
    n_pop = 3 if basis.has_transfer else 2
    quad_ops = ops[:-n_pop]
    quad_labels = labels[:-n_pop]
    pop_ops = ops[-n_pop:]
    if quads == "map" and basis.has_transfer:
        quad_ops = quad_ops[:4]
        quad_labels = quad_labels[:4]
    elif quads not in ("map", "full"):
        raise ValueError(f"unknown quad set {quads!r}")

    nq = len(quad_ops)
    d = model.dissipator_projected
    d_quads = [d(op) for op in quad_ops]
    drift = np.array([[_hs(d_quads[a], quad_ops[b]) for b in range(nq)]
                      for a in range(nq)])
    noise = np.array([[[_hs(model.noise_superop(quad_ops[a], quad_ops[b]),
                            pop_ops[p]) for b in range(nq)]
                       for a in range(nq)] for p in range(n_pop)])
    d_pops = [d(op) for op in pop_ops]
    pop_gen = np.array([[_hs(d_pops[a], pop_ops[b]) for b in range(n_pop)]
                        for a in range(n_pop)])
    return {"quad_ops": quad_ops, "quad_labels": tuple(quad_labels),
            "drift": drift, "noise": noise, "pop_gen": pop_gen}


def build_updates(basis, model, dt, keep_transfer=None):
    """First-order update matrices M_A, J and noise tables for one step.

    dt is in units of 1/gamma_s when model.gamma_s is 1. Refuses steps
    beyond the first-order guard and preparations whose up-wr coherence
    would leave the tracked mode.
    """
    step = model.gamma_s * dt
    if step > STEP_GUARD:
        raise ValueError(
            f"gamma_s*dt = {step:.3e} exceeds the first-order guard {STEP_GUARD}")

    diag = coherence_diagnostics(basis, model)
    if basis.has_transfer and abs(diag["mode_condition"]) > MODE_CONDITION_TOL * model.gamma_s:
        raise UnsupportedPreparationError(
            "fiducial state develops coherence outside the tracked mode "
            f"(condition value {diag['mode_condition']:.3e})")
    keep = diag["keep_transfer"] if keep_transfer is None else bool(keep_transfer)
    keep = keep and basis.has_transfer

    tables = operator_tables(basis, model, quads="map")
    drift, noise, pop_gen = tables["drift"], tables["noise"], tables["pop_gen"]
    quad_labels = tables["quad_labels"]
    if basis.has_transfer and not keep:
        # transfer eliminated: atoms pumped toward wr leave the ensemble, so
        # the wr population stays empty and its inflow is counted as loss.
        # The wd quadratures stay in the dynamics at shot noise; the readout
        # form discards them.
        pop_gen = pop_gen.copy()
        pop_gen[2, :] = 0.0
        pop_gen[:, 2] = 0.0

    nq = drift.shape[0]
    n_pop = pop_gen.shape[0]
    noise_wr = noise[2] if noise.shape[0] == 3 else np.zeros((nq, nq))
    return PumpUpdates(
        m_a=np.eye(nq) + step * drift,
        j=np.eye(n_pop) + step * pop_gen,
        noise_up=noise[0],
        noise_down=noise[1],
        noise_wr=noise_wr,
        gen_m=drift,
        gen_j=pop_gen,
        dt_gamma=step,
        keep_transfer=keep,
        quad_labels=quad_labels,
    )
