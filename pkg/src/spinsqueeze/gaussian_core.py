"""Covariance-matrix engine for the joint atom-light Gaussian state.

Two normalization regimes coexist and never mix. In the unit regime every
mode is a textbook bosonic mode (vacuum variance 1/2, commutator 1). In the
population regime quadratures carry atom/photon-number units and the
commutator of each mode pair is set by the instantaneous populations, so the
uncertainty bound drifts as atoms are pumped between embedded states.
"""

from dataclasses import dataclass, replace

import numpy as np

ATOM_LIGHT_LABELS = ("X_du", "Y_du", "X_wd", "Y_wd", "X_y", "Y_y")
MODE_OF_LABEL = {"X_du": "du", "Y_du": "du", "X_wd": "wd", "Y_wd": "wd",
                 "X_y": "light", "Y_y": "light"}

PHYSICALITY_TOL = 1e-8
PINV_CUTOFF = 1e-12


class InvalidChannelError(ValueError):
    """Noise matrix of a Gaussian channel fails positivity."""


class RegimeMixError(ValueError):
    """Operation combined states or maps from different normalization regimes."""


@dataclass(frozen=True)
class GaussianState:
    """Labeled covariance matrix with c-number populations.

    populations = (N_up, N_down, N_wr) in the population regime; n_l is the
    photon number of the light mode currently attached to the state (0 when
    no light mode is present). In the unit regime populations are unused and
    every mode commutator is 1.
    """

    sigma: np.ndarray
    labels: tuple
    populations: np.ndarray
    n_l: float
    normalization: str = "population"

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.array(self.sigma, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "populations",
                           np.array(self.populations, dtype=float))
        if self.sigma.shape != (len(self.labels), len(self.labels)):
            raise ValueError("sigma shape does not match labels")
        if self.normalization not in ("unit", "population"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def modes(self):
        """Mode names in order, one per quadrature pair."""
        return tuple(MODE_OF_LABEL[lab] for lab in self.labels[::2])

    @property
    def has_light(self):
        return "X_y" in self.labels

    def index(self, label):
        return self.labels.index(label)

    def commutator_weights(self):
        """Per-quadrature commutator scale n (Heisenberg bound is n/2)."""
        if self.normalization == "unit":
            return np.ones(len(self.labels))
        n_up, n_dn, n_wr = self.populations
        per_mode = {"du": n_up - n_dn, "wd": n_dn - n_wr, "light": self.n_l}
        return np.repeat([per_mode[m] for m in self.modes], 2)

    def replace(self, **kw):
        return replace(self, **kw)


def symplectic_form(n_modes):
    """Block-diagonal [[0,1],[-1,0]] symplectic form."""
    j = np.array([[0.0, 1.0], [-1.0, 0.0]])
    out = np.zeros((2 * n_modes, 2 * n_modes))
    for k in range(n_modes):
        out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = j
    return out


def vacuum_state(n_a, n_l, include_transfer=True):
    """Initial population-normalized state: all atoms in up, light in vacuum.

    include_transfer=False drops the wd mode for runs that discard the
    transfer state from the dynamics.
    """
    if n_a <= 0 or n_l <= 0:
        raise ValueError("n_a and n_l must be positive")
    if include_transfer:
        sigma = np.diag([n_a / 2.0, n_a / 2.0, 0.0, 0.0, n_l / 2.0, n_l / 2.0])
        labels = ATOM_LIGHT_LABELS
        pops = (n_a, 0.0, 0.0)
    else:
        sigma = np.diag([n_a / 2.0, n_a / 2.0, n_l / 2.0, n_l / 2.0])
        labels = ("X_du", "Y_du", "X_y", "Y_y")
        pops = (n_a, 0.0)
    return GaussianState(sigma, labels, pops, n_l, "population")


def unit_vacuum(n_modes=2):
    """Unit-regime vacuum: one atomic HP mode plus light (or du/wd/light)."""
    if n_modes == 2:
        labels = ("X_du", "Y_du", "X_y", "Y_y")
    elif n_modes == 3:
        labels = ATOM_LIGHT_LABELS
    else:
        raise ValueError("unit vacuum supports 2 or 3 modes")
    sigma = np.eye(2 * n_modes) * 0.5
    return GaussianState(sigma, labels, (0.0, 0.0, 0.0), 0.0, "unit")


def _noise_floor_check(noise):
    eig = np.linalg.eigvalsh((noise + noise.T) / 2.0)
    tol = 1e-10 + 1e-14 * max(1.0, abs(eig[-1]))
    if eig[0] < -tol:
        raise InvalidChannelError(
            f"noise matrix has negative eigenvalue {eig[0]:.3e}")


def apply_map(state, m, n=None):
    """Gaussian channel sigma -> M sigma M^T + N. Populations untouched."""
    m = np.asarray(m, dtype=float)
    dim = state.sigma.shape[0]
    if m.shape != (dim, dim):
        raise ValueError(f"map shape {m.shape} does not match state dim {dim}")
    sigma = m @ state.sigma @ m.T
    if n is not None:
        n = np.asarray(n, dtype=float)
        _noise_floor_check(n)
        sigma = sigma + n
    return state.replace(sigma=(sigma + sigma.T) / 2.0)


def _pinv_psd(mat):
    """Moore-Penrose pseudoinverse by eigendecomposition with relative cutoff."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    cutoff = PINV_CUTOFF * max(abs(vals[0]), abs(vals[-1]), 0.0)
    inv = np.where(np.abs(vals) > cutoff, 1.0 / np.where(vals == 0, 1.0, vals), 0.0)
    return (vecs * inv) @ vecs.T


def _condition(sigma, keep, meas):
    """Schur complement of the measured quadratures: A - C (PBP)^+ C^T."""
    a = sigma[np.ix_(keep, keep)]
    c = sigma[np.ix_(keep, meas)]
    b = sigma[np.ix_(meas, meas)]
    return a - c @ _pinv_psd(b) @ c.T


def homodyne_update(state, label):
    """Condition on a homodyne measurement of one light quadrature.

    The Gaussian covariance update is outcome independent; the light mode is
    removed afterwards. Zero measured variance (no information) leaves the
    remaining covariance unchanged via the pseudoinverse convention.
    """
    if MODE_OF_LABEL[label] != "light":
        raise ValueError(f"homodyne label must be on the light mode, got {label}")
    meas = [state.index(label)]
    drop = [i for i, lab in enumerate(state.labels)
            if MODE_OF_LABEL[lab] == "light"]
    keep = [i for i in range(len(state.labels)) if i not in drop]
    sigma = _condition(state.sigma, keep, meas)
    labels = tuple(state.labels[i] for i in keep)
    return state.replace(sigma=(sigma + sigma.T) / 2.0, labels=labels, n_l=0.0)


def rotation_map(theta, modes, n_modes):
    """Phase-plane rotation R(theta) on the selected modes (by name)."""
    out = np.eye(2 * n_modes)
    c, s = np.cos(theta), np.sin(theta)
    block = np.array([[c, -s], [s, c]])
    all_names = ("du", "light") if n_modes == 2 else ("du", "wd", "light")
    for name in modes:
        k = all_names.index(name)
        out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = block
    return out


def waveplate_map(n_modes=2):
    """Pi/2 rotation of the light quadratures (lambda/8 plate passed twice)."""
    return rotation_map(np.pi / 2.0, ("light",), n_modes)


def partial_trace(state, mode):
    """Discard one mode: delete its rows and columns."""
    if mode not in state.modes:
        raise ValueError(f"no mode {mode!r} in state")
    keep = [i for i, lab in enumerate(state.labels) if MODE_OF_LABEL[lab] != mode]
    labels = tuple(state.labels[i] for i in keep)
    n_l = 0.0 if mode == "light" else state.n_l
    return state.replace(sigma=state.sigma[np.ix_(keep, keep)], labels=labels,
                         n_l=n_l)


def append_fresh_light(state, n_l):
    """Attach a fresh vacuum light mode (variance n_l/2 per quadrature)."""
    if state.has_light:
        raise ValueError("state already has a light mode")
    var = 0.5 if state.normalization == "unit" else n_l / 2.0
    dim = state.sigma.shape[0]
    sigma = np.zeros((dim + 2, dim + 2))
    sigma[:dim, :dim] = state.sigma
    sigma[dim, dim] = var
    sigma[dim + 1, dim + 1] = var
    labels = state.labels + ("X_y", "Y_y")
    return state.replace(sigma=sigma, labels=labels,
                         n_l=(1.0 if state.normalization == "unit" else n_l))


def physicality_margin(state):
    """Min eigenvalue of sigma + (i/2) n dot symplectic form (>= 0 physical)."""
    n = state.commutator_weights()
    omega = symplectic_form(len(state.labels) // 2)
    herm = state.sigma + 0.5j * (n[:, None] * omega)
    return float(np.linalg.eigvalsh(herm)[0])


def is_physical(state):
    scale = np.linalg.norm(state.sigma)
    return physicality_margin(state) >= -PHYSICALITY_TOL * max(scale, 1.0)


def check_symplectic(s, weights, rtol=1e-9):
    """True when S (n.omega) S^T = n.omega to relative tolerance."""
    omega = symplectic_form(len(weights) // 2)
    w_omega = weights[:, None] * omega
    lhs = s @ w_omega @ s.T
    return np.allclose(lhs, w_omega, rtol=0.0,
                       atol=rtol * max(np.abs(w_omega).max(), 1e-300))


def faraday_symplectic(params, basis, normalization, populations=None, n_l=None):
    """Symplectic matrix of one Faraday pass.

    unit: 4x4 on (X_du, Y_du, X_y, Y_y) with xi = chi^2 N_L N_A (var f_z)_up
    for a pulse of params.n_l photons (override with n_l).
    population: 6x6 on the canonical three-mode ordering with the
    population-weighted couplings; populations default to all atoms in up.
    """
    if normalization == "unit":
        xi = getattr(params, "xi_step", None)
        if xi is None:
            n_photons = params.n_l if n_l is None else n_l
            xi = params.chi ** 2 * n_photons * params.n_a * basis.var_up
        s = np.eye(4)
        rt = np.sqrt(xi)
        s[2, 0] = rt    # X_y picks up the measured atomic quadrature
        s[1, 3] = -rt   # conjugate backaction on Y_du
        return s
    if normalization != "population":
        raise ValueError(f"unknown normalization {normalization!r}")
    n_photons = params.n_l if n_l is None else n_l
    a_up = params.chi * basis.v_up / np.sqrt(2.0)
    if populations is None:
        n_pops = 3 if basis.has_transfer else 2
        populations = np.array([params.n_a] + [0.0] * (n_pops - 1))
    if len(populations) == 2:
        # no wd mode tracked (cat preparation, or transfer dropped)
        n_up, n_dn = populations
        s = np.eye(4)
        s[1, 3] = -a_up * (n_up - n_dn)
        s[2, 0] = a_up * n_photons
        return s
    n_up, n_dn, n_wr = populations
    a_dn = params.chi * basis.w_up / np.sqrt(2.0)
    s = np.eye(6)
    s[1, 5] = -a_up * (n_up - n_dn)
    s[3, 5] = -a_dn * (n_dn - n_wr)
    s[4, 0] = a_up * n_photons
    s[4, 2] = a_dn * n_photons
    return s
