"""The invariant MSE loss and its field-theory structure.

For a layer with channel mixer W0 and couplings eps^i, the sum over a
periodic grid of ||Q[Phi]||^2 expands into three aggregate terms built
from

    m2   = W0 W0^T               (mass matrix, symmetric PSD)
    H^ij = eps^iT m2 eps^j       (channel part of the metric)
    v^i  = m2 eps^i              (vector term)

as  mass  sum_x Phi^T m2 Phi
  + kinetic sum_x (L_i Phi)^T H^ij (L_j Phi)
  + a cross term 2 sum_x Phi^T v^i (L_i Phi).

When the v^i are symmetric (scalar eps, or a single channel) the cross
term is the discrete divergence of the scalar field s_i = Phi^T v^i Phi
and telescopes to zero on a periodic grid under any zero-column-sum
skew derivative operator; `mse_loss_decomposed` uses that divergence form
for its third term, so direct and decomposed losses agree exactly in that
regime.  For a general matrix eps the product rule picks up the
antisymmetric part of v^i; `decomposition_gap` gives the exact closed
form 2 <skew(v^i), Phi^T L_i Phi>, which the tests verify.

Stationarity of the loss in the field gives the Euler-Lagrange equation;
for translations it is a Helmholtz equation H phi'' = m2 phi whose
symmetric solution is cosh(x / |eps|).  On such solutions the Noether
current J = phi'^T H phi' - phi^T m2 phi is constant in x; both the EL
residual and the current's divergence are evaluated with second-order
central differences, independent of the layer's generator matrices.
"""

from dataclasses import dataclass

import numpy as np

from .groups import GridSpec, analytic_generator
from .layer import group_action, materialize
from .numerics import DimensionError, LconvError, as_matrix


class UnsupportedGroupError(LconvError):
    pass


@dataclass(frozen=True)
class FieldSample:
    """Concatenated features-and-labels field on a grid, one row per point."""
    grid: GridSpec
    phi: np.ndarray   # d x (m + m_y)

    def __post_init__(self):
        if self.phi.shape[0] != self.grid.d:
            raise DimensionError(
                f"field has {self.phi.shape[0]} rows, grid has {self.grid.d}")


@dataclass(frozen=True)
class FieldTheoryTerms:
    m2: np.ndarray                 # m x m, symmetric PSD
    channel_metric: list           # H[i][j] = eps^iT m2 eps^j
    v: list                        # v^i = m2 eps^i

    def spatial_metric(self, fields):
        """Full h^{alpha beta}_{ab} from generator vector fields at a point.

        `fields` lists each generator's field vector there; returns an
        array indexed [alpha, beta, a, b].
        """
        n_space = len(fields[0])
        m = self.m2.shape[0]
        h = np.zeros((n_space, n_space, m, m))
        for i, fi in enumerate(fields):
            for j, fj in enumerate(fields):
                h += np.multiply.outer(np.outer(fi, fj), self.channel_metric[i][j])
        return h


def _eps_matrices(layer):
    m = layer.m_in
    if layer.scalar_eps:
        return [e * np.eye(m) for e in layer.eps]
    return [np.asarray(e) for e in layer.eps]


def field_terms(layer):
    """Aggregate (m2, H, v) for a layer's parameters."""
    m2 = layer.w0 @ layer.w0.T
    eps = _eps_matrices(layer)
    return FieldTheoryTerms(
        m2=m2,
        channel_metric=[[ei.T @ m2 @ ej for ej in eps] for ei in eps],
        v=[m2 @ ei for ei in eps],
    )


def _require_periodic(sample, who):
    if not sample.grid.periodic:
        raise UnsupportedGroupError(
            f"{who} integrates over the translation group and needs a periodic grid")


def mse_loss_direct(sample, layer):
    """sum over grid points of ||Q[Phi]_mu||^2, unit Haar weight per point."""
    _require_periodic(sample, "mse_loss_direct")
    q = layer.forward(sample.phi)
    return float(np.sum(q * q))


def mse_loss_decomposed(sample, terms, generators):
    """Mass + kinetic + divergence form of the same loss."""
    _require_periodic(sample, "mse_loss_decomposed")
    mass, kinetic, div = loss_terms(sample, terms, generators)
    return mass + kinetic + div


def loss_terms(sample, terms, generators):
    """The three aggregates (mass, kinetic, divergence) separately."""
    phi = sample.phi
    ls = [materialize(g) for g in generators]
    lphi = [l @ phi for l in ls]
    mass = float(np.sum((phi @ terms.m2) * phi))
    kinetic = 0.0
    for i in range(len(ls)):
        for j in range(len(ls)):
            kinetic += float(np.sum((lphi[i] @ terms.channel_metric[i][j]) * lphi[j]))
    div = 0.0
    for i, l in enumerate(ls):
        s = np.sum((phi @ terms.v[i]) * phi, axis=1)
        div += float(np.sum(l @ s))
    return mass, kinetic, div


def decomposition_gap(sample, terms, generators):
    """Exact direct-minus-decomposed gap: 2 sum_i <skew(v^i), Phi^T L_i Phi>.

    Vanishes when every v^i is symmetric (scalar eps or one channel).
    """
    phi = sample.phi
    gap = 0.0
    for i, g in enumerate(generators):
        skew_v = 0.5 * (terms.v[i] - terms.v[i].T)
        s = phi.T @ (materialize(g) @ phi)
        gap += 2.0 * float(np.sum(skew_v * s))
    return gap


def loss_invariance_check(sample, layer, w):
    """|I(w . Phi) - I(Phi)| / I(Phi) for a group element w.

    Exact (up to rounding) when w commutes with the layer's generators and
    acts unitarily on the field's spectral support; on an even periodic
    grid that means fields free of Nyquist content, while integer shifts
    are exact for every field.
    """
    base = mse_loss_direct(sample, layer)
    moved = FieldSample(grid=sample.grid, phi=group_action(w, sample.phi))
    return abs(mse_loss_direct(moved, layer) - base) / max(base, 1e-300)


# -- Euler-Lagrange and Noether diagnostics (translation group, 1-D) ------

def _check_translation(group):
    if group != "translation":
        raise UnsupportedGroupError(
            f"variational diagnostics are implemented for the translation group "
            f"only, got {group!r}")


def _central_first(phi, dx):
    return (phi[2:] - phi[:-2]) / (2.0 * dx)


def _central_second(phi, dx):
    return (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / (dx * dx)


def el_residual(phi, dx, terms, group="translation"):
    """Pointwise m2 phi - H phi'' on interior points, central differences.

    phi is (n, m) on a uniform non-periodic 1-D grid with spacing dx; for
    fields solving the Helmholtz equation the residual decays as O(dx^2).
    """
    _check_translation(group)
    phi = as_matrix(phi)
    h = terms.channel_metric[0][0]
    return phi[1:-1] @ terms.m2.T - _central_second(phi, dx) @ h.T


def noether_divergence(phi, dx, terms, group="translation"):
    """Max |dJ/dx| over interior points for J = phi'^T H phi' - phi^T m2 phi.

    J is the conserved current of the translation symmetry; on
    Euler-Lagrange solutions it is constant, so the discrete divergence
    measures distance from stationarity plus O(dx^2) discretization.
    """
    _check_translation(group)
    phi = as_matrix(phi)
    dphi = _central_first(phi, dx)
    h = terms.channel_metric[0][0]
    current = (np.sum((dphi @ h.T) * dphi, axis=1)
               - np.sum((phi[1:-1] @ terms.m2.T) * phi[1:-1], axis=1))
    return float(np.abs(_central_first(current[:, None], dx)).max())


def helmholtz_field(n_points, eps_scale, half_width=1.0):
    """cosh(x / |eps|) sampled on the symmetric interval [-L, L].

    The analytic stationary field of the 1-D translation loss with scalar
    channel, H = eps^2 m2: H phi'' = m2 phi for any m2 > 0.
    """
    x = np.linspace(-half_width, half_width, n_points)
    return x[1] - x[0], np.cosh(x / abs(eps_scale))[:, None]


def helmholtz_convergence(sizes, eps_scale, terms):
    """Rows (n, el_residual_max, noether_divergence) over grid refinements."""
    rows = []
    for n in sizes:
        dx, phi = helmholtz_field(n, eps_scale)
        res = float(np.abs(el_residual(phi, dx, terms)).max())
        div = noether_divergence(phi, dx, terms)
        rows.append((int(n), res, div))
    return rows


def metric_equivariance_check(eps, w0, xi, theta, x0=(1.0, 0.0)):
    """2-tensor transformation law of the metric for the so(2) generator.

    Builds h(x) = [eps^T m2 eps] x outer(Lhat(x), Lhat(x)) from the exact
    2x2 rotation representation and returns the max-norm over channel
    blocks of R(-xi) h(R(theta) x0) R(-xi)^T - h(R(theta - xi) x0).
    """
    eps = as_matrix(np.atleast_2d(eps))
    w0 = as_matrix(np.atleast_2d(w0))
    m2 = w0 @ w0.T
    channel = eps.T @ m2 @ eps
    _, fld = analytic_generator("so2")

    def rot(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s], [s, c]])

    x0 = np.asarray(x0, dtype=np.float64)
    v_theta = fld(rot(theta) @ x0)
    v_shift = fld(rot(theta - xi) @ x0)
    rminus = rot(-xi)
    spatial = rminus @ np.outer(v_theta, v_theta) @ rminus.T - np.outer(v_shift, v_shift)
    return float(np.abs(channel).max() * np.abs(spatial).max())
