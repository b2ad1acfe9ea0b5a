"""Spherically symmetric Lagrange finite elements on the unit radius.

Unknowns are interleaved per node as ``(c, mu, u)``; global dof
``3 * node + field``. All volume integrals carry the ``4 pi r^2`` weight.
The semi-discrete system is the DAE ``M y' = f(t, y)`` whose mass matrix
only has a concentration block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from . import chemistry
from . import constitutive as cm
from .banded import BandMatrix
from .params import DimensionlessParams

N_FIELDS = 3
C, MU, U = 0, 1, 2
FOUR_PI = 4.0 * math.pi

TANGENT_MODES = ("analytic", "ad", "fd")


class AssemblyError(RuntimeError):
    """Local evaluation failed at some element."""

    def __init__(self, message, element=None):
        super().__init__(message if element is None else f"element {element}: {message}")
        self.element = element


# ----------------------------------------------------------------- basis

def lagrange_basis(p: int, x):
    """Equispaced Lagrange shape functions on [0, 1] and their derivatives.

    Returns arrays of shape ``(len(x), p + 1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes = np.linspace(0.0, 1.0, p + 1)
    N = np.ones((x.size, p + 1))
    dN = np.zeros((x.size, p + 1))
    for j in range(p + 1):
        others = [m for m in range(p + 1) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        factors = np.stack([x - nodes[m] for m in others], axis=-1) if others else np.ones((x.size, 0))
        N[:, j] = np.prod(factors, axis=-1) / denom
        for k in range(len(others)):
            dN[:, j] += np.prod(np.delete(factors, k, axis=-1), axis=-1) / denom
    return N, dN


def gauss_unit(nq: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nq)
    return 0.5 * (x + 1.0), 0.5 * w


# ------------------------------------------------------------------ mesh

class Mesh1D:
    """Hierarchical mesh of (0, 1).

    Element ``k`` is the dyadic cell ``[i 2^-l, (i+1) 2^-l]`` with
    ``(l, i) = (levels[k], index[k])``; elements are stored left to right.
    """

    def __init__(self, levels, index, p: int = 4, nq: int = 6,
                 min_level: int = 5, max_level: int | None = None):
        self.levels = np.asarray(levels, dtype=int)
        self.index = np.asarray(index, dtype=int)
        if self.levels.size == 0:
            raise ValueError("empty mesh")
        if not 1 <= p <= 4:
            raise ValueError("polynomial order must be 1..4")
        self.p, self.nq = int(p), int(nq)
        self.min_level = int(min_level)
        self.max_level = int(max_level) if max_level is not None else max(self.min_level + 5, int(self.levels.max()))
        scale = 2.0 ** (-self.levels)
        self.r_left = self.index * scale
        self.r_right = (self.index + 1) * scale
        self.h = self.r_right - self.r_left
        self.conn = self.p * np.arange(self.n_elements)[:, None] + np.arange(self.p + 1)
        xi = np.linspace(0.0, 1.0, self.p + 1)
        coords = self.r_left[:, None] + self.h[:, None] * xi
        self.node_coords = np.empty(self.n_nodes)
        self.node_coords[self.conn] = coords
        self.xi_q, self.w_q = gauss_unit(self.nq)
        self.N_q, dN = lagrange_basis(self.p, self.xi_q)
        self.dN_q = dN
        self.r_q = self.r_left[:, None] + self.h[:, None] * self.xi_q
        self.weight_q = FOUR_PI * self.r_q**2 * self.w_q * self.h[:, None]

    # sizes -------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return int(self.levels.size)

    @property
    def n_nodes(self) -> int:
        return self.p * self.n_elements + 1

    @property
    def n_dofs(self) -> int:
        return N_FIELDS * self.n_nodes

    @property
    def half_bandwidth(self) -> int:
        return N_FIELDS * (self.p + 1) - 1

    def signature(self):
        return (self.levels.tobytes(), self.index.tobytes(), self.p)

    def same_as(self, other: "Mesh1D") -> bool:
        return self.signature() == other.signature()

    # integrals / evaluation --------------------------------------------
    def node_volume_weights(self) -> np.ndarray:
        """``int phi_i 4 pi r^2 dr`` for every scalar node."""
        w = np.einsum("eq,qa->ea", self.weight_q, self.N_q)
        return np.bincount(self.conn.ravel(), weights=w.ravel(), minlength=self.n_nodes)

    def at_quadrature(self, nodal):
        """Values and radial derivatives of a nodal field at quadrature points."""
        ve = np.asarray(nodal)[self.conn]
        return ve @ self.N_q.T, (ve @ self.dN_q.T) / self.h[:, None]

    def locate(self, r):
        """Element id containing each ``r`` (right-closed at 1)."""
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.r_left, r, side="right") - 1
        return np.clip(k, 0, self.n_elements - 1)

    def evaluate(self, nodal, r, derivative: bool = False):
        """Evaluate a nodal field (and optionally its derivative) at points ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        k = self.locate(r)
        xi = (r - self.r_left[k]) / self.h[k]
        N, dN = lagrange_basis(self.p, xi)
        ve = np.asarray(nodal)[self.conn[k]]
        val = np.sum(N * ve, axis=-1)
        if derivative:
            return val, np.sum(dN * ve, axis=-1) / self.h[k]
        return val

    def scalar_mass_band(self):
        """Weighted scalar mass matrix in ``solve_banded`` layout (kl = ku = p)."""
        Me = np.einsum("eq,qa,qb->eab", self.weight_q, self.N_q, self.N_q)
        band = BandMatrix(self.p, self.p, self.n_nodes)
        rows = np.broadcast_to(self.conn[:, :, None], Me.shape)
        cols = np.broadcast_to(self.conn[:, None, :], Me.shape)
        idx = band.flat_index(rows, cols)
        band.data.ravel()[:] += np.bincount(idx.ravel(), weights=Me.ravel(),
                                            minlength=band.data.size)
        return band

    # refinement --------------------------------------------------------
    def check_invariants(self):
        if not np.isclose(self.r_left[0], 0.0) or not np.isclose(self.r_right[-1], 1.0):
            raise AssertionError("mesh does not cover (0, 1)")
        if not np.allclose(self.r_right[:-1], self.r_left[1:], rtol=0, atol=1e-15):
            raise AssertionError("elements overlap or leave gaps")
        if np.any(np.abs(np.diff(self.levels)) > 1):
            raise AssertionError("neighbouring levels differ by more than one")
        if np.any(self.levels < self.min_level):
            raise AssertionError("element below the minimal level")

    def _new(self, levels, index):
        return Mesh1D(levels, index, self.p, self.nq, self.min_level, self.max_level)

    def refine(self, mark) -> "Mesh1D":
        """Split marked elements (respecting ``max_level``), then close 1-irregularity."""
        mark = np.asarray(mark, dtype=bool) & (self.levels < self.max_level)
        lv, ix = _split(self.levels, self.index, mark)
        lv, ix = _close(lv, ix, self.max_level)
        return self._new(lv, ix)

    def coarsen(self, mark) -> "Mesh1D":
        """Merge sibling pairs that are both marked and above ``min_level``."""
        return self.adapt(np.zeros(self.n_elements, dtype=bool), mark)

    def adapt(self, refine, coarsen) -> "Mesh1D":
        """Merge marked sibling pairs, split refined cells, close 1-irregularity."""
        refine = np.asarray(refine, dtype=bool) & (self.levels < self.max_level)
        coarsen = np.asarray(coarsen, dtype=bool) & ~refine
        lv, ix = self.levels, self.index
        out_l, out_i = [], []
        k = 0
        while k < lv.size:
            if (k + 1 < lv.size and lv[k] == lv[k + 1] and ix[k] % 2 == 0
                    and ix[k + 1] == ix[k] + 1 and lv[k] > self.min_level
                    and coarsen[k] and coarsen[k + 1]):
                out_l.append(lv[k] - 1)
                out_i.append(ix[k] // 2)
                k += 2
                continue
            if refine[k]:
                out_l += [lv[k] + 1, lv[k] + 1]
                out_i += [2 * ix[k], 2 * ix[k] + 1]
            else:
                out_l.append(lv[k])
                out_i.append(ix[k])
            k += 1
        lv, ix = _close(np.array(out_l), np.array(out_i), self.max_level)
        return self._new(lv, ix)


def _split(levels, index, mark):
    lv = np.repeat(levels, np.where(mark, 2, 1))
    ix = np.repeat(index, np.where(mark, 2, 1))
    first = np.concatenate([[0], np.cumsum(np.where(mark, 2, 1))[:-1]])
    m = np.flatnonzero(mark)
    lv[first[m]] += 1
    lv[first[m] + 1] += 1
    ix[first[m]] = 2 * index[m]
    ix[first[m] + 1] = 2 * index[m] + 1
    return lv, ix


def _close(levels, index, max_level):
    """Refine coarse neighbours until adjacent levels differ by at most one."""
    while True:
        jump = np.diff(levels)
        mark = np.zeros(levels.size, dtype=bool)
        mark[:-1] |= jump > 1
        mark[1:] |= jump < -1
        if not mark.any():
            return levels, index
        levels, index = _split(levels, index, mark & (levels < max_level))


def build_mesh(min_level: int = 5, p: int = 4, nq: int = 6,
               max_level: int | None = None) -> Mesh1D:
    """Uniform mesh of ``2**min_level`` elements.

    >>> build_mesh(5, 4).n_nodes
    129
    """
    if min_level < 0:
        raise ValueError("min_level must be >= 0")
    n = 2**min_level
    return Mesh1D(np.full(n, min_level), np.arange(n), p, nq, min_level, max_level)


# -------------------------------------------------------------- state

@dataclass
class QuadratureField:
    """Plastic history per quadrature point, shape ``(n_elements, nq)``.

    ``Lr`` is the radial entry of ``ln F_pl`` (the hoop entries are
    ``-Lr / 2``, so ``det F_pl = 1`` exactly).
    """

    Lr: np.ndarray
    eps: np.ndarray
    active: np.ndarray

    @classmethod
    def virgin(cls, mesh: Mesh1D) -> "QuadratureField":
        shape = (mesh.n_elements, mesh.nq)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=bool))

    def copy(self) -> "QuadratureField":
        return QuadratureField(self.Lr.copy(), self.eps.copy(), self.active.copy())

    @property
    def n_points(self) -> int:
        return self.Lr.size

    def F_pl_diag(self):
        return np.exp(self.Lr), np.exp(-0.5 * self.Lr)

    def plastic_state(self, e: int, q: int) -> cm.PlasticState:
        Lr = self.Lr[e, q]
        return cm.PlasticState(np.diag(np.exp([Lr, -0.5 * Lr, -0.5 * Lr])), float(self.eps[e, q]))


def split_fields(y):
    """Views ``(c, mu, u)`` into an interleaved solution vector."""
    y = np.asarray(y)
    return y[C::N_FIELDS], y[MU::N_FIELDS], y[U::N_FIELDS]


def pack_fields(c, mu, u):
    y = np.empty(N_FIELDS * len(c))
    y[C::N_FIELDS], y[MU::N_FIELDS], y[U::N_FIELDS] = c, mu, u
    return y


def initial_state(mesh: Mesh1D, params: DimensionlessParams):
    """Uniform, stress-free initial state and virgin plastic history."""
    n = mesh.n_nodes
    c = np.full(n, params.c0)
    lam = float(cm.chemical_stretch(params.c0, params))
    u = mesh.node_coords * (lam - 1.0)
    mu = np.full(n, float(chemistry.d_psi_ch_dc(params.c0, params)))
    return pack_fields(c, mu, u), QuadratureField.virgin(mesh)


# ----------------------------------------------------------- assembly

@dataclass
class Evaluation:
    """Residual, optional Jacobian and the local response it came from."""

    f: np.ndarray
    J: BandMatrix | None
    response: cm.RadialResponse
    trial: QuadratureField


class RadialAssembler:
    """Residual and Jacobian of ``M y' = f(t, y)`` on a fixed mesh."""

    def __init__(self, mesh: Mesh1D, params: DimensionlessParams,
                 model: str = "plastic", strain: str = "hencky",
                 tangent_mode: str = "analytic"):
        if model not in cm.MODELS:
            raise ValueError(f"unknown model {model!r}")
        if tangent_mode not in TANGENT_MODES:
            raise ValueError(f"unknown tangent mode {tangent_mode!r}")
        if strain not in cm.STRAINS:
            raise ValueError(f"unknown strain measure {strain!r}")
        self.mesh, self.params = mesh, params
        self.model, self.strain, self.tangent_mode = model, strain, tangent_mode
        p1 = mesh.p + 1
        self.kl = self.ku = mesh.half_bandwidth
        self.n = mesh.n_dofs
        self.loc = (N_FIELDS * mesh.conn[:, :, None] + np.arange(N_FIELDS)).reshape(mesh.n_elements, N_FIELDS * p1)
        template = BandMatrix(self.kl, self.ku, self.n)
        self._flat = template.flat_index(self.loc[:, :, None], self.loc[:, None, :]).ravel()
        self.Phi = mesh.N_q[None, :, :]
        self.D = mesh.dN_q[None, :, :] / mesh.h[:, None, None]
        self.Bt = mesh.N_q[None, :, :] / mesh.r_q[:, :, None]
        self._mass = None

    # helpers -----------------------------------------------------------
    def _scatter_vec(self, Fe):
        return np.bincount(self.loc.ravel(), weights=Fe.ravel(), minlength=self.n)

    def _scatter_mat(self, Ke):
        band = BandMatrix(self.kl, self.ku, self.n)
        band.data.ravel()[:] = np.bincount(self._flat, weights=Ke.ravel(), minlength=band.data.size)
        return band

    def mass(self) -> BandMatrix:
        """Concentration mass block embedded in the full band layout."""
        if self._mass is None:
            m = self.mesh
            p1 = m.p + 1
            Ke = np.zeros((m.n_elements, p1, N_FIELDS, p1, N_FIELDS))
            Ke[:, :, C, :, C] = np.einsum("eq,qa,qb->eab", m.weight_q, m.N_q, m.N_q)
            self._mass = self._scatter_mat(Ke.reshape(m.n_elements, N_FIELDS * p1, N_FIELDS * p1))
        return self._mass

    def local_inputs(self, y):
        c_n, mu_n, u_n = split_fields(y)
        cq, dcq = self.mesh.at_quadrature(c_n)
        muq, dmuq = self.mesh.at_quadrature(mu_n)
        uq, duq = self.mesh.at_quadrature(u_n)
        return cq, muq, dmuq, 1.0 + duq, 1.0 + uq / self.mesh.r_q

    # evaluation --------------------------------------------------------
    def evaluate(self, y, q: QuadratureField, tau, N_ext: float,
                 jacobian: bool = False) -> Evaluation:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise AssemblyError("non-finite solution vector")
        m = self.mesh
        cq, muq, dmuq, Fr, Ft = self.local_inputs(y)
        deriv = None
        if jacobian and self.tangent_mode != "fd":
            deriv = self.tangent_mode
        bad = (Fr <= 0.0) | (Ft <= 0.0)
        if bad.any():
            raise AssemblyError("inverted radial or hoop stretch", int(np.argmax(bad.any(axis=1))))
        try:
            res = cm.radial_response(cq, Fr, Ft, q.Lr, q.eps, self.params, self.model,
                                     tau=tau, strain=self.strain, derivatives=deriv)
        except (cm.KinematicError, cm.ProjectorError) as exc:
            raise AssemblyError(str(exc)) from exc
        w = m.weight_q
        p1 = m.p + 1
        Fe = np.zeros((m.n_elements, p1, N_FIELDS))
        Fe[:, :, C] = -np.einsum("eq,eqa->ea", w * res.mob * dmuq, self.D)
        Fe[:, :, MU] = np.einsum("eq,qa->ea", w * (res.mu_loc - muq), m.N_q)
        Fe[:, :, U] = -(np.einsum("eq,eqa->ea", w * res.P_r, self.D)
                        + 2.0 * np.einsum("eq,eqa->ea", w * res.P_t, self.Bt))
        f = self._scatter_vec(Fe.reshape(m.n_elements, -1))
        f[N_FIELDS * (m.n_nodes - 1) + C] += FOUR_PI * N_ext
        f[U] = -y[U]
        trial = QuadratureField(res.Lr_new, res.eps_new, np.asarray(res.active, dtype=bool))
        J = None
        if jacobian:
            J = (self._fd_jacobian(y, q, tau, N_ext) if self.tangent_mode == "fd"
                 else self._jacobian(res, dmuq))
        return Evaluation(f, J, res, trial)

    def _jacobian(self, res: cm.RadialResponse, dmuq) -> BandMatrix:
        m = self.mesh
        w = m.weight_q
        Phi = np.broadcast_to(self.Phi, self.D.shape)
        D, Bt = self.D, self.Bt
        p1 = m.p + 1

        def trial_u(d):
            # variation of a local quantity through (Fr, Ft) for u-dofs
            return d[..., 1, None] * D + d[..., 2, None] * Bt

        Ke = np.zeros((m.n_elements, p1, N_FIELDS, p1, N_FIELDS))
        wf = w * dmuq
        Ke[:, :, C, :, C] = -np.einsum("eqa,eqb->eab", (wf * res.d_mob[..., 0])[..., None] * D, Phi)
        Ke[:, :, C, :, MU] = -np.einsum("eqa,eqb->eab", (w * res.mob)[..., None] * D, D)
        Ke[:, :, C, :, U] = -np.einsum("eqa,eqb->eab", wf[..., None] * D, trial_u(res.d_mob))
        Ke[:, :, MU, :, C] = np.einsum("eqa,eqb->eab", (w * res.d_mu[..., 0])[..., None] * Phi, Phi)
        Ke[:, :, MU, :, MU] = -np.einsum("eq,qa,qb->eab", w, m.N_q, m.N_q)
        Ke[:, :, MU, :, U] = np.einsum("eqa,eqb->eab", w[..., None] * Phi, trial_u(res.d_mu))
        Ke[:, :, U, :, C] = -np.einsum(
            "eqa,eqb->eab",
            w[..., None] * (res.d_Pr[..., 0, None] * D + 2.0 * res.d_Pt[..., 0, None] * Bt), Phi)
        Ke[:, :, U, :, U] = -(np.einsum("eqa,eqb->eab", w[..., None] * D, trial_u(res.d_Pr))
                              + 2.0 * np.einsum("eqa,eqb->eab", w[..., None] * Bt, trial_u(res.d_Pt)))
        J = self._scatter_mat(Ke.reshape(m.n_elements, N_FIELDS * p1, N_FIELDS * p1))
        J.set_identity_row(U, -1.0)
        return J

    def _fd_jacobian(self, y, q, tau, N_ext, step: float = 1e-7) -> BandMatrix:
        """Column-wise central differences, grouped by band colouring."""
        J = BandMatrix(self.kl, self.ku, self.n)
        stride = self.kl + self.ku + 1
        for start in range(stride):
            cols = np.arange(start, self.n, stride)
            hvec = step * np.maximum(1.0, np.abs(y[cols]))
            yp, ym = y.copy(), y.copy()
            yp[cols] += hvec
            ym[cols] -= hvec
            df = (self.evaluate(yp, q, tau, N_ext).f - self.evaluate(ym, q, tau, N_ext).f)
            for j, hj in zip(cols, hvec):
                rows = np.arange(max(0, j - self.ku), min(self.n, j + self.kl + 1))
                J.data[self.ku + rows - j, j] = df[rows] / (2.0 * hj)
        return J


def assemble_residual(t, y, q, tau_n, model, mesh, params, N_ext=0.0, strain="hencky"):
    """Right-hand side ``f(t, y)`` and the uncommitted trial history."""
    ev = RadialAssembler(mesh, params, model, strain).evaluate(y, q, tau_n, N_ext)
    return ev.f, ev.trial


def assemble_jacobian(t, y, q, tau_n, model, tangent_mode, mesh, params,
                      N_ext=0.0, strain="hencky") -> BandMatrix:
    """Banded ``df/dy``."""
    asm = RadialAssembler(mesh, params, model, strain, tangent_mode)
    return asm.evaluate(y, q, tau_n, N_ext, jacobian=True).J


# ---------------------------------------------------- error estimation

def recovered_gradient(c_nodal, mesh: Mesh1D):
    """Weighted L2 projection of ``c_h'`` onto the continuous degree-p space."""
    _, dc = mesh.at_quadrature(c_nodal)
    b = np.bincount(mesh.conn.ravel(),
                    weights=np.einsum("eq,qa->ea", mesh.weight_q * dc, mesh.N_q).ravel(),
                    minlength=mesh.n_nodes)
    band = mesh.scalar_mass_band()
    return solve_banded((band.kl, band.ku), band.data, b)


def estimate_spatial_error(y, mesh: Mesh1D) -> np.ndarray:
    """Gradient-recovery indicator ``|| G(c_h) - c_h' ||`` per element."""
    c_n = split_fields(y)[0]
    G = recovered_gradient(c_n, mesh)
    Gq, _ = mesh.at_quadrature(G)
    _, dc = mesh.at_quadrature(c_n)
    return np.sqrt(np.sum(mesh.weight_q * (Gq - dc) ** 2, axis=1))


def mark_elements(indicators, theta_r: float = 0.5, theta_c: float = 0.05,
                  tol: float = 0.0):
    """Maximum strategy. Returns ``(refine, coarsen)`` masks.

    Elements above ``theta_r * max`` are refined when they also exceed
    ``tol``; elements below ``theta_c * min(max, tol)`` may be coarsened.
    """
    eta = np.asarray(indicators, dtype=float)
    emax = float(eta.max()) if eta.size else 0.0
    refine = (eta >= theta_r * emax) & (eta > tol)
    ref = min(emax, tol) if tol > 0.0 else emax
    coarsen = eta < theta_c * ref
    return refine, coarsen & ~refine


def _l2_transfer(c_old, old: Mesh1D, new: Mesh1D):
    """Mass-conserving weighted L2 projection on the common refinement."""
    brk = np.union1d(np.append(old.r_left, 1.0), np.append(new.r_left, 1.0))
    a, b = brk[:-1], brk[1:]
    xi, wq = new.xi_q, new.w_q
    r = a[:, None] + (b - a)[:, None] * xi
    w = FOUR_PI * r**2 * wq * (b - a)[:, None]
    vals = old.evaluate(c_old, r.ravel()).reshape(r.shape)
    k = new.locate(0.5 * (a + b))
    loc_xi = (r - new.r_left[k][:, None]) / new.h[k][:, None]
    N, _ = lagrange_basis(new.p, loc_xi.ravel())
    N = N.reshape(r.shape + (new.p + 1,))
    contrib = np.einsum("sq,sqa->sa", w * vals, N)
    rhs = np.bincount(new.conn[k].ravel(), weights=contrib.ravel(), minlength=new.n_nodes)
    band = new.scalar_mass_band()
    return solve_banded((band.kl, band.ku), band.data, rhs)


def transfer_history(q: QuadratureField, old: Mesh1D, new: Mesh1D) -> QuadratureField:
    """Interpolate history from the old element's quadrature points.

    A polynomial through the old Gauss values, clipped to their range so no
    new extrema appear. Only ``ln F_pl,rr`` is stored, so ``det F_pl = 1``
    holds for any transferred value. Activity flags come from the nearest
    old point.
    """
    r = new.r_q
    k = old.locate(r.ravel()).reshape(r.shape)
    xi = (r - old.r_left[k]) / old.h[k]
    nodes = old.xi_q
    L = np.ones(xi.shape + (nodes.size,))
    for j in range(nodes.size):
        for m in range(nodes.size):
            if m != j:
                L[..., j] *= (xi - nodes[m]) / (nodes[j] - nodes[m])

    def interp(f):
        v = np.einsum("eqj,eqj->eq", L, f[k])
        return np.clip(v, f[k].min(axis=-1), f[k].max(axis=-1))

    j = np.argmin(np.abs(old.r_q[k] - r[..., None]), axis=-1)
    return QuadratureField(interp(q.Lr), interp(q.eps), q.active[k, j].copy())


def transfer_solution(y, old: Mesh1D, new: Mesh1D):
    """``c`` by L2 projection, ``mu`` and ``u`` by nodal interpolation."""
    c_o, mu_o, u_o = split_fields(y)
    c = _l2_transfer(c_o, old, new)
    mu = old.evaluate(mu_o, new.node_coords)
    u = old.evaluate(u_o, new.node_coords)
    return pack_fields(c, mu, u)


def _parent_below(mesh: Mesh1D, eta, tol: float) -> np.ndarray:
    """Sibling pairs whose merged cell would not be marked for refinement again.

    The parent indicator is predicted as ``2**(p+1)`` times the pair's
    combined indicator; without this check a refined cell is merged back at
    the next adaptation and the mesh oscillates.
    """
    eta = np.asarray(eta, dtype=float)
    ok = np.zeros(eta.size, dtype=bool)
    lv, ix = mesh.levels, mesh.index
    k = np.flatnonzero((lv[:-1] == lv[1:]) & (ix[:-1] % 2 == 0) & (ix[1:] == ix[:-1] + 1))
    pred = 2.0 ** (mesh.p + 1) * np.hypot(eta[k], eta[k + 1])
    good = k[pred < tol]
    ok[good] = True
    ok[good + 1] = True
    return ok


def adapt_mesh(mesh: Mesh1D, indicators, theta_c: float, theta_r: float,
               q: QuadratureField, y, tol: float = 0.0):
    """Refine/coarsen by the maximum strategy and transfer state.

    Returns ``(mesh, q, y, changed)``.
    """
    refine, coarsen = mark_elements(indicators, theta_r, theta_c, tol)
    if tol > 0.0:
        coarsen &= _parent_below(mesh, indicators, theta_c * tol)
    # merging a plastic cell smears its history and the restart then sees
    # a jump in the yield state, so such cells stay refined
    coarsen &= ~np.any(q.active | (q.eps > 0.0), axis=1)
    new = mesh.adapt(refine, coarsen)
    if new.same_as(mesh):
        return mesh, q, y, False
    new.check_invariants()
    return new, transfer_history(q, mesh, new), transfer_solution(y, mesh, new), True


# ------------------------------------------------------- post-processing

@dataclass
class SurfaceTrace:
    c_surf: float
    mu_surf: float
    sigma_r_surf: float
    sigma_phi_surf: float
    eps_pl_v_surf: float
    U_voltage: float


def surface_response(y, q: QuadratureField, mesh: Mesh1D, params, model, tau,
                     strain="hencky") -> tuple[cm.RadialResponse, float, float, float]:
    """Local response at ``r = 1`` using the history of the outermost point."""
    c_n, mu_n, u_n = split_fields(y)
    c1 = float(c_n[-1])
    u1, du1 = mesh.evaluate(u_n, 1.0, derivative=True)
    Fr, Ft = 1.0 + du1, 1.0 + u1
    res = cm.radial_response(np.array([c1]), Fr, Ft, q.Lr[-1:, -1], q.eps[-1:, -1],
                             params, model, tau=tau, strain=strain)
    return res, float(Fr[0]), float(Ft[0]), c1


def surface_trace(y, q: QuadratureField, mesh: Mesh1D, params, model="plastic",
                  tau=1e-3, N_ext=0.0, strain="hencky") -> SurfaceTrace:
    """Surface values: concentration, potential, Cauchy stresses, plastic strain."""
    res, Fr, Ft, c1 = surface_response(y, q, mesh, params, model, tau, strain)
    J = Fr * Ft * Ft
    mu1 = float(split_fields(y)[1][-1])
    try:
        U = float(chemistry.butler_volmer_voltage(c1, mu1, N_ext, params))
    except chemistry.DomainError:
        U = float("nan")
    return SurfaceTrace(c1, mu1, float(res.M_r[0]) / J, float(res.M_t[0]) / J,
                        float(res.eps_new[0]), U)


SNAPSHOT_COLUMNS = ("r", "c", "mu", "u", "sigma_r", "sigma_phi", "eps_pl_v",
                    "F_pl_rr", "F_el_rr", "F_ch_rr")


def field_snapshot(y, response: cm.RadialResponse, mesh: Mesh1D, params) -> dict:
    """Fields at quadrature points (stress from ``response`` at the same state)."""
    c_n, mu_n, u_n = split_fields(y)
    cq, _ = mesh.at_quadrature(c_n)
    muq, _ = mesh.at_quadrature(mu_n)
    uq, duq = mesh.at_quadrature(u_n)
    Fr, Ft = 1.0 + duq, 1.0 + uq / mesh.r_q
    J = Fr * Ft * Ft
    lam = np.cbrt(1.0 + params.v_pmv_tilde * cq)
    Fpl = np.exp(response.Lr_new)
    return {
        "r": mesh.r_q.ravel(), "c": cq.ravel(), "mu": muq.ravel(), "u": uq.ravel(),
        "sigma_r": (response.M_r / J).ravel(), "sigma_phi": (response.M_t / J).ravel(),
        "eps_pl_v": np.asarray(response.eps_new).ravel(), "F_pl_rr": Fpl.ravel(),
        "F_el_rr": (Fr / (lam * Fpl)).ravel(), "F_ch_rr": lam.ravel(),
    }


def write_snapshot_csv(path, snapshot: dict, header: str = "chemoplast snapshot v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        wr = csv.writer(fh)
        wr.writerow(SNAPSHOT_COLUMNS)
        for row in zip(*(snapshot[k] for k in SNAPSHOT_COLUMNS)):
            wr.writerow([f"{v:.17g}" for v in row])
