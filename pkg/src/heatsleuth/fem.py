"""Quadratic finite elements for the heat equation on the unit disc.

The disc is meshed with a tensor product of quadratic (9-node)
rectangular elements in polar coordinates (r, theta), periodic in
theta.  The 1/r stiffness term is never evaluated at r = 0: Gauss
points are interior to elements and the innermost node ring sits at
half a node spacing away from the center.

Backward Euler advances ``(M + dt K) U^n = M U^{n-1} + dt F`` with the
outer (r = 1) Dirichlet ring eliminated; the factorization is cached
and reused across time steps and likelihood evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.sparse.linalg import splu

from .shapes import ShapeParams, contains

TWO_PI = 2.0 * math.pi

#: load-vector quadrature: subcells per element per dimension x Gauss
#: points per subcell.  Dense enough that the area of a paper-sized
#: source is integrated to ~0.5% on the coarse grids (tunable).
LOAD_SUBCELLS = 8
LOAD_GAUSS = 3


class FemError(RuntimeError):
    """Fatal numerical failure in the finite element solver."""


def _lagrange(s):
    """Quadratic Lagrange basis on [-1, 1] with nodes -1, 0, 1."""
    s = np.asarray(s, dtype=float)
    return np.stack([s * (s - 1) / 2, 1 - s * s, s * (s + 1) / 2], axis=-1)


def _lagrange_d(s):
    s = np.asarray(s, dtype=float)
    return np.stack([s - 0.5, -2 * s, s + 0.5], axis=-1)


@dataclass(frozen=True)
class PolarMesh:
    """Tensor-product quadratic-element mesh of the unit disc.

    ``n_r`` x ``n_theta`` elements; (2 n_r + 1) radial node rings with the
    outermost at r = 1, and 2 n_theta angular nodes with theta = 2*pi
    identified with theta = 0.
    """

    n_r: int
    n_theta: int

    @property
    def dr(self) -> float:
        """Radial node spacing; the innermost ring sits at dr / 2."""
        return 2.0 / (4 * self.n_r + 1)

    @property
    def dtheta(self) -> float:
        return TWO_PI / (2 * self.n_theta)

    @property
    def r_nodes(self) -> np.ndarray:
        d = self.dr
        return d / 2 + d * np.arange(2 * self.n_r + 1)

    @property
    def theta_nodes(self) -> np.ndarray:
        return self.dtheta * np.arange(2 * self.n_theta)

    @property
    def n_theta_nodes(self) -> int:
        return 2 * self.n_theta

    @property
    def n_dof(self) -> int:
        return (2 * self.n_r + 1) * self.n_theta_nodes

    @property
    def n_interior(self) -> int:
        """DOFs left after the Dirichlet ring at r = 1 is removed."""
        return 2 * self.n_r * self.n_theta_nodes

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 9) global DOF indices, radial-major local order."""
        nt = self.n_theta_nodes
        dofs = np.empty((self.n_r * self.n_theta, 9), dtype=np.int64)
        e = 0
        for er in range(self.n_r):
            for et in range(self.n_theta):
                rn = (2 * er, 2 * er + 1, 2 * er + 2)
                tn = (2 * et % nt, (2 * et + 1) % nt, (2 * et + 2) % nt)
                dofs[e] = [rr * nt + tt for rr in rn for tt in tn]
                e += 1
        return dofs


def build_mesh(n_r: int, n_theta: int) -> PolarMesh:
    if n_r < 4 or n_theta < 4:
        raise ValueError("need at least 4 elements per dimension")
    return PolarMesh(n_r, n_theta)


@dataclass(frozen=True)
class FemMatrices:
    """Assembled mass and stiffness matrices (full DOF set, CSR)."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    mesh: PolarMesh

    @property
    def dof_count(self) -> int:
        return self.M.shape[0]

    def interior(self):
        n = self.mesh.n_interior
        return self.M[:n, :n].tocsr(), self.K[:n, :n].tocsr()


def assemble(mesh: PolarMesh, n_gauss: int = 3) -> FemMatrices:
    """Assemble mass and stiffness with tensor Gauss quadrature.

    M_ij = integral phi_j phi_i r dr dtheta;
    K_ij = integral (r dphi_j/dr dphi_i/dr + (1/r) dphi_j/dth dphi_i/dth).
    """
    gx, gw = leggauss(n_gauss)
    L = _lagrange(gx)  # (ng, 3)
    dL = _lagrange_d(gx)
    dr, dth = mesh.dr, mesh.dtheta
    r_nodes = mesh.r_nodes

    # reference-element blocks depending on the radial Gauss point
    phi = np.einsum("pi,qj->pqij", L, L).reshape(n_gauss, n_gauss, 9)
    dphir = np.einsum("pi,qj->pqij", dL / dr, L).reshape(n_gauss, n_gauss, 9)
    dphit = np.einsum("pi,qj->pqij", L, dL / dth).reshape(n_gauss, n_gauss, 9)
    w2 = np.outer(gw, gw) * dr * dth

    dofs = mesh.element_dofs()
    n_el = dofs.shape[0]
    Me_r = np.empty((mesh.n_r, 9, 9))
    Ke_r = np.empty((mesh.n_r, 9, 9))
    for er in range(mesh.n_r):
        rmid = r_nodes[2 * er + 1]
        r = rmid + gx * dr  # (ng,)
        Me = np.zeros((9, 9))
        Ke = np.zeros((9, 9))
        for p in range(n_gauss):
            for q in range(n_gauss):
                w = w2[p, q]
                Me += w * r[p] * np.outer(phi[p, q], phi[p, q])
                Ke += w * (
                    r[p] * np.outer(dphir[p, q], dphir[p, q])
                    + (1.0 / r[p]) * np.outer(dphit[p, q], dphit[p, q])
                )
        Me_r[er] = Me
        Ke_r[er] = Ke

    # every angular element in a ring shares the same local matrices
    Me_all = np.repeat(Me_r, mesh.n_theta, axis=0)
    Ke_all = np.repeat(Ke_r, mesh.n_theta, axis=0)
    rows = np.repeat(dofs, 9, axis=1).ravel()
    cols = np.tile(dofs, (1, 9)).ravel()
    shape = (mesh.n_dof, mesh.n_dof)
    M = sp.csr_matrix((Me_all.ravel(), (rows, cols)), shape=shape)
    K = sp.csr_matrix((Ke_all.ravel(), (rows, cols)), shape=shape)
    M.sum_duplicates()
    K.sum_duplicates()
    assert n_el == mesh.n_r * mesh.n_theta
    return FemMatrices(M=M, K=K, mesh=mesh)


class _LoadQuadrature:
    """Cached quadrature points/weights/basis values for load assembly."""

    def __init__(self, mesh: PolarMesh, n_sub: int = LOAD_SUBCELLS, n_gauss: int = LOAD_GAUSS):
        gx, gw = leggauss(n_gauss)
        pts = []
        wts = []
        for s in range(n_sub):
            lo = -1.0 + 2.0 * s / n_sub
            hw = 1.0 / n_sub
            pts.extend(lo + hw * (gx + 1.0))
            wts.extend(gw * hw)
        s1 = np.asarray(pts)
        w1 = np.asarray(wts)
        npt = s1.size
        Lp = _lagrange(s1)  # (npt, 3)

        dr, dth = mesh.dr, mesh.dtheta
        r_nodes = mesh.r_nodes
        n_el = mesh.n_r * mesh.n_theta
        nq = npt * npt

        # local basis at all quadrature points: (nq, 9)
        self.basis = np.einsum("pi,qj->pqij", Lp, Lp).reshape(nq, 9)
        self.dofs = mesh.element_dofs()

        xy = np.empty((n_el, nq, 2))
        wq = np.empty((n_el, nq))
        e = 0
        base_w = np.outer(w1, w1).ravel() * dr * dth
        for er in range(mesh.n_r):
            r = r_nodes[2 * er + 1] + s1 * dr
            R = np.repeat(r, npt)
            wr = base_w * R
            for et in range(mesh.n_theta):
                tmid = dth * (2 * et + 1)
                T = np.tile(tmid + s1 * dth, npt)
                xy[e, :, 0] = R * np.cos(T)
                xy[e, :, 1] = R * np.sin(T)
                wq[e] = wr
                e += 1
        self.points = xy.reshape(-1, 2)
        self.weights = wq
        self.n_el = n_el
        self.nq = nq
        self.n_dof = mesh.n_dof


_LOAD_CACHE: dict[tuple, _LoadQuadrature] = {}


def _load_quadrature(mesh: PolarMesh, n_sub: int, n_gauss: int) -> _LoadQuadrature:
    key = (mesh.n_r, mesh.n_theta, n_sub, n_gauss)
    if key not in _LOAD_CACHE:
        _LOAD_CACHE[key] = _LoadQuadrature(mesh, n_sub, n_gauss)
    return _LOAD_CACHE[key]


def assemble_load(
    mesh: PolarMesh,
    shape: ShapeParams,
    strength: float = 1.0,
    n_sub: int = LOAD_SUBCELLS,
    n_gauss: int = LOAD_GAUSS,
) -> np.ndarray:
    """Load vector F_i = strength * integral_D phi_i r dr dtheta.

    The indicator of the source domain is evaluated pointwise on a
    subdivided tensor Gauss rule per element.
    """
    quad = _load_quadrature(mesh, n_sub, n_gauss)
    mask = contains(shape, quad.points).reshape(quad.n_el, quad.nq)
    wm = quad.weights * mask  # (n_el, nq)
    Fe = wm @ quad.basis  # (n_el, 9)
    F = np.zeros(quad.n_dof)
    np.add.at(F, quad.dofs.ravel(), Fe.ravel())
    return strength * F


@dataclass
class FieldState:
    """Interior coefficient vector and current time of a transient solve."""

    U: np.ndarray
    t: float


def _boundary_mass(mesh: PolarMesh) -> sp.csr_matrix:
    """1-D periodic quadratic mass matrix on the r = 1 ring (ds = dtheta)."""
    nt = mesh.n_theta_nodes
    local = mesh.dtheta * np.array(
        [[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 15.0
    rows, cols, vals = [], [], []
    for et in range(mesh.n_theta):
        idx = (2 * et % nt, (2 * et + 1) % nt, (2 * et + 2) % nt)
        for a in range(3):
            for b in range(3):
                rows.append(idx[a])
                cols.append(idx[b])
                vals.append(local[a, b])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, nt))


class HeatStepper:
    """Backward-Euler stepper with a cached sparse LU of (M + dt K)."""

    def __init__(self, mats: FemMatrices, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.mesh = mats.mesh
        self.dt = dt
        self.M_i, self.K_i = mats.interior()
        # boundary rows for variationally consistent flux recovery:
        # integral_Gamma (du/dn) v = a(u, v) + (du/dt, v) - (f, v) for
        # test functions v supported on the boundary ring
        n_int = mats.mesh.n_interior
        self.K_bd = mats.K[n_int:, :n_int].tocsr()
        self.M_bd = mats.M[n_int:, :n_int].tocsr()
        self._mgamma_lu = splu(_boundary_mass(mats.mesh).tocsc())
        try:
            self._lu = splu((self.M_i + dt * self.K_i).tocsc())
        except RuntimeError as exc:  # pragma: no cover - M is SPD
            raise FemError(f"factorization of (M + dt K) failed: {exc}") from exc

    def flux_nodes(self, U: np.ndarray, U_prev: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Boundary flux du/dn at the angular nodes, recovered from the
        weak residual of the backward-Euler step U_prev -> U."""
        n_int = self.mesh.n_interior
        rhs = (
            self.K_bd @ U
            + self.M_bd @ ((U - U_prev) / self.dt)
            - F[n_int:self.mesh.n_dof]
        )
        return self._mgamma_lu.solve(rhs)

    def initial_state(self) -> FieldState:
        return FieldState(U=np.zeros(self.mesh.n_interior), t=0.0)

    def step(self, state: FieldState, F: np.ndarray) -> FieldState:
        """Advance one backward-Euler step with load vector F."""
        Fi = F[: self.mesh.n_interior]
        U = self._lu.solve(self.M_i @ state.U + self.dt * Fi)
        if not np.all(np.isfinite(U)):
            raise FemError("non-finite solution after time step")
        return FieldState(U=U, t=state.t + self.dt)

    def steady_state(self, F: np.ndarray) -> np.ndarray:
        """Direct solve of K U = F (long-time limit)."""
        Fi = F[: self.mesh.n_interior]
        return splu(self.K_i.tocsc()).solve(Fi)


def boundary_flux_nodes(state_U: np.ndarray, mesh: PolarMesh) -> np.ndarray:
    """Radial derivative du/dr at r = 1 at every angular node.

    Differentiates the quadratic radial basis of the outermost element
    row; the boundary ring itself is zero by the Dirichlet condition.
    """
    nt = mesh.n_theta_nodes
    U2 = state_U.reshape(2 * mesh.n_r, nt)
    # quadratic one-sided derivative at the right node (boundary = 0)
    return (U2[-2] - 4.0 * U2[-1]) / (2.0 * mesh.dr)


def interp_boundary(values: np.ndarray, mesh: PolarMesh, theta: float) -> float:
    """Quadratic-in-theta interpolation of angular-node boundary values."""
    dth = mesh.dtheta
    theta = theta % TWO_PI
    et = int(theta // (2 * dth)) % mesh.n_theta
    tmid = dth * (2 * et + 1)
    tau = (theta - tmid) / dth
    nt = mesh.n_theta_nodes
    idx = (2 * et % nt, (2 * et + 1) % nt, (2 * et + 2) % nt)
    L = _lagrange(tau)
    return float(L[0] * values[idx[0]] + L[1] * values[idx[1]] + L[2] * values[idx[2]])


def boundary_flux(state: FieldState, mesh: PolarMesh, theta: float) -> float:
    """Outward boundary flux du/dn at angle theta (du/dr at r = 1)."""
    return interp_boundary(boundary_flux_nodes(state.U, mesh), mesh, theta)


class TransientFluxSolver:
    """Forward solve for one source shape, recording boundary flux per step.

    Flux at arbitrary (theta, t) is interpolated quadratically in theta
    and linearly in t between stored step values (zero at t = 0).
    """

    def __init__(self, stepper: HeatStepper, shape: ShapeParams, strength: float):
        self.stepper = stepper
        self.mesh = stepper.mesh
        self.dt = stepper.dt
        self.F = assemble_load(self.mesh, shape, strength)
        self._flux_rows = [np.zeros(self.mesh.n_theta_nodes)]  # index 0 = t0
        self._state = stepper.initial_state()

    @property
    def n_steps(self) -> int:
        return len(self._flux_rows) - 1

    def advance_to(self, t: float) -> None:
        need = int(math.ceil(t / self.dt - 1e-12))
        while self.n_steps < need:
            prev = self._state
            self._state = self.stepper.step(prev, self.F)
            self._flux_rows.append(
                self.stepper.flux_nodes(self._state.U, prev.U, self.F))

    def flux(self, theta: float, t: float) -> float:
        if t < 0:
            raise ValueError("t must be nonnegative")
        self.advance_to(t)
        x = t / self.dt
        k = min(int(x), self.n_steps - 1) if self.n_steps else 0
        frac = x - k
        lo = interp_boundary(self._flux_rows[k], self.mesh, theta)
        if frac <= 1e-12:
            return lo
        hi = interp_boundary(self._flux_rows[k + 1], self.mesh, theta)
        return lo + frac * (hi - lo)

    def flux_many(self, thetas, times) -> np.ndarray:
        return np.array([self.flux(th, t) for th, t in zip(thetas, times)])


def dump_flux_csv(path, times, thetas, fluxes) -> None:
    """Write a trajectory CSV with header t,theta,flux."""
    with open(path, "w") as fh:
        fh.write("t,theta,flux\n")
        for t, th, f in zip(times, thetas, fluxes):
            fh.write(f"{float(t)!r},{float(th)!r},{float(f)!r}\n")
