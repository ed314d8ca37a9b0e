"""The coupled functional I_β, its constraints and projections.

All quantities are exact with respect to the grid quadrature.  Gradients are
returned in weak form (the Euclidean gradient of the discrete functional);
:func:`strong_gradient` divides by the quadrature weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import InvalidStateError, NotProjectableError
from .radial import Params, SystemState

ZERO_COMPONENT_RTOL = 1e-10
M_PROJECT_MAXITER = 50
M_PROJECT_TOL = 1e-13


def _signed_pow(u, e):
    """``|u|^{e-1} u``, with value 0 at u = 0 for every e >= 1."""
    return np.sign(u) * np.abs(u) ** e


def _prod_except(x):
    """Row ``i`` holds the product over rows ``k != i`` of ``x``."""
    K = x.shape[0]
    out = np.empty_like(x)
    left = np.ones_like(x[0])
    for i in range(K):
        out[i] = left
        left = left * x[i]
    right = np.ones_like(x[0])
    for i in range(K - 1, -1, -1):
        out[i] *= right
        right = right * x[i]
    return out


def integrals(u: SystemState, params: Params):
    """``(a, b, P)``: norms ``||u_i||_i^2``, ``mu_i |u_i|^{Kq}`` and the interaction."""
    _check(u, params)
    g = u.grid
    v = u.values
    lam = params.lam_arr
    a = g.dirichlet_energy(v) + lam * g.integrate(v * v)
    b = params.mu_arr * g.integrate(np.abs(v) ** params.p)
    P = float(g.integrate(np.prod(np.abs(v) ** params.q, axis=0)))
    return a, b, P


def _check(u, params):
    if u.K != params.K:
        raise InvalidStateError(f"state has {u.K} components, params expect {params.K}")


@dataclass(frozen=True)
class EnergyReport:
    total: float
    per_component_norms: np.ndarray
    per_component_lp: np.ndarray
    interaction: float
    nehari_residual: float
    g_residuals: np.ndarray
    beta: float
    p: float
    q: float

    def reconstruct(self) -> float:
        return float(
            0.5 * self.per_component_norms.sum()
            - self.per_component_lp.sum() / self.p
            - self.beta / self.q * self.interaction
        )

    def on_constraint_value(self) -> float:
        """``(1/2 - 1/(Kq)) sum ||u_i||^2``, the energy when all G vanish."""
        return float((0.5 - 1.0 / self.p) * self.per_component_norms.sum())


def energy(u: SystemState, params: Params) -> EnergyReport:
    a, b, P = integrals(u, params)
    beta = params.beta
    total = 0.5 * a.sum() - b.sum() / params.p - beta / params.q * P
    return EnergyReport(
        total=float(total),
        per_component_norms=a,
        per_component_lp=b,
        interaction=P,
        nehari_residual=float(a.sum() - b.sum() - params.K * beta * P),
        g_residuals=a - b - beta * P,
        beta=beta,
        p=params.p,
        q=params.q,
    )


def _coupling(u: SystemState, params: Params):
    """Weak-form ``D_i = d/du_i (int prod |u_k|^q) / q``."""
    v = u.values
    q = params.q
    others = _prod_except(np.abs(v) ** q)
    return u.grid.weights * _signed_pow(v, q - 1) * others


def grad_energy(u: SystemState, params: Params) -> np.ndarray:
    """Weak-form gradient of I_β, shape (K, n)."""
    _check(u, params)
    g = u.grid
    v = u.values
    m = g.weights
    lin = g.apply_stiffness(v) + params.lam_arr[:, None] * m * v
    self_term = params.mu_arr[:, None] * m * _signed_pow(v, params.p - 1)
    return lin - self_term - params.beta * _coupling(u, params)


def strong_gradient(u: SystemState, params: Params) -> np.ndarray:
    """Gradient divided by the quadrature weights: the discrete PDE residual."""
    return grad_energy(u, params) / u.grid.weights


def gradient_scale(u: SystemState, params: Params) -> float:
    """Max-norm of the linear part ``-Δu_i + λ_i u_i``, used to normalize residuals."""
    g = u.grid
    lin = g.apply_stiffness(u.values) / g.weights + params.lam_arr[:, None] * u.values
    return float(np.max(np.abs(lin)))


def constraints_G(u: SystemState, params: Params) -> np.ndarray:
    """``G_i(u) = ||u_i||_i^2 - mu_i|u_i|^{Kq} - β|prod u|_q^q``."""
    a, b, P = integrals(u, params)
    return a - b - params.beta * P


def constraint_gradients(u: SystemState, params: Params) -> np.ndarray:
    """Weak gradients of the K constraints, shape (K, K, n): ``[i, k]`` is ``dG_i/du_k``."""
    g = u.grid
    v = u.values
    m = g.weights
    K = params.K
    D = _coupling(u, params)
    out = np.broadcast_to(-params.q * params.beta * D, (K, K, g.n)).copy()
    own = 2.0 * (g.apply_stiffness(v) + params.lam_arr[:, None] * m * v)
    own -= params.p * params.mu_arr[:, None] * m * _signed_pow(v, params.p - 1)
    for i in range(K):
        out[i, i] += own[i]
    return out


def zero_components(u: SystemState, params: Params, rtol=ZERO_COMPONENT_RTOL) -> np.ndarray:
    """Mask of components whose ``|u_i|_{Kq,i}`` is below ``rtol`` of the largest."""
    _, b, _ = integrals(u, params)
    norms = b ** (1.0 / params.p)
    top = norms.max()
    if top == 0:
        return np.ones(params.K, dtype=bool)
    return norms < rtol * top


def nehari_project(u: SystemState, params: Params):
    """Scale ``u`` onto the Nehari set. Returns ``(t, t*u)``."""
    a, b, P = integrals(u, params)
    denom = b.sum() + params.K * params.beta * P
    if not (a.sum() > 0 and denom > 0):
        raise NotProjectableError(
            f"Nehari denominator {denom:.3e} is not positive", residuals=np.array([denom])
        )
    t = float((a.sum() / denom) ** (1.0 / (params.p - 2)))
    return t, u.scaled(t)


def _m_scalings(a, b, P, params: Params):
    """Solve ``G_i(t_1 u_1, ..., t_K u_K) = 0`` for t > 0 given the integrals of u."""
    p, q, beta = params.p, params.q, params.beta
    if np.any(a <= 0) or np.any(b <= 0):
        raise NotProjectableError("every component must be non-zero", residuals=a - b - beta * P)
    s = np.log(a / b) / (p - 2)
    if beta == 0 or P == 0:
        return np.exp(s)
    ra = b / a
    rc = beta * P / a

    def resid(s):
        S = s.sum()
        with np.errstate(over="ignore", invalid="ignore"):
            e_self = ra * np.exp((p - 2) * s)
            e_int = rc * np.exp(q * S - 2 * s)
            return 1.0 - e_self - e_int, e_self, e_int

    f, e_self, e_int = resid(s)
    for _ in range(M_PROJECT_MAXITER):
        err = np.max(np.abs(f))
        if err < M_PROJECT_TOL:
            return np.exp(s)
        J = -q * e_int[:, None] * np.ones(len(s))[None, :]
        J[np.diag_indices_from(J)] += -(p - 2) * e_self + 2 * e_int
        # least squares: the Jacobian is singular where (p-2) e_self = 2 e_int
        ds = np.linalg.lstsq(J, -f, rcond=None)[0]
        if not np.all(np.isfinite(ds)):
            break
        step = 1.0
        while step > 1e-6:
            s_new = s + step * ds
            f_new, es_new, ei_new = resid(s_new)
            if np.all(np.isfinite(f_new)) and np.max(np.abs(f_new)) < (1 - 1e-4 * step) * err:
                break
            step *= 0.5
        else:
            break
        s, f, e_self, e_int = s_new, f_new, es_new, ei_new
    raise NotProjectableError(
        f"componentwise projection did not converge (max residual {np.max(np.abs(f)):.3e})",
        residuals=f * a,
    )


def m_project(u: SystemState, params: Params):
    """Componentwise scalings onto ``M_β``: ``G_i(t∘u) = 0`` for all i.

    For β = 0, or when the interaction vanishes, the closed form
    ``t_i = (||u_i||^2 / mu_i|u_i|^{Kq})^{1/(Kq-2)}`` is returned.
    Otherwise Newton's method in ``log t`` starts from that closed form.
    """
    a, b, P = integrals(u, params)
    t = _m_scalings(a, b, P, params)
    return t, u.scaled(t)


@dataclass(frozen=True)
class InteractionMatrix:
    entries: np.ndarray
    max_eigenvalue: float


def interaction_matrix(u: SystemState, params: Params, tol: float = 1e-8) -> InteractionMatrix:
    """Matrix ``M_β(u)_{ij} = G_i'(u)[φ_j(u)]`` for a state on ``M_β``."""
    a, b, P = integrals(u, params)
    if np.any(zero_components(u, params)):
        raise InvalidStateError("interaction matrix needs every component non-zero")
    G = a - b - params.beta * P
    if np.max(np.abs(G) / a) > tol:
        raise InvalidStateError(
            f"state is off the constraint set (max relative |G_i| = {np.max(np.abs(G) / a):.2e})"
        )
    p, q, beta = params.p, params.q, params.beta
    M = np.full((params.K, params.K), -q * beta * P)
    M[np.diag_indices_from(M)] = (2 - p) * b + (2 - q) * beta * P
    return InteractionMatrix(M, float(np.max(np.linalg.eigvalsh(M))))


def constraint_matrix(u: SystemState, params: Params) -> np.ndarray:
    """``G_i'(u)[φ_j(u)]`` evaluated directly, valid off the constraint set too."""
    a, b, P = integrals(u, params)
    p, q, beta = params.p, params.q, params.beta
    M = np.full((params.K, params.K), -q * beta * P)
    M[np.diag_indices_from(M)] += 2 * a - p * b
    return M


def energy_limit(u: SystemState, params: Params) -> float:
    """Decoupled functional ``sum_i [||u_i||^2/2 - mu_i|u_i|^{Kq}/(Kq)]``."""
    a, b, _ = integrals(u, params)
    return float(0.5 * a.sum() - b.sum() / params.p)


def quotient_Ibar(u: SystemState, params: Params) -> float:
    """``sum_i (||u_i||_i / |u_i|_{Kq,i})^{2Kq/(Kq-2)}``; invariant under componentwise scaling."""
    if np.any(zero_components(u, params)):
        raise InvalidStateError("quotient needs every component non-zero")
    a, b, _ = integrals(u, params)
    p = params.p
    return float(np.sum(a ** (p / (p - 2)) / b ** (2.0 / (p - 2))))


def hessian(u: SystemState, params: Params):
    """Sparse Hessian of the discrete I_β (requires q >= 2 or no zeros)."""
    g = u.grid
    v = u.values
    m = g.weights
    K, n = v.shape
    p, q, beta = params.p, params.q, params.beta
    absq = np.abs(v) ** q
    diag_main, off = g.stiffness_bands
    blocks = [[None] * K for _ in range(K)]
    others = _prod_except(absq)
    for i in range(K):
        d = diag_main + params.lam_arr[i] * m
        d = d - (p - 1) * params.mu_arr[i] * m * np.abs(v[i]) ** (p - 2)
        d = d - beta * (q - 1) * m * np.abs(v[i]) ** (q - 2) * others[i]
        blocks[i][i] = sparse.diags([off, d, off], [-1, 0, 1], format="csr")
        for k in range(K):
            if k == i:
                continue
            rest = np.ones(n)
            for l in range(K):
                if l not in (i, k):
                    rest = rest * absq[l]
            c = -beta * q * m * _signed_pow(v[i], q - 1) * _signed_pow(v[k], q - 1) * rest
            blocks[i][k] = sparse.diags(c, 0, format="csr")
    return sparse.bmat(blocks, format="csc")


def newton_polish(u: SystemState, params: Params, tol=1e-10, maxiter=30):
    """Newton's method on ``I_β'(u) = 0`` starting at ``u``.

    Returns ``(state, relative_residual, converged)``; the residual is the
    strong-form max-norm divided by :func:`gradient_scale`.
    """
    scale = gradient_scale(u, params)
    cur = u
    res = float(np.max(np.abs(strong_gradient(cur, params)))) / scale
    if params.q < 2:
        return cur, res, res < tol
    K, n = u.values.shape
    for _ in range(maxiter):
        if res < tol:
            return cur, res, True
        H = hessian(cur, params)
        F = grad_energy(cur, params).ravel()
        try:
            dv = spsolve(H, F)
        except RuntimeError:
            return cur, res, False
        if not np.all(np.isfinite(dv)):
            return cur, res, False
        cur = SystemState(cur.values - dv.reshape(K, n), u.grid)
        res = float(np.max(np.abs(strong_gradient(cur, params)))) / scale
    return cur, res, res < tol
