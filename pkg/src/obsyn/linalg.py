"""Dense small-matrix numerics.

Riccati solution, matrix exponential, linear observability Gramian, Kalman
rank tests and the exponential decay envelope ``||exp(A t)|| <= K exp(-a t)``.
All routines are pure functions of their arguments.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from obsyn.errors import NoStabilizingSolution, NotControllable, NotHurwitz, NotSPD

ENVELOPE_SAFETY = 0.9
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    residual_norm: float
    closed_loop_eigenvalues: np.ndarray

    def gain(self, B, R):
        """State feedback gain ``R^-1 B^T P``."""
        return np.linalg.solve(np.atleast_2d(R), np.asarray(B, float).T @ self.P)


@dataclass(frozen=True)
class DecayEnvelope:
    K: float
    a: float
    sigma_max_squared: float


def as_matrix(M, name="matrix"):
    """Coerce to a finite 2-D float array."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def is_spd(M, tol=1e-12):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    scale = max(1.0, np.abs(M).max())
    if np.abs(M - M.T).max() > tol * scale:
        return False
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return False
    return True


def numerical_rank(M, n=None):
    """Rank with the relative cutoff ``n * sigma_max * 1e-12``."""
    M = np.atleast_2d(np.asarray(M))
    if not np.iscomplexobj(M):
        M = M.astype(float)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if n is None:
        n = max(M.shape)
    return int(np.sum(sv > n * sv[0] * RANK_RTOL))


def ctrb_matrix(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def obsv_matrix(A, C):
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def ctrb_rank(A, B):
    return numerical_rank(ctrb_matrix(A, B), n=np.shape(A)[0])


def obsv_rank(A, C):
    return numerical_rank(obsv_matrix(A, C), n=np.shape(A)[0])


def is_stabilizable(A, B):
    """PBH test restricted to eigenvalues with nonnegative real part."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if numerical_rank(pencil, n=n) < n:
            return False
    return True


def output_augmented_system(A_cl, H1, H2):
    """State/output system ``d/dt [x; z] = [[A_cl, 0], [H1, H2]] [x; z]``, ``y = z``.

    Models measurements whose time derivative is affine in the state and the
    measurement itself; ``H1 = 0`` makes the ``x`` block unobservable.
    """
    A_cl = as_matrix(A_cl, "A_cl")
    H1 = as_matrix(H1, "H1")
    H2 = as_matrix(H2, "H2")
    n, m = A_cl.shape[0], H2.shape[0]
    A_aug = np.block([[A_cl, np.zeros((n, m))], [H1, H2]])
    C_aug = np.hstack([np.zeros((m, n)), np.eye(m)])
    return A_aug, C_aug


def care_residual(A, B, Q, R, P):
    return np.linalg.norm(Q + A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P), "fro")


def _hamiltonian_subspace(A, B, Q, R):
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    vals, vecs = np.linalg.eig(H)
    stable = vals.real < 0
    if stable.sum() != n:
        raise NoStabilizingSolution(
            f"Hamiltonian has {stable.sum()} stable eigenvalues, expected {n}"
        )
    X = vecs[:, stable]
    X1, X2 = X[:n], X[n:]
    if np.linalg.cond(X1) > 1e12:
        # eigenvector basis degenerate (defective spectrum); ordered Schur instead
        _, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
        if sdim != n:
            raise NoStabilizingSolution("stable invariant subspace has wrong dimension")
        X1, X2 = Z[:n, :n], Z[n:, :n]
        if np.linalg.cond(X1) > 1e12:
            raise NoStabilizingSolution("stable invariant subspace is not a graph")
    P = np.linalg.solve(X1.T, X2.T).T
    return np.real(0.5 * (P + P.T))


def solve_care(A, B, Q, R, newton_steps=5):
    """Stabilizing solution of ``Q + A'P + PA - P B R^-1 B' P = 0``.

    The stable invariant subspace of the Hamiltonian gives a first iterate,
    which is then polished with up to ``newton_steps`` Kleinman iterations.

    Raises
    ------
    NotSPD
        ``Q`` or ``R`` is not symmetric positive definite.
    NotControllable
        ``(A, B)`` has an uncontrollable mode that is not strictly stable.
    NoStabilizingSolution
        The Hamiltonian route fails or the result does not stabilize.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n):
        raise ValueError("inconsistent dimensions for A, B, Q")
    if R.shape != (B.shape[1], B.shape[1]):
        raise ValueError("R must be p x p")
    if not is_spd(Q):
        raise NotSPD("Q is not symmetric positive definite")
    if not is_spd(R):
        raise NotSPD("R is not symmetric positive definite")
    if ctrb_rank(A, B) < n and not is_stabilizable(A, B):
        raise NotControllable("(A, B) has an unstabilizable mode")

    P = _hamiltonian_subspace(A, B, Q, R)
    res = care_residual(A, B, Q, R, P)
    for _ in range(newton_steps):
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            break
        P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        res_new = care_residual(A, B, Q, R, P_new)
        if not res_new < res:
            break
        P, res = P_new, res_new

    tol = 1e-9 * max(1.0, np.linalg.norm(Q, "fro"))
    eigs = np.linalg.eigvals(A - B @ np.linalg.solve(R, B.T @ P))
    if res > tol:
        raise NoStabilizingSolution(f"Riccati residual {res:.3e} exceeds {tol:.3e}")
    if np.max(eigs.real) >= 0:
        raise NoStabilizingSolution("closed loop is not Hurwitz")
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise NoStabilizingSolution("solution is not positive definite")
    return RiccatiSolution(P=P, residual_norm=float(res), closed_loop_eigenvalues=eigs)


def matrix_exponential(M, t=1.0):
    """``exp(M t)`` by scaling and squaring with a degree-13 Pade approximant."""
    M = as_matrix(M, "M")
    return scipy.linalg.expm(M * float(t))


def linear_obs_gramian(A, C, tf, steps=200):
    """Trapezoid approximation of ``int_0^tf exp(A't) C'C exp(At) dt``.

    ``steps`` matches the simulation grid (the default grid uses
    ``dt = 0.005 tf``) so the result is comparable with an empirical Gramian
    accumulated on that grid.
    """
    if tf <= 0:
        raise ValueError("tf must be positive")
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    h = tf / steps
    step = matrix_exponential(A, h)
    CtC = C.T @ C
    Phi = np.eye(A.shape[0])
    W = 0.5 * CtC
    for k in range(1, steps + 1):
        Phi = Phi @ step
        F = Phi.T @ CtC @ Phi
        W = W + (0.5 * F if k == steps else F)
    W = W * h
    return 0.5 * (W + W.T)


def spectral_abscissa(M):
    return float(np.max(np.linalg.eigvals(as_matrix(M)).real))


def estimate_decay_envelope(Abar, horizon, samples=401):
    """Sampled constants ``K >= 1``, ``a > 0`` with ``||exp(Abar t)||_2 <= K exp(-a t)``.

    ``a`` is 0.9 times the distance of the spectrum from the imaginary axis;
    ``K`` is the smallest constant that makes the bound hold on the grid.
    """
    Abar = as_matrix(Abar, "Abar")
    abscissa = spectral_abscissa(Abar)
    if abscissa >= 0:
        raise NotHurwitz(f"spectral abscissa {abscissa:.3e} is not negative")
    a = ENVELOPE_SAFETY * abs(abscissa)
    ts = np.linspace(0.0, horizon, samples)
    ratios = [np.linalg.norm(matrix_exponential(Abar, t), 2) * np.exp(a * t) for t in ts]
    K = max(1.0, float(np.max(ratios)))
    sigma = np.linalg.norm(Abar, 2)
    return DecayEnvelope(K=K, a=a, sigma_max_squared=float(sigma**2))
