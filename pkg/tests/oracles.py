"""Independent numerical oracles for the closed-form updates.

None of these call into ``romco.prox``; they minimise the defining
objectives directly with generic solvers.
"""
import cvxpy as cp
import numpy as np
from scipy import optimize


def nuclear_objective(U, M, eta, lam):
    return 0.5 / eta * np.sum((U - M) ** 2) + lam * np.sum(np.linalg.svd(U, compute_uv=False))


def group_objective(V, M, eta, lam):
    return 0.5 / eta * np.sum((V - M) ** 2) + lam * np.sum(np.sqrt(np.sum(V ** 2, axis=0)))


def logdet_objective(U, M, eta, lam):
    _, logdet = np.linalg.slogdet(np.eye(U.shape[1]) + U.T @ U)
    return 0.5 / eta * np.sum((U - M) ** 2) + lam * logdet


def nuclear_prox_oracle(M, eta, lam):
    U = cp.Variable(M.shape)
    prob = cp.Problem(cp.Minimize(0.5 / eta * cp.sum_squares(U - M) + lam * cp.normNuc(U)))
    prob.solve(solver=cp.CLARABEL)
    return U.value


def group_prox_oracle(M, eta, lam, grid=201):
    """Per column: coarse grid over the scale s in [0, 1], then golden section."""
    out = np.zeros_like(M)
    for j in range(M.shape[1]):
        v = M[:, j]
        nv = np.linalg.norm(v)
        f = lambda s: 0.5 / eta * (s - 1) ** 2 * nv ** 2 + lam * s * nv  # noqa: E731
        ss = np.linspace(0, 1, grid)
        k = int(np.argmin([f(s) for s in ss]))
        lo, hi = ss[max(k - 1, 0)], ss[min(k + 1, grid - 1)]
        res = optimize.minimize_scalar(f, bracket=None, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        s = min((res.x, lo, hi), key=f)
        out[:, j] = s * v
    return out


def logdet_prox_oracle(M, eta, lam, seed=0):
    """Multi-start L-BFGS on the (smooth) log-det prox objective."""
    d, m = M.shape
    rng = np.random.default_rng(seed)

    def fg(flat):
        U = flat.reshape(d, m)
        A = np.eye(m) + U.T @ U
        _, logdet = np.linalg.slogdet(A)
        f = 0.5 / eta * np.sum((U - M) ** 2) + lam * logdet
        g = (U - M) / eta + 2 * lam * U @ np.linalg.inv(A)
        return f, g.ravel()

    starts = [M, np.zeros_like(M), 0.5 * M, 0.1 * M, rng.standard_normal(M.shape)]
    best = None
    for U0 in starts:
        res = optimize.minimize(fg, U0.ravel(), jac=True, method="L-BFGS-B",
                                options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    return best.x.reshape(d, m)


def theta(s, s_hat, rho):
    return (s - s_hat) ** 2 / (2 * rho) + np.log1p(s * s)


def theta_prime(s, s_hat, rho):
    return 2 * s / (1 + s * s) + (s - s_hat) / rho


def scalar_logdet_oracle(s_hat, rho, grid=20001):
    """Global minimiser of theta on [0, s_hat]: dense grid, then bounded Brent."""
    if s_hat == 0:
        return 0.0
    ss = np.linspace(0, s_hat, grid)
    k = int(np.argmin(theta(ss, s_hat, rho)))
    lo, hi = ss[max(k - 1, 0)], ss[min(k + 1, grid - 1)]
    res = optimize.minimize_scalar(lambda s: theta(s, s_hat, rho), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    return min((res.x, lo, hi), key=lambda s: theta(s, s_hat, rho))


def stationary_root(s_hat, rho):
    """Root of theta' on (0, s_hat) by Brent's method (convex regime)."""
    return optimize.brentq(theta_prime, 0.0, s_hat, args=(s_hat, rho), xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           maxiter=500)


def composite_update_oracle(U, V, G, eta1, eta2, lam1, lam2):
    """Minimise the linearised one-step objective over (U', V') directly."""
    Un, Vn = cp.Variable(U.shape), cp.Variable(V.shape)
    obj = (cp.sum(cp.multiply(G, Un - U)) + cp.sum(cp.multiply(G, Vn - V))
           + 0.5 / eta1 * cp.sum_squares(Un - U) + 0.5 / eta2 * cp.sum_squares(Vn - V)
           + lam1 * cp.normNuc(Un) + lam2 * cp.sum(cp.norm(Vn, 2, axis=0)))
    cp.Problem(cp.Minimize(obj)).solve(solver=cp.CLARABEL)
    return Un.value, Vn.value


def composite_value(Un, Vn, U, V, G, eta1, eta2, lam1, lam2):
    return (np.sum(G * (Un - U)) + np.sum(G * (Vn - V))
            + 0.5 / eta1 * np.sum((Un - U) ** 2) + 0.5 / eta2 * np.sum((Vn - V) ** 2)
            + lam1 * np.sum(np.linalg.svd(Un, compute_uv=False))
            + lam2 * np.sum(np.linalg.norm(Vn, axis=0)))


def central_difference(f, W, h=1e-6):
    g = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        g[idx] = (f(Wp) - f(Wm)) / (2 * h)
    return g
