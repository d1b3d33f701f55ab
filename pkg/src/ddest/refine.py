"""Maximum-likelihood machinery: likelihood, Jacobian, Fisher matrix,
damped Gauss-Newton iteration, and least-squares gain reconstruction.

Parameters are handled as a flat real vector theta of length 4P ordered
(Re gain, Im gain, delay, doppler) per path, which keeps the Fisher matrix
real-symmetric and the iteration purely real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import PathSet, SamplingGrid, Snapshot
from .errors import DegenerateBasisError, NumericalError, ValidationError

DAMPING_CAP = 1e6


def pack_params(paths: PathSet) -> np.ndarray:
    """Flatten a PathSet into theta = (Re g_1, Im g_1, tau_1, alpha_1, ...)."""
    theta = np.empty(4 * len(paths))
    theta[0::4] = paths.gains.real
    theta[1::4] = paths.gains.imag
    theta[2::4] = paths.delays
    theta[3::4] = paths.dopplers
    return theta


def unpack_params(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split theta into (gains, delays, dopplers) without range validation."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size % 4 != 0:
        raise ValidationError("theta length must be a multiple of 4")
    gains = theta[0::4] + 1j * theta[1::4]
    return gains, theta[2::4].copy(), theta[3::4].copy()


def path_atoms(delays: np.ndarray, dopplers: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    """Unit-gain path atoms as columns of a (N_f*N_t, P) matrix (row-major vec)."""
    af = np.exp(-2j * np.pi * np.outer(grid.freq_coords(), delays))
    at = np.exp(2j * np.pi * np.outer(grid.time_coords(), dopplers))
    return (af[:, None, :] * at[None, :, :]).reshape(grid.n_freq * grid.n_time, -1)


def _model_vec(theta: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    gains, delays, dopplers = unpack_params(theta)
    if gains.size == 0:
        return np.zeros(grid.n_freq * grid.n_time, dtype=np.complex128)
    return path_atoms(delays, dopplers, grid) @ gains


def _resolve_sigma(snapshot: Snapshot, sigma) -> float:
    sigma = snapshot.noise_sigma if sigma is None else float(sigma)
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise ValidationError("a positive noise level sigma is required")
    return sigma


def neg_log_likelihood(theta: np.ndarray, snapshot: Snapshot, sigma=None) -> float:
    """||Y - S(theta)||_F^2 / sigma^2 for the Gaussian observation model."""
    sigma = _resolve_sigma(snapshot, sigma)
    r = snapshot.data.ravel() - _model_vec(theta, snapshot.grid)
    return float(np.real(np.vdot(r, r))) / sigma**2


def model_jacobian(theta: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    """d vec(S) / d theta, complex (N_f*N_t) x 4P.

    Per path p with atom a_p: d/dRe(g) = a_p, d/dIm(g) = j*a_p,
    d/d tau = -2j*pi*f_k * g_p * a_p, d/d alpha = +2j*pi*t_l * g_p * a_p.
    """
    gains, delays, dopplers = unpack_params(theta)
    n = grid.n_freq * grid.n_time
    p = gains.size
    atoms = path_atoms(delays, dopplers, grid) if p else np.zeros((n, 0), np.complex128)
    fk = np.repeat(grid.freq_coords(), grid.n_time)
    tl = np.tile(grid.time_coords(), grid.n_freq)
    jac = np.empty((n, 4 * p), dtype=np.complex128)
    jac[:, 0::4] = atoms
    jac[:, 1::4] = 1j * atoms
    jac[:, 2::4] = (-2j * np.pi) * fk[:, None] * atoms * gains
    jac[:, 3::4] = (2j * np.pi) * tl[:, None] * atoms * gains
    return jac


def nll_gradient(theta: np.ndarray, snapshot: Snapshot, sigma=None) -> np.ndarray:
    """Gradient of the negative log-likelihood, -(2/sigma^2) Re(J^H r)."""
    sigma = _resolve_sigma(snapshot, sigma)
    jac = model_jacobian(theta, snapshot.grid)
    r = snapshot.data.ravel() - _model_vec(theta, snapshot.grid)
    return (-2.0 / sigma**2) * np.real(jac.conj().T @ r)


def fisher_information(theta: np.ndarray, grid: SamplingGrid, sigma: float) -> np.ndarray:
    """(2/sigma^2) Re(J^H J), returned exactly symmetric."""
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise ValidationError("a positive noise level sigma is required")
    jac = model_jacobian(theta, grid)
    f = (2.0 / sigma**2) * np.real(jac.conj().T @ jac)
    return 0.5 * (f + f.T)


@dataclass(frozen=True)
class GnConfig:
    """Gauss-Newton iteration controls (Armijo backtracking, LM damping)."""

    max_iters: int = 10
    armijo_c: float = 1e-4
    step_shrink: float = 0.5
    max_backtracks: int = 20
    damping: float = 1e-10
    tol: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.armijo_c < 1.0):
            raise ValidationError("armijo_c must lie in (0, 1)")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValidationError("step_shrink must lie in (0, 1)")
        if self.damping < 0.0:
            raise ValidationError("damping must be non-negative")


@dataclass
class RefineResult:
    """Outcome of a Gauss-Newton run plus its per-iteration trace."""

    theta: np.ndarray
    trace: list = field(default_factory=list)  # rows: (iter, lambda, step_size, grad_norm)
    converged: bool = False
    projected: bool = False  # some accepted step was clipped/wrapped into range

    @property
    def paths(self) -> PathSet:
        gains, delays, dopplers = unpack_params(self.theta)
        return PathSet(gains, delays, dopplers)

    def trace_csv(self) -> str:
        lines = ["iter,lambda,step_size,grad_norm"]
        for it, lam, step, gnorm in self.trace:
            lines.append(f"{it},{lam:.17g},{step:.17g},{gnorm:.17g}")
        return "\n".join(lines) + "\n"


def _project_params(theta: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clip delays into [0, 1) and wrap Dopplers into [-0.5, 0.5)."""
    theta = theta.copy()
    delays = theta[2::4]
    dopplers = theta[3::4]
    changed = False
    bad = (delays < 0.0) | (delays >= 1.0)
    if np.any(bad):
        delays[bad] = np.clip(delays[bad], 0.0, np.nextafter(1.0, 0.0))
        changed = True
    bad = (dopplers < -0.5) | (dopplers >= 0.5)
    if np.any(bad):
        dopplers[bad] = np.mod(dopplers[bad] + 0.5, 1.0) - 0.5
        dopplers[dopplers >= 0.5] = np.nextafter(0.5, -1.0)
        changed = True
    return theta, changed


def gauss_newton_refine(theta0: np.ndarray, snapshot: Snapshot,
                        cfg: GnConfig = GnConfig(), sigma=None) -> RefineResult:
    """Damped Gauss-Newton descent on the negative log-likelihood.

    Steps follow theta <- theta - eps * (F + damping*diag(F))^{-1} grad with
    eps from Armijo backtracking, so accepted steps never increase the
    objective. Singular systems escalate the damping tenfold up to 1e6 before
    aborting. When sigma is not given it falls back to the snapshot's noise
    level, or to 1.0 for noiseless snapshots (the argmin is sigma-invariant).
    """
    theta = np.array(theta0, dtype=np.float64)
    if theta.size == 0 or theta.size % 4 != 0:
        raise ValidationError("theta0 must hold at least one path (length 4P)")
    if not np.all(np.isfinite(theta)):
        raise ValidationError("theta0 must be finite")
    if sigma is None:
        sigma = snapshot.noise_sigma if snapshot.noise_sigma > 0 else 1.0
    sigma = float(sigma)

    result = RefineResult(theta=theta)
    lam = neg_log_likelihood(theta, snapshot, sigma)
    damping = cfg.damping
    for it in range(cfg.max_iters):
        grad = nll_gradient(theta, snapshot, sigma)
        fisher = fisher_information(theta, snapshot.grid, sigma)
        step = None
        while True:
            damped = fisher + damping * np.diag(np.diag(fisher))
            try:
                chol = np.linalg.cholesky(damped)
            except np.linalg.LinAlgError:
                chol = None
            if chol is not None:
                z = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
                if np.all(np.isfinite(z)):
                    step = z
                    break
            damping = max(damping, 1e-12) * 10.0
            if damping > DAMPING_CAP:
                raise NumericalError(
                    f"Fisher matrix remained singular up to damping {DAMPING_CAP:g} "
                    f"at iteration {it}"
                )
        z_norm = float(np.linalg.norm(step))
        grad_norm = float(np.linalg.norm(grad))
        if z_norm <= cfg.tol:
            result.converged = True
            break
        # Armijo backtracking from a full Gauss-Newton step
        slope = float(grad @ step)
        eps = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            cand, changed = _project_params(theta - eps * step)
            cand_lam = neg_log_likelihood(cand, snapshot, sigma)
            if cand_lam <= lam - cfg.armijo_c * eps * slope or cand_lam < lam:
                theta, lam = cand, cand_lam
                result.projected |= changed
                accepted = True
                break
            eps *= cfg.step_shrink
        if not accepted:
            # no decrease along this direction: escalate damping and retry
            damping = max(damping, 1e-12) * 10.0
            if damping > DAMPING_CAP:
                result.converged = True
                break
            continue
        result.trace.append((it, lam, eps, grad_norm))
        damping = cfg.damping
    result.theta = theta
    return result


def blue_gains(delays: np.ndarray, dopplers: np.ndarray,
               snapshot: Snapshot) -> tuple[np.ndarray, float]:
    """Least-squares (BLUE) complex gains for fixed delay/Doppler parameters.

    Returns the gain vector and the residual power ||vec(Y) - B g||^2. A
    rank-deficient atom basis raises DegenerateBasisError naming the most
    coherent path pair.
    """
    delays = np.atleast_1d(np.asarray(delays, dtype=np.float64))
    dopplers = np.atleast_1d(np.asarray(dopplers, dtype=np.float64))
    if delays.size == 0:
        raise ValidationError("need at least one path for gain reconstruction")
    basis = path_atoms(delays, dopplers, snapshot.grid)
    y = snapshot.data.ravel()
    sv = np.linalg.svd(basis, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        gram = basis.conj().T @ basis
        norms = np.sqrt(np.real(np.diag(gram)))
        coh = np.abs(gram) / np.outer(norms, norms)
        np.fill_diagonal(coh, 0.0)
        pair = np.unravel_index(int(np.argmax(coh)), coh.shape)
        raise DegenerateBasisError(pair, coh[pair])
    gains, _, _, _ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ gains
    return gains, float(np.real(np.vdot(resid, resid)))


def estimate_noise_sigma(snapshot: Snapshot, delays: np.ndarray,
                         dopplers: np.ndarray) -> float:
    """Noise level from the post-fit residual: sigma^2 = RSS / (N - P)."""
    _, resid = blue_gains(delays, dopplers, snapshot)
    n = snapshot.grid.n_freq * snapshot.grid.n_time
    p = np.atleast_1d(delays).size
    if n <= p:
        raise ValidationError("not enough observations to estimate the noise level")
    return math.sqrt(resid / (n - p))


def refine_path_estimates(snapshot: Snapshot, delays: np.ndarray, dopplers: np.ndarray,
                          steps: int = 10, cfg: GnConfig | None = None,
                          sigma=None) -> tuple[PathSet, RefineResult]:
    """Standard postprocessing chain: LS gains, then joint Gauss-Newton.

    Initializes the gains by least squares at the given (delay, Doppler)
    estimates and runs `steps` Gauss-Newton iterations over all parameters
    jointly. Returns the refined PathSet together with the iteration trace.
    """
    gains, resid = blue_gains(delays, dopplers, snapshot)
    if sigma is None:
        if snapshot.noise_sigma > 0:
            sigma = snapshot.noise_sigma
        else:
            n = snapshot.grid.n_freq * snapshot.grid.n_time
            p = np.atleast_1d(delays).size
            est = math.sqrt(max(resid, 0.0) / max(n - p, 1))
            sigma = est if est > 0 else 1.0
    base = GnConfig() if cfg is None else cfg
    run_cfg = replace(base, max_iters=steps)
    theta0 = np.empty(4 * np.atleast_1d(delays).size)
    theta0[0::4] = np.real(gains)
    theta0[1::4] = np.imag(gains)
    theta0[2::4] = np.atleast_1d(delays)
    theta0[3::4] = np.atleast_1d(dopplers)
    result = gauss_newton_refine(theta0, snapshot, run_cfg, sigma=sigma)
    return result.paths, result
