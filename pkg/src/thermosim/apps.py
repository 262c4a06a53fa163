"""Application drivers: diffusion sampling, Monte Carlo, annealing, neural
SDE rollouts, and latent-SDE readout, composed from the core engines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_sde import SDEModel, trajectory_rng
from .demon import ForceDemon
from .errors import ContractViolationError
from .potentials import (DoubleWellPotential, Gaussian, GaussianMixture,
                         NegativeLogDensityPotential, QuadraticPotential,
                         central_difference_gradient)
from .training import VPSchedule


# ---------------------------------------------------------------- diffusion

@dataclass(frozen=True)
class DiffusionSpec:
    """Forward noising process: VP (OU toward unit variance) or VE (pure
    diffusion with amplitude c0)."""

    kind: str
    dim: int
    T: float = 1.0
    schedule: VPSchedule | None = None  # VP only
    c0: float = 1.0  # VE only

    def __post_init__(self):
        if self.kind not in ("vp", "ve"):
            raise ContractViolationError("kind must be 'vp' or 've'")
        if self.kind == "vp" and self.schedule is None:
            object.__setattr__(self, "schedule", VPSchedule(beta_min=2.0, T=self.T))
        if self.kind == "ve" and self.c0 <= 0:
            raise ContractViolationError("c0 must be positive")
        if self.T <= 0 or self.dim < 1:
            raise ContractViolationError("need positive horizon and dimension")

    def f(self, t):
        return -0.5 * self.schedule.beta(t) if self.kind == "vp" else 0.0

    def g(self, t):
        return np.sqrt(self.schedule.beta(t)) if self.kind == "vp" else self.c0

    def prior_sample(self, rng, n):
        std = 1.0 if self.kind == "vp" else self.c0 * np.sqrt(self.T)
        return std * rng.standard_normal((n, self.dim))


def diffusion_forward(spec: DiffusionSpec, x0_batch, dt, seed):
    """Noise a batch forward: dx = f(t) x dt + g(t) dw.  Returns (times,
    states) with states of shape (batch, steps + 1, dim)."""
    X = np.atleast_2d(np.asarray(x0_batch, dtype=float)).copy()
    if not np.all(np.isfinite(X)):
        raise ContractViolationError("x0 batch must be finite")
    n_steps = int(round(spec.T / dt))
    rng = trajectory_rng(seed, 0)
    out = np.empty((X.shape[0], n_steps + 1, spec.dim))
    out[:, 0] = X
    t = 0.0
    for k in range(n_steps):
        noise = rng.standard_normal(X.shape)
        X = X + spec.f(t) * X * dt + spec.g(t) * np.sqrt(dt) * noise
        t += dt
        out[:, k + 1] = X
    times = dt * np.arange(n_steps + 1)
    return times, out


def diffusion_reverse(spec: DiffusionSpec, score, n_samples, dt, seed):
    """Generate by running the time-reparameterized reverse SDE from the
    noise prior:  dx = [-f(T-tau) x + g(T-tau)^2 s(x, T-tau)] dtau
    + g(T-tau) dw."""
    n_steps = int(round(spec.T / dt))
    rng = trajectory_rng(seed, 0)
    X = spec.prior_sample(rng, n_samples)
    tau = 0.0
    for _ in range(n_steps):
        t = spec.T - tau
        s = score.query_batch(t, X)
        if s.shape != X.shape:
            raise ContractViolationError("score dimension must match data dimension")
        g = spec.g(t)
        drift = -spec.f(t) * X + g * g * s
        X = X + drift * dt + g * np.sqrt(dt) * rng.standard_normal(X.shape)
        tau += dt
    return X


# ------------------------------------------------------------ target catalog

@dataclass(frozen=True)
class TargetDistribution:
    """Unnormalized target pi = exp(-U); gradient supplied analytically."""

    name: str
    dim: int
    potential: object  # Potential-like with value(t, x) / gradient(t, x)

    def U(self, x):
        return float(self.potential.value(0.0, x))

    def grad_U(self, x):
        return np.asarray(self.potential.gradient(0.0, x), dtype=float)

    def check_gradient(self, x, tol=1e-4):
        fd = central_difference_gradient(lambda y: self.U(y), np.asarray(x, dtype=float))
        return np.max(np.abs(fd - self.grad_U(x))) <= tol * max(1.0, np.max(np.abs(fd)))


def gaussian_target(mean, cov) -> TargetDistribution:
    mean = np.asarray(mean, dtype=float).reshape(-1)
    return TargetDistribution("gaussian", mean.size,
                              QuadraticPotential(mean, np.linalg.inv(np.atleast_2d(cov))))


def mixture_target(weights, means, covs) -> TargetDistribution:
    comps = [Gaussian(m, c) for m, c in zip(means, covs)]
    mix = GaussianMixture(weights, comps)
    return TargetDistribution("mixture", comps[0].dim, NegativeLogDensityPotential(mix))


def double_well_target(dim=1) -> TargetDistribution:
    return TargetDistribution("double_well", dim, DoubleWellPotential())


# ----------------------------------------------------------------- samplers

def _burn(chain, burn_in):
    k = int(len(chain) * burn_in)
    return chain[k:]


def sghmc_sample(target: TargetDistribution, mass=None, friction=None,
                 n_steps=10000, dt=1e-2, seed=0, gradient_noise="exact",
                 noise_cov=None, x0=None, burn_in=0.2):
    """Underdamped Langevin chain:
    dx = M^-1 p dt,  dp = -[grad U + B M^-1 p] dt + sqrt(2B) dw.

    The force comes from a force-based demon whose latent variable is x;
    'stochastic' gradient mode injects N(0, V) noise onto grad U.
    """
    n = target.dim
    M = np.eye(n) if mass is None else np.atleast_2d(np.asarray(mass, dtype=float))
    B = np.eye(n) if friction is None else np.atleast_2d(np.asarray(friction, dtype=float))
    for name, X in (("mass", M), ("friction", B)):
        if np.max(np.abs(X - X.T)) > 1e-10:
            raise ContractViolationError(f"{name} matrix must be symmetric")
        try:
            np.linalg.cholesky(X)
        except np.linalg.LinAlgError as exc:
            raise ContractViolationError(f"{name} matrix must be SPD") from exc
    noise_chol = np.linalg.cholesky(2.0 * B)
    Minv = np.linalg.inv(M)
    rng = trajectory_rng(seed, 0)
    demon = ForceDemon(target.potential, mass=M,
                       x0=np.zeros(n) if x0 is None else x0)
    demon.reset()
    if gradient_noise == "stochastic":
        V = np.atleast_2d(np.asarray(noise_cov, dtype=float))
        grad_chol = np.linalg.cholesky(V)
    elif gradient_noise != "exact":
        raise ContractViolationError("gradient_noise must be 'exact' or 'stochastic'")

    p = np.zeros(n)
    chain = np.empty((n_steps, n))
    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        force = demon.query(k * dt, p)
        if gradient_noise == "stochastic":
            force = force - grad_chol @ rng.standard_normal(n)
        p = p + (force - B @ (Minv @ p)) * dt + noise_chol @ rng.standard_normal(n) * sqdt
        demon.advance(k * dt, p, None, dt)
        chain[k] = demon.x
    return _burn(chain, burn_in)


def sgld_sample(target: TargetDistribution, step_sizes, n_steps=10000, seed=0,
                x0=None, minibatch_model=None, burn_in=0.2):
    """Langevin chain: dtheta = (eps_t/2) grad log pi dt-equivalent plus
    N(0, eps_t) injection per step.  step_sizes is a constant or a callable
    of the step index; it must be positive and nonincreasing."""
    n = target.dim
    rng = trajectory_rng(seed, 0)
    theta = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    eps_fn = step_sizes if callable(step_sizes) else (lambda k: float(step_sizes))
    chain = np.empty((n_steps, n))
    prev_eps = np.inf
    for k in range(n_steps):
        eps = eps_fn(k)
        if eps <= 0 or eps > prev_eps + 1e-15:
            raise ContractViolationError("step sizes must be positive and nonincreasing")
        prev_eps = eps
        if minibatch_model is None:
            grad_log_pi = -target.grad_U(theta)
        else:
            grad_log_pi = minibatch_model.grad_log_posterior(theta, rng)
        theta = theta + 0.5 * eps * grad_log_pi + np.sqrt(eps) * rng.standard_normal(n)
        chain[k] = theta
    return _burn(chain, burn_in)


class ConjugateGaussianModel:
    """1D mean-inference demo for minibatch SGLD: prior N(mu0, tau0^2),
    likelihood N(theta, sigma^2), minibatches of the stored data."""

    def __init__(self, data, sigma=1.0, mu0=0.0, tau0=10.0, batch_size=8):
        self.data = np.asarray(data, dtype=float).reshape(-1)
        self.sigma, self.mu0, self.tau0 = sigma, mu0, tau0
        self.batch_size = min(batch_size, self.data.size)

    def grad_log_posterior(self, theta, rng):
        batch = rng.choice(self.data, size=self.batch_size, replace=False)
        scale = self.data.size / self.batch_size
        grad_prior = -(theta - self.mu0) / self.tau0 ** 2
        grad_lik = scale * np.sum(batch - theta) / self.sigma ** 2
        return grad_prior + grad_lik

    def posterior(self):
        n = self.data.size
        prec = 1.0 / self.tau0 ** 2 + n / self.sigma ** 2
        mean = (self.mu0 / self.tau0 ** 2 + self.data.sum() / self.sigma ** 2) / prec
        return mean, 1.0 / prec


def hmc_sample(target: TargetDistribution, mass=None, n_leapfrog=10, step=0.1,
               n_iter=1000, seed=0, x0=None, burn_in=0.2):
    """Reference sampler: leapfrog proposals with Metropolis correction.

    Momentum is resampled from N(0, M) each iteration; proposals accepted
    with min(1, exp(H(x, p) - H(x', p'))).  Returns (chain, acceptance
    rate)."""
    if n_leapfrog < 1:
        raise ContractViolationError("need at least one leapfrog step")
    if step <= 0:
        raise ContractViolationError("step must be positive")
    n = target.dim
    M = np.eye(n) if mass is None else np.atleast_2d(np.asarray(mass, dtype=float))
    Minv = np.linalg.inv(M)
    chol = np.linalg.cholesky(M)
    rng = trajectory_rng(seed, 0)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    chain = np.empty((n_iter, n))
    accepted = 0
    for it in range(n_iter):
        p = chol @ rng.standard_normal(n)
        h_old = target.U(x) + 0.5 * p @ Minv @ p
        xq, pq = x.copy(), p.copy()
        pq = pq - 0.5 * step * target.grad_U(xq)
        for j in range(n_leapfrog):
            xq = xq + step * (Minv @ pq)
            if j < n_leapfrog - 1:
                pq = pq - step * target.grad_U(xq)
        pq = pq - 0.5 * step * target.grad_U(xq)
        h_new = target.U(xq) + 0.5 * pq @ Minv @ pq
        if rng.uniform() < min(1.0, np.exp(h_old - h_new)):
            x = xq
            accepted += 1
        chain[it] = x
    return _burn(chain, burn_in), accepted / n_iter


def anneal(loss: TargetDistribution, S=None, n_steps=20000, dt=1e-2, seed=0,
           lam=1.0, x0=None, p0=None, burn_in=0.2):
    """SDE annealer targeting exp(-lam L):
    dx = p dt,  dp = -lam grad L dt - (1/2) D p dt + S dW,  D = S S^T.

    Returns (best x seen, post-burn-in x chain)."""
    n = loss.dim
    S = np.eye(n) if S is None else np.atleast_2d(np.asarray(S, dtype=float))
    if not np.allclose(S, np.tril(S)):
        raise ContractViolationError("S must be lower-triangular")
    if not np.all(np.isfinite(S)):
        raise ContractViolationError("S must be finite")
    D = S @ S.T
    rng = trajectory_rng(seed, 0)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    p = np.zeros(n) if p0 is None else np.asarray(p0, dtype=float).reshape(-1)
    best_x, best_val = x.copy(), lam * loss.U(x)
    chain = np.empty((n_steps, n))
    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        p = p + (-lam * loss.grad_U(x) - 0.5 * D @ p) * dt \
            + S @ rng.standard_normal(n) * sqdt
        x = x + p * dt
        val = lam * loss.U(x)
        if val < best_val:
            best_val, best_x = val, x.copy()
        chain[k] = x
    return best_x, _burn(chain, burn_in)


# ---------------------------------------------------------- neural SDE apps

@dataclass(frozen=True)
class NSDESpec:
    """Hidden/weight coupled neural SDE: hidden block deterministic given
    the weights, weight block diffusing with amplitude sigma."""

    hidden_dim: int
    weight_dim: int
    f_h: object  # callable (t, h batch, w) -> dh/dt batch
    f_w: object = None  # prior weight drift (t, w) -> dw/dt; default 0
    posterior_net: object = None  # callable (t, w) -> weight drift contribution
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractViolationError("sigma must be nonnegative")


def weight_diffuser_rollout(spec: NSDESpec, mode, input_batch, T, dt, seed, w0=None):
    """Joint rollout of hidden states and the (stochastic) weight trajectory.

    Prior mode uses f_w; posterior mode routes the weights through the
    posterior drift network as NN(t, w) + w.  Returns (times, hidden
    states (steps+1, batch, hidden), weights (steps+1, weight_dim))."""
    if mode not in ("prior", "posterior"):
        raise ContractViolationError("mode must be 'prior' or 'posterior'")
    if mode == "posterior" and spec.posterior_net is None:
        raise ContractViolationError("posterior mode needs a posterior drift network")
    H = np.atleast_2d(np.asarray(input_batch, dtype=float)).copy()
    if H.shape[1] != spec.hidden_dim:
        raise ContractViolationError("input batch width must equal hidden_dim")
    w = np.zeros(spec.weight_dim) if w0 is None else np.asarray(w0, dtype=float).reshape(-1)
    n_steps = int(round(T / dt))
    rng = trajectory_rng(seed, 0)
    Hs = np.empty((n_steps + 1,) + H.shape)
    Ws = np.empty((n_steps + 1, spec.weight_dim))
    Hs[0], Ws[0] = H, w
    t = 0.0
    for k in range(n_steps):
        if mode == "prior":
            drift_w = np.zeros_like(w) if spec.f_w is None else \
                np.asarray(spec.f_w(t, w), dtype=float)
        else:
            drift_w = np.asarray(spec.posterior_net(t, w), dtype=float) + w
        H = H + np.asarray(spec.f_h(t, H, w), dtype=float) * dt
        w = w + drift_w * dt + spec.sigma * np.sqrt(dt) * rng.standard_normal(spec.weight_dim)
        t += dt
        Hs[k + 1], Ws[k + 1] = H, w
    times = dt * np.arange(n_steps + 1)
    return times, Hs, Ws


def latent_sde_rollout(model: SDEModel, program, demon, h0, checkpoint_times,
                       t0=0.0, dt=1e-2, seed=0):
    """Run the programmed SDE from h0 and read the state at the requested
    times; the step is shrunk per segment so every checkpoint lands on the
    grid exactly."""
    checkpoints = [float(t) for t in checkpoint_times]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ContractViolationError("checkpoint times must be increasing")
    if checkpoints and checkpoints[0] < t0:
        raise ContractViolationError("checkpoint before rollout start")
    if program is not None and program.domain is not None:
        if checkpoints and checkpoints[-1] > program.domain[1] + 1e-12:
            raise ContractViolationError("checkpoint outside program horizon")
    v = np.asarray(h0, dtype=float).reshape(-1)
    if v.shape != (model.dim,):
        raise ContractViolationError("h0 dimension mismatch")
    rng = trajectory_rng(seed, 0)
    if demon is not None:
        demon = demon.clone()
        demon.reset()
    readouts = []
    t = t0
    for tk in checkpoints:
        if abs(tk - t) < 1e-12:
            readouts.append(v.copy())
            continue
        n = max(1, int(np.ceil((tk - t) / dt - 1e-9)))
        h = (tk - t) / n
        for _ in range(n):
            if program is None:
                A, b, C, D = model.coefficients(t)
            else:
                A, b, C, D = program.coefficients(model, t)
            d = np.zeros(model.demon_dim) if demon is None else demon.query(t, v)
            v_new = v + (A @ v + b + D @ d) * h + C @ rng.standard_normal(model.dim) * np.sqrt(h)
            if demon is not None:
                demon.advance(t, v, (v_new - v) / h, h)
            v = v_new
            t += h
        t = tk
        readouts.append(v.copy())
    return np.asarray(checkpoints), np.asarray(readouts)
