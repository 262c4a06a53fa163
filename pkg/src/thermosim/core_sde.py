"""Linear-plus-demon SDE engine for s-mode devices.

An s-mode device with state v in R^N evolves as

    dv = (A(t) v + b(t) + D(t) d(t, v)) dt + C(t) dw

where (A, b, C, D) come from a base model, optionally reshaped in time by a
gate program, and d is the output of a demon device.  This module integrates
single trajectories and ensembles with fixed-step Euler-Maruyama, and
propagates the exact Gaussian moment ODEs as an independent oracle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DivergenceError

DIVERGENCE_LIMIT = 1e12


def trajectory_rng(base_seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based independent stream for trajectory `index`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([base_seed, index])))


@dataclass(frozen=True)
class SDEModel:
    """Base (time-independent) coefficients of an s-mode device.

    A0 : (N, N) drift matrix, b0 : (N,) drift vector, C0 : (N, N) diffusion
    matrix, D0 : (N, M) demon coupling.
    """

    A0: np.ndarray
    b0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray | None = None

    def __post_init__(self):
        A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        n = A0.shape[0]
        b0 = np.asarray(self.b0, dtype=float).reshape(-1)
        C0 = np.atleast_2d(np.asarray(self.C0, dtype=float))
        D0 = self.D0
        if D0 is None:
            D0 = np.eye(n)
        D0 = np.atleast_2d(np.asarray(D0, dtype=float))
        if A0.shape != (n, n):
            raise ContractViolationError(f"A0 must be square, got {A0.shape}")
        if b0.shape != (n,):
            raise ContractViolationError(f"b0 must have length {n}, got {b0.shape}")
        if C0.shape != (n, n):
            raise ContractViolationError(f"C0 must be {n}x{n}, got {C0.shape}")
        if D0.shape[0] != n:
            raise ContractViolationError(f"D0 must have {n} rows, got {D0.shape}")
        for name, arr in (("A0", A0), ("b0", b0), ("C0", C0), ("D0", D0)):
            if not np.all(np.isfinite(arr)):
                raise ContractViolationError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "C0", C0)
        object.__setattr__(self, "D0", D0)

    @property
    def dim(self) -> int:
        return self.A0.shape[0]

    @property
    def demon_dim(self) -> int:
        return self.D0.shape[1]

    def coefficients(self, t: float):
        """Bare coefficients; gate programs override this per time."""
        return self.A0, self.b0, self.C0, self.D0


@dataclass(frozen=True)
class StateVector:
    t: float
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ContractViolationError("state vector has non-finite entries")
        object.__setattr__(self, "v", v)


@dataclass
class Trajectory:
    """Sampled path on a uniform grid: times (T,), values (T, N)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.times.ndim != 1 or len(self.times) != self.values.shape[0]:
            raise ContractViolationError("times and values lengths differ")
        if np.any(np.diff(self.times) <= 0):
            raise ContractViolationError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> StateVector:
        return StateVector(self.times[i], self.values[i])

    def to_csv(self, path):
        n = self.values.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"v{j + 1}" for j in range(n)])
            for t, row in zip(self.times, self.values):
                writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])


@dataclass(frozen=True)
class GaussianMoments:
    t: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractViolationError("cov shape inconsistent with mean")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ContractViolationError("cov not symmetric within 1e-10")
        if np.min(np.linalg.eigvalsh((cov + cov.T) / 2)) < -1e-9:
            raise ContractViolationError("cov not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass
class EnsembleSummary:
    """Per-grid-time empirical moments of an ensemble of trajectories."""

    n_traj: int
    times: np.ndarray
    means: np.ndarray  # (T, N)
    covs: np.ndarray  # (T, N, N), symmetric by construction
    final_states: np.ndarray | None = field(default=None, repr=False)

    def to_json(self, path):
        doc = {
            "n_traj": self.n_traj,
            "times": self.times.tolist(),
            "mean": self.means.tolist(),
            "cov": self.covs.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)


def _check_coeffs(model, coeffs):
    A, b, C, D = (np.asarray(x, dtype=float) for x in coeffs)
    n, m = model.dim, model.demon_dim
    if A.shape != (n, n) or b.shape != (n,) or C.shape != (n, n) or D.shape != (n, m):
        raise ContractViolationError("coefficient shapes inconsistent with model")
    return A, b, C, D


def euler_maruyama_step(model, coeffs, demon_drift, state: StateVector, dt: float, noise) -> StateVector:
    """One explicit step: v + (A v + b + D d) dt + C (sqrt(dt) noise)."""
    if dt <= 0:
        raise ContractViolationError("dt must be positive")
    A, b, C, D = _check_coeffs(model, coeffs)
    noise = np.asarray(noise, dtype=float).reshape(-1)
    if noise.shape != (model.dim,):
        raise ContractViolationError("noise must be an N-vector")
    if demon_drift is None:
        d = np.zeros(model.demon_dim)
    else:
        d = np.asarray(demon_drift, dtype=float).reshape(-1)
        if d.shape != (model.demon_dim,):
            raise ContractViolationError("demon output dimension mismatch")
    v = state.v + (A @ state.v + b + D @ d) * dt + C @ noise * np.sqrt(dt)
    if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"trajectory diverged at t={state.t + dt:g}")
    return StateVector(state.t + dt, v)


def _grid(t0, tf, dt):
    if tf <= t0:
        raise ContractViolationError("tf must exceed t0")
    if dt <= 0 or dt > tf - t0:
        raise ContractViolationError("dt must lie in (0, tf - t0]")
    n_steps = int(round((tf - t0) / dt))
    if abs(n_steps * dt - (tf - t0)) > 1e-9 * max(1.0, abs(tf - t0)):
        raise ContractViolationError("dt does not divide (tf - t0) within rounding")
    return n_steps


def _coeff_table(model, program, times):
    """Coefficients at each step start time; constant tuple when no program."""
    if program is None:
        A, b, C, D = model.coefficients(0.0)
        return [(A, b, C, D)] * len(times)
    return [program.coefficients(model, t) for t in times]


def simulate_trajectory(model: SDEModel, program=None, demon=None, v0=None, t0=0.0,
                        tf=1.0, dt=1e-2, seed=0) -> Trajectory:
    """Sample one path of the (possibly programmed, demon-driven) SDE.

    Deterministic given (seed, dt): noise draws come from a dedicated
    counter-based stream, one (n_steps, N) block per trajectory.
    """
    n_steps = _grid(t0, tf, dt)
    v0 = np.zeros(model.dim) if v0 is None else np.asarray(v0, dtype=float).reshape(-1)
    if v0.shape != (model.dim,):
        raise ContractViolationError("v0 dimension mismatch")
    rng = trajectory_rng(seed, 0)
    noise = rng.standard_normal((n_steps, model.dim))
    step_times = t0 + dt * np.arange(n_steps)
    coeffs = _coeff_table(model, program, step_times)

    if demon is not None:
        demon = demon.clone()
        demon.reset()

    values = np.empty((n_steps + 1, model.dim))
    values[0] = v0
    state = StateVector(t0, v0)
    for k in range(n_steps):
        d = None if demon is None else demon.query(state.t, state.v)
        new_state = euler_maruyama_step(model, coeffs[k], d, state, dt, noise[k])
        if demon is not None:
            dv_dt = (new_state.v - state.v) / dt
            demon.advance(state.t, state.v, dv_dt, dt)
        state = new_state
        values[k + 1] = state.v
    times = t0 + dt * np.arange(n_steps + 1)
    times[-1] = tf
    return Trajectory(times, values)


def fixed_initial(v0):
    """Initial sampler returning a constant state (consumes no randomness)."""
    v0 = np.asarray(v0, dtype=float).reshape(-1)

    def sampler(rng):
        return v0

    return sampler


def gaussian_initial(mean, cov):
    """Initial sampler drawing from N(mean, cov)."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = np.linalg.cholesky(cov)

    def sampler(rng):
        return mean + chol @ rng.standard_normal(mean.size)

    return sampler


def simulate_ensemble(model: SDEModel, program=None, demon=None, initial_sampler=None,
                      t0=0.0, tf=1.0, dt=1e-2, n_traj=1, base_seed=0,
                      chunk_size=4096, keep_final=False) -> EnsembleSummary:
    """Integrate `n_traj` independent trajectories and summarize their moments.

    Per-trajectory streams are derived from (base_seed, index), so member 0
    reproduces simulate_trajectory(seed=base_seed) bit for bit.  Stateless
    demons are queried on whole batches; stateful demons are cloned per
    trajectory.
    """
    if n_traj < 1:
        raise ContractViolationError("n_traj must be at least 1")
    n_steps = _grid(t0, tf, dt)
    n = model.dim
    if initial_sampler is None:
        initial_sampler = fixed_initial(np.zeros(n))
    step_times = t0 + dt * np.arange(n_steps)
    coeffs = _coeff_table(model, program, step_times)
    sqdt = np.sqrt(dt)

    batched_demon = demon is not None and getattr(demon, "stateless", False)
    sum_v = np.zeros((n_steps + 1, n))
    sum_vv = np.zeros((n_steps + 1, n, n))
    finals = np.empty((n_traj, n)) if keep_final else None

    for start in range(0, n_traj, chunk_size):
        stop = min(start + chunk_size, n_traj)
        m = stop - start
        V = np.empty((m, n))
        noise = np.empty((m, n_steps, n))
        for i in range(m):
            rng = trajectory_rng(base_seed, start + i)
            V[i] = initial_sampler(rng)
            noise[i] = rng.standard_normal((n_steps, n))
        clones = None
        if demon is not None and not batched_demon:
            clones = []
            for _ in range(m):
                c = demon.clone()
                c.reset()
                clones.append(c)
        sum_v[0] += V.sum(axis=0)
        sum_vv[0] += V.T @ V
        for k in range(n_steps):
            t = step_times[k]
            A, b, C, D = coeffs[k]
            drift = V @ A.T + b
            if batched_demon:
                drift = drift + demon.query_batch(t, V) @ D.T
            elif clones is not None:
                d = np.stack([c.query(t, V[i]) for i, c in enumerate(clones)])
                drift = drift + d @ D.T
            V_new = V + drift * dt + noise[:, k, :] @ C.T * sqdt
            if not np.all(np.isfinite(V_new)) or np.max(np.abs(V_new)) > DIVERGENCE_LIMIT:
                bad = np.where(~np.all(np.isfinite(V_new), axis=1)
                               | (np.max(np.abs(V_new), axis=1) > DIVERGENCE_LIMIT))[0][0]
                raise DivergenceError(
                    f"trajectory {start + bad} diverged at t={t + dt:g}")
            if clones is not None:
                dV = (V_new - V) / dt
                for i, c in enumerate(clones):
                    c.advance(t, V[i], dV[i], dt)
            V = V_new
            sum_v[k + 1] += V.sum(axis=0)
            sum_vv[k + 1] += V.T @ V
        if keep_final:
            finals[start:stop] = V

    times = t0 + dt * np.arange(n_steps + 1)
    times[-1] = tf
    means = sum_v / n_traj
    if n_traj > 1:
        covs = (sum_vv - n_traj * np.einsum("ti,tj->tij", means, means)) / (n_traj - 1)
        covs = (covs + np.transpose(covs, (0, 2, 1))) / 2
    else:
        covs = np.zeros((n_steps + 1, n, n))
    return EnsembleSummary(n_traj, times, means, covs, final_states=finals)


def propagate_moments(model: SDEModel, program=None, mu0=None, cov0=None,
                      t0=0.0, tf=1.0, dt=1e-2) -> list[GaussianMoments]:
    """Integrate the exact Gaussian moment ODEs with classical RK4.

    mu' = A mu + b,  Sigma' = A Sigma + Sigma A^T + C C^T.  Fourth-order in
    dt, so this serves as an oracle strictly more accurate than the sampler
    on the same grid.  Demon terms are not modeled (linear models only).
    """
    n_steps = _grid(t0, tf, dt)
    n = model.dim
    mu = np.zeros(n) if mu0 is None else np.asarray(mu0, dtype=float).reshape(-1)
    cov = np.zeros((n, n)) if cov0 is None else np.atleast_2d(np.asarray(cov0, dtype=float))
    if mu.shape != (n,) or cov.shape != (n, n):
        raise ContractViolationError("mu0/cov0 dimension mismatch")
    if np.max(np.abs(cov - cov.T)) > 1e-10 or np.min(np.linalg.eigvalsh(cov)) < -1e-9:
        raise ContractViolationError("cov0 must be symmetric PSD")

    def rhs(t, mu, cov):
        if program is None:
            A, b, C, _ = model.coefficients(t)
        else:
            A, b, C, _ = program.coefficients(model, t)
        dmu = A @ mu + b
        dcov = A @ cov + cov @ A.T + C @ C.T
        return dmu, dcov

    out = [GaussianMoments(t0, mu.copy(), cov.copy())]
    t = t0
    for _ in range(n_steps):
        k1m, k1c = rhs(t, mu, cov)
        k2m, k2c = rhs(t + dt / 2, mu + dt / 2 * k1m, cov + dt / 2 * k1c)
        k3m, k3c = rhs(t + dt / 2, mu + dt / 2 * k2m, cov + dt / 2 * k2c)
        k4m, k4c = rhs(t + dt, mu + dt * k3m, cov + dt * k3c)
        mu = mu + dt / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        cov = cov + dt / 6 * (k1c + 2 * k2c + 2 * k3c + k4c)
        cov = (cov + cov.T) / 2
        t += dt
        out.append(GaussianMoments(t, mu.copy(), cov.copy()))
    return out


def monte_carlo_expectation(samples, f) -> float:
    """Sample average of f over a list/array of state vectors."""
    samples = list(samples)
    if not samples:
        raise ContractViolationError("monte_carlo_expectation needs at least one sample")
    return float(np.mean([f(np.asarray(s, dtype=float)) for s in samples]))


def stationary_covariance(model: SDEModel) -> np.ndarray:
    """Solve the Lyapunov equation A S + S A^T + C C^T = 0 (stable A only)."""
    from scipy.linalg import solve_lyapunov

    return solve_lyapunov(model.A0, -model.C0 @ model.C0.T)
