"""Decision-dependent populations and loss functions.

Two population kinds are supported:

* ``gaussian_mean``: agent i observes ``Z = zbar_i + eps_i * theta + sigma * xi``
  with standard normal ``xi`` (componentwise for vector decisions).
* ``strategic_shift``: agent i holds a base dataset of (features, label) pairs;
  a query at decision ``theta`` draws a base pair uniformly and reveals the
  feature vector shifted to ``X + eps_i * theta`` (labels are untouched).

Losses are ``quadratic`` (``|theta - Z|^2 / 2``, strongly convex and smooth
with constants exactly 1) or ridge-regularized ``logistic``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

__all__ = [
    "GAUSSIAN",
    "STRATEGIC",
    "QUADRATIC",
    "LOGISTIC",
    "UnsupportedKindError",
    "CalibrationError",
    "PopulationSpec",
    "LossSpec",
    "Environment",
    "sample",
    "sample_batch",
    "loss_value",
    "loss_gradient",
    "deployed_gradients",
    "decoupled_risk_gradient",
    "decoupled_full_gradient",
    "assumption_constants",
    "eps_multipliers",
    "make_heterogeneous_suite",
    "make_engine_sampler",
]

GAUSSIAN = "gaussian_mean"
STRATEGIC = "strategic_shift"
QUADRATIC = "quadratic"
LOGISTIC = "logistic"


class UnsupportedKindError(ValueError):
    """Operation requested for a population/loss kind that does not support it."""


class CalibrationError(ValueError):
    """A sensitivity grid whose mean is off target."""


@dataclass(frozen=True)
class PopulationSpec:
    """One agent's decision-dependent population."""

    kind: str
    eps: float
    zbar: np.ndarray | None = None    # gaussian: base mean, shape (d,)
    sigma2: float | None = None       # gaussian: noise variance per coordinate
    features: np.ndarray | None = None  # strategic: base features, shape (m_i, d)
    labels: np.ndarray | None = None    # strategic: 0/1 labels, shape (m_i,)

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, STRATEGIC):
            raise UnsupportedKindError(f"unknown population kind {self.kind!r}")
        if self.eps < 0:
            raise ValueError(f"sensitivity must be nonnegative, got {self.eps}")
        if self.kind == GAUSSIAN:
            if self.zbar is None or self.sigma2 is None:
                raise ValueError("gaussian population needs zbar and sigma2")
            if self.sigma2 < 0:
                raise ValueError(f"noise variance must be nonnegative, got {self.sigma2}")
            object.__setattr__(self, "zbar", np.atleast_1d(np.asarray(self.zbar, dtype=float)))
        else:
            if self.features is None or self.labels is None or len(self.features) == 0:
                raise ValueError("strategic population needs a nonempty base dataset")

    @property
    def dim(self) -> int:
        if self.kind == GAUSSIAN:
            return self.zbar.shape[0]
        return self.features.shape[1]


@dataclass(frozen=True)
class LossSpec:
    """Loss function family; ``beta`` is the logistic ridge coefficient."""

    kind: str
    dim: int
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in (QUADRATIC, LOGISTIC):
            raise UnsupportedKindError(f"unknown loss kind {self.kind!r}")
        if self.kind == LOGISTIC and self.beta <= 0:
            raise ValueError(f"logistic loss needs beta > 0, got {self.beta}")


@dataclass(frozen=True)
class Environment:
    """n populations plus the shared loss; sensitivity summaries are cached."""

    populations: tuple
    loss: LossSpec

    def __post_init__(self):
        if not self.populations:
            raise ValueError("environment needs at least one population")
        kinds = {p.kind for p in self.populations}
        if len(kinds) != 1:
            raise ValueError(f"mixed population kinds {kinds}")
        dims = {p.dim for p in self.populations}
        if dims != {self.loss.dim}:
            raise ValueError(f"population dims {dims} do not match loss dim {self.loss.dim}")

    @property
    def kind(self) -> str:
        return self.populations[0].kind

    @property
    def n(self) -> int:
        return len(self.populations)

    @property
    def dim(self) -> int:
        return self.loss.dim

    @cached_property
    def eps(self) -> np.ndarray:
        arr = np.array([p.eps for p in self.populations], dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def eps_avg(self) -> float:
        return float(self.eps.mean())

    @property
    def eps_max(self) -> float:
        return float(self.eps.max())

    @cached_property
    def mu(self) -> float:
        """Strong-convexity constant of the decoupled objective."""
        if self.loss.kind == QUADRATIC:
            return 1.0
        return self.loss.beta

    @cached_property
    def smoothness(self) -> float:
        """Gradient Lipschitz constant; logistic uses beta + max ||x||^2 / 4."""
        if self.loss.kind == QUADRATIC:
            return 1.0
        peak = max(float(np.max(np.sum(p.features**2, axis=1))) for p in self.populations)
        return self.loss.beta + peak / 4.0

    @cached_property
    def zbar_stack(self) -> np.ndarray:
        if self.kind != GAUSSIAN:
            raise UnsupportedKindError("zbar_stack is gaussian-only")
        arr = np.stack([p.zbar for p in self.populations])
        arr.setflags(write=False)
        return arr


def _check_theta(env_or_loss, theta: np.ndarray) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = env_or_loss.dim
    if theta.shape != (d,):
        raise ValueError(f"decision has shape {theta.shape}, expected ({d},)")
    return theta


def sample(env: Environment, i: int, theta, rng):
    """One sample from agent i's population reacting to deployed ``theta``.

    Returns an array for gaussian populations and an ``(x, y)`` pair for
    strategic ones.
    """
    if env.kind == GAUSSIAN:
        z, = sample_batch(env, i, theta, 1, rng)
        return z
    x, y = sample_batch(env, i, theta, 1, rng)
    return x[0], int(y[0])


def sample_batch(env: Environment, i: int, theta, batch: int, rng):
    """``batch`` independent samples from agent i's shifted distribution."""
    theta = _check_theta(env, theta)
    pop = env.populations[i]
    if env.kind == GAUSSIAN:
        mean = pop.zbar + pop.eps * theta
        noise = rng.standard_normal((batch, env.dim))
        return mean + np.sqrt(pop.sigma2) * noise
    idx = rng.integers(0, len(pop.features), size=batch)
    return pop.features[idx] + pop.eps * theta, pop.labels[idx]


def _softplus_minus_yu(u, y):
    """Stable ``softplus(u) - y*u``; the linear parts cancel before the log term."""
    u = np.asarray(u, dtype=float)
    return np.log1p(np.exp(-np.abs(u))) + (np.maximum(u, 0.0) - y * u)


def loss_value(loss: LossSpec, theta, z) -> float:
    theta = _check_theta(loss, theta)
    if loss.kind == QUADRATIC:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return 0.5 * float(np.sum((theta - z) ** 2))
    x, y = z
    u = float(np.dot(np.asarray(x, dtype=float), theta))
    return float(_softplus_minus_yu(u, y)) + 0.5 * loss.beta * float(np.dot(theta, theta))


def loss_gradient(loss: LossSpec, theta, z) -> np.ndarray:
    """Gradient of the loss in its decision argument."""
    theta = _check_theta(loss, theta)
    if loss.kind == QUADRATIC:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return theta - z
    x, y = z
    x = np.asarray(x, dtype=float)
    return (expit(float(np.dot(x, theta))) - y) * x + loss.beta * theta


def deployed_gradients(env: Environment, thetas: np.ndarray, samples) -> np.ndarray:
    """Batch-averaged stochastic gradients for all agents at once.

    ``thetas`` is (n, d); ``samples`` is the output of an engine sampler:
    (n, batch, d) for gaussian, ``(X, Y)`` with shapes (n, batch, d) and
    (n, batch) for strategic. Returns the (n, d) stack of gradients, each
    evaluated at the agent's own pre-mixing decision.
    """
    if env.loss.kind == QUADRATIC:
        return thetas - samples.mean(axis=1)
    x, y = samples
    shifted_scores = np.einsum("nbd,nd->nb", x, thetas)
    resid = expit(shifted_scores) - y
    g = np.einsum("nb,nbd->nd", resid, x) / x.shape[1]
    return g + env.loss.beta * thetas


def decoupled_risk_gradient(env: Environment, i: int, theta, deployed) -> np.ndarray:
    """Analytic gradient of agent i's decoupled risk at ``theta`` under deployment ``deployed``.

    Closed form exists for the gaussian kind only:
    ``theta - zbar_i - eps_i * deployed``.
    """
    if env.kind != GAUSSIAN:
        raise UnsupportedKindError(
            "no closed-form decoupled gradient for strategic populations; "
            "use the full-batch path in perfnet.metrics"
        )
    theta = _check_theta(env, theta)
    deployed = _check_theta(env, deployed)
    pop = env.populations[i]
    return theta - pop.zbar - pop.eps * deployed


def decoupled_full_gradient(env: Environment, theta, deployed) -> np.ndarray:
    """Gradient of the agent-averaged decoupled risk, distributions frozen at ``deployed``.

    Gaussian populations use the closed form; strategic ones average the loss
    gradient over the full shifted empirical dataset, which makes the result
    deterministic.
    """
    theta = _check_theta(env, theta)
    deployed = _check_theta(env, deployed)
    if env.kind == GAUSSIAN:
        return theta - env.zbar_stack.mean(axis=0) - env.eps_avg * deployed
    total = np.zeros(env.dim)
    for pop in env.populations:
        x = pop.features + pop.eps * deployed
        resid = expit(x @ theta) - pop.labels
        total += resid @ x / len(pop.labels)
    return total / env.n + env.loss.beta * theta


def assumption_constants(env: Environment, theta_ps) -> tuple[float, float]:
    """Gradient-noise and heterogeneity constants ``(sigma, varsigma)`` at a stable point.

    Gaussian: exact. The noise term is ``sigma^2 = d * max_i sigma2_i``. The
    heterogeneity deviation ``grad f - grad f_i`` is affine in
    ``theta - theta_ps`` with value ``a_i`` at ``theta_ps`` and slope
    ``eps_i - eps_avg``, so ``varsigma_i^2 = ||a_i||^2 + (eps_i - eps_avg)^2``
    is the tightest constant satisfying the quadratic growth bound
    (Cauchy-Schwarz gives ``||a + b u||^2 <= (||a||^2 + b^2)(1 + ||u||^2)``).

    Strategic: both constants are evaluated on the shifted empirical
    distributions at ``theta_ps`` (the growth term is not probed).
    """
    theta_ps = _check_theta(env, theta_ps)
    if env.kind == GAUSSIAN:
        sigma_sq = env.dim * max(p.sigma2 for p in env.populations)
        grad_avg = decoupled_full_gradient(env, theta_ps, theta_ps)
        worst = 0.0
        for i, pop in enumerate(env.populations):
            a = grad_avg - decoupled_risk_gradient(env, i, theta_ps, theta_ps)
            b = pop.eps - env.eps_avg
            worst = max(worst, float(np.dot(a, a)) + b * b)
        return float(np.sqrt(sigma_sq)), float(np.sqrt(worst))
    grad_avg = decoupled_full_gradient(env, theta_ps, theta_ps)
    noise_sq = 0.0
    hetero_sq = 0.0
    for pop in env.populations:
        x = pop.features + pop.eps * theta_ps
        resid = expit(x @ theta_ps) - pop.labels
        grads = resid[:, None] * x + env.loss.beta * theta_ps
        gi = grads.mean(axis=0)
        noise_sq = max(noise_sq, float(np.mean(np.sum((grads - gi) ** 2, axis=1))))
        hetero_sq = max(hetero_sq, float(np.sum((gi - grad_avg) ** 2)))
    return float(np.sqrt(noise_sq)), float(np.sqrt(hetero_sq))


def eps_multipliers(n: int, spread: float) -> np.ndarray:
    """Symmetric multiplicative grid around 1 with half-width ``spread``."""
    if n == 1 or spread == 0.0:
        return np.ones(n)
    return 1.0 + spread * np.linspace(-1.0, 1.0, n)


def make_heterogeneous_suite(
    n: int,
    eps_avg: float,
    spread: float = 0.0,
    kind: str = GAUSSIAN,
    *,
    multipliers=None,
    zbar=10.0,
    sigma2: float = 50.0,
    shards=None,
    beta: float = 1e-4,
) -> Environment:
    """Environment with sensitivities ``eps_i = m_i * eps_avg`` on a grid of mean 1.

    ``spread=0`` gives the homogeneous setting ``eps_i = eps_avg``. An explicit
    ``multipliers`` grid overrides ``spread`` and must average to 1 within
    1e-12, else :class:`CalibrationError`. For the gaussian kind ``zbar`` may
    be a scalar, a length-d vector shared by all agents, or an (n, d) array.
    The strategic kind takes ``shards``, a length-n list of ``(X_i, y_i)``
    pairs (share one pair n times for a homogeneous base).
    """
    if multipliers is None:
        mult = eps_multipliers(n, spread)
    else:
        mult = np.asarray(multipliers, dtype=float)
        if mult.shape != (n,):
            raise CalibrationError(f"need {n} multipliers, got shape {mult.shape}")
    if abs(mult.mean() - 1.0) > 1e-12:
        raise CalibrationError(f"multiplier grid mean {mult.mean()!r} is not 1")
    eps = mult * eps_avg

    if kind == GAUSSIAN:
        zb = np.asarray(zbar, dtype=float)
        if zb.ndim == 0:
            zb = np.full((n, 1), float(zb))
        elif zb.ndim == 1:
            zb = np.tile(zb, (n, 1))
        if zb.shape[0] != n:
            raise ValueError(f"zbar has {zb.shape[0]} rows for {n} agents")
        pops = tuple(
            PopulationSpec(GAUSSIAN, float(eps[i]), zbar=zb[i], sigma2=sigma2)
            for i in range(n)
        )
        return Environment(pops, LossSpec(QUADRATIC, dim=zb.shape[1]))

    if kind == STRATEGIC:
        if shards is None or len(shards) != n:
            raise ValueError(f"strategic suite needs {n} dataset shards")
        d = np.asarray(shards[0][0]).shape[1]
        pops = tuple(
            PopulationSpec(
                STRATEGIC,
                float(eps[i]),
                features=np.asarray(x, dtype=float),
                labels=np.asarray(y, dtype=float),
            )
            for i, (x, y) in enumerate(shards)
        )
        return Environment(pops, LossSpec(LOGISTIC, dim=d, beta=beta))

    raise UnsupportedKindError(f"unknown population kind {kind!r}")


def make_engine_sampler(env: Environment, batch: int, streams, chunk: int = 256):
    """Per-agent sampler for the iteration loop, buffered for speed.

    Each agent draws from its own stream, so results do not depend on agent
    evaluation order; buffering whole chunks of iterations consumes the
    streams in exactly the same order as unbuffered per-iteration draws.
    Returns ``draw(thetas) -> samples`` with ``thetas`` of shape (n, d).
    """
    n, d = env.n, env.dim

    if env.kind == GAUSSIAN:
        scale = np.array([np.sqrt(p.sigma2) for p in env.populations])[:, None, None]
        zbar = env.zbar_stack[:, None, :]
        eps = env.eps[:, None, None]
        buf = {"noise": None, "pos": chunk}

        def draw(thetas: np.ndarray) -> np.ndarray:
            if buf["pos"] == chunk:
                buf["noise"] = np.stack(
                    [g.standard_normal((chunk, batch, d)) for g in streams], axis=1
                )
                buf["pos"] = 0
            noise = buf["noise"][buf["pos"]]
            buf["pos"] += 1
            return zbar + eps * thetas[:, None, :] + scale * noise

        return draw

    sizes = np.array([len(p.features) for p in env.populations])
    feats = [p.features for p in env.populations]
    labs = [p.labels for p in env.populations]
    eps = env.eps[:, None, None]
    buf = {"idx": None, "pos": chunk}

    def draw(thetas: np.ndarray):
        if buf["pos"] == chunk:
            buf["idx"] = np.stack(
                [g.integers(0, sizes[i], size=(chunk, batch)) for i, g in enumerate(streams)],
                axis=1,
            )
            buf["pos"] = 0
        idx = buf["idx"][buf["pos"]]
        buf["pos"] += 1
        x = np.stack([feats[i][idx[i]] for i in range(n)])
        y = np.stack([labs[i][idx[i]] for i in range(n)])
        return x + eps * thetas[:, None, :], y

    return draw
