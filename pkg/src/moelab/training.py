"""Full-batch training with noisy top-1 routing.

Each iteration draws a fresh Unif[0,1) noise matrix, routes every example by
argmax of (logits + noise), and takes gradients of the resulting perturbed
logistic loss

    L = (1/n) sum_i log(1 + exp(-y_i * gate_{m_i}(x_i) * f_{m_i}(x_i))).

Experts move by normalized gradient descent (each expert's update has
Frobenius length eta regardless of gradient scale); the router moves by
plain gradient descent.  Router init is exactly zero, experts iid Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .experts import Activation, CUBIC, ExpertBank, get_activation, init_expert_bank
from .gating import RouterWeights, RoutingNoiseSpec, UNIFORM01, expert_load, zero_router
from .model import MoEModel, batch_route, selected_scores
from .seeding import named_stream
from .signals import Dataset

#: Expert updates are skipped below this gradient norm (normalization guard).
GRAD_NORM_FLOOR = 1e-12


def logistic_loss(z: np.ndarray) -> np.ndarray:
    """log(1 + exp(-z)) computed without overflow for any real z."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("loss input must be finite")
    return np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def logistic_loss_deriv(z: np.ndarray) -> np.ndarray:
    """d/dz log(1 + exp(-z)) = -1 / (1 + exp(z)), in (-1, 0)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("loss input must be finite")
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = -np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
    out[~pos] = -1.0 / (1.0 + np.exp(z[~pos]))
    return out


@dataclass(frozen=True)
class ArchConfig:
    """Model shape: M experts, J filters each, shared activation."""

    M: int
    J: int
    activation: str = "cubic"

    def __post_init__(self):
        if self.M < 1 or self.J < 1:
            raise ValueError("M and J must be >= 1")
        get_activation(self.activation)  # validates the name

    def make_activation(self) -> Activation:
        return get_activation(self.activation)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule.

    T is a cap; when early_stop_evals > 0, training stops once that many
    consecutive logged evaluations have train accuracy 1.0.  eval_every
    controls logging cadence; load curves use load_draws MC samples.
    """

    T: int = 2000
    eta: float = 1e-3
    eta_r: float = 1e-1
    sigma0: float = 0.1
    noise: RoutingNoiseSpec = UNIFORM01
    load_balance_coef: float = 0.0
    eval_every: int = 25
    seed: int = 0
    early_stop_evals: int = 0
    load_draws: int = 64

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.eta <= 0 or self.eta_r <= 0:
            raise ValueError("eta and eta_r must be > 0")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        if self.load_balance_coef < 0:
            raise ValueError("load_balance_coef must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.early_stop_evals < 0 or self.load_draws < 0:
            raise ValueError("early_stop_evals and load_draws must be >= 0")


@dataclass(frozen=True)
class IterationLog:
    """State snapshot at iteration t (before the t-th update is applied)."""

    t: int
    loss: float
    train_acc: float
    test_acc: float
    entropy: float
    loads: np.ndarray
    grad_norms: np.ndarray
    router_grad_norm: float
    theta: np.ndarray  # router snapshot, (d, M)


def _loss_and_grads(
    model: MoEModel,
    dataset: Dataset,
    noise_matrix: np.ndarray | None,
    lb_coef: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Perturbed loss, expert grads (M,J,d), router grad (d,M), selections."""
    bank, act = model.bank, model.bank.activation
    n, P, d = dataset.patches.shape
    M, J = bank.M, bank.J
    y = dataset.y.astype(np.float64)

    h, gates, sel = batch_route(model, dataset.patch_sums, noise_matrix)
    pi_sel = gates[np.arange(n), sel]

    groups, blocks = selected_scores(bank, dataset.patches, sel)
    f_sel = np.empty(n)
    for idx, block in zip(groups, blocks):
        f_sel[idx] = act.value(block).reshape(idx.size, P, J).sum(axis=(1, 2))

    z = y * pi_sel * f_sel
    loss = float(np.mean(logistic_loss(z)))
    lp = logistic_loss_deriv(z)

    # Expert gradient: (1/n) sum_{i routed to m} lp_i pi_i y_i act'(scores) x_i^(p).
    coef = lp * pi_sel * y / n
    expert_grads = np.zeros((M, J, d))
    for idx, block in zip(groups, blocks):
        m = int(sel[idx[0]])
        weighted = act.deriv(block) * np.repeat(coef[idx], P)[:, None]
        expert_grads[m] = weighted.T @ dataset.patches[idx].reshape(-1, d)

    # Router gradient: (1/n) sum_i g_i (onehot(sel_i) - gates_i) x_sum_i,
    # g_i = lp_i pi_i y_i f_i; columns sum to zero by construction.
    g = lp * pi_sel * y * f_sel
    a = -gates * g[:, None]
    a[np.arange(n), sel] += g
    router_grad = dataset.patch_sums.T @ a / n

    if lb_coef > 0:
        router_grad = router_grad + _load_balance_grad(h, gates, sel, dataset.patch_sums, lb_coef)

    return loss, expert_grads, router_grad, sel


def perturbed_loss_and_grads(
    model: MoEModel, dataset: Dataset, noise_matrix: np.ndarray | None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and exact gradients for one fixed routing-noise draw.

    noise_matrix is (n, M) (one noise vector per example) or None for
    noiseless argmax routing.  Holding the draw fixed, the returned arrays
    are the exact gradients of the returned loss.
    """
    loss, eg, rg, _ = _loss_and_grads(model, dataset, noise_matrix)
    return loss, eg, rg


def _load_balance_grad(
    h: np.ndarray, gates: np.ndarray, sel: np.ndarray, patch_sums: np.ndarray, coef: float
) -> np.ndarray:
    """Router gradient of coef * M * sum_m frac_m * mean_gate_m.

    frac_m (fraction of the batch dispatched to m) is treated as a constant
    of the current dispatch, so only the mean gate term differentiates.
    """
    n, M = gates.shape
    frac = np.bincount(sel, minlength=M) / n
    # d/dh_im of sum_m' frac_m' gate_im' = gate_im (frac_m - <frac, gate_i>)
    inner = gates @ frac
    dh = gates * (frac[None, :] - inner[:, None]) * (coef * M / n)
    return patch_sums.T @ dh


def load_balancing_loss_and_grad(
    model: MoEModel, dataset: Dataset, coef: float = 1.0
) -> tuple[float, np.ndarray]:
    """Auxiliary balance loss coef * M * sum_m frac_m * mean_gate_m and its
    router gradient, with dispatch taken as the noiseless argmax."""
    if coef < 0:
        raise ValueError("coef must be >= 0")
    if coef == 0:
        return 0.0, np.zeros_like(model.router.theta)
    h, gates, sel = batch_route(model, dataset.patch_sums, None)
    n, M = gates.shape
    frac = np.bincount(sel, minlength=M) / n
    value = float(coef * M * np.sum(frac * gates.mean(axis=0)))
    return value, _load_balance_grad(h, gates, sel, dataset.patch_sums, coef)


def load_balancing_gradient(model: MoEModel, dataset: Dataset, coef: float = 1.0) -> np.ndarray:
    return load_balancing_loss_and_grad(model, dataset, coef)[1]


def step(
    model: MoEModel, grads: tuple[np.ndarray, np.ndarray], config: TrainConfig
) -> MoEModel:
    """One update: normalized GD on each expert, plain GD on the router."""
    expert_grads, router_grad = grads
    w = model.bank.weights.copy()
    for m in range(model.M):
        norm = float(np.linalg.norm(expert_grads[m]))
        if norm > GRAD_NORM_FLOOR:
            w[m] -= config.eta * expert_grads[m] / norm
    theta = model.router.theta - config.eta_r * router_grad
    return MoEModel(bank=model.bank.with_weights(w), router=RouterWeights(theta=theta))


def _log_state(
    t: int,
    loss: float,
    expert_grads: np.ndarray,
    router_grad: np.ndarray,
    model: MoEModel,
    train_set: Dataset,
    test_set: Dataset,
    rng_eval: np.random.Generator,
    config: TrainConfig,
) -> IterationLog:
    train_acc = metrics.accuracy(model, train_set)
    test_acc = metrics.accuracy(model, test_set)
    entropy = metrics.dispatch_entropy(metrics.dispatch_matrix(model, test_set))
    if config.load_draws > 0:
        loads = expert_load(model.router, train_set, config.load_draws, rng_eval, config.noise)
    else:
        loads = np.full(model.M, np.nan)
    gnorms = np.linalg.norm(expert_grads.reshape(model.M, -1), axis=1)
    return IterationLog(
        t=t,
        loss=loss,
        train_acc=train_acc,
        test_acc=test_acc,
        entropy=entropy,
        loads=loads,
        grad_norms=gnorms,
        router_grad_norm=float(np.linalg.norm(router_grad)),
        theta=model.router.theta.copy(),
    )


def train(
    train_set: Dataset,
    test_set: Dataset,
    arch: ArchConfig,
    config: TrainConfig,
) -> tuple[MoEModel, list[IterationLog]]:
    """Run the full-batch schedule; returns the final model and eval log.

    RNG streams are derived from config.seed: "init" for expert weights,
    "routing" for per-iteration dispatch noise, "eval" for load estimates.
    With T = 0 the initialized model comes back untouched (router exactly 0).
    """
    rng_init = named_stream(config.seed, "init")
    rng_route = named_stream(config.seed, "routing")
    rng_eval = named_stream(config.seed, "eval")

    n, d = train_set.n, train_set.d
    bank = init_expert_bank(arch.M, arch.J, d, config.sigma0, rng_init, arch.make_activation())
    model = MoEModel(bank=bank, router=zero_router(d, arch.M))

    logs: list[IterationLog] = []
    consecutive_perfect = 0
    stopped_early = False
    t = 0
    while t < config.T:
        noise_matrix = config.noise.sample((n, model.M), rng_route)
        loss, eg, rg, _ = _loss_and_grads(model, train_set, noise_matrix, config.load_balance_coef)
        if t % config.eval_every == 0:
            entry = _log_state(t, loss, eg, rg, model, train_set, test_set, rng_eval, config)
            logs.append(entry)
            consecutive_perfect = consecutive_perfect + 1 if entry.train_acc == 1.0 else 0
            if config.early_stop_evals and consecutive_perfect >= config.early_stop_evals:
                stopped_early = True
                break
        model = step(model, (eg, rg), config)
        t += 1

    if not stopped_early:
        noise_matrix = config.noise.sample((n, model.M), rng_route)
        loss, eg, rg, _ = _loss_and_grads(model, train_set, noise_matrix, config.load_balance_coef)
        logs.append(_log_state(t, loss, eg, rg, model, train_set, test_set, rng_eval, config))

    return model, logs


def train_single_expert(
    train_set: Dataset,
    test_set: Dataset,
    J: int,
    activation: str,
    lr: float,
    T: int,
    sigma0: float,
    seed: int = 0,
    eval_every: int = 25,
) -> tuple[ExpertBank, list[IterationLog]]:
    """Plain GD on one expert predicting by sign(f(x)); no router, no gates.

    The logged entries reuse IterationLog with entropy and loads set to nan.
    """
    if lr <= 0 or T < 0:
        raise ValueError("lr must be > 0 and T >= 0")
    rng_init = named_stream(seed, "init")
    d = train_set.d
    bank = init_expert_bank(1, J, d, sigma0, rng_init, get_activation(activation))
    w = bank.weights[0].copy()
    act = bank.activation
    n, P, _ = train_set.patches.shape
    flat = train_set.patches.reshape(-1, d)
    y = train_set.y.astype(np.float64)
    flat_test = test_set.patches.reshape(-1, d)

    def f_values(weights: np.ndarray, flat_patches: np.ndarray, count: int) -> np.ndarray:
        scores = flat_patches @ weights.T
        return act.value(scores).reshape(count, P, J).sum(axis=(1, 2))

    logs: list[IterationLog] = []

    def log_entry(t: int, loss: float, grad: np.ndarray, weights: np.ndarray) -> IterationLog:
        tr = float(np.mean(y * f_values(weights, flat, n) > 0))
        te = float(np.mean(test_set.y * f_values(weights, flat_test, test_set.n) > 0))
        return IterationLog(
            t=t,
            loss=loss,
            train_acc=tr,
            test_acc=te,
            entropy=float("nan"),
            loads=np.full(1, np.nan),
            grad_norms=np.array([float(np.linalg.norm(grad))]),
            router_grad_norm=float("nan"),
            theta=np.zeros((d, 1)),
        )

    for t in range(T):
        scores = flat @ w.T  # (n*P, J)
        f = act.value(scores).reshape(n, P, J).sum(axis=(1, 2))
        z = y * f
        loss = float(np.mean(logistic_loss(z)))
        coef = logistic_loss_deriv(z) * y / n
        grad = (act.deriv(scores) * np.repeat(coef, P)[:, None]).T @ flat  # (J, d)
        if t % eval_every == 0:
            logs.append(log_entry(t, loss, grad, w))
        w = w - lr * grad

    scores = flat @ w.T
    f = act.value(scores).reshape(n, P, J).sum(axis=(1, 2))
    z = y * f
    loss = float(np.mean(logistic_loss(z)))
    coef = logistic_loss_deriv(z) * y / n
    grad = (act.deriv(scores) * np.repeat(coef, P)[:, None]).T @ flat
    logs.append(log_entry(T, loss, grad, w))

    return ExpertBank(weights=w[None, :, :], activation=act), logs
