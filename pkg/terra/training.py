"""
Surrogate Training
==================
Ensemble training of the tanh network on a generated dataset:

1. 70/15/15 split of the dataset (sampling.split_dataset)
2. Per-member seeded initialization
3. Levenberg-Marquardt on MSE + weight decay, with MacKay evidence updates of
   the regularization hyperparameters (or a fixed weight-decay ratio)
4. Adam fallback when the normal equations would exceed the memory budget
5. Early stopping on validation MSE
6. Selection of the member with the lowest validation MSE

Divergence of one member is recorded in the report; only an ensemble where
every member diverged is an error.
"""

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import TrainingDivergedError
from .sampling import INPUT_NAMES, Dataset, split_dataset
from .surrogate import DEFAULT_HIDDEN, Mlp, Normalization, activations

logger = logging.getLogger(__name__)

REGULARIZATION_MODES = ("bayesian", "fixed")
MAX_ENSEMBLE = 50
HYPER_BOUNDS = (1e-12, 1e12)


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: Tuple[int, ...] = DEFAULT_HIDDEN
    max_epochs: int = 150
    regularization: str = "bayesian"
    initial_lambda: float = 0.1
    mu0: float = 1e-3
    mu_increase: float = 10.0
    mu_decrease: float = 10.0
    mu_max: float = 1e10
    patience: int = 25
    ensemble_size: int = 8
    seed: int = 0
    memory_budget_mb: float = 1024.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_workers: int = 4

    def __post_init__(self):
        if not 1 <= self.ensemble_size <= MAX_ENSEMBLE:
            raise ValueError(f"Ensemble size must be in [1, {MAX_ENSEMBLE}], got {self.ensemble_size}")
        if self.patience < 1:
            raise ValueError(f"Early-stopping patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.regularization not in REGULARIZATION_MODES:
            raise ValueError(f"Regularization must be one of {REGULARIZATION_MODES}, got {self.regularization!r}")
        if self.initial_lambda < 0:
            raise ValueError(f"initial_lambda must be >= 0, got {self.initial_lambda}")
        if not self.hidden_layers or any(w < 1 for w in self.hidden_layers):
            raise ValueError(f"Hidden layer widths must be positive, got {self.hidden_layers}")
        if self.mu_increase <= 1 or self.mu_decrease <= 1:
            raise ValueError("LM damping growth and shrink factors must exceed 1")


@dataclass
class MemberReport:
    index: int
    method: str
    epochs: int = 0
    best_epoch: int = 0
    train_mse: float = float("nan")
    val_mse: float = float("nan")
    test_mse: float = float("nan")
    final_lambda: float = float("nan")
    effective_parameters: float = float("nan")
    diverged: bool = False
    message: str = ""


@dataclass
class TrainingReport:
    members: List[MemberReport]
    selected: int
    layer_sizes: List[int]
    split_sizes: Dict[str, int]
    dataset_sha256: str
    elapsed_s: float
    statistics: Dict[str, int] = field(default_factory=dict)

    @property
    def best(self) -> MemberReport:
        return self.members[self.selected]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(m) for m in self.members])
        frame["selected"] = frame["index"] == self.selected
        return frame


class _Diverged(Exception):
    pass


def dataset_fingerprint(d: Dataset) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(d.inputs).tobytes())
    digest.update(np.ascontiguousarray(d.targets).tobytes())
    return digest.hexdigest()


def parameter_jacobian(m: Mlp, layers: List[np.ndarray]) -> np.ndarray:
    """
    Jacobian of the normalized outputs with respect to the flat parameter vector.

    Rows follow the row-major ravel of the (N, T) output matrix; columns follow
    Mlp.flat_parameters().
    """
    batch = layers[0].shape[0]
    n_out = m.weights[-1].shape[0]
    blocks = []
    for t in range(n_out):
        delta = np.zeros((batch, n_out))
        delta[:, t] = 1.0
        per_layer = []
        for k in range(len(m.weights) - 1, -1, -1):
            a_prev = layers[k]
            grad_w = (delta[:, :, None] * a_prev[:, None, :]).reshape(batch, -1)
            per_layer.append(np.hstack([grad_w, delta]))
            if k > 0:
                delta = (delta @ m.weights[k]) * (1.0 - a_prev * a_prev)
        blocks.append(np.hstack(per_layer[::-1]))
    return np.stack(blocks, axis=1).reshape(batch * n_out, -1)


def parameter_gradient(m: Mlp, layers: List[np.ndarray], residual: np.ndarray) -> np.ndarray:
    """Gradient of 0.5 * sum(residual**2) with respect to the flat parameters."""
    delta = residual
    grads = []
    for k in range(len(m.weights) - 1, -1, -1):
        a_prev = layers[k]
        grads.append(np.concatenate([(delta.T @ a_prev).ravel(), delta.sum(axis=0)]))
        if k > 0:
            delta = (delta @ m.weights[k]) * (1.0 - a_prev * a_prev)
    return np.concatenate(grads[::-1])


def _residual(m: Mlp, xn: np.ndarray, yn: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    layers = activations(m, xn)
    return layers, layers[-1] - yn


def physical_mse(m: Mlp, xn: np.ndarray, yn: np.ndarray) -> float:
    if len(xn) == 0:
        return float("nan")
    err = (activations(m, xn)[-1] - yn) * m.output_norm.scale
    return float(np.mean(err * err))


def normal_equation_bytes(rows: int, params: int) -> int:
    return 8 * (rows * params + 2 * params * params)


class _EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.best_theta: Optional[np.ndarray] = None
        self.waited = 0

    def update(self, epoch: int, val_mse: float, theta: np.ndarray) -> bool:
        """Record a validation check; True when training should stop."""
        if val_mse < self.best:
            self.best, self.best_epoch, self.best_theta = val_mse, epoch, theta.copy()
            self.waited = 0
        else:
            self.waited += 1
        return self.waited >= self.patience


def _clip_hyper(value: float) -> float:
    return float(np.clip(value, *HYPER_BOUNDS))


def _levenberg_marquardt(net: Mlp, train: Tuple[np.ndarray, np.ndarray], val: Tuple[np.ndarray, np.ndarray],
                         cfg: TrainConfig, report: MemberReport) -> Mlp:
    xn, yn = train
    theta = net.flat_parameters()
    n_params = theta.size
    n_res = yn.size
    eye = np.eye(n_params)
    alpha, beta = (cfg.initial_lambda, 1.0)
    mu = cfg.mu0
    stopper = _EarlyStopping(cfg.patience)
    gamma = float(n_params)

    for epoch in range(1, cfg.max_epochs + 1):
        net = net.with_parameters(theta)
        layers, e = _residual(net, xn, yn)
        e = e.ravel()
        sse, ssw = float(e @ e), float(theta @ theta)
        objective = 0.5 * (beta * sse + alpha * ssw)
        if not np.isfinite(objective):
            raise _Diverged(f"non-finite objective at epoch {epoch}")

        J = parameter_jacobian(net, layers)
        hessian = beta * (J.T @ J) + alpha * eye
        gradient = beta * (J.T @ e) + alpha * theta

        accepted = False
        while mu <= cfg.mu_max:
            try:
                step = -cho_solve(cho_factor(hessian + mu * eye), gradient)
            except LinAlgError:
                mu *= cfg.mu_increase
                continue
            candidate = theta + step
            _, e_new = _residual(net.with_parameters(candidate), xn, yn)
            new_objective = 0.5 * (beta * float(np.sum(e_new * e_new)) + alpha * float(candidate @ candidate))
            if np.isfinite(new_objective) and new_objective < objective:
                theta = candidate
                mu = max(mu / cfg.mu_decrease, 1e-20)
                accepted = True
                break
            mu *= cfg.mu_increase
        report.epochs = epoch
        if not accepted:
            logger.debug(f"Member {report.index}: damping exceeded {cfg.mu_max:g} at epoch {epoch}, stopping")
            break

        if cfg.regularization == "bayesian":
            try:
                inverse_trace = float(np.trace(cho_solve(cho_factor(hessian), eye)))
                gamma = float(np.clip(n_params - alpha * inverse_trace, 0.0, n_params))
            except LinAlgError:
                pass
            _, e_new = _residual(net.with_parameters(theta), xn, yn)
            sse, ssw = float(np.sum(e_new * e_new)), float(theta @ theta)
            alpha = _clip_hyper(gamma / max(ssw, 1e-300))
            beta = _clip_hyper(max(n_res - gamma, 1.0) / max(sse, 1e-300))

        val_mse = physical_mse(net.with_parameters(theta), *val)
        if not np.isfinite(val_mse):
            raise _Diverged(f"non-finite validation error at epoch {epoch}")
        if stopper.update(epoch, val_mse, theta):
            break

    report.final_lambda = alpha / beta
    report.effective_parameters = gamma
    report.best_epoch = stopper.best_epoch
    return net.with_parameters(stopper.best_theta if stopper.best_theta is not None else theta)


def _adam(net: Mlp, train: Tuple[np.ndarray, np.ndarray], val: Tuple[np.ndarray, np.ndarray],
          cfg: TrainConfig, rng: np.random.Generator, report: MemberReport) -> Mlp:
    """First-order fallback; weight decay stays at the initial ratio."""
    xn, yn = train
    theta = net.flat_parameters()
    first, second = np.zeros_like(theta), np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    decay = cfg.initial_lambda / len(xn)
    stopper = _EarlyStopping(cfg.patience)
    t = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xn))
        for start in range(0, len(xn), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            net = net.with_parameters(theta)
            layers, e = _residual(net, xn[rows], yn[rows])
            grad = parameter_gradient(net, layers, e) / len(rows) + decay * theta
            if not np.all(np.isfinite(grad)):
                raise _Diverged(f"non-finite gradient at epoch {epoch}")
            t += 1
            first = beta1 * first + (1 - beta1) * grad
            second = beta2 * second + (1 - beta2) * grad * grad
            theta = theta - cfg.learning_rate * (first / (1 - beta1 ** t)) / (np.sqrt(second / (1 - beta2 ** t)) + eps)
        report.epochs = epoch
        val_mse = physical_mse(net.with_parameters(theta), *val)
        if not np.isfinite(val_mse):
            raise _Diverged(f"non-finite validation error at epoch {epoch}")
        if stopper.update(epoch, val_mse, theta):
            break

    report.final_lambda = cfg.initial_lambda
    report.best_epoch = stopper.best_epoch
    return net.with_parameters(stopper.best_theta if stopper.best_theta is not None else theta)


def _input_bounds(d: Dataset) -> np.ndarray:
    if d.bounds and all(name in d.bounds for name in INPUT_NAMES):
        return np.array([[d.bounds[name][0] for name in INPUT_NAMES],
                         [d.bounds[name][1] for name in INPUT_NAMES]], dtype=float)
    return np.vstack([d.inputs.min(axis=0), d.inputs.max(axis=0)])


def train(d: Dataset, cfg: TrainConfig = TrainConfig()) -> Tuple[Mlp, TrainingReport]:
    """
    Train an ensemble and return the member with the lowest validation MSE.

    Args:
        d: Dataset (split 70/15/15 with cfg.seed)
        cfg: Training configuration

    Returns:
        (selected network, report with per-member train/val/test MSE in N^2)

    Raises:
        TrainingDivergedError: every ensemble member diverged
    """
    started = time.perf_counter()
    train_set, val_set, test_set = split_dataset(d, cfg.seed)
    input_norm = Normalization.from_data(train_set.inputs)
    output_norm = Normalization.from_data(train_set.targets)

    def normalized(part: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        return input_norm.normalize(part.inputs), output_norm.normalize(part.targets)

    train_xy, val_xy, test_xy = normalized(train_set), normalized(val_set), normalized(test_set)
    layer_sizes = [len(INPUT_NAMES), *cfg.hidden_layers, d.targets.shape[1]]
    n_params = sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
    required = normal_equation_bytes(train_xy[1].size, n_params)
    method = "lm" if required <= cfg.memory_budget_mb * 2 ** 20 else "adam"
    if method == "adam":
        logger.warning(f"Normal equations need {required / 2 ** 20:.0f} MB (budget {cfg.memory_budget_mb:.0f} MB); "
                       f"falling back to Adam")

    bounds = _input_bounds(d)
    fingerprint = dataset_fingerprint(d)
    logger.info(f"Training {cfg.ensemble_size} networks {layer_sizes} ({n_params} parameters, {method}) on "
                f"{len(train_set)}/{len(val_set)}/{len(test_set)} rows")

    def fit(index: int) -> Tuple[Optional[Mlp], MemberReport]:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
        report = MemberReport(index=index, method=method)
        net = Mlp.initialize(layer_sizes, rng, input_norm, output_norm,
                             output_names=d.target_names, input_bounds=bounds)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if method == "lm":
                    net = _levenberg_marquardt(net, train_xy, val_xy, cfg, report)
                else:
                    net = _adam(net, train_xy, val_xy, cfg, rng, report)
        except _Diverged as exc:
            report.diverged, report.message = True, str(exc)
            logger.warning(f"Ensemble member {index} diverged: {exc}")
            return None, report
        report.train_mse = physical_mse(net, *train_xy)
        report.val_mse = physical_mse(net, *val_xy)
        report.test_mse = physical_mse(net, *test_xy)
        logger.info(f"Member {index}: {report.epochs} epochs, val MSE {report.val_mse:.4g}, "
                    f"test MSE {report.test_mse:.4g}")
        return net, report

    with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        results = list(executor.map(fit, range(cfg.ensemble_size)))

    reports = [r for _, r in results]
    val_scores = np.array([np.inf if net is None else r.val_mse for net, r in results])
    if not np.any(np.isfinite(val_scores)):
        raise TrainingDivergedError(f"All {cfg.ensemble_size} ensemble members diverged")
    selected = int(np.argmin(val_scores))
    best_net, best = results[selected]

    report = TrainingReport(
        members=reports,
        selected=selected,
        layer_sizes=layer_sizes,
        split_sizes={"train": len(train_set), "validation": len(val_set), "test": len(test_set)},
        dataset_sha256=fingerprint,
        elapsed_s=time.perf_counter() - started,
        statistics={"members": len(reports), "diverged": sum(r.diverged for r in reports)},
    )
    manifest = {
        "layer_sizes": layer_sizes,
        "seed": cfg.seed,
        "dataset_sha256": fingerprint,
        "selected_member": selected,
        "method": method,
        "regularization": cfg.regularization,
        "train_mse": best.train_mse,
        "val_mse": best.val_mse,
        "test_mse": best.test_mse,
        "member_val_mse": [r.val_mse for r in reports],
    }
    logger.info(f"Selected member {selected}: val MSE {best.val_mse:.4g}, test RMSE {np.sqrt(best.test_mse):.2f} N "
                f"({report.elapsed_s:.1f}s)")
    return Mlp(best_net.weights, best_net.biases, input_norm, output_norm, tuple(d.target_names),
               bounds, manifest), report
