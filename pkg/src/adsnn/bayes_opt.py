"""Gaussian-process Bayesian optimization for maximizing expensive
black-box objectives, with a driver for tuning attention filter counts.

The optimizer works in a normalized unit cube: every search dimension is
mapped to [0, 1], the surrogate (a zero-mean Gaussian process with a
squared-exponential kernel and fixed hyperparameters) lives there, and
points are mapped back to raw values when the objective runs. Integer
dimensions are optimized continuously but snapped to whole values both
when the objective is evaluated and when the acquisition is scored, so
the score always refers to the point that would actually be tried.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist
from scipy.stats import qmc

__all__ = [
    "BoRecord",
    "BoResult",
    "Dimension",
    "FactorizationError",
    "GPKernel",
    "GPState",
    "Observation",
    "SearchSpace",
    "TuneResult",
    "bo_loop",
    "config_with_filters",
    "default_filter_space",
    "expected_improvement",
    "gp_fit",
    "gp_posterior",
    "propose_next",
    "tune_attention_filters",
    "write_tuning_csv",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_JITTERS = (1e-10, 1e-8, 1e-6)
_CANDIDATE_COUNT = 2048  # 2**11 keeps the quasi-random set balanced


class FactorizationError(ValueError):
    """The kernel matrix stayed indefinite through the jitter schedule."""


@dataclass(frozen=True)
class Dimension:
    """One search dimension; integer dimensions must have whole bounds."""

    name: str
    lower: float
    upper: float
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in ("continuous", "integer"):
            raise ValueError(f"dimension kind must be continuous or integer, got {self.kind!r}")
        if self.lower > self.upper:
            raise ValueError(f"dimension {self.name!r}: lower {self.lower} > upper {self.upper}")
        if self.kind == "integer" and (
            self.lower != int(self.lower) or self.upper != int(self.upper)
        ):
            raise ValueError(f"integer dimension {self.name!r} needs whole-number bounds")

    @property
    def span(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __post_init__(self):
        dims = tuple(self.dims)
        if not dims:
            raise ValueError("search space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names: {names}")
        object.__setattr__(self, "dims", dims)

    def __len__(self) -> int:
        return len(self.dims)

    def normalize(self, raw) -> np.ndarray:
        """Map a raw point onto the unit cube (zero-span dims map to 0)."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (len(self.dims),):
            raise ValueError(f"point has {raw.shape} values, space has {len(self.dims)} dims")
        out = np.zeros(len(self.dims))
        for i, dim in enumerate(self.dims):
            if dim.span > 0:
                out[i] = min(1.0, max(0.0, (raw[i] - dim.lower) / dim.span))
        return out

    def denormalize(self, unit) -> tuple:
        """Map a unit-cube point to raw values; integer dims round half up."""
        unit = np.asarray(unit, dtype=np.float64)
        if unit.shape != (len(self.dims),):
            raise ValueError(f"point has {unit.shape} values, space has {len(self.dims)} dims")
        out = []
        for u, dim in zip(unit, self.dims):
            value = dim.lower + min(1.0, max(0.0, float(u))) * dim.span
            if dim.kind == "integer":
                out.append(int(math.floor(value + 0.5)))
            else:
                out.append(value)
        return tuple(out)

    def snap(self, unit) -> np.ndarray:
        """Unit-cube point of the raw point that ``unit`` would evaluate."""
        return self.normalize(self.denormalize(unit))


@dataclass(frozen=True)
class Observation:
    x: tuple  # normalized coordinates in [0, 1]^d
    y: float


@dataclass(frozen=True)
class GPKernel:
    """Squared-exponential kernel with fixed hyperparameters:
    k(a, b) = signal_variance * exp(-sum_d (a_d - b_d)^2 / (2 l_d^2))."""

    signal_variance: float = 1.0
    length_scale: float | tuple = 0.2

    def length_scales(self, num_dims: int) -> np.ndarray:
        scales = np.atleast_1d(np.asarray(self.length_scale, dtype=np.float64))
        if scales.shape == (1,):
            scales = np.full(num_dims, scales[0])
        if scales.shape != (num_dims,):
            raise ValueError(f"need {num_dims} length scales, got {scales.shape}")
        if (scales <= 0).any() or self.signal_variance <= 0:
            raise ValueError("kernel hyperparameters must be positive")
        return scales

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        scales = self.length_scales(a.shape[1])
        sq = cdist(a / scales, b / scales, "sqeuclidean")
        return self.signal_variance * np.exp(-0.5 * sq)


@dataclass(frozen=True)
class GPState:
    """Posterior bookkeeping: deduplicated points, a lower-triangular
    factor of K + jitter*I, and the precomputed solve against y."""

    points: np.ndarray  # (n, d) normalized
    values: np.ndarray  # (n,)
    kernel: GPKernel
    jitter: float
    chol: np.ndarray  # (n, n) lower triangular
    alpha: np.ndarray  # (n,) == (K + jitter*I)^-1 y

    @property
    def num_observations(self) -> int:
        return self.points.shape[0]

    @classmethod
    def prior(cls, num_dims: int, kernel: GPKernel = GPKernel()) -> "GPState":
        empty = np.zeros((0, num_dims))
        return cls(
            points=empty,
            values=np.zeros(0),
            kernel=kernel,
            jitter=_JITTERS[0],
            chol=np.zeros((0, 0)),
            alpha=np.zeros(0),
        )


def _deduplicate(observations) -> tuple[np.ndarray, np.ndarray]:
    """Identical x get merged into one observation with the mean y."""
    grouped: dict[tuple, list[float]] = {}
    for obs in observations:
        grouped.setdefault(tuple(float(v) for v in obs.x), []).append(float(obs.y))
    points = np.array(list(grouped.keys()), dtype=np.float64)
    values = np.array([sum(ys) / len(ys) for ys in grouped.values()])
    return points, values


def gp_fit(observations, kernel: GPKernel = GPKernel()) -> GPState:
    """Factorize the kernel matrix of the (deduplicated) observations,
    escalating jitter 1e-10 -> 1e-8 -> 1e-6 before giving up."""
    observations = list(observations)
    if not observations:
        raise ValueError("gp_fit needs at least one observation")
    points, values = _deduplicate(observations)
    k_matrix = kernel.matrix(points, points)
    for jitter in _JITTERS:
        try:
            chol = np.linalg.cholesky(k_matrix + jitter * np.eye(len(points)))
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((chol, True), values)
        return GPState(
            points=points,
            values=values,
            kernel=kernel,
            jitter=jitter,
            chol=chol,
            alpha=alpha,
        )
    raise FactorizationError(
        f"kernel matrix of {len(points)} points is not positive definite "
        f"even with jitter {_JITTERS[-1]:g}"
    )


def gp_posterior(state: GPState, x) -> tuple[float, float]:
    """Zero-mean posterior at one normalized point: with no observations
    the prior (0, signal_variance) comes back; negative variances from
    round-off clamp to 0."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if state.num_observations == 0:
        return 0.0, float(state.kernel.signal_variance)
    k_star = state.kernel.matrix(state.points, x)[:, 0]
    mean = float(k_star @ state.alpha)
    v = solve_triangular(state.chol, k_star, lower=True)
    variance = float(state.kernel.signal_variance - v @ v)
    return mean, max(variance, 0.0)


def expected_improvement(mean: float, variance: float, best_so_far: float) -> float:
    """EI for maximization: (mu - y*) Phi(z) + sigma phi(z) with
    z = (mu - y*) / sigma; degenerates to max(mu - y*, 0) when sigma = 0."""
    gap = mean - best_so_far
    if variance <= 0.0:
        return max(gap, 0.0)
    sigma = math.sqrt(variance)
    z = gap / sigma
    cdf = 0.5 * (1.0 + math.erf(z / _SQRT2))
    pdf = _INV_SQRT_2PI * math.exp(-0.5 * z * z)
    return max(gap * cdf + sigma * pdf, 0.0)


def _dimension_steps(dim: Dimension) -> tuple[float, ...]:
    """Coordinate-refinement step sizes in normalized units. Integer dims
    move in whole raw steps; continuous dims shrink geometrically."""
    if dim.kind == "integer":
        if dim.span <= 0:
            return ()
        unit = 1.0 / dim.span
        return (3 * unit, 2 * unit, unit)
    return (0.08, 0.03, 0.01, 0.003, 0.001, 3e-4, 1e-4, 3e-5)


def _refine(unit: np.ndarray, score, space: SearchSpace) -> tuple[np.ndarray, float]:
    """Deterministic coordinate descent from ``unit``, one dimension and
    one shrinking step size at a time."""
    best_u = unit.copy()
    best_s = score(best_u)
    per_dim = [_dimension_steps(d) for d in space.dims]
    max_steps = max((len(s) for s in per_dim), default=0)
    for level in range(max_steps):
        for _ in range(40):  # walk until this step size stops helping
            improved = False
            for d, steps in enumerate(per_dim):
                if level >= len(steps):
                    continue
                for sign in (1.0, -1.0):
                    candidate = best_u.copy()
                    candidate[d] = min(1.0, max(0.0, candidate[d] + sign * steps[level]))
                    s = score(candidate)
                    if s > best_s:
                        best_u, best_s = candidate, s
                        improved = True
            if not improved:
                break
    return best_u, best_s


def propose_next(state: GPState, space: SearchSpace, seed: int = 0) -> tuple:
    """Acquisition maximizer: score 2048 seeded quasi-random candidates
    (snapped so integer dims are judged at the value they would take),
    then refine the best one coordinate-wise. Deterministic per seed."""
    if state.num_observations == 0:
        rng = np.random.default_rng(seed)
        return space.denormalize(rng.uniform(size=len(space)))
    best_y = float(state.values.max())

    def score(unit: np.ndarray) -> float:
        mean, variance = gp_posterior(state, space.snap(unit))
        return expected_improvement(mean, variance, best_y)

    candidates = qmc.Sobol(d=len(space), scramble=True, seed=seed).random(_CANDIDATE_COUNT)
    scores = [score(candidate) for candidate in candidates]
    start = candidates[int(np.argmax(scores))]
    refined, _ = _refine(np.asarray(start, dtype=np.float64), score, space)
    return space.denormalize(refined)


@dataclass(frozen=True)
class BoRecord:
    iteration: int  # 1-based
    point: tuple  # raw-space values
    value: float | None  # None when the objective failed
    best_value: float | None  # best successful value so far
    seconds: float
    error: str | None = None


@dataclass(frozen=True)
class BoResult:
    best_point: tuple
    best_value: float
    history: tuple[BoRecord, ...]


def bo_loop(
    objective,
    space: SearchSpace,
    n_init: int | None = None,
    budget: int = 20,
    seed: int = 0,
    kernel: GPKernel = GPKernel(),
) -> BoResult:
    """Maximize ``objective`` with exactly ``budget`` evaluations: the
    first ``n_init`` (default max(5, 2*dims)) at uniform-random points,
    the rest at acquisition maximizers. A failing objective consumes its
    iteration, is recorded with the error text, and the loop continues.
    """
    if n_init is None:
        n_init = max(5, 2 * len(space))
    if not 1 <= n_init <= budget:
        raise ValueError(f"need 1 <= n_init <= budget, got n_init={n_init}, budget={budget}")
    rng = np.random.default_rng(seed)
    observations: list[Observation] = []
    history: list[BoRecord] = []
    best_point: tuple | None = None
    best_value: float | None = None

    for iteration in range(1, budget + 1):
        if iteration <= n_init or not observations:
            raw = space.denormalize(rng.uniform(size=len(space)))
        else:
            state = gp_fit(observations, kernel)
            raw = propose_next(state, space, seed=int(rng.integers(2**31 - 1)))
        started = time.perf_counter()
        try:
            value = float(objective(raw))
        except Exception as exc:  # noqa: BLE001 — a bad candidate must not kill the loop
            history.append(
                BoRecord(
                    iteration=iteration,
                    point=raw,
                    value=None,
                    best_value=best_value,
                    seconds=time.perf_counter() - started,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
            continue
        observations.append(Observation(x=tuple(space.normalize(raw)), y=value))
        if best_value is None or value > best_value:
            best_point, best_value = raw, value
        history.append(
            BoRecord(
                iteration=iteration,
                point=raw,
                value=value,
                best_value=best_value,
                seconds=time.perf_counter() - started,
            )
        )

    if best_point is None:
        raise RuntimeError(f"all {budget} objective evaluations failed")
    return BoResult(best_point=tuple(best_point), best_value=best_value, history=tuple(history))


def default_filter_space(config, lower: int = 8, upper: int = 64) -> SearchSpace:
    """One integer dimension per attention block: its conv filter count."""
    if not config.attention_blocks:
        raise ValueError("model config has no attention blocks to tune")
    return SearchSpace(
        tuple(
            Dimension(f"filters_{i}", lower, upper, "integer")
            for i in range(len(config.attention_blocks))
        )
    )


def config_with_filters(config, filters):
    """Copy of ``config`` with the attention conv filter counts replaced."""
    if len(filters) != len(config.attention_blocks):
        raise ValueError(
            f"got {len(filters)} filter counts for {len(config.attention_blocks)} attention blocks"
        )
    blocks = tuple(
        replace(spec, conv_channels=int(count))
        for spec, count in zip(config.attention_blocks, filters)
    )
    return replace(config, attention_blocks=blocks)


@dataclass(frozen=True)
class TuneResult:
    best_config: object  # ModelConfig with the winning filter counts
    best_accuracy: float
    result: BoResult


def tune_attention_filters(
    config,
    dataset,
    space: SearchSpace | None = None,
    budget: int = 12,
    n_init: int | None = None,
    seed: int = 0,
    folds: int = 3,
    train_options=None,
    objective=None,
) -> TuneResult:
    """Search attention filter counts for the model configuration that
    maximizes mean cross-validated accuracy on ``dataset``. A candidate
    whose training fails is logged and skipped; the budget still counts
    it. ``objective`` may replace the train-and-score routine (it
    receives the candidate filter counts and returns an accuracy).
    """
    from adsnn.model import build_adsnn
    from adsnn.train_eval import TrainOptions, accuracy, evaluate, kfold_split
    from adsnn.train_eval import train as train_model

    space = space if space is not None else default_filter_space(config)
    if train_options is None:
        train_options = TrainOptions(epochs=10, seed=seed)

    def cross_validated_accuracy(point) -> float:
        candidate = config_with_filters(config, point)
        scores = []
        for train_idx, test_idx in kfold_split(dataset, k=folds, seed=seed):
            model = build_adsnn(candidate)
            train_model(model, dataset.subset(train_idx), None, train_options)
            scores.append(float(accuracy(evaluate(model, dataset.subset(test_idx)))))
        return sum(scores) / len(scores)

    result = bo_loop(
        objective if objective is not None else cross_validated_accuracy,
        space,
        n_init=n_init,
        budget=budget,
        seed=seed,
    )
    return TuneResult(
        best_config=config_with_filters(config, result.best_point),
        best_accuracy=result.best_value,
        result=result,
    )


def write_tuning_csv(path, history) -> None:
    """One row per iteration: iteration,candidate,accuracy,best_so_far,seconds."""
    import csv

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "candidate", "accuracy", "best_so_far", "seconds"])
        for record in history:
            writer.writerow(
                [
                    record.iteration,
                    json.dumps(list(record.point)),
                    "" if record.value is None else repr(record.value),
                    "" if record.best_value is None else repr(record.best_value),
                    f"{record.seconds:.6f}",
                ]
            )
