from src.hawkes.model import (
    BlockPairParams,
    ExcitationType,
    Membership,
    MulchModel,
    N_EXCITATIONS,
    parse_excitations,
)
from src.ml.likelihood import (
    BlockPairData,
    ExcitationStatistics,
    PairExposures,
    block_pair_gradient,
    block_pair_objective,
)
from src.ml.spectral import spectral_cluster
from src.network.events import EventStream, count_matrix, split_train_test
from src.logs import log_entry

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from scipy.optimize import minimize
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np
import logging
import time


# Minimum log-likelihood gain for a refinement move
GAIN_TOLERANCE = 1e-9
KERNEL_WEIGHT_MODES = ("normalized", "uniform")


@dataclass(frozen=True)
class FitConfig:
    n_blocks: int
    betas: Tuple[float, ...]
    max_refinement_iters: int = 15
    tolerance: float = 1e-7
    max_optimizer_iters: int = 2000
    epsilon: float = 1e-7
    seed: int = 0
    kernel_weights: str = "normalized"
    excitations: Tuple[ExcitationType, ...] = tuple(ExcitationType)
    refine: bool = True
    init_low: float = 0.01
    init_high: float = 0.1
    workers: int = 1
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        betas = tuple(float(b) for b in np.atleast_1d(self.betas))
        if not betas or any(b <= 0 for b in betas):
            raise ValueError("betas must be positive")
        if self.n_blocks < 1:
            raise ValueError(f"K must be positive, got {self.n_blocks}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_refinement_iters < 0:
            raise ValueError("max_refinement_iters must be nonnegative")
        if self.kernel_weights not in KERNEL_WEIGHT_MODES:
            raise ValueError(f"kernel_weights must be one of {KERNEL_WEIGHT_MODES}")
        if not 0 < self.init_low <= self.init_high:
            raise ValueError("Initialization range must satisfy 0 < low <= high")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "excitations", parse_excitations(self.excitations))

    @classmethod
    def from_config(cls, config: dict, **overrides) -> "FitConfig":
        """Build from a load_config() dict; keyword overrides win."""
        kmeans = config.get("kmeans", {})
        values = {
            "betas": config.get("betas"),
            "max_refinement_iters": config.get("max_refinement_iters", 15),
            "tolerance": config.get("tolerance", 1e-7),
            "max_optimizer_iters": config.get("max_optimizer_iters", 2000),
            "epsilon": config.get("epsilon", 1e-7),
            "seed": config.get("seed", 0),
            "init_low": config.get("init_low", 0.01),
            "init_high": config.get("init_high", 0.1),
            "workers": config.get("workers", 1),
            "kmeans_n_init": kmeans.get("n_init", 10),
            "kmeans_max_iter": kmeans.get("max_iter", 300),
            "kmeans_tol": kmeans.get("tol", 1e-6),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def alpha_mask(self) -> np.ndarray:
        mask = np.zeros(N_EXCITATIONS, dtype=bool)
        mask[list(self.excitations)] = True
        return mask


@dataclass
class BlockPairFit:
    params: BlockPairParams
    log_likelihood: float
    converged: bool = True
    empty: bool = False
    iterations: int = 0


@dataclass
class RefinementStep:
    iteration: int
    changes: int
    log_likelihood: float


@dataclass
class FitResult:
    model: MulchModel
    log_likelihood: float
    block_log_likelihoods: np.ndarray
    trajectory: List[RefinementStep]
    timings: Dict[str, float]
    spectral_membership: Membership
    initial_log_likelihood: float
    flags: Dict[str, list] = field(default_factory=dict)

    def trace(self) -> dict:
        return {
            "initial_log_likelihood": self.initial_log_likelihood,
            "log_likelihood": self.log_likelihood,
            "block_log_likelihoods": self.block_log_likelihoods.tolist(),
            "trajectory": [
                {
                    "iteration": step.iteration,
                    "changes": step.changes,
                    "log_likelihood": step.log_likelihood,
                }
                for step in self.trajectory
            ],
            "spectral_membership": self.spectral_membership.to_list(),
            "timings": self.timings,
            "flags": self.flags,
        }


def _unpack(x: np.ndarray, cfg: FitConfig, n_kernels: int):
    mu = x[0]
    alpha = np.where(cfg.alpha_mask, x[1 : 1 + N_EXCITATIONS], 0.0)
    if cfg.kernel_weights == "uniform":
        return mu, alpha, np.full(n_kernels, 1.0 / n_kernels), None
    w = x[1 + N_EXCITATIONS :]
    return mu, alpha, w / w.sum(), w.sum()


def _optimize(data: BlockPairData, cfg: FitConfig, x0: np.ndarray, n_kernels: int):
    scale = float(max(1, data.n_events))
    mask = cfg.alpha_mask

    def objective(x):
        mu, alpha, c, total = _unpack(x, cfg, n_kernels)
        value, grad_mu, grad_alpha, grad_c = block_pair_gradient(data, mu, alpha, c)
        grad = [np.array([grad_mu]), np.where(mask, grad_alpha, 0.0)]
        if total is not None:
            # chain rule through c = w / sum(w)
            grad.append((grad_c - grad_c @ c) / total)
        return -value / scale, -np.concatenate(grad) / scale

    bounds = [(cfg.epsilon, None)]
    bounds += [(cfg.epsilon, None) if free else (0.0, 0.0) for free in mask]
    if cfg.kernel_weights == "normalized":
        bounds += [(cfg.epsilon, None)] * n_kernels

    return minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": cfg.max_optimizer_iters, "gtol": cfg.tolerance, "ftol": 1e-13},
    )


def _initial_point(cfg: FitConfig, n_kernels: int, rng: np.random.Generator, init=None):
    if init is not None:
        x0 = [max(init.mu, cfg.epsilon)]
        x0 += [max(a, cfg.epsilon) if free else 0.0 for a, free in zip(init.alpha, cfg.alpha_mask)]
        if cfg.kernel_weights == "normalized":
            x0 += list(np.maximum(init.c, cfg.epsilon))
        return np.array(x0, dtype=float)

    size = 1 + N_EXCITATIONS + (n_kernels if cfg.kernel_weights == "normalized" else 0)
    x0 = rng.uniform(cfg.init_low, cfg.init_high, size=size)
    x0[1 : 1 + N_EXCITATIONS][~cfg.alpha_mask] = 0.0
    return x0


def fit_block_pair_data(
    data: BlockPairData,
    cfg: FitConfig,
    rng: np.random.Generator,
    init: Optional[BlockPairParams] = None,
) -> BlockPairFit:
    """Bounded maximum likelihood on precomputed block pair statistics."""
    n_kernels = len(cfg.betas)
    if data.n_pairs == 0:
        floor = BlockPairParams.floor(n_kernels, cfg.epsilon)
        params = BlockPairParams(floor.mu, np.where(cfg.alpha_mask, floor.alpha, 0.0), floor.c)
        return BlockPairFit(params, 0.0, True, True)

    result = _optimize(data, cfg, _initial_point(cfg, n_kernels, rng, init), n_kernels)
    mu, alpha, c, _ = _unpack(result.x, cfg, n_kernels)
    params = BlockPairParams(mu, alpha, c)
    value = block_pair_objective(data, params.mu, params.alpha, params.c)

    if init is not None:
        previous = block_pair_objective(data, init.mu, init.alpha, init.c)
        if previous > value:
            params, value = init, previous

    return BlockPairFit(params, value, bool(result.success), False, int(result.nit))


def fit_block_pair(
    events: EventStream,
    membership: Membership,
    block_pair: Tuple[int, int],
    betas,
    cfg: FitConfig,
    rng: np.random.Generator = None,
    init: Optional[BlockPairParams] = None,
) -> BlockPairFit:
    """Fit the parameters of block pair (a, b) with the membership held fixed."""
    a, b = block_pair
    if rng is None:
        rng = np.random.default_rng([cfg.seed, a, b])
    cfg = replace(cfg, betas=tuple(np.atleast_1d(betas)))
    stats = ExcitationStatistics(PairExposures(events, cfg.betas), membership)
    fit = fit_block_pair_data(stats.block_pair_data(a, b), cfg, rng, init)
    _report({(a, b): fit})
    return fit


def _report(fits: dict):
    for (a, b), fit in fits.items():
        if fit.empty:
            log_entry("fit", {"warning": "empty block pair", "block_pair": [a, b]}, logging.WARNING)
        elif not fit.converged:
            log_entry(
                "fit",
                {"warning": "optimizer did not converge", "block_pair": [a, b], "iterations": fit.iterations},
                logging.WARNING,
            )


def _fit_all(
    stats: ExcitationStatistics,
    cfg: FitConfig,
    iteration: int,
    warm: Optional[MulchModel] = None,
) -> List[List[BlockPairFit]]:
    K = stats.n_blocks
    jobs = [(a, b, stats.block_pair_data(a, b)) for a in range(K) for b in range(K)]

    def run(job):
        a, b, data = job
        rng = np.random.default_rng([cfg.seed, iteration, a, b])
        init = warm.block_pair(a, b) if warm is not None else None
        return fit_block_pair_data(data, cfg, rng, init)

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as executor:
        results = list(executor.map(run, jobs))

    fits = [results[a * K : (a + 1) * K] for a in range(K)]
    _report({(a, b): fits[a][b] for a in range(K) for b in range(K)})
    return fits


def _model_from_fits(fits, cfg: FitConfig, membership: Membership, node_ids=None) -> MulchModel:
    return MulchModel(cfg.betas, [[fit.params for fit in row] for row in fits], membership, node_ids)


def _flags(fits) -> Dict[str, list]:
    return {
        "empty": [[a, b] for a, row in enumerate(fits) for b, f in enumerate(row) if f.empty],
        "not_converged": [
            [a, b] for a, row in enumerate(fits) for b, f in enumerate(row) if not f.converged
        ],
    }


def _sweep(stats: ExcitationStatistics, nodes: Sequence[int]) -> int:
    changes = 0
    for node in nodes:
        current = int(stats.labels[node])
        best, best_gain = current, GAIN_TOLERANCE
        for block in range(stats.n_blocks):
            if block == current:
                continue
            gain = stats.move_gain(node, block)
            if gain > best_gain:
                best, best_gain = block, gain
        if best != current:
            stats.move(node, best)
            changes += 1
    return changes


def _refine(stats: ExcitationStatistics, model: MulchModel, cfg: FitConfig, nodes=None):
    if nodes is None:
        nodes = range(model.n_nodes)
    stats.bind(model.mu, model.alpha, model.c)
    log_likelihood = float(stats.log_likelihood_grid().sum())
    trajectory, fits = [], None

    for iteration in range(1, cfg.max_refinement_iters + 1):
        started = time.time()
        changes = _sweep(stats, nodes)
        if changes == 0:
            trajectory.append(RefinementStep(iteration, 0, log_likelihood))
            log_entry("refine", {"iteration": iteration, "changes": 0, "log_likelihood": log_likelihood})
            break

        stats.rebuild()
        membership = stats.membership
        fits = _fit_all(stats, cfg, iteration, warm=model.with_membership(membership))
        model = _model_from_fits(fits, cfg, membership, model.node_ids)
        log_likelihood = float(stats.log_likelihood_grid(model.mu, model.alpha, model.c).sum())
        trajectory.append(RefinementStep(iteration, changes, log_likelihood))
        log_entry(
            "refine",
            {
                "iteration": iteration,
                "changes": changes,
                "log_likelihood": log_likelihood,
                "seconds": time.time() - started,
            },
        )

    return model, trajectory, fits


def refine_memberships(events: EventStream, model: MulchModel, cfg: FitConfig):
    """
    Node-wise likelihood refinement: in index order, each node moves to the block
    maximizing the log-likelihood given everything else (ties keep the current
    block); all block pairs are refit after each sweep. Stops after a sweep with
    no changes or after max_refinement_iters sweeps.
    """
    cfg = replace(cfg, betas=tuple(model.betas), n_blocks=model.n_blocks)
    stats = ExcitationStatistics(PairExposures(events, model.betas), model.membership)
    refined, trajectory, _ = _refine(stats, model, cfg)
    return refined.membership, refined, trajectory


def _active_nodes(counts: np.ndarray) -> np.ndarray:
    return np.flatnonzero((counts.sum(axis=0) + counts.sum(axis=1)) > 0)


def initial_membership(events: EventStream, cfg: FitConfig) -> Membership:
    """
    Spectral clustering of the nodes that have events; nodes without events join
    the largest block (lowest index on ties).
    """
    counts = count_matrix(events)
    active = _active_nodes(counts)
    if active.size < cfg.n_blocks:
        raise ValueError(f"Only {active.size} nodes have events; cannot form {cfg.n_blocks} blocks")
    clustered = spectral_cluster(
        counts[np.ix_(active, active)],
        cfg.n_blocks,
        seed=cfg.seed,
        n_init=cfg.kmeans_n_init,
        max_iter=cfg.kmeans_max_iter,
        tol=cfg.kmeans_tol,
    )
    largest = int(np.argmax(clustered.sizes()))
    labels = np.full(events.n_nodes, largest, dtype=np.int64)
    labels[active] = clustered.labels
    return Membership(labels, cfg.n_blocks)


def fit_mulch(events: EventStream, cfg: FitConfig) -> FitResult:
    """Spectral clustering, block pair maximum likelihood, then likelihood refinement."""
    if len(events) == 0:
        raise ValueError("Cannot fit a model to an empty stream")
    timings = {}
    started = time.time()

    membership = initial_membership(events, cfg)
    timings["spectral"] = time.time() - started

    mark = time.time()
    stats = ExcitationStatistics(PairExposures(events, cfg.betas), membership)
    fits = _fit_all(stats, cfg, 0)
    model = _model_from_fits(fits, cfg, membership, events.node_ids)
    initial = float(stats.log_likelihood_grid(model.mu, model.alpha, model.c).sum())
    timings["block_pair_fit"] = time.time() - mark

    trajectory = []
    mark = time.time()
    if cfg.refine and cfg.max_refinement_iters > 0 and cfg.n_blocks > 1:
        active = _active_nodes(count_matrix(events))
        model, trajectory, refits = _refine(stats, model, cfg, nodes=active)
        fits = refits or fits
    timings["refinement"] = time.time() - mark

    grid = stats.log_likelihood_grid(model.mu, model.alpha, model.c)
    timings["total"] = time.time() - started
    result = FitResult(
        model=model,
        log_likelihood=float(grid.sum()),
        block_log_likelihoods=grid,
        trajectory=trajectory,
        timings=timings,
        spectral_membership=membership,
        initial_log_likelihood=initial,
        flags=_flags(fits),
    )
    log_entry(
        "fit",
        {
            "K": cfg.n_blocks,
            "events": len(events),
            "log_likelihood": result.log_likelihood,
            "refinement_sweeps": len(trajectory),
            "timings": timings,
        },
    )
    return result


def select_k(
    events: EventStream,
    n_train: int,
    candidates: Sequence[int],
    cfg: FitConfig,
    metric: str = "test-loglik",
    auc_options: dict = None,
):
    """
    Fit every candidate K on the training events and keep the best test score
    (ties go to the smallest K). Returns (K, {K: score}).
    """
    from src.ml.evaluate import dynamic_link_prediction_auc, test_log_likelihood_per_event

    candidates = sorted(set(int(k) for k in candidates))
    if not candidates:
        raise ValueError("No candidate K given")
    if metric not in ("test-loglik", "auc"):
        raise ValueError(f"Unknown selection metric {metric!r}")

    train, test = split_train_test(events, n_train)
    scores = {}
    best = None
    for K in candidates:
        result = fit_mulch(train, replace(cfg, n_blocks=K))
        if metric == "test-loglik":
            score = test_log_likelihood_per_event(result.model, events, n_train)
        else:
            options = dict(auc_options or {})
            options.setdefault("rng", np.random.default_rng(cfg.seed))
            score = dynamic_link_prediction_auc(result.model, test, history=train, **options)[0]
        scores[K] = float(score)
        if best is None or scores[K] > scores[best]:
            best = K
        log_entry("select_k", {"K": K, "metric": metric, "score": scores[K]})
    return best, scores
