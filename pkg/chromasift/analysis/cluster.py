from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from errors import InsufficientPoints, InvalidConfig, NonFiniteInput

from .features import MeanVector

logger = logging.getLogger("chromasift.cluster")

DEFAULT_K = 3
DEFAULT_SEED = 42
DEFAULT_MAX_ITERATIONS = 300
DEFAULT_TOLERANCE = 1e-6
DEFAULT_RESTARTS = 10

U64_MAX = 2**64 - 1

Vec3 = Tuple[float, float, float]


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class ClusterConfig:
    k: int = DEFAULT_K
    seed: int = DEFAULT_SEED
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    convergence_tolerance: float = DEFAULT_TOLERANCE
    restarts: int = DEFAULT_RESTARTS

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidConfig("k must be >= 1", k=self.k)
        if not (0 <= self.seed <= U64_MAX):
            raise InvalidConfig("seed must be an unsigned 64-bit integer", seed=self.seed)
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be >= 1", max_iterations=self.max_iterations)
        if not (self.convergence_tolerance >= 0.0):
            raise InvalidConfig("convergence_tolerance must be >= 0", tol=self.convergence_tolerance)
        if self.restarts < 1:
            raise InvalidConfig("restarts must be >= 1", restarts=self.restarts)


@dataclass(frozen=True)
class ClusterModel:
    centroids: Tuple[Vec3, ...]
    assignments: Tuple[int, ...]
    inertia: float
    iterations_run: int
    inertia_trace: Tuple[float, ...]
    seed: int
    converged: bool = True
    restarts_run: int = 1
    best_restart: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    def cluster_sizes(self) -> List[int]:
        sizes = [0] * self.k
        for a in self.assignments:
            sizes[a] += 1
        return sizes


@dataclass(frozen=True)
class _LloydRun:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int
    trace: Tuple[float, ...]
    converged: bool


# ---------------------------
# Helpers
# ---------------------------

def _as_matrix(points: Sequence[MeanVector]) -> np.ndarray:
    x = np.array([p.as_tuple() for p in points], dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0][0])
        raise NonFiniteInput("mean vector has a NaN or infinite component", index=bad)
    return x


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (N, k) の二乗ユークリッド距離
    diff = x[:, np.newaxis, :] - centroids[np.newaxis, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # 同距離は小さいクラスタ番号（argmin は最初の最小値を返す）
    return np.argmin(_sq_distances(x, centroids), axis=1)


def _inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _means(x: np.ndarray, labels: np.ndarray, k: int, fallback: np.ndarray) -> np.ndarray:
    out = fallback.copy()
    for j in range(k):
        members = labels == j
        if np.any(members):
            out[j] = x[members].mean(axis=0)
    return out


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    """
    空クラスタを、自分の重心から最も遠い点で埋め直す（同距離は小さいフレーム番号）。
    点を取り出す元のクラスタは 2 点以上のものに限る（取り出しで空にしない）。
    """
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=k)
    for j in range(k):
        if sizes[j] > 0:
            continue
        own = np.einsum("nd,nd->n", x - centroids[labels], x - centroids[labels])
        eligible = sizes[labels] >= 2
        own = np.where(eligible, own, -1.0)
        donor = int(np.argmax(own))
        logger.debug("empty_cluster_repair cluster=%d point=%d dist2=%.6g", j, donor, own[donor])
        sizes[labels[donor]] -= 1
        labels[donor] = j
        sizes[j] += 1
        centroids = centroids.copy()
        centroids[j] = x[donor]
    return labels


def _lloyd(x: np.ndarray, init: np.ndarray, config: ClusterConfig) -> _LloydRun:
    k = init.shape[0]
    centroids = init.copy()
    trace: List[float] = []
    converged = False
    iterations = 0
    labels = _assign(x, centroids)

    for _ in range(config.max_iterations):
        iterations += 1
        labels = _assign(x, centroids)
        labels = _repair_empty(x, labels, _means(x, labels, k, centroids), k)
        new_centroids = _means(x, labels, k, centroids)
        trace.append(_inertia(x, new_centroids, labels))

        shift = float(np.sqrt(np.max(np.sum((new_centroids - centroids) ** 2, axis=1))))
        centroids = new_centroids
        if shift < config.convergence_tolerance:
            converged = True
            break

    if not converged:
        # 反復上限で止まった場合のみ最終重心へ割り当て直す（修復も再適用）
        labels = _assign(x, centroids)
        labels = _repair_empty(x, labels, _means(x, labels, k, centroids), k)
        centroids = _means(x, labels, k, centroids)
    return _LloydRun(
        centroids=centroids,
        labels=labels,
        inertia=_inertia(x, centroids, labels),
        iterations=iterations,
        trace=tuple(trace),
        converged=converged,
    )


def initial_subsets(n: int, k: int, restarts: int, seed: int) -> List[Tuple[int, ...]]:
    """
    Forgy 初期化に使う k 点の組（点インデックス、昇順）を restarts 個返す。
    C(n, k) <= restarts なら全組を seed で並べ替えて全部使う。
    乱数は numpy の PCG64（default_rng）に固定。
    """
    rng = np.random.default_rng(seed)
    if math.comb(n, k) <= restarts:
        combos = list(itertools.combinations(range(n), k))
        order = rng.permutation(len(combos))
        return [combos[i] for i in order]
    subsets = []
    for _ in range(restarts):
        picked = rng.choice(n, size=k, replace=False)
        subsets.append(tuple(sorted(int(i) for i in picked)))
    return subsets


# ---------------------------
# Operations
# ---------------------------

def assign_point(p: MeanVector, centroids: Sequence[Vec3]) -> int:
    if len(centroids) == 0:
        raise InvalidConfig("at least one centroid is required")
    x = np.array([p.as_tuple()], dtype=np.float64)
    c = np.array(centroids, dtype=np.float64).reshape(-1, 3)
    return int(_assign(x, c)[0])


def kmeans_fit(points: Sequence[MeanVector], config: ClusterConfig) -> ClusterModel:
    """
    平均ベクトル群に対する Lloyd 法 KMeans。
    初期重心は seed 固定の乱数で選んだ相異なる k 点、restarts 回のうち最小 inertia を採用する。
    """
    x = _as_matrix(points)
    n = x.shape[0]
    if n < config.k:
        raise InsufficientPoints("not enough frames for the requested cluster count", n=n, k=config.k)

    best: _LloydRun | None = None
    best_restart = 0
    subsets = initial_subsets(n, config.k, config.restarts, config.seed)
    for r, subset in enumerate(subsets):
        run = _lloyd(x, x[list(subset)], config)
        logger.debug(
            "kmeans_restart restart=%d init=%s inertia=%.6g iterations=%d converged=%s",
            r,
            list(subset),
            run.inertia,
            run.iterations,
            run.converged,
        )
        if best is None or run.inertia < best.inertia:
            best = run
            best_restart = r

    assert best is not None
    logger.info(
        "kmeans_fit n=%d k=%d seed=%d restarts=%d best_restart=%d inertia=%.6g iterations=%d",
        n,
        config.k,
        config.seed,
        len(subsets),
        best_restart,
        best.inertia,
        best.iterations,
    )
    return ClusterModel(
        centroids=tuple(tuple(float(v) for v in row) for row in best.centroids),  # type: ignore[misc]
        assignments=tuple(int(a) for a in best.labels),
        inertia=best.inertia,
        iterations_run=best.iterations,
        inertia_trace=best.trace,
        seed=config.seed,
        converged=best.converged,
        restarts_run=len(subsets),
        best_restart=best_restart,
    )


def rarity_flags(assignments: Sequence[int]) -> List[bool]:
    """所属クラスタの要素数がちょうど 1 のフレームを構造的希少とする。"""
    if len(assignments) == 0:
        raise InvalidConfig("assignments must be non-empty")
    sizes: dict[int, int] = {}
    for a in assignments:
        sizes[a] = sizes.get(a, 0) + 1
    return [sizes[a] == 1 for a in assignments]
