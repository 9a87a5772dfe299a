"""Sequential model-based hyperparameter search: GP surrogate + expected improvement."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from ._seeds import derive_seed

JITTER = 1e-6
CANDIDATE_POOL = 1024
LENGTH_SCALE_GRID = np.geomspace(0.05, 2.0, 8)
SIGNAL_VAR_GRID = np.geomspace(1e-3, 10.0, 8)


class AllTrialsFailedError(RuntimeError):
    """Every objective evaluation raised; carries the per-trial failure reasons."""

    def __init__(self, failures: list[tuple[dict, str]]):
        self.failures = failures
        super().__init__(f"all {len(failures)} trials failed; first error: {failures[0][1]}")


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str  # continuous | integer | categorical
    low: float | None = None
    high: float | None = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind in ("continuous", "integer"):
            if self.low is None or self.high is None or not self.low < self.high:
                raise ValueError(f"dimension {self.name!r}: bounds must satisfy low < high")
        elif self.kind == "categorical":
            if not self.choices:
                raise ValueError(f"dimension {self.name!r}: categorical needs non-empty choices")
        else:
            raise ValueError(f"dimension {self.name!r}: unknown kind {self.kind!r}")

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if self.kind == "integer" and round(value) != value:
            return False
        return self.low <= value <= self.high


@dataclass(frozen=True)
class HyperParamSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(names) != len(set(names)):
            raise ValueError("dimension names must be unique")
        if not self.dimensions:
            raise ValueError("space needs at least one dimension")

    @property
    def encoded_width(self) -> int:
        return sum(len(d.choices) if d.kind == "categorical" else 1 for d in self.dimensions)

    def encode_point(self, point: dict) -> np.ndarray:
        """Unit-cube embedding: numeric dims min-max scaled, categoricals one-hot."""
        out = []
        for d in self.dimensions:
            if d.name not in point:
                raise ValueError(f"point missing dimension {d.name!r}")
            v = point[d.name]
            if not d.contains(v):
                raise ValueError(f"value {v!r} outside dimension {d.name!r}")
            if d.kind == "categorical":
                block = [0.0] * len(d.choices)
                block[d.choices.index(v)] = 1.0
                out.extend(block)
            else:
                out.append((float(v) - d.low) / (d.high - d.low))
        return np.array(out, dtype=np.float64)

    def decode_unit(self, u: Sequence[float]) -> dict:
        """Map one unit coordinate per dimension to an in-space point."""
        point = {}
        for d, x in zip(self.dimensions, u):
            x = min(max(float(x), 0.0), 1.0)
            if d.kind == "categorical":
                idx = min(int(x * len(d.choices)), len(d.choices) - 1)
                point[d.name] = d.choices[idx]
            elif d.kind == "integer":
                point[d.name] = int(round(d.low + x * (d.high - d.low)))
            else:
                point[d.name] = d.low + x * (d.high - d.low)
        return point


@dataclass
class Trial:
    point: dict
    objective: float | None
    status: str  # done | failed
    error: str | None = None
    wall_time: float = 0.0


@dataclass
class TuneResult:
    best: Trial
    history: list[Trial]
    round_diagnostics: list[dict] = field(default_factory=list)


def latin_hypercube(n: int, n_dims: int, rng: np.random.Generator) -> np.ndarray:
    """n stratified samples per dimension, independently permuted across dimensions."""
    out = np.empty((n, n_dims))
    for j in range(n_dims):
        strata = rng.permutation(n)
        out[:, j] = (strata + rng.uniform(size=n)) / n
    return out


class Surrogate:
    """GP regression with an RBF kernel on the unit cube.

    k(x, x') = signal_var * exp(-||x - x'||^2 / (2 * length_scale^2)), plus a
    1e-6 diagonal jitter. length_scale and signal_var are picked by maximizing
    the log marginal likelihood over a fixed 8x8 grid.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray):
        if len(X) == 0:
            raise ValueError("surrogate needs at least one completed trial")
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.y_mean = float(self.y.mean())
        yc = self.y - self.y_mean
        sq = self._sqdist(self.X, self.X)
        best_lml = -np.inf
        for ls in LENGTH_SCALE_GRID:
            for sv in SIGNAL_VAR_GRID:
                K = sv * np.exp(-sq / (2.0 * ls * ls)) + JITTER * np.eye(len(self.X))
                try:
                    L = np.linalg.cholesky(K)
                except np.linalg.LinAlgError:
                    continue
                alpha = np.linalg.solve(L.T, np.linalg.solve(L, yc))
                lml = (
                    -0.5 * float(yc @ alpha)
                    - float(np.log(np.diag(L)).sum())
                    - 0.5 * len(self.X) * np.log(2.0 * np.pi)
                )
                if lml > best_lml:
                    best_lml = lml
                    self.length_scale = float(ls)
                    self.signal_var = float(sv)
                    self._L = L
                    self._alpha = alpha
        if best_lml == -np.inf:
            raise RuntimeError("no positive-definite kernel on the hyperparameter grid")

    @staticmethod
    def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)

    def predict(self, X_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X_new = np.atleast_2d(np.asarray(X_new, dtype=np.float64))
        k_star = self.signal_var * np.exp(
            -self._sqdist(X_new, self.X) / (2.0 * self.length_scale * self.length_scale)
        )
        mean = k_star @ self._alpha + self.y_mean
        v = np.linalg.solve(self._L, k_star.T)
        var = np.maximum(self.signal_var - (v * v).sum(axis=0), 0.0)
        return mean, var


def surrogate_fit(trials: Sequence[Trial], space: HyperParamSpace) -> Surrogate:
    done = [t for t in trials if t.status == "done"]
    if not done:
        raise ValueError("cannot fit a surrogate: no completed trials")
    X = np.stack([space.encode_point(t.point) for t in done])
    y = np.array([t.objective for t in done])
    return Surrogate(X, y)


def expected_improvement(s: Surrogate, x: np.ndarray, best: float) -> float:
    mu, var = s.predict(x)
    return float(_ei_from_moments(mu, np.sqrt(var), best)[0])


def _ei_from_moments(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    gap = mu - best
    out = np.where(sigma < 1e-12, np.maximum(gap, 0.0), 0.0)
    ok = sigma >= 1e-12
    if ok.any():
        gamma = gap[ok] / sigma[ok]
        out_ok = gap[ok] * norm.cdf(gamma) + sigma[ok] * norm.pdf(gamma)
        out = out.copy()
        out[ok] = out_ok
    return np.maximum(out, 0.0)


def tune(
    space: HyperParamSpace,
    objective: Callable[[dict], float],
    budget: int,
    n_init: int,
    seed: int = 0,
) -> TuneResult:
    """Latin-hypercube warm start, then fit-surrogate / argmax-EI / evaluate rounds.

    The history always holds exactly `budget` trials; failed evaluations are
    recorded with their error text and ignored by the surrogate.
    """
    if not budget >= n_init >= 2:
        raise ValueError(f"need budget >= n_init >= 2, got budget={budget} n_init={n_init}")
    rng = np.random.default_rng(derive_seed(seed, "tuner"))
    n_dims = len(space.dimensions)
    history: list[Trial] = []
    diagnostics: list[dict] = []

    def run_trial(point: dict) -> None:
        start = time.perf_counter()
        try:
            value = float(objective(point))
            if not np.isfinite(value):
                raise ValueError(f"objective returned non-finite value {value}")
            history.append(Trial(point, value, "done", wall_time=time.perf_counter() - start))
        except Exception as exc:  # noqa: BLE001 - a bad trial must not kill the loop
            history.append(Trial(point, None, "failed", error=str(exc), wall_time=time.perf_counter() - start))

    for u in latin_hypercube(n_init, n_dims, rng):
        run_trial(space.decode_unit(u))

    for round_idx in range(budget - n_init):
        candidates_u = rng.uniform(size=(CANDIDATE_POOL, n_dims))
        done = [t for t in history if t.status == "done"]
        if done:
            surrogate = surrogate_fit(history, space)
            best_y = max(t.objective for t in done)
            encoded = np.stack([space.encode_point(space.decode_unit(u)) for u in candidates_u])
            mu, var = surrogate.predict(encoded)
            ei = _ei_from_moments(mu, np.sqrt(var), best_y)
            pick = int(np.argmax(ei))
            diagnostics.append(
                {
                    "round": round_idx,
                    "ei_min": float(ei.min()),
                    "ei_max": float(ei.max()),
                    "length_scale": surrogate.length_scale,
                    "signal_var": surrogate.signal_var,
                }
            )
        else:
            pick = 0
            diagnostics.append({"round": round_idx, "ei_min": 0.0, "ei_max": 0.0})
        run_trial(space.decode_unit(candidates_u[pick]))

    done = [t for t in history if t.status == "done"]
    if not done:
        raise AllTrialsFailedError([(t.point, t.error or "") for t in history])
    best = max(done, key=lambda t: t.objective)
    return TuneResult(best=best, history=history, round_diagnostics=diagnostics)


def write_history_csv(result: TuneResult, space: HyperParamSpace, path: str | Path) -> None:
    names = [d.name for d in space.dimensions]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", *names, "objective", "status", "wall_time_s"])
        for i, t in enumerate(result.history):
            row = [i]
            for name in names:
                v = t.point[name]
                row.append(f"{v:.6g}" if isinstance(v, float) else v)
            row.append("" if t.objective is None else f"{t.objective:.6f}")
            row.extend([t.status, f"{t.wall_time:.3f}"])
            writer.writerow(row)


# Search spaces mirroring the published hyperparameter ranges.

def dnn_space() -> HyperParamSpace:
    return HyperParamSpace(
        (
            Dimension("initial_neurons", "integer", 11, 174),
            Dimension("neuron_pct", "continuous", 0.35, 1.0),
            Dimension("neuron_shrink", "continuous", 0.25, 0.95),
            Dimension("dropout", "continuous", 0.10, 0.75),
            Dimension("embedding_dim", "integer", 11, 87),
            Dimension("n_layer_cap", "integer", 1, 15),
        )
    )


def text_cnn_space() -> HyperParamSpace:
    return HyperParamSpace(
        (
            Dimension("filters_per_kernel", "categorical", choices=(64, 128, 256)),
            Dimension("kernel_size", "integer", 1, 10),
            Dimension("embedding_dim", "integer", 50, 150),
            Dimension("n_conv_blocks", "integer", 1, 5),
        )
    )


def space_for_model(model: str) -> HyperParamSpace:
    if model == "dnn":
        return dnn_space()
    if model == "text_cnn":
        return text_cnn_space()
    raise ValueError(f"unknown model {model!r}")


def config_from_point(model: str, point: dict) -> dict:
    """Translate a tuner point into model-config keyword arguments."""
    if model == "dnn":
        return {
            "initial_neurons": int(point["initial_neurons"]),
            "neuron_pct": float(point["neuron_pct"]),
            "neuron_shrink": float(point["neuron_shrink"]),
            "dropout": float(point["dropout"]),
            "embedding_dim": int(point["embedding_dim"]),
            "n_layer_cap": int(point["n_layer_cap"]),
        }
    if model == "text_cnn":
        return {
            "kernel_sizes": [int(point["kernel_size"])],
            "filters_per_kernel": int(point["filters_per_kernel"]),
            "embedding_dim": int(point["embedding_dim"]),
            "n_conv_blocks": int(point["n_conv_blocks"]),
        }
    raise ValueError(f"unknown model {model!r}")
