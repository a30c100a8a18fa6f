"""Gradient-boosted regression trees with squared-error loss.

Trees are grown level-wise with exact greedy split search over presorted
feature columns. Per-tree row and column subsampling comes from a seeded
generator. Split search may run on several threads; per-feature results are
reduced in ascending feature order, so a fit is a pure function of
(data, config) whatever the thread count.

Split rule: a row goes left when ``x[feature] < threshold``. Thresholds are
midpoints between consecutive distinct training values. Equal-gain candidates
resolve to the lowest feature index, then the lowest threshold. Features are
read at float32 resolution, in both training and prediction.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from numba import njit

FORMAT_NAME = "resilient-options-gbt"
FORMAT_VERSION = 1
# a candidate split must beat the incumbent by this relative margin, so that
# float-level ties (e.g. one partition reachable through two features) go to
# the lowest feature index, then the lowest threshold
_TIE = 1.0 + 1e-12


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GbtConfig:
    n_estimators: int = 750
    max_depth: int = 7
    learning_rate: float = 0.03
    min_child_weight: float = 4.0
    colsample_bytree: float = 0.7
    subsample: float = 0.7
    seed: int = 0
    # execution hint only; never changes the fitted model
    nthread: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be non-negative")
        if self.nthread < 1:
            raise ValueError("nthread must be >= 1")

    def semantic_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("nthread")
        return d


@dataclass
class Tree:
    feature: np.ndarray    # int64, -1 at leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int64 child index within the tree, -1 at leaves
    right: np.ndarray
    value: np.ndarray      # float64 leaf output (before shrinkage)
    cover: np.ndarray      # float64 training weight reaching the node

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            cover=np.asarray(d["cover"], dtype=np.float64),
        )


@dataclass
class TrainedModel:
    trees: list[Tree]
    base_score: float
    feature_count: int
    config: GbtConfig
    train_fingerprint: str
    feature_names: list[str] | None = None
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        return predict(self, X, n_trees=n_trees)

    def packed(self):
        if self._packed is None:
            self._packed = _pack(self.trees)
        return self._packed


@runtime_checkable
class Regressor(Protocol):
    """What the pipeline needs from a booster; any fit/predict/save/load
    implementation with these contracts can stand in."""

    def fit(self, X, y) -> "Regressor": ...
    def predict(self, X) -> np.ndarray: ...
    def save(self, path) -> None: ...
    @classmethod
    def load(cls, path) -> "Regressor": ...


@njit(nogil=True, cache=True)
def _scan_feature(xs, gs, slots, G, H, mcw, best_num, best_den, best_thr):
    """Best split per node along one feature.

    ``xs``, ``gs`` and ``slots`` hold the value, gradient and node slot of the
    in-sample rows in ascending order of the feature. Unit hessians (squared
    loss) make the child weight a row count. The split score
    GL^2/HL + GR^2/HR is tracked as a fraction num/den and compared by
    cross-multiplication, keeping divisions out of the loop.
    """
    K = G.shape[0]
    GL = np.zeros(K)
    HL = np.zeros(K)
    last = np.zeros(K)
    for j in range(xs.shape[0]):
        k = slots[j]
        if k < 0:
            continue
        v = xs[j]
        hl = HL[k]
        if hl > 0.0 and v > last[k]:
            hr = H[k] - hl
            if hl >= mcw and hr >= mcw:
                gl = GL[k]
                gr = G[k] - gl
                num = gl * gl * hr + gr * gr * hl
                den = hl * hr
                if num * best_den[k] > _TIE * best_num[k] * den:
                    best_num[k] = num
                    best_den[k] = den
                    thr = 0.5 * (last[k] + v)
                    if thr <= last[k]:
                        thr = v
                    best_thr[k] = thr
        GL[k] += gs[j]
        HL[k] = hl + 1.0
        last[k] = v


@njit(nogil=True, cache=True)
def _compact_column(order, xsorted, in_sample, grad):
    m = 0
    for j in range(order.shape[0]):
        if in_sample[order[j]]:
            m += 1
    o = np.empty(m, dtype=np.int64)
    xs = np.empty(m)
    gs = np.empty(m)
    m = 0
    for j in range(order.shape[0]):
        i = order[j]
        if in_sample[i]:
            o[m] = i
            xs[m] = xsorted[j]
            gs[m] = grad[i]
            m += 1
    return o, xs, gs


@njit(nogil=True, cache=True)
def _gather_slots(o, node_slot):
    out = np.empty(o.shape[0], dtype=np.int64)
    for j in range(o.shape[0]):
        out[j] = node_slot[o[j]]
    return out


@njit(nogil=True, cache=True)
def _partition(X, node_slot, best_feat, best_thr, slot_map):
    out = np.full(node_slot.shape[0], -1, dtype=np.int64)
    for i in range(node_slot.shape[0]):
        k = node_slot[i]
        if k < 0 or best_feat[k] < 0:
            continue
        if X[i, best_feat[k]] < best_thr[k]:
            out[i] = slot_map[2 * k]
        else:
            out[i] = slot_map[2 * k + 1]
    return out


@njit(nogil=True, cache=True)
def _node_sums(node_slot, g, K):
    G = np.zeros(K)
    H = np.zeros(K)
    for i in range(node_slot.shape[0]):
        k = node_slot[i]
        if k >= 0:
            G[k] += g[i]
            H[k] += 1.0
    return G, H


@njit(nogil=True, cache=True)
def _predict_packed(X, feature, threshold, left, right, value, roots, base, lr, n_trees):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = base
        for t in range(n_trees):
            node = roots[t]
            while left[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += lr * value[node]
        out[i] = acc
    return out


def _pack(trees: list[Tree]):
    offsets = np.cumsum([0] + [len(t.feature) for t in trees])
    if not trees:
        empty_i = np.zeros(0, dtype=np.int64)
        return (empty_i, np.zeros(0), empty_i, empty_i, np.zeros(0), empty_i)

    def shift(a, off):
        return np.where(a >= 0, a + off, -1)

    feature = np.concatenate([t.feature for t in trees]).astype(np.int64)
    threshold = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)]).astype(np.int64)
    right = np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)]).astype(np.int64)
    value = np.concatenate([t.value for t in trees])
    return feature, threshold, left, right, value, offsets[:-1].astype(np.int64)


def _grow_tree(X, orders, xsorted, grad, node_slot0, features, max_depth, mcw, pool):
    """Grow one tree on rows with ``node_slot0 >= 0``."""
    in_sample = node_slot0 >= 0
    cols = {f: _compact_column(orders[f], xsorted[f], in_sample, grad) for f in features}

    feat, thr, left, right, value, cover = [], [], [], [], [], []

    def new_node():
        for lst, v in ((feat, -1), (thr, 0.0), (left, -1), (right, -1), (value, 0.0), (cover, 0.0)):
            lst.append(v)
        return len(feat) - 1

    node_slot = node_slot0.copy()
    active = [new_node()]  # tree node id per slot
    for depth in range(max_depth + 1):
        K = len(active)
        G, H = _node_sums(node_slot, grad, K)
        for k, nid in enumerate(active):
            cover[nid] = H[k]
            value[nid] = -G[k] / H[k] if H[k] > 0 else 0.0
        if depth == max_depth:
            break

        # a split must beat the parent score G^2/H strictly
        parent_num = G * G
        parent_den = np.where(H > 0, H, 1.0)

        def scan(f):
            bn = parent_num.copy()
            bd = parent_den.copy()
            bt = np.zeros(K)
            o, xs, gs = cols[f]
            _scan_feature(xs, gs, _gather_slots(o, node_slot), G, H, mcw, bn, bd, bt)
            return bn, bd, bt

        results = list(pool.map(scan, features)) if pool else [scan(f) for f in features]
        best_num = parent_num.copy()
        best_den = parent_den.copy()
        best_feat = np.full(K, -1, dtype=np.int64)
        best_thr = np.zeros(K)
        for f, (bn, bd, bt) in zip(features, results):
            better = bn * best_den > _TIE * best_num * bd
            best_num[better] = bn[better]
            best_den[better] = bd[better]
            best_feat[better] = f
            best_thr[better] = bt[better]

        next_active = []
        slot_map = np.full(2 * K, -1, dtype=np.int64)
        for k, nid in enumerate(active):
            if best_feat[k] < 0:
                continue
            lid, rid = new_node(), new_node()
            feat[nid], thr[nid], left[nid], right[nid] = int(best_feat[k]), float(best_thr[k]), lid, rid
            slot_map[2 * k] = len(next_active)
            next_active.append(lid)
            slot_map[2 * k + 1] = len(next_active)
            next_active.append(rid)
        if not next_active:
            break
        node_slot = _partition(X, node_slot, best_feat, best_thr, slot_map)
        active = next_active

    return Tree(np.array(feat, dtype=np.int64), np.array(thr, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64), np.array(cover, dtype=np.float64))


def quantize(X) -> np.ndarray:
    """Round features to float32 precision (held in float64).

    Splits are only ever placed between values distinct at this precision,
    so features that agree up to float64 rounding noise (e.g. S/K of a fixed
    moneyness computed from different spots) always land on the same side.
    """
    return np.ascontiguousarray(X, dtype=np.float32).astype(np.float64)


def _fingerprint(X, y, cfg: GbtConfig) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
    h.update(json.dumps(cfg.semantic_dict(), sort_keys=True).encode())
    return h.hexdigest()


def fit(X, y, cfg: GbtConfig | None = None, feature_names=None) -> TrainedModel:
    cfg = cfg or GbtConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"bad shapes X{X.shape} y{y.shape}")
    n, n_feat = X.shape
    if n == 0:
        raise ValueError("cannot fit on an empty dataset")
    X = quantize(X)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("features and targets must be finite (and within float32 range)")
    fp = _fingerprint(X, y, cfg)
    if np.all(y == y[0]):
        return TrainedModel([], float(y[0]), n_feat, cfg, fp, feature_names)

    base = float(np.mean(y))
    orders = [np.argsort(X[:, f], kind="stable") for f in range(n_feat)]
    xsorted = [np.ascontiguousarray(X[o, f]) for f, o in enumerate(orders)]
    rng = np.random.default_rng(cfg.seed)
    n_rows = max(1, int(round(cfg.subsample * n)))
    n_cols = max(1, int(round(cfg.colsample_bytree * n_feat)))
    pred = np.full(n, base)
    trees: list[Tree] = []
    pool = ThreadPoolExecutor(cfg.nthread) if cfg.nthread > 1 else None
    try:
        for _ in range(cfg.n_estimators):
            rows = np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
            cols = np.sort(rng.choice(n_feat, size=n_cols, replace=False)) if n_cols < n_feat else np.arange(n_feat)
            slot = np.full(n, -1, dtype=np.int64)
            slot[rows] = 0
            grad = pred - y
            tree = _grow_tree(X, orders, xsorted, grad, slot, [int(c) for c in cols],
                              cfg.max_depth, cfg.min_child_weight, pool)
            trees.append(tree)
            pred = _accumulate(pred, X, tree, cfg.learning_rate)
    finally:
        if pool:
            pool.shutdown()
    return TrainedModel(trees, base, n_feat, cfg, fp, feature_names)


def _accumulate(pred, X, tree: Tree, lr: float) -> np.ndarray:
    feature, threshold, left, right, value, _ = _pack([tree])
    return _add_tree(pred, X, feature, threshold, left, right, value, lr)


@njit(nogil=True, cache=True)
def _add_tree(pred, X, feature, threshold, left, right, value, lr):
    out = np.empty_like(pred)
    for i in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = pred[i] + lr * value[node]
    return out


def predict(model: TrainedModel, X, n_trees: int | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, model.feature_count)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ValueError(f"expected {model.feature_count} features, got shape {X.shape}")
    n_trees = len(model.trees) if n_trees is None else min(n_trees, len(model.trees))
    if X.shape[0] == 0:
        return np.zeros(0)
    X = quantize(X)
    feature, threshold, left, right, value, roots = model.packed()
    return _predict_packed(X, feature, threshold, left, right, value, roots,
                           model.base_score, model.config.learning_rate, n_trees)


def save_model(model: TrainedModel, path) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dataclasses.asdict(model.config),
        "base_score": model.base_score,
        "feature_count": model.feature_count,
        "feature_names": model.feature_names,
        "train_fingerprint": model.train_fingerprint,
        "trees": [t.to_dict() for t in model.trees],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a readable model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {doc.get('version')!r}")
    try:
        return TrainedModel(
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            base_score=float(doc["base_score"]),
            feature_count=int(doc["feature_count"]),
            config=GbtConfig(**doc["config"]),
            train_fingerprint=doc["train_fingerprint"],
            feature_names=doc.get("feature_names"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model ({exc})") from exc


class GradientBoostedRegressor:
    """Estimator-style wrapper around :func:`fit` / :func:`predict`."""

    def __init__(self, config: GbtConfig | None = None, feature_names=None):
        self.config = config or GbtConfig()
        self.feature_names = feature_names
        self.model: TrainedModel | None = None

    def fit(self, X, y) -> "GradientBoostedRegressor":
        self.model = fit(X, y, self.config, self.feature_names)
        return self

    def predict(self, X) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("regressor is not fitted")
        return predict(self.model, X)

    def save(self, path) -> None:
        if self.model is None:
            raise RuntimeError("regressor is not fitted")
        save_model(self.model, path)

    @classmethod
    def load(cls, path) -> "GradientBoostedRegressor":
        model = load_model(path)
        reg = cls(model.config, model.feature_names)
        reg.model = model
        return reg
