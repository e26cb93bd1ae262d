"""Topology-sensitive evaluations on codewords: object counting under
4-fold cross-validation with a from-scratch linear max-margin classifier,
an analogous shape-presence task, and the per-count feature-distance curve.

The classifier deliberately avoids external solvers: one-vs-rest hinge loss
minimized by deterministic full-batch subgradient descent, with features
standardized by their global RMS so decisions are invariant to a uniform
rescaling of the codewords.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from . import nets
from . import train as tr


@dataclass
class CodewordTable:
    scene_ids: list[str]
    counts: np.ndarray            # (S,) ground-truth object counts
    presence: np.ndarray          # (S, len(SHAPES)) 0/1 per shape family
    codes: np.ndarray             # (S, d)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.presence = np.asarray(self.presence, dtype=np.int64)
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if not (len(self.scene_ids) == self.counts.shape[0]
                == self.presence.shape[0] == self.codes.shape[0]):
            raise ValueError("table columns disagree on the row count")


def extract_codes(ckpt_path, manifest: dict, split: str = "test") -> CodewordTable:
    """Encode every scene of a split into one table row."""
    params, model, _ = tr.load_for_eval(ckpt_path)
    items = dt.load_split(manifest, split)
    ids, counts, presence, codes = [], [], [], []
    for item in items:
        if "k" not in item:
            raise ValueError(
                f"manifest item {item['file']!r} carries no count label")
        shapes = {o["shape"] for o in item["objects"]}
        ids.append(item["file"])
        counts.append(item["k"])
        presence.append([int(s in shapes) for s in dt.SHAPES])
        codes.append(nets.encode(params, model, item["cloud"]).data[0])
    return CodewordTable(ids, np.array(counts), np.array(presence),
                         np.stack(codes).astype(np.float64))


def table_to_csv(table: CodewordTable, path) -> None:
    d = table.codes.shape[1]
    header = (["scene_id", "k"] + [f"has_{s}" for s in dt.SHAPES]
              + [f"c_{i}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, sid in enumerate(table.scene_ids):
            writer.writerow([sid, int(table.counts[i])]
                            + [int(v) for v in table.presence[i]]
                            + [f"{v:.10g}" for v in table.codes[i]])


def table_from_csv(path) -> CodewordTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n_shapes = len(dt.SHAPES)
    ids, counts, presence, codes = [], [], [], []
    for row in rows[1:]:
        ids.append(row[0])
        counts.append(int(row[1]))
        presence.append([int(v) for v in row[2:2 + n_shapes]])
        codes.append([float(v) for v in row[2 + n_shapes:]])
    if header[:2] != ["scene_id", "k"]:
        raise ValueError(f"{path}: unexpected codeword table header")
    return CodewordTable(ids, np.array(counts), np.array(presence),
                         np.array(codes))


# ---------------------------------------------------------------------------
# linear max-margin classifier
# ---------------------------------------------------------------------------

@dataclass
class LinearClassifier:
    classes: np.ndarray
    weights: np.ndarray        # (n_classes, d)
    biases: np.ndarray         # (n_classes,)
    feature_mean: np.ndarray   # training-fold centering
    feature_scale: float
    hyper: dict = field(default_factory=dict)

    def scores(self, codes: np.ndarray) -> np.ndarray:
        x = (np.asarray(codes, dtype=np.float64) - self.feature_mean)
        x /= self.feature_scale
        return x @ self.weights.T + self.biases

    def predict(self, codes: np.ndarray) -> np.ndarray:
        return self.classes[self.scores(codes).argmax(axis=1)]


def train_classifier(codes: np.ndarray, labels: np.ndarray, C: float = 10.0,
                     epochs: int = 500, lr: float = 0.2) -> LinearClassifier:
    """One-vs-rest hinge loss, full-batch subgradient descent.

    Objective per class: 0.5/C * |w|^2 + mean(max(0, 1 - y*(w.x + b))).
    Features are centered on the training-fold mean and divided by their
    RMS, which conditions the descent and makes decisions exactly invariant
    to a uniform rescaling of the codewords.
    """
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels)
    mean = codes.mean(axis=0)
    centered = codes - mean
    scale = float(np.sqrt(np.mean(centered**2)))
    if scale == 0.0:
        scale = 1.0
    x = centered / scale
    classes = np.unique(labels)
    weights = np.zeros((classes.size, x.shape[1]))
    biases = np.zeros(classes.size)
    lam = 1.0 / C
    for ci, cls in enumerate(classes):
        y = np.where(labels == cls, 1.0, -1.0)
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(epochs):
            margin = y * (x @ w + b)
            active = margin < 1.0
            gw = lam * w - (y[active, None] * x[active]).sum(axis=0) / x.shape[0]
            gb = -y[active].sum() / x.shape[0]
            w -= lr * gw
            b -= lr * gb
        weights[ci] = w
        biases[ci] = b
    return LinearClassifier(classes, weights, biases, mean, scale,
                            hyper={"C": C, "epochs": epochs, "lr": lr})


# ---------------------------------------------------------------------------
# cross-validated counting / presence
# ---------------------------------------------------------------------------

def stratified_folds(labels: np.ndarray, order_key: list[str], folds: int,
                     seed: int) -> np.ndarray:
    """Fold id per row: rows are keyed by scene id, grouped by label, then
    dealt round-robin after a seeded shuffle within each label group."""
    order = np.argsort(np.asarray(order_key))
    fold_of = np.empty(len(order_key), dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in np.unique(labels):
        rows = order[labels[order] == cls]
        rows = rows[rng.permutation(rows.size)]
        start = int(rng.integers(folds))  # stagger so singletons spread out
        for pos, row in enumerate(rows):
            fold_of[row] = (start + pos) % folds
    return fold_of


def _best_constant_mae(train_labels: np.ndarray,
                       test_labels: np.ndarray) -> float:
    candidates = np.unique(train_labels)
    per_const = [np.abs(test_labels - c).mean() for c in candidates]
    best_on_train = [np.abs(train_labels - c).mean() for c in candidates]
    return float(per_const[int(np.argmin(best_on_train))])


def chance_mae(labels: np.ndarray) -> float:
    """Expected |k_i - k_j| for two independent draws from the label
    marginal (the shuffled-label chance level)."""
    values, freq = np.unique(labels, return_counts=True)
    p = freq / freq.sum()
    return float(np.sum(p[:, None] * p[None, :]
                        * np.abs(values[:, None] - values[None, :])))


def count_cv(table: CodewordTable, folds: int = 4, seed: int = 0,
             C: float = 10.0, epochs: int = 500) -> dict:
    """4-fold rotation: train on ONE fold, test on the other three.

    Returns the averaged MAE (raw and x10, the table convention), the
    matched constant-predictor baseline, and the analytic chance level.
    """
    fold_of = stratified_folds(table.counts, table.scene_ids, folds, seed)
    maes, const_maes = [], []
    for f in range(folds):
        train_rows = fold_of == f
        test_rows = ~train_rows
        train_labels = table.counts[train_rows]
        if train_labels.size == 0:
            warnings.warn(f"fold {f} is empty; rotation skipped")
            continue
        missing = np.setdiff1d(np.unique(table.counts), train_labels)
        if missing.size:
            warnings.warn(
                f"fold {f}: classes {missing.tolist()} absent from the "
                "training fold; classifier omits them")
        clf = train_classifier(table.codes[train_rows], train_labels,
                               C=C, epochs=epochs)
        pred = clf.predict(table.codes[test_rows])
        maes.append(float(np.abs(pred - table.counts[test_rows]).mean()))
        const_maes.append(_best_constant_mae(train_labels,
                                             table.counts[test_rows]))
    mae = float(np.mean(maes))
    return {
        "mae": mae, "mae_x10": 10.0 * mae, "per_fold": maes,
        "constant_mae": float(np.mean(const_maes)),
        "chance_mae": chance_mae(table.counts),
        "folds": folds, "seed": seed,
    }


def presence_cv(table: CodewordTable, shape: str = "torus", folds: int = 4,
                seed: int = 0, C: float = 10.0, epochs: int = 500) -> dict:
    """Binary contains-<shape> accuracy under the same 1-train/3-test CV.

    This is the synthetic stand-in for detecting a designated object class
    in a scene.
    """
    col = dt.SHAPES.index(shape)
    labels = table.presence[:, col]
    fold_of = stratified_folds(labels, table.scene_ids, folds, seed)
    accs = []
    for f in range(folds):
        train_rows = fold_of == f
        test_rows = ~train_rows
        if np.unique(labels[train_rows]).size < 2:
            warnings.warn(f"fold {f}: single-class training fold, skipped")
            continue
        clf = train_classifier(table.codes[train_rows], labels[train_rows],
                               C=C, epochs=epochs)
        pred = clf.predict(table.codes[test_rows])
        accs.append(float((pred == labels[test_rows]).mean()))
    majority = max(labels.mean(), 1.0 - labels.mean())
    return {"accuracy": float(np.mean(accs)) if accs else float("nan"),
            "majority_accuracy": float(majority), "shape": shape,
            "folds": folds, "seed": seed}


# ---------------------------------------------------------------------------
# feature-space distance curve
# ---------------------------------------------------------------------------

def dk_analysis(table: CodewordTable) -> list[dict]:
    """Mean distance from each count class to the max-count mean codeword.

    Distances get min-max normalized to [0, 1]; raw values and standard
    errors ride along.
    """
    kmax = int(table.counts.max())
    anchor_rows = table.codes[table.counts == kmax]
    anchor = anchor_rows.mean(axis=0)
    rows = []
    for k in range(1, kmax + 1):
        members = table.codes[table.counts == k]
        if members.shape[0] == 0:
            warnings.warn(f"count class {k} is empty; row omitted")
            continue
        dists = np.linalg.norm(members - anchor, axis=1)
        stderr = (float(dists.std(ddof=1) / np.sqrt(dists.size))
                  if dists.size > 1 else 0.0)
        rows.append({"k": k, "n": int(members.shape[0]),
                     "d_raw": float(dists.mean()), "stderr": stderr})
    lo = min(r["d_raw"] for r in rows)
    hi = max(r["d_raw"] for r in rows)
    span = hi - lo
    for r in rows:
        r["d_norm"] = (r["d_raw"] - lo) / span if span > 0 else 0.0
    return rows


def write_dk_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["k", "n", "d_raw", "d_norm",
                                                "stderr"])
        writer.writeheader()
        for r in rows:
            writer.writerow({"k": r["k"], "n": r["n"],
                             "d_raw": f"{r['d_raw']:.10g}",
                             "d_norm": f"{r['d_norm']:.10g}",
                             "stderr": f"{r['stderr']:.10g}"})


RESULTS_HEADER = ["task", "variant", "metric", "value", "seed"]


def write_results_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in RESULTS_HEADER})
