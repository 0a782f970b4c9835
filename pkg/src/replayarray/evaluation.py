"""EER, multi-run confidence intervals, the cross-array matrix and budget curves.

Scores are replay probabilities: higher means more replay-like.  At a
threshold ``th`` a trial is accepted as genuine when ``score < th``, so

* FAR(th) = fraction of replay trials with ``score < th``
* FRR(th) = fraction of genuine trials with ``score >= th``.
"""
from __future__ import annotations

import csv
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .dataset import DatasetManifest, REMASC
from .errors import (
    DegenerateDataError,
    GeometryError,
    InsufficientDataError,
    LeakageError,
    ParameterError,
    ReplayArrayError,
)
from .model import ModelCheckpoint
from .training import (
    FinetuneConfig,
    TrainConfig,
    finetune,
    load_arrays,
    predict_arrays,
    predict_scores,
    resolve_stft,
    run_repeats,
    train_arrays,
)

log = logging.getLogger(__name__)

# Channel tuples for the matrix presets.  Tuples quoted in the experiments
# ((7, 8), (13, 14), (6, 9), (12, 15), (2, 3, 4), (12, 17, 15), (12, 18, 15),
# (2, 3, 4, 5), (12, 14, 16, 17)) are included; the rest fill out each device.
MATRIX_PRESETS = {
    "single": [(m,) for m in range(2, 19)],
    "pair": [(2, 3), (4, 5), (6, 9), (7, 8), (10, 11), (12, 15), (13, 14), (16, 17)],
    "triple": [(2, 3, 4), (6, 7, 8), (9, 10, 11), (12, 17, 15), (12, 18, 15), (13, 14, 16)],
    "quad": [(2, 3, 4, 5), (6, 7, 8, 9), (12, 14, 16, 17), (13, 15, 17, 18)],
}
DEFAULT_BUDGETS = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray  # 0 genuine, 1 replay
    resampled_from: int | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel().astype(np.int64)
        if s.shape != y.shape:
            raise ParameterError("scores and labels differ in length")
        if not np.all(np.isfinite(s)):
            raise ParameterError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ParameterError("labels must be 0 (genuine) or 1 (replay)")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.scores)

    @classmethod
    def from_pairs(cls, pairs) -> "ScoreSet":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])


@dataclass(frozen=True)
class EERResult:
    eer: float
    threshold: float
    n_genuine: int
    n_replay: int


@dataclass(frozen=True)
class IntervalResult:
    mean: float
    half_width: float
    level: float = 0.95
    n: int = 0

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high

    def __str__(self):
        return f"{self.mean:.4f}±{self.half_width:.4f}"


def compute_eer(scores, labels=None) -> EERResult:
    """Equal error rate with linear interpolation between the bracketing thresholds.

    Candidate thresholds are the distinct scores plus one point above the
    maximum (where every trial is accepted).  FAR - FRR is non-decreasing in
    the threshold; the EER is read off where it changes sign, taking the
    lowest threshold on a tie.
    """
    ss = scores if isinstance(scores, ScoreSet) else ScoreSet(scores, labels)
    genuine = np.sort(ss.scores[ss.labels == 0])
    replay = np.sort(ss.scores[ss.labels == 1])
    if len(genuine) == 0 or len(replay) == 0:
        raise DegenerateDataError("EER needs both genuine and replay scores")
    th = np.unique(ss.scores)
    th = np.append(th, th[-1] + max(1.0, th[-1] - th[0]))
    far = np.searchsorted(replay, th, side="left") / len(replay)
    frr = 1.0 - np.searchsorted(genuine, th, side="left") / len(genuine)
    d = far - frr
    k = int(np.argmax(d >= 0))
    if d[k] == 0:
        eer, thr = far[k], th[k]
    else:
        a = -d[k - 1] / (d[k] - d[k - 1])
        eer = far[k - 1] + a * (far[k] - far[k - 1])
        thr = th[k - 1] + a * (th[k] - th[k - 1])
    return EERResult(float(eer), float(thr), len(genuine), len(replay))


def confidence_interval(values: Sequence[float], level: float = 0.95) -> IntervalResult:
    """Student-t interval on the mean of ``values`` (n - 1 degrees of freedom)."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n < 2:
        raise ParameterError("a confidence interval needs at least two values")
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    sd = v.std(ddof=1)
    half = stats.t.ppf((1 + level) / 2, n - 1) * sd / np.sqrt(n)
    return IntervalResult(float(v.mean()), float(half), level, n)


def validate_channel_config(train_channels: Sequence[int], test_channels: Sequence[int]) -> str:
    """``"matched"`` for identical sets, ``"disjoint"`` for non-overlapping ones.

    Partially overlapping sets would leak training microphones into the test
    condition and are rejected.
    """
    train_set, test_set = set(train_channels), set(test_channels)
    if not train_channels or not test_channels:
        raise GeometryError("channel lists must be non-empty")
    if len(train_channels) != len(test_channels):
        raise GeometryError(f"{len(train_channels)} training channels vs {len(test_channels)} test channels")
    if train_set == test_set:
        return "matched"
    if train_set.isdisjoint(test_set):
        return "disjoint"
    raise LeakageError(
        f"train {tuple(train_channels)} and test {tuple(test_channels)} share "
        f"{sorted(train_set & test_set)}"
    )


def condition_of(train_channels, test_channels, device_map=REMASC) -> str:
    """matched / within-array / cross-array."""
    kind = validate_channel_config(train_channels, test_channels)
    if kind == "matched":
        return "matched"
    a = device_map.device_for_channels(train_channels).device_id
    b = device_map.device_for_channels(test_channels).device_id
    return "within-array" if a == b else "cross-array"


def score_set(model: ModelCheckpoint, test: DatasetManifest, test_channels: Sequence[int]) -> ScoreSet:
    """Replay probabilities for every entry of ``test``.

    Audio from a device whose rate differs from the model's is resampled to
    the model's rate before the STFT.
    """
    test_channels = tuple(test_channels)
    if len(test_channels) != model.n_channels:
        raise GeometryError(f"model takes {model.n_channels} channels, got {test_channels}")
    device = test.device_map.device_for_channels(test_channels)
    scores, labels = predict_scores(model, test, test_channels)
    resampled = device.sample_rate if device.sample_rate != model.sample_rate else None
    return ScoreSet(scores, labels, resampled)


@dataclass
class ExperimentCell:
    train_channels: tuple[int, ...]
    test_channels: tuple[int, ...]
    eer: IntervalResult | None = None
    run_eers: list[float] = field(default_factory=list)
    condition: str = ""
    skipped: bool = False
    reason: str = ""


@dataclass
class MismatchMatrix:
    rows: list[tuple[int, ...]]
    columns: list[tuple[int, ...]]
    cells: dict[tuple[tuple[int, ...], tuple[int, ...]], ExperimentCell]

    def __getitem__(self, key) -> ExperimentCell:
        return self.cells[tuple(map(tuple, key))]

    def mean_table(self) -> np.ndarray:
        out = np.full((len(self.rows), len(self.columns)), np.nan)
        for i, r in enumerate(self.rows):
            for j, c in enumerate(self.columns):
                cell = self.cells[r, c]
                if cell.eer is not None:
                    out[i, j] = cell.eer.mean
        return out


def _fmt(channels) -> str:
    return "(" + ",".join(str(c) for c in channels) + ")"


def _row_job(row, columns, base: TrainConfig, data: DatasetManifest, n_runs: int) -> list[ExperimentCell]:
    cells = {}
    admissible = []
    for col in columns:
        cell = ExperimentCell(row, col)
        cells[col] = cell
        try:
            cell.condition = condition_of(row, col, data.device_map)
            admissible.append(col)
        except (LeakageError, GeometryError, ReplayArrayError) as exc:
            cell.skipped, cell.reason = True, f"{type(exc).__name__}: {exc}"
    if not admissible:
        return list(cells.values())

    config = replace(base, train_channels=row)
    try:
        params = resolve_stft(config, data)
        sel = data.for_channels(row, split="train")
        if config.environment is not None:
            sel = sel.filter(environment=config.environment)
        X, y = load_arrays(sel, row, params)
        tests = {}
        for col in admissible:
            try:
                test = data.for_channels(col, split="test")
                if config.environment is not None:
                    test = test.filter(environment=config.environment)
                tests[col] = load_arrays(test, col, params)
            except ReplayArrayError as exc:
                cells[col].skipped, cells[col].reason = True, f"{type(exc).__name__}: {exc}"
        for run in range(n_runs):
            ckpt = train_arrays(replace(config, seed=config.seed + run), X, y, params)
            for col, (Xt, yt) in tests.items():
                cells[col].run_eers.append(compute_eer(predict_arrays(ckpt, Xt), yt).eer)
        for col in tests:
            cells[col].eer = confidence_interval(cells[col].run_eers)
    except ReplayArrayError as exc:
        for col in admissible:
            if not cells[col].skipped:
                cells[col].skipped, cells[col].reason = True, f"{type(exc).__name__}: {exc}"
    return list(cells.values())


def mismatch_matrix(train_configs: Sequence[Sequence[int]], test_configs: Sequence[Sequence[int]],
                    base: TrainConfig, data: DatasetManifest, n_runs: int = 5,
                    workers: int = 1) -> MismatchMatrix:
    """Train ``n_runs`` models per row and score every admissible column.

    Each row's models are trained once and reused across its columns.
    Inadmissible or failing cells are kept with ``skipped=True`` and a reason.
    """
    if n_runs < 2:
        raise ParameterError("a confidence interval needs at least two runs")
    rows = [tuple(int(c) for c in r) for r in train_configs]
    cols = [tuple(int(c) for c in c_) for c_ in test_configs]
    if workers > 1 and len(rows) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_row_job, r, cols, base, data, n_runs) for r in rows]
            results = [f.result() for f in futures]
    else:
        results = [_row_job(r, cols, base, data, n_runs) for r in rows]
    cells = {}
    for row_cells in results:
        for cell in row_cells:
            cells[cell.train_channels, cell.test_channels] = cell
    return MismatchMatrix(rows, cols, cells)


def write_matrix(matrix: MismatchMatrix, out_dir, emit_image: bool = False) -> list[Path]:
    """matrix.csv ("mean±half_width" grid) and cells.csv (one record per cell)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = out / "matrix.csv"
    with open(grid, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["train\\test"] + [_fmt(c) for c in matrix.columns])
        for r in matrix.rows:
            row = [_fmt(r)]
            for c in matrix.columns:
                cell = matrix.cells[r, c]
                row.append("skipped" if cell.eer is None else f"{cell.eer.mean:.4f}±{cell.eer.half_width:.4f}")
            w.writerow(row)
    records = out / "cells.csv"
    with open(records, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["train_channels", "test_channels", "condition", "runs", "eer_mean",
                    "eer_halfwidth", "skipped", "reason"])
        for r in matrix.rows:
            for c in matrix.columns:
                cell = matrix.cells[r, c]
                w.writerow([
                    _fmt(r), _fmt(c), cell.condition, len(cell.run_eers),
                    "" if cell.eer is None else f"{cell.eer.mean:.6f}",
                    "" if cell.eer is None else f"{cell.eer.half_width:.6f}",
                    int(cell.skipped), cell.reason,
                ])
    paths = [grid, records]
    if emit_image:
        paths.append(plot_matrix(matrix, out / "matrix.png"))
    return paths


def plot_matrix(matrix: MismatchMatrix, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = matrix.mean_table() * 100
    fig, ax = plt.subplots(figsize=(1 + 0.5 * len(matrix.columns), 1 + 0.45 * len(matrix.rows)))
    im = ax.imshow(table, vmin=0, vmax=100, cmap="viridis")
    ax.set_xticks(range(len(matrix.columns)), [_fmt(c) for c in matrix.columns], rotation=90, fontsize=7)
    ax.set_yticks(range(len(matrix.rows)), [_fmt(r) for r in matrix.rows], fontsize=7)
    ax.set_xlabel("test channels")
    ax.set_ylabel("train channels")
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            if np.isfinite(table[i, j]):
                ax.text(j, i, f"{table[i, j]:.0f}", ha="center", va="center", fontsize=6, color="w")
    fig.colorbar(im, ax=ax, label="EER (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


@dataclass
class BudgetCurve:
    budgets: list[float]
    intervals: list[IntervalResult]
    run_eers: list[list[float]]
    lower_bound: IntervalResult
    lower_bound_runs: list[float]


def budget_curve(template: FinetuneConfig, budgets: Sequence[float], target: DatasetManifest,
                 n_runs: int = 5) -> BudgetCurve:
    """Fine-tuning EER against target-data budget, plus a target-only lower bound.

    Run ``r`` of every budget uses seed ``template.train.seed + r`` for both
    the subset draw and the training order.  The lower bound trains from
    scratch on the full target training split with the same schedule.
    """
    budgets = [float(b) for b in budgets]
    if not budgets:
        raise ParameterError("no budgets given")
    if budgets != sorted(budgets):
        raise ParameterError("budgets must be sorted ascending")
    if n_runs < 2:
        raise ParameterError("a confidence interval needs at least two runs")
    channels = template.target_channels
    train_cfg = template.train
    pool = target.for_channels(channels, split="train")
    if train_cfg.environment is not None:
        pool = pool.filter(environment=train_cfg.environment)
    if int(round(budgets[-1] * 60)) > len(pool):
        raise InsufficientDataError(
            f"largest budget {budgets[-1]} min exceeds the {len(pool) / 60:.2f} min of target training audio"
        )
    test = target.for_channels(channels, split="test")
    if train_cfg.environment is not None:
        test = test.filter(environment=train_cfg.environment)
    Xt, yt = load_arrays(test, channels, template.source.stft_params)

    intervals, all_runs = [], []
    for b in budgets:
        runs = []
        for r in range(n_runs):
            cfg = replace(template, budget_minutes=b, train=replace(train_cfg, seed=train_cfg.seed + r))
            ckpt = finetune(cfg, target)
            runs.append(compute_eer(predict_arrays(ckpt, Xt), yt).eer)
        log.info("budget %.2f min: EERs %s", b, runs)
        all_runs.append(runs)
        intervals.append(confidence_interval(runs))

    lb_cfg = replace(train_cfg, train_channels=channels)
    lb_runs = [compute_eer(res.scores, res.labels).eer for res in run_repeats(lb_cfg, target, n_runs)]
    return BudgetCurve(budgets, intervals, all_runs, confidence_interval(lb_runs), lb_runs)


def write_budget_curve(curve: BudgetCurve, out_dir, emit_image: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "budget_curve.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["budget_minutes", "eer_mean", "eer_halfwidth", "runs"])
        for b, iv in zip(curve.budgets, curve.intervals):
            w.writerow([f"{b:g}", f"{iv.mean:.6f}", f"{iv.half_width:.6f}", iv.n])
        lb = curve.lower_bound
        w.writerow(["lower_bound", f"{lb.mean:.6f}", f"{lb.half_width:.6f}", lb.n])
    paths = [path]
    if emit_image:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(4, 3))
        means = np.array([iv.mean for iv in curve.intervals]) * 100
        hw = np.array([iv.half_width for iv in curve.intervals]) * 100
        ax.errorbar(curve.budgets, means, yerr=hw, marker="o", capsize=3, label="fine-tuned")
        ax.axhspan(lb.low * 100, lb.high * 100, color="grey", alpha=0.3, label="target only")
        ax.set_xscale("log")
        ax.set_xlabel("target data (min)")
        ax.set_ylabel("EER (%)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "budget_curve.png", dpi=120)
        plt.close(fig)
        paths.append(out / "budget_curve.png")
    return paths
