"""Per-sample performance measures and dataset-level evaluation reports.

Four measures: ROC AUC of target-vs-noise bin separation, MAE of the target
amplitudes in dB, MAE of the target phases in degrees (wrapped), and the
SNR improvement of the strongest target against a median noise floor.
RMSE variants of the amplitude/phase errors are carried alongside for the
per-interferer-count breakdown.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from .errors import DomainError, PersistenceError
from .radar import RadarConfig, TargetSpec, beat_frequency
from .spectral import range_fft

MAG_FLOOR = 1e-12  # magnitudes are floored here before any log


@dataclass(frozen=True)
class TargetBins:
    """Range-bin indices of the targets, one entry per distinct bin.

    Targets that round to the same bin are merged, keeping the strongest
    amplitude.  ``strongest`` is the bin of the highest-amplitude target.
    """

    bins: tuple[int, ...]
    amplitudes: tuple[float, ...]

    @property
    def strongest(self) -> int:
        return self.bins[int(np.argmax(self.amplitudes))]


def target_bins(targets: list[TargetSpec], cfg: RadarConfig, n_fft: int) -> TargetBins:
    merged: dict[int, float] = {}
    for t in targets:
        fb = beat_frequency(t.distance_m, cfg)
        b = int(round(fb / cfg.sample_rate_hz * n_fft)) % n_fft
        if t.amplitude > merged.get(b, -math.inf):
            merged[b] = t.amplitude
    bins = tuple(sorted(merged))
    return TargetBins(bins=bins, amplitudes=tuple(merged[b] for b in bins))


def positive_bin_mask(n_bins: int, tb: TargetBins, tolerance_bins: int) -> np.ndarray:
    """Bins counted as targets: within +-tolerance of any target bin (circular)."""
    mask = np.zeros(n_bins, dtype=bool)
    for b in tb.bins:
        for d in range(-tolerance_bins, tolerance_bins + 1):
            mask[(b + d) % n_bins] = True
    return mask


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def roc_auc(profile_mag: np.ndarray, tb: TargetBins, tolerance_bins: int = 1) -> float:
    """Normalized Mann-Whitney U statistic with ties counted one half."""
    scores = np.abs(np.asarray(profile_mag, dtype=np.float64))
    pos = positive_bin_mask(len(scores), tb, tolerance_bins)
    n_pos = int(pos.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs at least one positive and one negative bin")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def amplitude_errors_db(pred_profile, label_profile, tb: TargetBins) -> np.ndarray:
    """Per-target-bin absolute amplitude errors in dB."""
    pred = np.abs(np.asarray(pred_profile))
    label = np.abs(np.asarray(label_profile))
    idx = np.asarray(tb.bins)
    if np.any(label[idx] <= 0):
        raise DomainError("label magnitude is zero at a target bin")
    pred_db = 20.0 * np.log10(np.maximum(pred[idx], MAG_FLOOR))
    label_db = 20.0 * np.log10(label[idx])
    return np.abs(pred_db - label_db)


def mae_amplitude_db(pred_profile, label_profile, tb: TargetBins) -> float:
    return float(amplitude_errors_db(pred_profile, label_profile, tb).mean())


def wrap_degrees(deg: np.ndarray) -> np.ndarray:
    """Wrap angles to (-180, 180]."""
    wrapped = (np.asarray(deg) + 180.0) % 360.0 - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)


def phase_errors_deg(pred_profile, label_profile, tb: TargetBins) -> np.ndarray:
    """Per-target-bin absolute wrapped phase errors in degrees."""
    pred = np.asarray(pred_profile)
    label = np.asarray(label_profile)
    idx = np.asarray(tb.bins)
    if np.any(np.abs(label[idx]) <= 0):
        raise DomainError("label magnitude is zero at a target bin")
    delta = np.degrees(np.angle(pred[idx]) - np.angle(label[idx]))
    return np.abs(wrap_degrees(delta))


def mae_phase_deg(pred_profile, label_profile, tb: TargetBins) -> float:
    return float(phase_errors_deg(pred_profile, label_profile, tb).mean())


def profile_snr_db(profile_mag: np.ndarray, tb: TargetBins, guard_bins: int = 4) -> float:
    """Peak of the strongest target over the median non-guard noise floor."""
    mag = np.abs(np.asarray(profile_mag, dtype=np.float64))
    noise = ~positive_bin_mask(len(mag), tb, guard_bins)
    if not noise.any():
        raise DomainError("no noise bins left outside the guard regions")
    peak = max(float(mag[tb.strongest]), MAG_FLOOR)
    floor = max(float(np.median(mag[noise])), MAG_FLOOR)
    return 20.0 * math.log10(peak / floor)


def delta_snr(
    profile_before, profile_after, tb: TargetBins, guard_bins: int = 4
) -> float:
    """SNR improvement (after minus before) of the strongest target, in dB."""
    return profile_snr_db(profile_after, tb, guard_bins) - profile_snr_db(
        profile_before, tb, guard_bins
    )


@dataclass
class SampleMetrics:
    index: int
    n_int: int
    auc: float
    mae_amp_db: float
    mae_phase_deg: float
    rmse_amp_db: float
    rmse_phase_deg: float
    delta_snr_db: float


AGG_FIELDS = (
    "auc", "mae_amp_db", "mae_phase_deg", "rmse_amp_db", "rmse_phase_deg", "delta_snr_db",
)


@dataclass
class EvalReport:
    method: str
    records: list[SampleMetrics]
    failures: list[tuple[int, str]] = field(default_factory=list)

    def aggregate(self, records: list[SampleMetrics] | None = None) -> dict[str, float]:
        rows = self.records if records is None else records
        out = {"count": float(len(rows))}
        for name in AGG_FIELDS:
            out[name] = (
                float(np.mean([getattr(r, name) for r in rows])) if rows else math.nan
            )
        return out

    def by_interferer_count(self) -> dict[int, dict[str, float]]:
        groups: dict[int, list[SampleMetrics]] = {}
        for r in self.records:
            groups.setdefault(r.n_int, []).append(r)
        return {n: self.aggregate(rows) for n, rows in sorted(groups.items())}

    def per_sample_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["index", "n_int", "auc", "mae_amp_db", "mae_phase_deg",
             "rmse_amp_db", "rmse_phase_deg", "delta_snr_db"]
        )
        for r in self.records:
            writer.writerow(
                [r.index, r.n_int, f"{r.auc:.8f}", f"{r.mae_amp_db:.8f}",
                 f"{r.mae_phase_deg:.8f}", f"{r.rmse_amp_db:.8f}",
                 f"{r.rmse_phase_deg:.8f}", f"{r.delta_snr_db:.8f}"]
            )
        return buf.getvalue()

    def group_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n_int", "count"] + list(AGG_FIELDS))
        for n, agg in self.by_interferer_count().items():
            writer.writerow(
                [n, int(agg["count"])] + [f"{agg[f]:.8f}" for f in AGG_FIELDS]
            )
        return buf.getvalue()

    def summary_text(self) -> str:
        agg = self.aggregate()
        lines = [
            f"method = {self.method}",
            f"samples = {len(self.records)}",
            f"failures = {len(self.failures)}",
        ]
        for name in AGG_FIELDS:
            lines.append(f"mean_{name} = {agg[name]:.6f}")
        for n, g in self.by_interferer_count().items():
            fields = " ".join(f"{f}={g[f]:.6f}" for f in AGG_FIELDS)
            lines.append(f"n_int {n}: count={int(g['count'])} {fields}")
        for idx, msg in self.failures:
            lines.append(f"failure sample {idx}: {msg}")
        return "\n".join(lines) + "\n"


def roc_curve_csv(
    scores_and_truth: list[tuple[np.ndarray, np.ndarray]], max_points: int = 512
) -> str:
    """Pooled threshold -> (FPR, TPR) table for plotting."""
    scores = np.concatenate([s for s, _ in scores_and_truth])
    truth = np.concatenate([t for _, t in scores_and_truth])
    order = np.argsort(-scores, kind="mergesort")
    tp = np.cumsum(truth[order])
    fp = np.cumsum(~truth[order])
    n_pos = truth.sum()
    n_neg = len(truth) - n_pos
    idx = np.unique(np.linspace(0, len(scores) - 1, max_points).astype(int))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for i in idx:
        writer.writerow(
            [f"{scores[order[i]]:.8e}", f"{fp[i] / n_neg:.8f}", f"{tp[i] / n_pos:.8f}"]
        )
    return buf.getvalue()


def evaluate(
    manifest: dataset_mod.DatasetManifest,
    method,
    method_name: str,
    indices: list[int],
    tolerance_bins: int = 1,
    guard_bins: int = 4,
) -> EvalReport:
    """Apply ``method`` (ScenarioSample -> MitigationResult) over samples.

    Per-sample metric failures are recorded in the report instead of
    aborting the run.  Iteration follows the given index order, so reports
    are deterministic.
    """
    n_fft = manifest.stft.n_fft
    report = EvalReport(method=method_name, records=[])
    for index in indices:
        try:
            sample = dataset_mod.read_sample(manifest, index)
            tb = target_bins(sample.targets, manifest.radar, n_fft)
            label = range_fft(sample.clean_signal, n_fft)
            before = np.abs(range_fft(sample.interfered_signal, n_fft))
            result = method(sample)
            amp_errs = amplitude_errors_db(result.magnitude, label, tb)
            ph_errs = phase_errors_deg(result.profile, label, tb)
            report.records.append(
                SampleMetrics(
                    index=index,
                    n_int=sample.n_interferers,
                    auc=roc_auc(result.magnitude, tb, tolerance_bins),
                    mae_amp_db=float(amp_errs.mean()),
                    mae_phase_deg=float(ph_errs.mean()),
                    rmse_amp_db=float(np.sqrt((amp_errs ** 2).mean())),
                    rmse_phase_deg=float(np.sqrt((ph_errs ** 2).mean())),
                    delta_snr_db=delta_snr(before, result.magnitude, tb, guard_bins),
                )
            )
        except Exception as exc:  # noqa: BLE001 - per-sample isolation
            report.failures.append((index, f"{type(exc).__name__}: {exc}"))
    return report


def write_report(report: EvalReport, out_dir, stem: str, group_by_n_int: bool = False):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}-samples.csv").write_text(report.per_sample_csv())
        (out_dir / f"{stem}-summary.txt").write_text(report.summary_text())
        if group_by_n_int:
            (out_dir / f"{stem}-by-n-int.csv").write_text(report.group_csv())
    except OSError as exc:
        raise PersistenceError(f"cannot write report under {out_dir}: {exc}") from exc
