"""Evaluation metrics: voxelwise errors, soft/hard IoU, SSIM, mass conservation and masked QoIs.

Every per-frame metric takes 2-D ``(H, W)`` arrays.  Reductions are done in
float64.  Standard deviations are population (``ddof=0``) throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fields import DENSITY, FIELD_NAMES, MATERIALS, normalize


@dataclass(frozen=True)
class MaterialBounds:
    lb: float
    ub: float

    def __post_init__(self):
        if not self.ub > self.lb:
            raise ValueError(f"upper bound {self.ub} must exceed lower bound {self.lb}")

    @property
    def k(self):
        return 0.05 * (self.ub - self.lb)

    @classmethod
    def preset(cls, name):
        try:
            return BOUNDS[name]
        except KeyError:
            raise ValueError(f"unknown bounds preset {name!r}; choose from {sorted(BOUNDS)}") from None


BOUNDS = {
    "porous": MaterialBounds(0.20, 0.30),
    "lattice": MaterialBounds(0.54, 0.99),
}

# fields reported as masked quantities of interest
QOI_FIELDS = ("temperature", "density", "pressure")


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def mse_metric(pred, true, mask=None):
    pred, true = _f64(pred), _f64(true)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    sq = (pred - true) ** 2
    if mask is None:
        return float(sq.mean())
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    return float(sq[mask].mean())


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def membership(v, bounds):
    """Soft interval membership ``sigma((v - lb)/k) * sigma((ub - v)/k)``."""
    v = _f64(v)
    return _sigmoid((v - bounds.lb) / bounds.k) * _sigmoid((bounds.ub - v) / bounds.k)


def soft_iou(pred_material, true_material, bounds):
    """Sum of pointwise min over sum of pointwise max of the memberships; 0/0 counts as 1."""
    mp = membership(pred_material, bounds)
    mg = membership(true_material, bounds)
    den = np.maximum(mp, mg).sum()
    if den == 0.0:
        return 1.0
    return float(np.minimum(mp, mg).sum() / den)


def ssim(pred, true, data_range=1.0):
    """Single global SSIM from whole-frame means, variances and covariance."""
    p, g = _f64(pred), _f64(true)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mp, mg = p.mean(), g.mean()
    vp = ((p - mp) ** 2).mean()
    vg = ((g - mg) ** 2).mean()
    cov = ((p - mp) * (g - mg)).mean()
    return float((2 * mp * mg + c1) * (2 * cov + c2) / ((mp**2 + mg**2 + c1) * (vp + vg + c2)))


def ssim_windowed(pred, true, data_range=1.0, win=7):
    """Mean of local SSIM over all ``win x win`` windows (uniform weights)."""
    p, g = _f64(pred), _f64(true)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    wp = sliding_window_view(p, (win, win))
    wg = sliding_window_view(g, (win, win))
    mp, mg = wp.mean(axis=(-2, -1)), wg.mean(axis=(-2, -1))
    vp = wp.var(axis=(-2, -1))
    vg = wg.var(axis=(-2, -1))
    cov = (wp * wg).mean(axis=(-2, -1)) - mp * mg
    s = (2 * mp * mg + c1) * (2 * cov + c2) / ((mp**2 + mg**2 + c1) * (vp + vg + c2))
    return float(s.mean())


def conservation_of_mass(pred_density, true_density, pred_fraction=None, true_fraction=None):
    """Relative total-mass error ``|M_p - M_g| / M_g`` with ``M = sum(rho * f)``."""
    mp = _f64(pred_density) * (1.0 if pred_fraction is None else _f64(pred_fraction))
    mg = _f64(true_density) * (1.0 if true_fraction is None else _f64(true_fraction))
    total_g = mg.sum()
    if not total_g > 0:
        raise ValueError("ground-truth total mass must be positive")
    return float(abs(mp.sum() - total_g) / total_g)


@dataclass(frozen=True)
class MaskPair:
    M_g: np.ndarray
    M_p: np.ndarray


def build_masks(true_material, pred_material, bounds):
    mg = (_f64(true_material) >= bounds.lb) & (_f64(true_material) <= bounds.ub)
    mp = (_f64(pred_material) >= bounds.lb) & (_f64(pred_material) <= bounds.ub)
    return MaskPair(mg, mp)


@dataclass(frozen=True)
class QoIRow:
    mean_g: float
    std_g: float
    mean_p: float
    std_p: float
    diff_mean: float
    diff_std: float
    empty: bool = False


_NAN = float("nan")


def masked_qoi(pred, true, masks):
    """Masked moments of one field.

    Ground-truth moments use the cells of ``M_g``, prediction moments the
    cells of ``M_p``.  The absolute difference ``|X_g M_g - X_p M_p|`` is
    taken over the ``M_g`` cells.  An empty mask gives a row flagged empty.
    """
    g, p = _f64(true), _f64(pred)
    mg, mp = masks.M_g, masks.M_p
    if not mg.any() or not mp.any():
        return QoIRow(_NAN, _NAN, _NAN, _NAN, _NAN, _NAN, empty=True)
    gv = g[mg]
    pv = p[mp]
    d = np.abs(g * mg - p * mp)[mg]
    return QoIRow(gv.mean(), gv.std(), pv.mean(), pv.std(), d.mean(), d.std())


@dataclass(frozen=True)
class SampleStats:
    rmse: float
    r2: float | None
    iou: float


def samplewise_stats(pred, true, masks):
    """RMSE and R^2 of ``X_p M_p`` against ``X_g M_g`` over the ``M_g`` cells, plus hard IoU.

    ``r2`` is ``None`` when the masked ground truth is constant.
    """
    mg, mp = masks.M_g, masks.M_p
    if not mg.any():
        raise ValueError("ground-truth mask is empty")
    g = _f64(true)[mg]
    p = (_f64(pred) * mp)[mg]
    ss_res = float(((p - g) ** 2).sum())
    ss_tot = float(((g - g.mean()) ** 2).sum())
    rmse = math.sqrt(ss_res / g.size)
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    iou = float((mg & mp).sum() / (mg | mp).sum())
    return SampleStats(rmse, r2, iou)


def mean_std(values):
    """Mean and population std of the finite entries (``None``/NaN entries are skipped)."""
    arr = np.array([v for v in values if v is not None], dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return _NAN, _NAN
    return float(arr.mean()), float(arr.std())


def aggregate(rows, metrics, by=None):
    """Mean/std of each metric over ``rows`` (dicts), optionally grouped by key ``by``.

    Without ``by`` returns ``{metric: (mean, std)}``; with it returns
    ``{group: {metric: (mean, std)}}`` in sorted group order.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to aggregate")
    if by is None:
        return {m: mean_std([r[m] for r in rows]) for m in metrics}
    groups = {}
    for r in rows:
        groups.setdefault(r[by], []).append(r)
    return {key: aggregate(groups[key], metrics) for key in sorted(groups)}


# -- report over paired sequences ----------------------------------------------

FIELD_METRICS = ("mse", "ssim")
FRAME_METRICS = ("soft_iou", "cm")
QOI_METRICS = ("mean_g", "std_g", "mean_p", "std_p", "diff_mean", "diff_std", "rmse", "rel_rmse", "r2", "iou")


@dataclass
class MetricsReport:
    field_rows: list
    frame_rows: list
    qoi_rows: list

    def summary(self):
        out = {
            "fields": aggregate(self.field_rows, FIELD_METRICS),
            "frames": aggregate(self.frame_rows, FRAME_METRICS),
            "per_field": aggregate(self.field_rows, FIELD_METRICS, by="field"),
        }
        qoi = [r for r in self.qoi_rows if not r["empty"]]
        out["qoi"] = aggregate(qoi, QOI_METRICS, by="field") if qoi else {}
        out["n_samples"] = len({r["sample"] for r in self.frame_rows})
        out["n_qoi_empty"] = len(self.qoi_rows) - len(qoi)
        return out

    def curves(self):
        """Per-timestep mean/std of every metric (fields and samples pooled)."""
        per_t = aggregate(self.field_rows, FIELD_METRICS, by="t")
        frames = aggregate(self.frame_rows, FRAME_METRICS, by="t")
        rows = []
        for t in sorted(per_t):
            row = {"t": t}
            for m in FIELD_METRICS:
                row[m], row[m + "_std"] = per_t[t][m]
            for m in FRAME_METRICS:
                row[m], row[m + "_std"] = frames[t][m]
            rows.append(row)
        return rows

    def qoi_curves(self):
        groups = {}
        for r in self.qoi_rows:
            if not r["empty"]:
                groups.setdefault((r["field"], r["t"]), []).append(r)
        rows = []
        for name in QOI_FIELDS:
            for t in sorted(t for f, t in groups if f == name):
                row = {"field": name, "t": t}
                for m in QOI_METRICS:
                    row[m], row[m + "_std"] = mean_std([r[m] for r in groups[name, t]])
                rows.append(row)
        return rows

    def write(self, out_dir):
        """Write row-level CSVs, curve CSVs and ``summary.json`` into ``out_dir``."""
        write_csv(out_dir / "field_metrics.csv", self.field_rows)
        write_csv(out_dir / "frame_metrics.csv", self.frame_rows)
        write_csv(out_dir / "qoi_metrics.csv", self.qoi_rows)
        write_csv(out_dir / "curves.csv", self.curves())
        header = ["field", "t"] + [c for m in QOI_METRICS for c in (m, m + "_std")]
        write_csv(out_dir / "qoi_curves.csv", self.qoi_curves(), header=header)
        text = json.dumps(_jsonable(self.summary()), indent=2, sort_keys=True)
        (out_dir / "summary.json").write_text(text + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows, header=None):
    """Write dict rows; ``header`` is used when ``rows`` is empty."""
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0]) if rows else list(header or ())
        if not keys:
            return
        writer.writerow(keys)
        for r in rows:
            writer.writerow([_cell(r[k]) for k in keys])


def read_csv(path):
    """Read a CSV written by :func:`write_csv`; numeric cells become floats, blanks ``None``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if v == "":
                r[k] = None
                continue
            try:
                r[k] = float(v)
            except ValueError:
                pass
    return rows


def evaluate_pairs(pairs, stats, bounds, start=5):
    """Score paired ``(truth, prediction)`` sequences frame by frame from index ``start``.

    MSE, SSIM (data range 1), soft IoU and the masks are computed on data
    normalized with ``stats``.  Mass conservation and the masked QoIs use
    physical units.
    """
    field_rows, frame_rows, qoi_rows = [], [], []
    qoi_idx = [FIELD_NAMES.index(n) for n in QOI_FIELDS]
    for s, (truth, pred) in enumerate(pairs):
        n = min(len(truth), len(pred))
        gt_raw = truth.frames[:n].astype(np.float64)
        pr_raw = pred.frames[:n].astype(np.float64)
        gt = normalize(gt_raw, stats)
        pr = normalize(pr_raw, stats)
        for t in range(start, n):
            for f, name in enumerate(FIELD_NAMES):
                field_rows.append(
                    {"sample": s, "t": t, "field": name, "mse": mse_metric(pr[t, f], gt[t, f]),
                     "ssim": ssim(pr[t, f], gt[t, f])}
                )
            frame_rows.append(
                {"sample": s, "t": t, "soft_iou": soft_iou(pr[t, MATERIALS], gt[t, MATERIALS], bounds),
                 "cm": conservation_of_mass(pr_raw[t, DENSITY], gt_raw[t, DENSITY])}
            )
            masks = build_masks(gt[t, MATERIALS], pr[t, MATERIALS], bounds)
            for name, f in zip(QOI_FIELDS, qoi_idx):
                row = {"sample": s, "t": t, "field": name}
                q = masked_qoi(pr_raw[t, f], gt_raw[t, f], masks)
                row.update({k: v for k, v in asdict(q).items() if k != "empty"})
                if q.empty:
                    row.update(rmse=_NAN, rel_rmse=_NAN, r2=None, iou=_NAN)
                else:
                    st = samplewise_stats(pr_raw[t, f], gt_raw[t, f], masks)
                    rel = st.rmse / abs(q.mean_g) if q.mean_g != 0 else _NAN
                    row.update(rmse=st.rmse, rel_rmse=rel, r2=st.r2, iou=st.iou)
                row["empty"] = int(q.empty)
                qoi_rows.append(row)
    return MetricsReport(field_rows, frame_rows, qoi_rows)
