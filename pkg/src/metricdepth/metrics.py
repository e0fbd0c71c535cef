"""Depth evaluation: Abs.Rel, RMSE and threshold accuracies, with or without median scaling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyOverlap, NonPositiveGT, SizeMismatch

EVAL_RANGE = (0.1, 100.0)  # open at the low end, closed at the high end
SCALINGS = ("none", "median")


@dataclass(frozen=True)
class DepthEvalReport:
    abs_rel: float
    rmse: float
    delta1: float
    delta2: float
    n_pixels: int
    scaling: str
    scale_factor: float

    def to_dict(self):
        return asdict(self)


def _arrays(frame):
    """(depth float64, valid) from a DepthFrame or a bare raster (valid where > 0)."""
    if hasattr(frame, "valid"):
        return np.asarray(frame.depth, dtype=np.float64), np.asarray(frame.valid, dtype=bool)
    d = np.asarray(frame, dtype=np.float64)
    return d, np.isfinite(d) & (d > 0)


def joint_pixels(pred, gt, range=EVAL_RANGE):
    """Pred/gt values over pixels valid in both with ``range[0] < gt <= range[1]``."""
    pd, pv = _arrays(pred)
    gd, gv = _arrays(gt)
    if pd.shape != gd.shape:
        raise SizeMismatch(f"pred {pd.shape} vs gt {gd.shape}")
    m = pv & gv & (gd > range[0]) & (gd <= range[1])
    return pd[m], gd[m]


def _stats(p, g, scaling):
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}, got {scaling!r}")
    if p.size == 0:
        raise EmptyOverlap("no pixel is valid in both prediction and ground truth within range")
    if np.any(g <= 0):
        raise NonPositiveGT("ground truth has non-positive depth inside the evaluation set")
    s = 1.0
    if scaling == "median":
        s = float(np.median(g / p))
        p = p * s
    err = p - g
    thresh = np.maximum(p / g, g / p)
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        rmse=float(np.sqrt(np.mean(err * err))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25**2)),
        n_pixels=int(p.size),
        scaling=scaling,
        scale_factor=s,
    )


def eval_depth(pred, gt, range=EVAL_RANGE, scaling="none"):
    """Evaluate one prediction against ground truth on their joint valid, in-range pixels.

    With ``scaling="median"`` the prediction is multiplied by
    ``median(gt / pred)`` first.
    """
    p, g = joint_pixels(pred, gt, range)
    return _stats(p, g, scaling)


def eval_sequence(preds, gts, range=EVAL_RANGE, scaling="none", average="pooled"):
    """Evaluate many frames; returns ``(aggregate, per_frame_reports)``.

    ``average="pooled"`` treats all joint-valid pixels of all frames as one
    set (median scale included). ``average="frame"`` averages the per-frame
    statistics instead. Frames without overlap are skipped in the per-frame
    list (``None``).
    """
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise SizeMismatch(f"{len(preds)} predictions vs {len(gts)} ground-truth frames")
    ps, gs, per_frame = [], [], []
    for pred, gt in zip(preds, gts):
        p, g = joint_pixels(pred, gt, range)
        ps.append(p)
        gs.append(g)
        per_frame.append(_stats(p, g, scaling) if p.size else None)
    if average == "pooled":
        agg = _stats(np.concatenate(ps) if ps else np.empty(0), np.concatenate(gs) if gs else np.empty(0), scaling)
    elif average == "frame":
        reps = [r for r in per_frame if r is not None]
        if not reps:
            raise EmptyOverlap("no frame has overlapping valid pixels")
        agg = DepthEvalReport(
            abs_rel=float(np.mean([r.abs_rel for r in reps])),
            rmse=float(np.mean([r.rmse for r in reps])),
            delta1=float(np.mean([r.delta1 for r in reps])),
            delta2=float(np.mean([r.delta2 for r in reps])),
            n_pixels=int(sum(r.n_pixels for r in reps)),
            scaling=scaling,
            scale_factor=float(np.mean([r.scale_factor for r in reps])),
        )
    else:
        raise ValueError(f"average must be 'pooled' or 'frame', got {average!r}")
    return agg, per_frame


def format_table(rows):
    """Plain-text table; ``rows`` maps a row name to ``(report_with_median, report_without)``.

    Each cell reads ``with / without`` median scaling.
    """
    cols = ("Abs.Rel", "RMSE", "d<1.25", "d<1.25^2")
    name_w = max([len("method")] + [len(n) for n in rows])
    cell_w = 17
    lines = ["method".ljust(name_w) + "".join(c.rjust(cell_w) for c in cols)]
    lines.append("-" * len(lines[0]))
    for name, (w, wo) in rows.items():
        cells = []
        for attr in ("abs_rel", "rmse", "delta1", "delta2"):
            a = "-" if w is None else f"{getattr(w, attr):.3f}"
            b = "-" if wo is None else f"{getattr(wo, attr):.3f}"
            cells.append(f"{a} / {b}".rjust(cell_w))
        lines.append(name.ljust(name_w) + "".join(cells))
    lines.append("(cells: with / without median scaling)")
    return "\n".join(lines) + "\n"
