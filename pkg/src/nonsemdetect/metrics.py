"""Equal error rate, per-attack decomposition, score files, report tables.

Scores are oriented higher-is-bonafide everywhere. The EER convention:
sweep the acceptance threshold (accept when score >= theta) over all
distinct scores plus one point beyond each extreme, track
FAR(theta) - FRR(theta) (monotone nonincreasing from +1 to -1), and
take the value where it crosses zero, linearly interpolating between
adjacent sweep points when the sign flips without touching zero and
taking the midpoint of the zero run when it does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import BONAFIDE, DatasetSplit
from .errors import DataError, FormatError, NumericError


@dataclass
class ScoreEntry:
    utt_id: str
    score: float


@dataclass
class EerResult:
    eer: float
    threshold: float
    n_bonafide: int
    n_spoof: int


def compute_eer(bonafide_scores, spoof_scores) -> EerResult:
    bon = np.asarray(bonafide_scores, dtype=np.float64).reshape(-1)
    spf = np.asarray(spoof_scores, dtype=np.float64).reshape(-1)
    if bon.size == 0 or spf.size == 0:
        raise NumericError("EER undefined: both classes need at least one score")
    if not (np.all(np.isfinite(bon)) and np.all(np.isfinite(spf))):
        raise NumericError("EER undefined: non-finite scores")

    distinct = np.unique(np.concatenate([bon, spf]))
    thresholds = np.concatenate([[distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]])
    # accept when score >= theta
    frr = np.searchsorted(np.sort(bon), thresholds, side="left") / bon.size
    far = (spf.size - np.searchsorted(np.sort(spf), thresholds, side="left")) / spf.size
    diff = far - frr  # monotone nonincreasing, +1 at the low end, -1 at the high end

    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        j = k
        while j + 1 < diff.size and diff[j + 1] == 0.0:
            j += 1
        eer = 0.5 * (far[k] + far[j])
        threshold = 0.5 * (thresholds[k] + thresholds[j])
    else:
        # strict sign flip between k-1 and k
        alpha = diff[k - 1] / (diff[k - 1] - diff[k])
        eer = far[k - 1] + alpha * (far[k] - far[k - 1])
        threshold = thresholds[k - 1] + alpha * (thresholds[k] - thresholds[k - 1])
    return EerResult(float(eer), float(threshold), int(bon.size), int(spf.size))


def scores_by_class(entries: list[ScoreEntry], split: DatasetSplit):
    """Align a score list with a split's labels; every scored id must exist."""
    by_id = {r.utt_id: r for r in split.records}
    bon, spf = [], []
    for entry in entries:
        rec = by_id.get(entry.utt_id)
        if rec is None:
            raise DataError(f"scored utt_id '{entry.utt_id}' not present in split '{split.name}'")
        (bon if rec.label == BONAFIDE else spf).append(entry.score)
    return bon, spf


def pooled_eer(entries: list[ScoreEntry], split: DatasetSplit) -> EerResult:
    bon, spf = scores_by_class(entries, split)
    return compute_eer(bon, spf)


def per_attack_eer(entries: list[ScoreEntry], split: DatasetSplit) -> dict[str, EerResult]:
    """EER of {all bonafide} vs {spoof trials of attack A}, for each attack A."""
    by_id = {r.utt_id: r for r in split.records}
    bon = []
    by_attack: dict[str, list[float]] = {}
    for entry in entries:
        rec = by_id.get(entry.utt_id)
        if rec is None:
            raise DataError(f"scored utt_id '{entry.utt_id}' not present in split '{split.name}'")
        if rec.label == BONAFIDE:
            bon.append(entry.score)
        else:
            by_attack.setdefault(rec.attack_id, []).append(entry.score)
    return {attack: compute_eer(bon, scores) for attack, scores in sorted(by_attack.items())}


# ---------------------------------------------------------------------------
# score files: "utt_id<TAB>score" per line


def write_scores(entries: list[ScoreEntry], path) -> None:
    lines = []
    for e in entries:
        if not math.isfinite(e.score):
            raise FormatError(f"refusing to write non-finite score for '{e.utt_id}'")
        lines.append(f"{e.utt_id}\t{e.score:.12g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path) -> list[ScoreEntry]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read score file {path}: {exc}") from exc
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'utt_id<TAB>score'")
        utt_id, text_score = fields
        try:
            score = float(text_score)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: unparseable score '{text_score}'") from exc
        if not math.isfinite(score):
            raise FormatError(f"{path}:{lineno}: non-finite score '{text_score}'")
        if utt_id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate utt_id '{utt_id}'")
        seen.add(utt_id)
        entries.append(ScoreEntry(utt_id, score))
    if not entries:
        raise FormatError(f"{path}: no valid trials")
    return entries


# ---------------------------------------------------------------------------
# report tables: rows = models/configs, columns = datasets or attacks


def format_eer_grid(
    row_names: list[str],
    col_names: list[str],
    cells: dict[tuple[str, str], float | None],
    mark_best: bool = False,
    title: str | None = None,
) -> str:
    """Plain-text EER(%) grid. Missing cells render as '-'; with mark_best
    the lowest EER carries a '*' suffix."""
    best = None
    if mark_best:
        values = [v for v in cells.values() if v is not None]
        best = min(values) if values else None

    def render(row, col):
        v = cells.get((row, col))
        if v is None:
            return "-"
        text = f"{100.0 * v:.2f}"
        if best is not None and v == best:
            text += "*"
        return text

    header = [""] + list(col_names)
    body = [[row] + [render(row, col) for col in col_names] for row in row_names]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    out = []
    if title:
        out.append(title)
    out.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    for line in body:
        out.append("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip())
    return "\n".join(out) + "\n"


def eer_grid_csv(
    row_names: list[str],
    col_names: list[str],
    cells: dict[tuple[str, str], float | None],
) -> str:
    lines = ["," + ",".join(col_names)]
    for row in row_names:
        rendered = []
        for col in col_names:
            v = cells.get((row, col))
            rendered.append("" if v is None else f"{100.0 * v:.4f}")
        lines.append(row + "," + ",".join(rendered))
    return "\n".join(lines) + "\n"


def attack_table(results: dict[str, EerResult], row_name: str = "model") -> str:
    cols = list(results.keys())
    cells = {(row_name, a): r.eer for a, r in results.items()}
    return format_eer_grid([row_name], cols, cells, title="per-attack EER(%)")

