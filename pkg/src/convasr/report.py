"""Deterministic result artifacts: CSV tables, n-best listings, and small
hand-written SVG bar charts.

Every writer formats floats at fixed precision, sorts nothing implicitly,
and emits ``\\n`` newlines only, so reruns with identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .decode import BeamConfig, SentenceDecode, SplitEval


def fnum(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6f}"


def _open_out(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", encoding="utf-8", newline="")


def _comment_lines(handle, meta: dict | None):
    if not meta:
        return
    for key in meta:
        handle.write(f"# {key}={meta[key]}\n")


def beam_meta(cfg: BeamConfig) -> dict:
    return {
        "beam": cfg.beam,
        "ctc_weight": cfg.ctc_weight,
        "lm_weight": cfg.lm_weight,
        "length_bonus": f"{cfg.length_bonus} per output unit, added to the score",
        "max_len": cfg.max_len if cfg.max_len is not None else "auto",
    }


def write_wer_csv(evals: list[SplitEval], path, meta: dict | None = None):
    """Per-conversation WER by context source plus summary rows."""
    with _open_out(path) as handle:
        _comment_lines(handle, meta)
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["source", "conv_id", "wer", "errors", "ref_len"])
        for ev in evals:
            for conv_id, rate in ev.conv_wer.items():
                w.writerow([ev.source, conv_id, fnum(rate), "", ""])
            w.writerow([ev.source, "<median>", fnum(ev.median_conv_wer), "", ""])
            w.writerow([ev.source, "<all>", fnum(ev.wer),
                        ev.counts.errors, ev.counts.ref_len])


def write_sentences_csv(sentences: list[SentenceDecode], path,
                        meta: dict | None = None):
    with _open_out(path) as handle:
        _comment_lines(handle, meta)
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["conv_id", "sentence", "reference", "hypothesis", "score",
                    "att", "ctc", "lm", "length_bonus"])
        for s in sentences:
            w.writerow([s.conv_id, s.sentence, " ".join(s.ref_words),
                        " ".join(s.hyp_words), fnum(s.score), fnum(s.att_score),
                        fnum(s.ctc_score), fnum(s.lm_score), fnum(s.length_bonus)])


def write_nbest(sentences: list[SentenceDecode], path, meta: dict | None = None):
    """All beam outputs, one line per hypothesis, ranks per sentence."""
    with _open_out(path) as handle:
        _comment_lines(handle, meta)
        for s in sentences:
            for rank, hyp in enumerate(s.nbest):
                units = " ".join(str(u) for u in hyp.units)
                handle.write("\t".join([
                    s.conv_id, str(s.sentence), str(rank), fnum(hyp.score),
                    fnum(hyp.att_score), fnum(hyp.ctc_score), fnum(hyp.lm_score),
                    fnum(hyp.length_bonus), units,
                ]) + "\n")


def write_trace_csv(trace, path, columns=("epoch", "train", "dev"),
                    meta: dict | None = None):
    with _open_out(path) as handle:
        _comment_lines(handle, meta)
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(columns)
        for row in trace:
            w.writerow([row[0]] + [fnum(v) for v in row[1:]])


# ---------------------------------------------------------------------------
# SVG bar chart
# ---------------------------------------------------------------------------

def bar_chart_svg(labels, values, title: str, unit: str = "") -> str:
    """A fixed-size bar chart with value labels; no external tooling."""
    n = len(values)
    if n == 0 or n != len(labels):
        raise ValueError("bar_chart_svg needs matching non-empty labels and values")
    width, height = 120 + 90 * n, 300
    top, bottom, left = 50, 40, 60
    span = height - top - bottom
    vmax = max([v for v in values if not math.isnan(v)] + [1e-9])
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - 20}" '
        f'y2="{height - bottom}" stroke="black"/>',
    ]
    for i, (label, value) in enumerate(zip(labels, values)):
        x = left + 20 + 90 * i
        if math.isnan(value):
            parts.append(f'<text x="{x + 25}" y="{height - bottom - 8}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="12">n/a</text>')
        else:
            bar = int(round(span * value / vmax))
            y = height - bottom - bar
            parts.append(f'<rect x="{x}" y="{y}" width="50" height="{bar}" '
                         f'fill="#4878a8"/>')
            parts.append(f'<text x="{x + 25}" y="{y - 6}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="12">'
                         f'{fnum(value)}{unit}</text>')
        parts.append(f'<text x="{x + 25}" y="{height - bottom + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="13">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_wer_chart(evals: list[SplitEval], path, title="median conversation WER"):
    labels = [ev.source for ev in evals]
    values = [ev.median_conv_wer for ev in evals]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(bar_chart_svg(labels, values, title), encoding="utf-8")


def write_series_chart(labels, values, path, title: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(bar_chart_svg(list(labels), list(values), title),
                    encoding="utf-8")
