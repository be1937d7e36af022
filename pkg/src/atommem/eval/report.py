"""Report writers: JSON, CSV, aligned text tables and PNG figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from atommem.eval.harness import CATEGORIES, AblationRow, EvalReport, SweepRow


def _align(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]

    def fmt(cells: Sequence[str]) -> str:
        # first column left-aligned, numbers right-aligned
        return "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule, *(fmt(r) for r in rows)]) + "\n"


def results_table(report: EvalReport, label: str = "atommem") -> str:
    """One row: F1/BLEU per category, then average, then mean token cost."""
    cats = report.category_scores()
    header = ["Method"]
    row = [label]
    for cat in CATEGORIES:
        header += [f"{cat} F1", f"{cat} BLEU"]
        row += [f"{cats[cat]['f1'] * 100:.2f}", f"{cats[cat]['bleu1'] * 100:.2f}"]
    header += ["Average F1", "Average BLEU", "Token Cost"]
    row += [f"{report.average_f1 * 100:.2f}", f"{report.average_bleu1 * 100:.2f}", f"{report.token_cost:.1f}"]
    return _align(header, [row])


def sweep_table(rows: Sequence[SweepRow]) -> str:
    return _align(["k", "F1", "BLEU-1", "Token Cost"],
                  [[str(r.k), f"{r.f1 * 100:.2f}", f"{r.bleu1 * 100:.2f}", f"{r.token_cost:.1f}"] for r in rows])


def ablation_text(rows: Sequence[AblationRow]) -> str:
    return _align(["Configuration", "F1", "BLEU-1", "Token Cost", "Live Units", "Diff%"],
                  [[r.name, f"{r.f1 * 100:.2f}", f"{r.bleu1 * 100:.2f}", f"{r.token_cost:.1f}",
                    str(r.live_units), f"{r.diff_pct:+.2f}"] for r in rows])


def items_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    fields = ["question", "category", "gold", "prediction", "f1", "bleu1", "token_count", "limit"]
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for item in report.items:
        writer.writerow(item.to_dict())
    return buf.getvalue()


def _figures(out: Path, report: EvalReport, sweep: Sequence[SweepRow] | None,
             ablations: Sequence[AblationRow] | None) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    cats = report.category_scores()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(CATEGORIES, [cats[c]["f1"] for c in CATEGORIES], color="#4c72b0")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title("F1 by question category")
    fig.tight_layout()
    path = out / "f1_by_category.png"
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    written.append(path)

    if sweep:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot([r.k for r in sweep], [r.f1 for r in sweep], marker="o")
        ax.set_xlabel("k (per-view limit)")
        ax.set_ylabel("average F1")
        ax.set_ylim(0, 1.05)
        ax.set_title("Sensitivity to retrieval count")
        fig.tight_layout()
        path = out / "sensitivity.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)

    if ablations:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.barh([r.name for r in ablations][::-1], [r.f1 for r in ablations][::-1], color="#dd8452")
        ax.set_xlabel("average F1")
        ax.set_xlim(0, 1.05)
        ax.set_title("Ablations")
        fig.tight_layout()
        path = out / "ablation.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written


def write_report(out_dir: str | Path, report: EvalReport, *, sweep: Sequence[SweepRow] | None = None,
                 ablations: Sequence[AblationRow] | None = None, figures: bool = True) -> list[Path]:
    """Write report.json, items.csv, results.txt (+ sweep/ablation tables), timings.json and PNGs.

    report.json holds only deterministic content; wall-clock timings go to timings.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if sweep is not None:
        payload["sweep"] = [{"k": r.k, "f1": round(r.f1, 6), "bleu1": round(r.bleu1, 6),
                             "token_cost": round(r.token_cost, 3)} for r in sweep]
    if ablations is not None:
        payload["ablations"] = [r.to_dict() for r in ablations]
    text = results_table(report)
    if sweep is not None:
        text += "\n" + sweep_table(sweep)
    if ablations is not None:
        text += "\n" + ablation_text(ablations)
    files = {
        "report.json": json.dumps(payload, indent=2, sort_keys=True) + "\n",
        "items.csv": items_csv(report),
        "results.txt": text,
        "timings.json": json.dumps({k: round(v, 6) for k, v in report.timings.items()}, indent=2) + "\n",
    }
    written = []
    for name, content in files.items():
        path = out / name
        path.write_text(content, encoding="utf-8")
        written.append(path)
    if figures:
        written += _figures(out, report, sweep, ablations)
    return written
