from atommem.eval.harness import (
    CATEGORIES,
    AblationRow,
    EvalReport,
    QAItem,
    SweepRow,
    ablation_table,
    load_qa,
    parse_qa,
    run_eval,
    sensitivity_sweep,
)
from atommem.eval.metrics import bleu1, f1, normalize_answer
from atommem.eval.report import write_report

__all__ = [
    "CATEGORIES", "AblationRow", "EvalReport", "QAItem", "SweepRow", "ablation_table", "load_qa",
    "parse_qa", "run_eval", "sensitivity_sweep", "bleu1", "f1", "normalize_answer", "write_report",
]
