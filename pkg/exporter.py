# exporter.py
from typing import Dict, List, Optional, Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

from corpus import AgeKind
from evalkit import GoldAnnotation, Metrics
from pipeline import ArticlePrediction

_WRONG = PatternFill(start_color="F8CBAD", end_color="F8CBAD", fill_type="solid")


class ExcelReportExporter:
    """
    Writes an evaluation run to an .xlsx file.
    - "Predictions": one row per document, gold vs predicted value, confidence and evidence per kind
    - "Audit": one row per discarded answer
    - "Metrics": recall / precision / F per kind
    Cells holding a wrong prediction are shaded.
    """

    def __init__(self, out_path: str = "age_report.xlsx"):
        self.out_path = out_path

    # ---- public ----
    def export(self, preds: Sequence[ArticlePrediction], golds: Sequence[GoldAnnotation],
               metrics: Optional[Metrics] = None) -> str:
        wb = Workbook()
        gold_by_id = {g.doc_id: g for g in golds}
        self._predictions_sheet(wb.active, preds, gold_by_id)
        self._audit_sheet(wb.create_sheet("Audit"), preds)
        if metrics is not None:
            self._metrics_sheet(wb.create_sheet("Metrics"), metrics)
        wb.save(self.out_path)
        return self.out_path

    # ---- sheets ----
    def _predictions_sheet(self, ws, preds: Sequence[ArticlePrediction], gold_by_id: Dict[str, GoldAnnotation]):
        ws.title = "Predictions"
        headers = ["Doc ID"]
        for kind in AgeKind:
            k = kind.value.capitalize()
            headers += [f"Gold {k}", f"Predicted {k}", f"{k} Confidence", f"{k} Evidence"]
        self._header(ws, headers)

        for row_idx, pred in enumerate(preds, start=2):
            ws.cell(row=row_idx, column=1, value=pred.id)
            gold = gold_by_id.get(pred.id)
            col = 2
            for kind in AgeKind:
                expected = gold.get(kind) if gold is not None else None
                answer = pred.get(kind)
                ws.cell(row=row_idx, column=col, value=expected)
                value_cell = ws.cell(row=row_idx, column=col + 1, value=answer.value if answer else None)
                if gold is not None and (answer.value if answer else None) != expected:
                    value_cell.fill = _WRONG
                if answer is not None:
                    ws.cell(row=row_idx, column=col + 2, value=round(answer.confidence, 4))
                    evidence = ws.cell(row=row_idx, column=col + 3, value=answer.evidence)
                    evidence.alignment = Alignment(wrap_text=True, vertical="top")
                col += 4

        self._widths(ws, {1: 24, 2: 10, 3: 12, 4: 14, 5: 70, 6: 10, 7: 12, 8: 14, 9: 70})

    def _audit_sheet(self, ws, preds: Sequence[ArticlePrediction]):
        self._header(ws, ["Doc ID", "Stage", "Kind", "Value", "Confidence", "Sentence #", "Reason"])
        row_idx = 2
        for pred in preds:
            for entry in pred.audit:
                ans = entry.answer
                values: List = [pred.id, entry.stage, ans.kind, ans.value, round(ans.confidence, 4),
                                ans.sentence_index, entry.reason]
                for col_idx, value in enumerate(values, start=1):
                    ws.cell(row=row_idx, column=col_idx, value=value)
                row_idx += 1
        self._widths(ws, {1: 24, 2: 14, 3: 8, 4: 8, 5: 12, 6: 12, 7: 60})

    def _metrics_sheet(self, ws, metrics: Metrics):
        self._header(ws, ["Kind", "Recall %", "Precision %", "F %", "Correct", "Predicted", "Annotated", "Notes"])
        for row_idx, kind in enumerate(AgeKind, start=2):
            m = metrics.get(kind)
            values = [kind.value, round(m.recall * 100, 1), round(m.precision * 100, 1), round(m.f1 * 100, 1),
                      m.correct, m.predicted, m.annotated, ", ".join(m.flags)]
            for col_idx, value in enumerate(values, start=1):
                ws.cell(row=row_idx, column=col_idx, value=value)
        self._widths(ws, {1: 8, 2: 11, 3: 13, 4: 8, 5: 10, 6: 11, 7: 11, 8: 30})

    # ---- helpers ----
    def _header(self, ws, headers: List[str]):
        ws.append(headers)
        for col_idx in range(1, len(headers) + 1):
            ws.cell(row=1, column=col_idx).font = Font(bold=True)
        ws.freeze_panes = "A2"

    def _widths(self, ws, widths: Dict[int, int]):
        for col_idx, width in widths.items():
            ws.column_dimensions[get_column_letter(col_idx)].width = width
