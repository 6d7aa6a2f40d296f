"""Grid of (problem, method, d, delta) cells run over repeated seeds."""
from __future__ import annotations

import dataclasses
import itertools
import logging

import numpy as np

from ..errors import VflowError

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("problem", "method", "d", "delta", "repeats", "e_I_mean", "e_S_final_mean",
                   "failed")


@dataclasses.dataclass(frozen=True)
class Cell:
    problem: str
    method: str
    d: int
    delta: float


def cells(problems, methods, ds, deltas) -> list:
    return [Cell(*c) for c in itertools.product(problems, methods, ds, deltas)]


def run_matrix(cell_list, run_cell, repeats: int = 3) -> list:
    """``run_cell(cell, repeat)`` returns a report row dict; failures become flagged gaps."""
    rows = []
    for cell in cell_list:
        for rep in range(repeats):
            base = {"problem": cell.problem, "method": cell.method, "d": cell.d,
                    "delta": cell.delta, "repeat": rep}
            try:
                rows.append({**base, **run_cell(cell, rep)})
            except (VflowError, ArithmeticError, ValueError) as exc:
                log.error("cell %s repeat %d failed: %s", cell, rep, exc)
                rows.append({**base, "e_I": None, "e_S_final": None, "stages_run": None,
                             "converged": "failed"})
    return rows


def summarize(rows: list) -> list:
    """Mean e_I and e_S per cell over successful repeats (raw rows are kept separately)."""
    out = []
    keyed: dict = {}
    for r in rows:
        keyed.setdefault((r["problem"], r["method"], r["d"], r["delta"]), []).append(r)
    for key, group in keyed.items():
        ok = [r for r in group if r.get("converged") != "failed"]
        e_i = [float(r["e_I"]) for r in ok]
        e_s = [float(r["e_S_final"]) for r in ok if r.get("e_S_final") not in (None, "")]
        out.append(key + (len(group), float(np.mean(e_i)) if e_i else None,
                          float(np.mean(e_s)) if e_s else None, len(group) - len(ok)))
    return out
