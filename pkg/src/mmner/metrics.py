"""Exact-match span precision / recall / F1, per entity type and micro-averaged."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError, ParseError
from .seqdata import ENTITY_TYPES

COLUMNS = ("Per.", "Loc.", "Org.", "Misc.", "Prec.", "Recall", "F1")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def predicted(self) -> int:
        return self.tp + self.fp


def prf(c: Counts):
    """(precision, recall, f1, flags); zero denominators yield 0 and a flag."""
    flags = []
    if c.predicted:
        p = c.tp / c.predicted
    else:
        p = 0.0
        flags.append("no-predictions")
    if c.support:
        r = c.tp / c.support
    else:
        r = 0.0
        flags.append("zero-support")
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f, flags


@dataclass
class EvalReport:
    per_type: dict = field(default_factory=dict)   # type -> Counts
    overall: Counts = field(default_factory=Counts)

    def scores(self, etype: str | None = None):
        return prf(self.overall if etype is None else self.per_type[etype])

    @property
    def precision(self):
        return self.scores()[0]

    @property
    def recall(self):
        return self.scores()[1]

    @property
    def f1(self):
        return self.scores()[2]

    def f1_of(self, etype):
        return self.scores(etype)[2]

    def flags(self) -> list:
        out = [f"overall:{f}" for f in self.scores()[3]]
        for t in ENTITY_TYPES:
            out += [f"{t}:{f}" for f in self.scores(t)[3]]
        return out


def _type(tag):
    return None if tag == "O" else tag[2:]


def _starts(prev, cur):
    # an I-X that cannot continue the previous chunk opens one, as in conlleval
    return cur != "O" and (cur.startswith("B-") or _type(prev) != _type(cur))


def _ends(prev, cur):
    return prev != "O" and (cur == "O" or cur.startswith("B-") or _type(prev) != _type(cur))


def evaluate(gold, pred) -> EvalReport:
    """Single-pass chunk matcher: a predicted chunk is correct when it opens
    and closes at the same positions as a gold chunk of the same type."""
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    tp, n_gold, n_pred = Counter(), Counter(), Counter()
    for i, (g_seq, p_seq) in enumerate(zip(gold, pred)):
        if len(g_seq) != len(p_seq):
            raise ContractError(f"sentence {i}: {len(g_seq)} gold tags but {len(p_seq)} predicted")
        g_prev = p_prev = "O"
        open_match = None
        for g, p in zip(list(g_seq) + ["O"], list(p_seq) + ["O"]):
            if open_match is not None:
                g_end, p_end = _ends(g_prev, g), _ends(p_prev, p)
                if g_end and p_end:
                    tp[open_match] += 1
                    open_match = None
                elif g_end or p_end:
                    open_match = None
            g_start, p_start = _starts(g_prev, g), _starts(p_prev, p)
            if g_start and p_start and _type(g) == _type(p):
                open_match = _type(g)
            if g_start:
                n_gold[_type(g)] += 1
            if p_start:
                n_pred[_type(p)] += 1
            g_prev, p_prev = g, p
    report = EvalReport({t: Counts(tp[t], n_pred[t] - tp[t], n_gold[t] - tp[t])
                         for t in ENTITY_TYPES})
    report.overall = Counts(*(sum(getattr(report.per_type[t], k) for t in ENTITY_TYPES)
                              for k in ("tp", "fp", "fn")))
    return report


def report_format(report: EvalReport) -> str:
    """Fixed-width table: per-type F1 then overall precision, recall, F1 (percent)."""
    values = [report.f1_of(t) for t in ENTITY_TYPES]
    values += [report.precision, report.recall, report.f1]
    head = "".join(f"{c:>9}" for c in COLUMNS)
    row = "".join(f"{100 * v:>9.2f}" for v in values)
    return f"{head}\n{row}\n"


def parse_report(text: str) -> dict:
    """Inverse of ``report_format``: column name -> percentage."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ParseError("report needs a header and a value row")
    names, vals = lines[0].split(), lines[1].split()
    if tuple(names) != COLUMNS or len(vals) != len(COLUMNS):
        raise ParseError("unexpected report columns")
    return {n: float(v) for n, v in zip(names, vals)}


def report_keyvalues(report: EvalReport) -> str:
    """Machine-readable ``key=value`` lines."""
    lines = []
    for t in ENTITY_TYPES:
        c = report.per_type[t]
        p, r, f, _ = report.scores(t)
        lines += [f"{t}.precision={p:.6f}", f"{t}.recall={r:.6f}", f"{t}.f1={f:.6f}",
                  f"{t}.tp={c.tp}", f"{t}.fp={c.fp}", f"{t}.fn={c.fn}", f"{t}.support={c.support}"]
    p, r, f, _ = report.scores()
    c = report.overall
    lines += [f"overall.precision={p:.6f}", f"overall.recall={r:.6f}", f"overall.f1={f:.6f}",
              f"overall.tp={c.tp}", f"overall.fp={c.fp}", f"overall.fn={c.fn}",
              f"overall.support={c.support}", "flags=" + ",".join(report.flags())]
    return "\n".join(lines) + "\n"
