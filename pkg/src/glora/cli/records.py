"""CSV emission of round records."""
from __future__ import annotations

from glora.fedsim.experiment import RoundRecord

CSV_HEADER = "round,participants,eval_loss,recovery_error,agg_wall_time_s,inconsistency"


def format_float(x: float) -> str:
    # 17 significant digits round-trip every float64
    return "%.17g" % x


def format_record(rec: RoundRecord) -> str:
    incons = "" if rec.inconsistency is None else format_float(rec.inconsistency)
    return ",".join([
        str(rec.round),
        ";".join(str(i) for i in rec.participant_ids),
        format_float(rec.eval_loss),
        format_float(rec.recovery_error),
        format_float(rec.wall_time_agg),
        incons,
    ])


def parse_row(line: str) -> dict[str, object]:
    """Inverse of ``format_record`` (used by tests and analysis scripts)."""
    fields = line.rstrip("\n").split(",")
    if len(fields) != 6:
        raise ValueError(f"expected 6 fields, got {len(fields)}")
    rnd, parts, loss, err, wall, incons = fields
    return {
        "round": int(rnd),
        "participants": tuple(int(p) for p in parts.split(";") if p),
        "eval_loss": float(loss),
        "recovery_error": float(err),
        "agg_wall_time_s": float(wall),
        "inconsistency": float(incons) if incons else None,
    }


def read_csv(path) -> list[dict[str, object]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        return [parse_row(line) for line in fh if line.strip()]
