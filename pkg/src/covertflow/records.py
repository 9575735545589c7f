"""JSONL/CSV wire formats for ledgers, incidents, rankings and models.

USD and token amounts travel as decimal strings; unknown fields on input
records are kept and written back unchanged.
"""

from __future__ import annotations

import csv
import json
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator

from .amm import Direction
from .detection import DetectedIncident
from .errors import MissingFile, ValidationError
from .features import Incident
from .ledger import LedgerTx, SwapLeg

INCIDENT_FIELDS = ("id", "chain", "mev_type", "block", "extractor", "extractee",
                   "profit_usd", "capital_usd", "loss_usd")
LEDGER_FIELDS = ("tx_id", "block", "position", "sender", "to", "swaps", "transfer_amount",
                 "transfer_asset", "chain")
LEG_FIELDS = ("pool_id", "direction", "token_in", "token_out", "amount_in", "amount_out")


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def read_jsonl(path) -> Iterator[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            yield obj


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _dec(value, where: str) -> Decimal:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ValidationError(f"{where}: expected a decimal string, got {value!r}")
    try:
        out = Decimal(value)
    except InvalidOperation:
        raise ValidationError(f"{where}: not a decimal: {value!r}") from None
    if not out.is_finite():
        raise ValidationError(f"{where}: must be finite")
    return out


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{where}: expected an integer, got {value!r}")
    return value


def _str(value, where: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{where}: expected a string, got {value!r}")
    return value


def _require(obj: dict, fields, kind: str) -> None:
    missing = [f for f in fields if f not in obj]
    if missing:
        raise ValidationError(f"{kind} record missing fields {missing}")


# --- incidents ------------------------------------------------------------


def incident_from_dict(obj: dict) -> Incident:
    _require(obj, INCIDENT_FIELDS, "incident")
    where = f"incident {obj.get('id')!r}"
    extra = {k: v for k, v in obj.items() if k not in INCIDENT_FIELDS}
    return Incident(
        id=_str(obj["id"], where), chain=_str(obj["chain"], where), mev_type=_str(obj["mev_type"], where),
        block=_int(obj["block"], where), extractor=_str(obj["extractor"], where),
        extractee=_str(obj["extractee"], where),
        profit_usd=_dec(obj["profit_usd"], where + " profit_usd"),
        capital_usd=_dec(obj["capital_usd"], where + " capital_usd"),
        loss_usd=_dec(obj["loss_usd"], where + " loss_usd"),
        extra=extra,
    )


def incident_to_dict(inc: Incident) -> dict:
    out = {
        "id": inc.id, "chain": inc.chain, "mev_type": inc.mev_type, "block": inc.block,
        "extractor": inc.extractor, "extractee": inc.extractee,
        "profit_usd": str(inc.profit_usd), "capital_usd": str(inc.capital_usd), "loss_usd": str(inc.loss_usd),
    }
    out.update(inc.extra)
    return out


def read_incidents(path) -> list[Incident]:
    incidents = [incident_from_dict(o) for o in read_jsonl(path)]
    seen = set()
    for inc in incidents:
        if inc.id in seen:
            raise ValidationError(f"duplicate incident id {inc.id!r}")
        seen.add(inc.id)
    return incidents


def write_incidents(path, incidents: Iterable[Incident]) -> int:
    return write_jsonl(path, (incident_to_dict(i) for i in incidents))


def detected_to_dict(det: DetectedIncident, incident_id: str | None = None) -> dict:
    out = incident_to_dict(det.to_incident(incident_id))
    out["extractor_net"] = {k: str(v) for k, v in sorted(det.extractor_net.items())}
    return out


# --- ledgers --------------------------------------------------------------


def leg_to_dict(leg: SwapLeg) -> dict:
    return {"pool_id": leg.pool_id, "direction": leg.direction.value, "token_in": leg.token_in,
            "token_out": leg.token_out, "amount_in": str(leg.amount_in), "amount_out": str(leg.amount_out)}


def leg_from_dict(obj: dict, where: str) -> SwapLeg:
    _require(obj, LEG_FIELDS, "swap leg")
    try:
        direction = Direction(obj["direction"])
    except ValueError:
        raise ValidationError(f"{where}: unknown direction {obj['direction']!r}") from None
    return SwapLeg(_str(obj["pool_id"], where), direction, _str(obj["token_in"], where),
                   _str(obj["token_out"], where), _dec(obj["amount_in"], where), _dec(obj["amount_out"], where))


def ledger_to_dict(tx: LedgerTx) -> dict:
    out = {
        "tx_id": tx.tx_id, "block": tx.block, "position": tx.position, "sender": tx.sender, "to": tx.to,
        "swaps": [leg_to_dict(leg) for leg in tx.swaps],
        "transfer_amount": None if tx.transfer_amount is None else str(tx.transfer_amount),
        "transfer_asset": tx.transfer_asset, "chain": tx.chain,
    }
    out.update(tx.extra)
    return out


def ledger_from_dict(obj: dict) -> LedgerTx:
    _require(obj, ("tx_id", "block", "position", "sender", "to"), "ledger")
    where = f"tx {obj.get('tx_id')!r}"
    swaps = obj.get("swaps") or []
    if not isinstance(swaps, list):
        raise ValidationError(f"{where}: swaps must be a list")
    amount = obj.get("transfer_amount")
    return LedgerTx(
        tx_id=_str(obj["tx_id"], where), block=_int(obj["block"], where), position=_int(obj["position"], where),
        sender=_str(obj["sender"], where), to=_str(obj["to"], where),
        swaps=tuple(leg_from_dict(s, where) for s in swaps),
        transfer_amount=None if amount is None else _dec(amount, where),
        transfer_asset=obj.get("transfer_asset"), chain=obj.get("chain", "Ethereum"),
        extra={k: v for k, v in obj.items() if k not in LEDGER_FIELDS},
    )


def read_ledger(path) -> list[LedgerTx]:
    return [ledger_from_dict(o) for o in read_jsonl(path)]


def write_ledger(path, ledger: Iterable[LedgerTx]) -> int:
    return write_jsonl(path, (ledger_to_dict(t) for t in ledger))
