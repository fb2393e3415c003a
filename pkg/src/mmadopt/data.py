"""CDR / MMTR / roster records, CSV ingestion and subscriber labeling."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

CDR_HEADER = [
    "caller_id",
    "recipient_id",
    "timestamp",
    "channel",
    "duration_s",
    "caller_location",
    "recipient_location",
]
MMTR_HEADER = ["subscriber_id", "timestamp", "kind", "counterparty_id", "amount"]
ROSTER_HEADER = ["id", "gender", "district_kind", "district_wealth"]

_TS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")
_TS_FMT = "%Y-%m-%dT%H:%M:%SZ"
_OFFSET_RE = re.compile(r"^#\s*utc_offset\s*=\s*([+-])(\d{2}):(\d{2})\s*$")


class IngestError(ValueError):
    """Fatal ingestion failure (missing file, bad header, or strict-mode bad row)."""


class Channel(Enum):
    CALL = "CALL"
    SMS = "SMS"


class MoneyKind(Enum):
    REGISTRATION = "REG"
    P2P_SEND = "P2P_SEND"
    P2P_RECEIVE = "P2P_RECV"
    OTHER = "OTHER"


P2P_KINDS = frozenset({MoneyKind.P2P_SEND, MoneyKind.P2P_RECEIVE})


class Gender(Enum):
    MALE = "Male"
    FEMALE = "Female"
    UNKNOWN = "Unknown"


class DistrictKind(Enum):
    URBAN = "Urban"
    RURAL = "Rural"
    UNKNOWN = "Unknown"


class DistrictWealth(Enum):
    RICH = "Rich"
    POOR = "Poor"
    UNKNOWN = "Unknown"


class Axis(Enum):
    GENDER = "Gender"
    DISTRICT_KIND = "DistrictKind"
    DISTRICT_WEALTH = "DistrictWealth"


class UserClass(Enum):
    VOICE_ONLY = "VoiceOnly"
    REGISTERED = "Registered"
    P2P = "P2P"


_GENDER_CODES = {"M": Gender.MALE, "F": Gender.FEMALE, "U": Gender.UNKNOWN}
_KIND_CODES = {"URBAN": DistrictKind.URBAN, "RURAL": DistrictKind.RURAL, "U": DistrictKind.UNKNOWN}
_WEALTH_CODES = {"RICH": DistrictWealth.RICH, "POOR": DistrictWealth.POOR, "U": DistrictWealth.UNKNOWN}


def parse_timestamp(text: str) -> datetime:
    if not _TS_RE.match(text):
        raise ValueError(f"timestamp {text!r} is not YYYY-MM-DDTHH:MM:SSZ")
    return datetime.strptime(text, _TS_FMT).replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(_TS_FMT)


@dataclass(frozen=True)
class EventRecord:
    """One directed call or SMS."""

    caller_id: str
    recipient_id: str
    timestamp: datetime
    channel: Channel
    duration_s: int
    caller_location: str
    recipient_location: str

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValueError("duration_s must be non-negative")
        if self.channel is Channel.SMS and self.duration_s != 0:
            raise ValueError("SMS events must have duration_s = 0")
        if self.caller_id == self.recipient_id:
            raise ValueError("caller_id equals recipient_id")
        if not self.caller_id or not self.recipient_id:
            raise ValueError("empty party id")

    @property
    def epoch_s(self) -> int:
        return int(self.timestamp.timestamp())

    def to_row(self) -> list[str]:
        return [
            self.caller_id,
            self.recipient_id,
            format_timestamp(self.timestamp),
            self.channel.value,
            str(self.duration_s),
            self.caller_location,
            self.recipient_location,
        ]


@dataclass(frozen=True)
class MoneyRecord:
    subscriber_id: str
    timestamp: datetime
    kind: MoneyKind
    counterparty_id: str | None
    amount: float

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("amount must be non-negative")
        has_cp = bool(self.counterparty_id)
        if (self.kind in P2P_KINDS) != has_cp:
            raise ValueError(f"counterparty_id must be present exactly for P2P kinds (kind={self.kind.value})")

    def to_row(self) -> list[str]:
        return [
            self.subscriber_id,
            format_timestamp(self.timestamp),
            self.kind.value,
            self.counterparty_id or "",
            f"{self.amount:.2f}",
        ]


@dataclass(frozen=True)
class Subscriber:
    id: str
    gender: Gender = Gender.UNKNOWN
    district_kind: DistrictKind = DistrictKind.UNKNOWN
    district_wealth: DistrictWealth = DistrictWealth.UNKNOWN

    def to_row(self) -> list[str]:
        inv_g = {v: k for k, v in _GENDER_CODES.items()}
        inv_k = {v: k for k, v in _KIND_CODES.items()}
        inv_w = {v: k for k, v in _WEALTH_CODES.items()}
        return [self.id, inv_g[self.gender], inv_k[self.district_kind], inv_w[self.district_wealth]]


@dataclass
class IngestReport:
    path: str
    accepted: int = 0
    rejected: int = 0
    errors: list[str] = field(default_factory=list)
    utc_offset_minutes: int | None = None


def classify_subscriber(subscriber_id: str, money: Iterable[MoneyRecord]) -> UserClass:
    """P2P if any transfer exists, Registered if any other record exists, else VoiceOnly."""
    seen = False
    p2p = False
    for rec in money:
        if rec.subscriber_id != subscriber_id:
            raise ValueError(
                f"money record for {rec.subscriber_id!r} passed while classifying {subscriber_id!r}"
            )
        seen = True
        if rec.kind in P2P_KINDS:
            p2p = True
    if p2p:
        return UserClass.P2P
    return UserClass.REGISTERED if seen else UserClass.VOICE_ONLY


def classify_roster(roster: Sequence[Subscriber], money: Iterable[MoneyRecord]) -> dict[str, UserClass]:
    by_id: dict[str, list[MoneyRecord]] = {s.id: [] for s in roster}
    for rec in money:
        if rec.subscriber_id in by_id:
            by_id[rec.subscriber_id].append(rec)
    return {sid: classify_subscriber(sid, recs) for sid, recs in by_id.items()}


def stratum_of(s: Subscriber, axis: Axis) -> str | None:
    value = {
        Axis.GENDER: s.gender,
        Axis.DISTRICT_KIND: s.district_kind,
        Axis.DISTRICT_WEALTH: s.district_wealth,
    }[axis]
    return None if value.value == "Unknown" else value.value


# ---------------------------------------------------------------- CSV I/O


def _read_rows(path, header: list[str]):
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: file not found")
    fh = open(path, newline="", encoding="utf-8")
    offset = None
    first = fh.readline()
    m = _OFFSET_RE.match(first.strip())
    if m:
        sign = -1 if m.group(1) == "-" else 1
        offset = sign * (int(m.group(2)) * 60 + int(m.group(3)))
        first = fh.readline()
    got = next(csv.reader([first]), [])
    if got != header:
        fh.close()
        raise IngestError(f"{path}: malformed header {got!r}, expected {header!r}")
    return fh, offset


def _ingest(path, header, parse_row, strict: bool):
    fh, offset = _read_rows(path, header)
    report = IngestReport(path=str(path), utc_offset_minutes=offset)
    records = []
    first_line = 3 if offset is not None else 2
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=first_line):
            if not row:
                continue
            try:
                if len(row) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                records.append(parse_row(row))
            except ValueError as exc:
                msg = f"{path}:{lineno}: {exc}"
                if strict:
                    raise IngestError(msg) from exc
                report.rejected += 1
                report.errors.append(msg)
            else:
                report.accepted += 1
    return records, report


def _parse_event(row: list[str]) -> EventRecord:
    try:
        channel = Channel(row[3])
    except ValueError:
        raise ValueError(f"unknown channel {row[3]!r}") from None
    if not re.fullmatch(r"-?\d+", row[4]):
        raise ValueError(f"duration_s {row[4]!r} is not an integer")
    return EventRecord(row[0], row[1], parse_timestamp(row[2]), channel, int(row[4]), row[5], row[6])


def _parse_money(row: list[str]) -> MoneyRecord:
    try:
        kind = MoneyKind(row[2])
    except ValueError:
        raise ValueError(f"unknown kind {row[2]!r}") from None
    amount = float(row[4])
    if amount != amount or amount in (float("inf"), float("-inf")):
        raise ValueError("amount must be finite")
    return MoneyRecord(row[0], parse_timestamp(row[1]), kind, row[3] or None, amount)


def _parse_subscriber(row: list[str]) -> Subscriber:
    try:
        return Subscriber(row[0], _GENDER_CODES[row[1]], _KIND_CODES[row[2]], _WEALTH_CODES[row[3]])
    except KeyError as exc:
        raise ValueError(f"unknown demographic code {exc.args[0]!r}") from None


def ingest_events(path, strict: bool = True) -> tuple[list[EventRecord], IngestReport]:
    """Read a CDR CSV. Rows come back in file order.

    In strict mode the first malformed row raises :class:`IngestError` carrying
    its line number; otherwise it is skipped and counted in the report.
    """
    return _ingest(path, CDR_HEADER, _parse_event, strict)


def ingest_money(path, strict: bool = True) -> tuple[list[MoneyRecord], IngestReport]:
    return _ingest(path, MMTR_HEADER, _parse_money, strict)


def ingest_roster(path, strict: bool = True) -> tuple[list[Subscriber], IngestReport]:
    roster, report = _ingest(path, ROSTER_HEADER, _parse_subscriber, strict)
    seen = set()
    for s in roster:
        if s.id in seen:
            raise IngestError(f"{path}: duplicate subscriber id {s.id!r}")
        seen.add(s.id)
    return roster, report


def _write(path, header, rows, utc_offset_minutes=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if utc_offset_minutes is not None:
            sign = "-" if utc_offset_minutes < 0 else "+"
            h, m = divmod(abs(utc_offset_minutes), 60)
            fh.write(f"# utc_offset={sign}{h:02d}:{m:02d}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_events(path, events: Iterable[EventRecord], utc_offset_minutes: int | None = None) -> None:
    _write(path, CDR_HEADER, (e.to_row() for e in events), utc_offset_minutes)


def write_money(path, money: Iterable[MoneyRecord]) -> None:
    _write(path, MMTR_HEADER, (m.to_row() for m in money))


def write_roster(path, roster: Iterable[Subscriber]) -> None:
    _write(path, ROSTER_HEADER, (s.to_row() for s in roster))
