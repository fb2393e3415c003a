"""Feature evaluation over CDR logs.

Two routes exist. :func:`compute_feature` evaluates one descriptor for one
subscriber with plain Python; :func:`build_matrix` evaluates the whole
descriptor set for a roster in one vectorized pass per subscriber. The two
must agree to 1e-9 on every cell.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import Axis, Channel, EventRecord, Subscriber, UserClass, stratum_of
from .grammar import (
    ChannelFilter,
    DayFilter,
    Direction,
    FeatureDescriptor,
    Focus,
    GroupKey,
    InnerAgg,
    Normalizer,
    OuterAgg,
    category_of,
    canonical_name,
    enumerate_descriptors,
)

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
# 1970-01-01 was a Thursday; Monday = 0
_EPOCH_DOW = 3
EMPTY_PERCENTILE = 0.5
STRATUM_AXES = (Axis.GENDER, Axis.DISTRICT_KIND, Axis.DISTRICT_WEALTH)
STRATUM_COLUMNS = ("stratum_gender", "stratum_district", "stratum_wealth")


@dataclass(frozen=True)
class DayConvention:
    """Local-day bucketing: fixed UTC offset plus the set of weekend weekdays (Mon=0)."""

    weekend_days: tuple[int, ...] = (5, 6)
    utc_offset_minutes: int = 0

    def day_index(self, epoch_s: int) -> int:
        return (epoch_s + self.utc_offset_minutes * 60) // SECONDS_PER_DAY

    def is_weekend(self, day_index: int) -> bool:
        return (day_index + _EPOCH_DOW) % 7 in self.weekend_days


DEFAULT_DAYS = DayConvention()


def contact_location(event: EventRecord, subscriber_id: str) -> str:
    """Location of the other party: recipient's cell for outgoing, caller's for incoming."""
    return event.recipient_location if event.caller_id == subscriber_id else event.caller_location


def _event_sort_key(e: EventRecord):
    return (e.epoch_s, e.caller_id, e.recipient_id, e.channel.value, e.duration_s,
            e.caller_location, e.recipient_location)


def _slice_match(e: EventRecord, subscriber_id: str, channel: ChannelFilter, direction: Direction,
                 day_filter: DayFilter, days: DayConvention) -> bool:
    if channel is ChannelFilter.CALL and e.channel is not Channel.CALL:
        return False
    if channel is ChannelFilter.SMS and e.channel is not Channel.SMS:
        return False
    outgoing = e.caller_id == subscriber_id
    if direction is Direction.OUTGOING and not outgoing:
        return False
    if direction is Direction.INCOMING and outgoing:
        return False
    if day_filter is not DayFilter.ANY:
        weekend = days.is_weekend(days.day_index(e.epoch_s))
        if weekend != (day_filter is DayFilter.WEEKEND):
            return False
    return True


def _group_of(e: EventRecord, subscriber_id: str, key: GroupKey, days: DayConvention):
    if key is GroupKey.NONE:
        return 0
    day = days.day_index(e.epoch_s)
    if key is GroupKey.DAY_OF_WEEK:
        return (day + _EPOCH_DOW) % 7
    if key is GroupKey.CALENDAR_DAY:
        return day
    if key is GroupKey.CALENDAR_WEEK:
        return (day + _EPOCH_DOW) // 7
    if key is GroupKey.CONTACT:
        return e.recipient_id if e.caller_id == subscriber_id else e.caller_id
    return contact_location(e, subscriber_id)


def _inner(d: FeatureDescriptor, group: list[EventRecord], subscriber_id: str, days: DayConvention) -> float:
    if d.focus is Focus.EVENT_COUNT:
        return float(len(group))
    if d.focus is Focus.DURATION:
        total = float(sum(e.duration_s for e in group))
        return total / len(group) if d.inner_agg is InnerAgg.MEAN else total
    if d.focus is Focus.UNIQUE_CONTACTS:
        return float(len({_group_of(e, subscriber_id, GroupKey.CONTACT, days) for e in group}))
    if d.focus is Focus.UNIQUE_LOCATIONS:
        return float(len({contact_location(e, subscriber_id) for e in group}))
    if d.focus is Focus.ACTIVE_DAYS:
        return float(len({days.day_index(e.epoch_s) for e in group}))
    raise ValueError(f"focus {d.focus} is not evaluated per subscriber")


def _outer(agg: OuterAgg, values: list[float]) -> float:
    if agg is OuterAgg.IDENTITY:
        return values[0]
    if agg is OuterAgg.SUM:
        return sum(values)
    if agg is OuterAgg.MIN:
        return min(values)
    if agg is OuterAgg.MAX:
        return max(values)
    mean = sum(values) / len(values)
    if agg is OuterAgg.MEAN:
        return mean
    return sum((v - mean) ** 2 for v in values) / len(values)


def compute_feature(d: FeatureDescriptor, events: Iterable[EventRecord], subscriber_id: str,
                    days: DayConvention = DEFAULT_DAYS) -> float:
    """Evaluate one descriptor for one subscriber.

    :param events: events in which ``subscriber_id`` is caller or recipient.
    :return: the feature value; 0.0 when nothing survives the filters.
    """
    if d.focus is Focus.DEGREE_PERCENTILE:
        raise ValueError("degree-percentile features need the contact graph; use degree_percentile()")
    sel = [e for e in sorted(events, key=_event_sort_key)
           if _slice_match(e, subscriber_id, d.channel, d.direction, d.day_filter, days)]
    if not sel:
        return 0.0
    groups: dict = defaultdict(list)
    for e in sel:
        groups[_group_of(e, subscriber_id, d.group_key, days)].append(e)
    per_group = [_inner(d, groups[k], subscriber_id, days) for k in sorted(groups)]
    value = _outer(d.outer_agg, per_group)
    if d.normalizer is Normalizer.NONE:
        return value
    n_days = len({days.day_index(e.epoch_s) for e in sel})
    n_locs = len({contact_location(e, subscriber_id) for e in sel})
    denom = {
        Normalizer.PER_ACTIVE_DAY: n_days,
        Normalizer.PER_UNIQUE_LOCATION: n_locs,
        Normalizer.PER_LOCATION_PER_DAY: n_days * n_locs,
    }[d.normalizer]
    return value / denom if denom else 0.0


# ---------------------------------------------------------------- contact graph

SliceKey = tuple  # (ChannelFilter, Direction, DayFilter)


class ContactGraph:
    """Directed contact sets per (channel, day) slice, queried per direction.

    ``contacts(x, (c, OUTGOING, f))`` are the parties ``x`` reached; the
    INCOMING slice holds the parties that reached ``x``; ANY is their union.
    """

    def __init__(self):
        self._out: dict[tuple, dict[str, set]] = defaultdict(lambda: defaultdict(set))
        self._in: dict[tuple, dict[str, set]] = defaultdict(lambda: defaultdict(set))
        self._degree_cache: dict[SliceKey, dict[str, int]] = {}

    @classmethod
    def from_events(cls, events: Iterable[EventRecord], days: DayConvention = DEFAULT_DAYS) -> "ContactGraph":
        g = cls()
        for e in events:
            ch = ChannelFilter.CALL if e.channel is Channel.CALL else ChannelFilter.SMS
            df = DayFilter.WEEKEND if days.is_weekend(days.day_index(e.epoch_s)) else DayFilter.WEEKDAY
            for c in (ch, ChannelFilter.ANY):
                for f in (df, DayFilter.ANY):
                    g._out[(c, f)][e.caller_id].add(e.recipient_id)
                    g._in[(c, f)][e.recipient_id].add(e.caller_id)
        return g

    def contacts(self, x: str, slice_key: SliceKey) -> set:
        channel, direction, day_filter = slice_key
        out = self._out.get((channel, day_filter), {}).get(x, set())
        inc = self._in.get((channel, day_filter), {}).get(x, set())
        if direction is Direction.OUTGOING:
            return set(out)
        if direction is Direction.INCOMING:
            return set(inc)
        return out | inc

    def degrees(self, slice_key: SliceKey) -> dict[str, int]:
        if slice_key not in self._degree_cache:
            channel, direction, day_filter = slice_key
            out = self._out.get((channel, day_filter), {})
            inc = self._in.get((channel, day_filter), {})
            if direction is Direction.OUTGOING:
                deg = {k: len(v) for k, v in out.items()}
            elif direction is Direction.INCOMING:
                deg = {k: len(v) for k, v in inc.items()}
            else:
                deg = {k: len(out.get(k, set()) | inc.get(k, set())) for k in set(out) | set(inc)}
            self._degree_cache[slice_key] = deg
        return self._degree_cache[slice_key]


def degree_percentile(subscriber: str, slice_key: SliceKey, graph: ContactGraph) -> float:
    """Fraction of the subscriber's contacts whose degree is <= the subscriber's own."""
    contacts = graph.contacts(subscriber, slice_key)
    if not contacts:
        return EMPTY_PERCENTILE
    deg = graph.degrees(slice_key)
    own = deg.get(subscriber, 0)
    return sum(1 for j in contacts if deg.get(j, 0) <= own) / len(contacts)


# ---------------------------------------------------------------- matrix


@dataclass
class FeatureMatrix:
    subscriber_ids: list[str]
    descriptor_names: list[str]
    values: np.ndarray
    classes: list[UserClass] | None = None
    strata: dict[Axis, list[str | None]] | None = None
    unknown_party_events: int = 0

    def __post_init__(self):
        if self.values.shape != (len(self.subscriber_ids), len(self.descriptor_names)):
            raise ValueError("values shape does not match ids x names")

    @property
    def categories(self) -> list[str]:
        from .grammar import descriptor_by_name
        return [category_of(descriptor_by_name(n)).value for n in self.descriptor_names]

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(
            [self.subscriber_ids[i] for i in idx],
            list(self.descriptor_names),
            self.values[idx],
            None if self.classes is None else [self.classes[i] for i in idx],
            None if self.strata is None else {a: [v[i] for i in idx] for a, v in self.strata.items()},
        )


_SLICES = [(c, d, f) for c in ChannelFilter for d in Direction for f in DayFilter]
_SLICE_INDEX = {s: i for i, s in enumerate(_SLICES)}
_NORM_INDEX = {n: i for i, n in enumerate(Normalizer)}
_GROUP_ORDER = list(GroupKey)
# inner quantities computed per group, in a fixed row order
_INNER_ROWS = [
    (Focus.EVENT_COUNT, InnerAgg.COUNT),
    (Focus.DURATION, InnerAgg.SUM),
    (Focus.DURATION, InnerAgg.MEAN),
    (Focus.UNIQUE_CONTACTS, InnerAgg.DISTINCT_COUNT),
    (Focus.UNIQUE_LOCATIONS, InnerAgg.DISTINCT_COUNT),
    (Focus.ACTIVE_DAYS, InnerAgg.COUNT),
]
_OUTER_COLS = [OuterAgg.IDENTITY, OuterAgg.MEAN, OuterAgg.VARIANCE, OuterAgg.MIN, OuterAgg.MAX, OuterAgg.SUM]
_N_BASE = len(_GROUP_ORDER) * len(_INNER_ROWS) * len(_OUTER_COLS)
_DP_SLOT = _N_BASE


def _base_slot(d: FeatureDescriptor) -> int:
    if d.focus is Focus.DEGREE_PERCENTILE:
        return _DP_SLOT
    g = _GROUP_ORDER.index(d.group_key)
    r = _INNER_ROWS.index((d.focus, d.inner_agg))
    o = _OUTER_COLS.index(d.outer_agg)
    return (g * len(_INNER_ROWS) + r) * len(_OUTER_COLS) + o


@dataclass
class _Encoded:
    """Incidence arrays: one row per (subject, event) with subject as caller or recipient."""

    subject: np.ndarray
    is_call: np.ndarray
    is_out: np.ndarray
    is_weekend: np.ndarray
    day: np.ndarray
    dow: np.ndarray
    week: np.ndarray
    contact: np.ndarray
    loc: np.ndarray
    dur: np.ndarray
    id_codes: dict[str, int] = field(default_factory=dict)
    n_loc_codes: int = 1


def _encode(events: Sequence[EventRecord], days: DayConvention) -> _Encoded:
    n = len(events)
    callers = np.array([e.caller_id for e in events], dtype=object)
    recips = np.array([e.recipient_id for e in events], dtype=object)
    ids = sorted(set(callers.tolist()) | set(recips.tolist()))
    id_codes = {s: i for i, s in enumerate(ids)}
    locs = sorted({e.caller_location for e in events} | {e.recipient_location for e in events})
    loc_codes = {s: i for i, s in enumerate(locs)}
    caller = np.fromiter((id_codes[e.caller_id] for e in events), np.int64, n)
    recip = np.fromiter((id_codes[e.recipient_id] for e in events), np.int64, n)
    cloc = np.fromiter((loc_codes[e.caller_location] for e in events), np.int64, n)
    rloc = np.fromiter((loc_codes[e.recipient_location] for e in events), np.int64, n)
    epoch = np.fromiter((e.epoch_s for e in events), np.int64, n)
    is_call = np.fromiter((e.channel is Channel.CALL for e in events), bool, n)
    dur = np.fromiter((e.duration_s for e in events), np.int64, n)

    # total order independent of input order: identical rows are interchangeable
    order = np.lexsort((rloc, cloc, dur, ~is_call, recip, caller, epoch))
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)

    subject = np.concatenate([caller, recip])
    inc_rank = np.concatenate([rank, rank])
    perm = np.lexsort((inc_rank, subject))

    def both(a, b=None):
        return np.concatenate([a, a if b is None else b])[perm]

    day = (both(epoch) + days.utc_offset_minutes * 60) // SECONDS_PER_DAY
    dow = (day + _EPOCH_DOW) % 7
    return _Encoded(
        subject=subject[perm],
        is_call=both(is_call),
        is_out=np.concatenate([np.ones(n, bool), np.zeros(n, bool)])[perm],
        is_weekend=np.isin(dow, np.array(days.weekend_days, dtype=np.int64)),
        day=day,
        dow=dow,
        week=(day + _EPOCH_DOW) // 7,
        contact=both(recip, caller),
        loc=both(rloc, cloc),
        dur=both(dur).astype(np.float64),
        id_codes=id_codes,
        n_loc_codes=max(len(locs), 1),
    )


def _distinct_per_group(inv: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    if len(inv) == 0:
        return np.zeros(n_groups)
    span = int(codes.max()) + 1
    pairs = np.unique(inv * span + codes)
    return np.bincount(pairs // span, minlength=n_groups).astype(np.float64)


def _slice_block(day, dow, week, contact, loc, dur) -> np.ndarray:
    """Base values (group x inner x outer) for one non-empty slice selection."""
    out = np.zeros((len(_GROUP_ORDER), len(_INNER_ROWS), len(_OUTER_COLS)))
    group_ids = {
        GroupKey.DAY_OF_WEEK: dow,
        GroupKey.CALENDAR_DAY: day,
        GroupKey.CALENDAR_WEEK: week,
        GroupKey.CONTACT: contact,
        GroupKey.CONTACT_LOCATION: loc,
    }
    for gi, key in enumerate(_GROUP_ORDER):
        if key is GroupKey.NONE:
            inv = np.zeros(len(day), np.int64)
            n_groups = 1
        else:
            _, inv = np.unique(group_ids[key], return_inverse=True)
            inv = inv.reshape(-1)
            n_groups = int(inv.max()) + 1
        counts = np.bincount(inv, minlength=n_groups).astype(np.float64)
        sums = np.bincount(inv, weights=dur, minlength=n_groups)
        inner = np.vstack([
            counts,
            sums,
            sums / counts,
            _distinct_per_group(inv, contact, n_groups),
            _distinct_per_group(inv, loc, n_groups),
            _distinct_per_group(inv, day, n_groups),
        ])
        mean = inner.mean(axis=1)
        out[gi, :, 0] = inner[:, 0]
        out[gi, :, 1] = mean
        out[gi, :, 2] = ((inner - mean[:, None]) ** 2).mean(axis=1)
        out[gi, :, 3] = inner.min(axis=1)
        out[gi, :, 4] = inner.max(axis=1)
        out[gi, :, 5] = inner.sum(axis=1)
    return out.reshape(-1)


def _subscriber_row(enc: _Encoded, lo: int, hi: int, dp_values: np.ndarray,
                    col_slice: np.ndarray, col_slot: np.ndarray, col_norm: np.ndarray) -> np.ndarray:
    base = np.zeros((len(_SLICES), _N_BASE + 1))
    denom = np.zeros((len(_SLICES), len(_NORM_INDEX)))
    denom[:, _NORM_INDEX[Normalizer.NONE]] = 1.0
    sl = slice(lo, hi)
    is_call, is_out, is_weekend = enc.is_call[sl], enc.is_out[sl], enc.is_weekend[sl]
    chan_masks = {ChannelFilter.CALL: is_call, ChannelFilter.SMS: ~is_call, ChannelFilter.ANY: None}
    dir_masks = {Direction.OUTGOING: is_out, Direction.INCOMING: ~is_out, Direction.ANY: None}
    day_masks = {DayFilter.WEEKDAY: ~is_weekend, DayFilter.WEEKEND: is_weekend, DayFilter.ANY: None}
    day, dow, week = enc.day[sl], enc.dow[sl], enc.week[sl]
    contact, loc, dur = enc.contact[sl], enc.loc[sl], enc.dur[sl]
    for si, (c, d, f) in enumerate(_SLICES):
        mask = np.ones(hi - lo, bool)
        for m in (chan_masks[c], dir_masks[d], day_masks[f]):
            if m is not None:
                mask &= m
        base[si, _DP_SLOT] = dp_values[si]
        if not mask.any():
            continue
        base[si, :_N_BASE] = _slice_block(day[mask], dow[mask], week[mask], contact[mask], loc[mask], dur[mask])
        n_days = len(np.unique(day[mask]))
        n_locs = len(np.unique(loc[mask]))
        denom[si] = [1.0, n_days, n_locs, n_days * n_locs]
    vals = base[col_slice, col_slot]
    dens = denom[col_slice, col_norm]
    return np.divide(vals, dens, out=np.zeros_like(vals), where=dens != 0)


def build_matrix(events: Sequence[EventRecord], roster: Sequence[Subscriber],
                 descriptors: Sequence[FeatureDescriptor] | None = None,
                 days: DayConvention = DEFAULT_DAYS,
                 classes: dict[str, UserClass] | None = None,
                 threads: int = 1) -> FeatureMatrix:
    """Evaluate ``descriptors`` (default: all) for every roster subscriber.

    Subscribers with no events get 0.0 everywhere and 0.5 in degree-percentile
    columns. Output does not depend on event order or ``threads``.
    """
    if not roster:
        raise ValueError("roster is empty")
    if descriptors is None:
        descriptors = enumerate_descriptors()
    roster_ids = [s.id for s in roster]
    roster_set = set(roster_ids)
    unknown = sum(1 for e in events if e.caller_id not in roster_set or e.recipient_id not in roster_set)
    if unknown:
        log.warning("%d events reference subscribers absent from the roster", unknown)

    enc = _encode(events, days)
    graph = ContactGraph.from_events(events, days)

    col_slice = np.array([_SLICE_INDEX[d.slice] for d in descriptors], dtype=np.int64)
    col_slot = np.array([_base_slot(d) for d in descriptors], dtype=np.int64)
    col_norm = np.array([_NORM_INDEX[d.normalizer] for d in descriptors], dtype=np.int64)
    dp_slices = sorted({_SLICE_INDEX[d.slice] for d in descriptors if d.focus is Focus.DEGREE_PERCENTILE})

    starts = np.searchsorted(enc.subject, np.arange(len(enc.id_codes) + 1))

    def row(sid: str) -> np.ndarray:
        dp = np.full(len(_SLICES), EMPTY_PERCENTILE)
        for si in dp_slices:
            dp[si] = degree_percentile(sid, _SLICES[si], graph)
        code = enc.id_codes.get(sid)
        lo, hi = (0, 0) if code is None else (int(starts[code]), int(starts[code + 1]))
        return _subscriber_row(enc, lo, hi, dp, col_slice, col_slot, col_norm)

    # warm the degree caches before fanning out
    for si in dp_slices:
        graph.degrees(_SLICES[si])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, roster_ids))
    else:
        rows = [row(sid) for sid in roster_ids]
    values = np.vstack(rows) if rows else np.zeros((0, len(descriptors)))
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite feature value produced")

    strata = {axis: [stratum_of(s, axis) for s in roster] for axis in STRATUM_AXES}
    return FeatureMatrix(
        roster_ids,
        [canonical_name(d) for d in descriptors],
        values,
        None if classes is None else [classes.get(sid, UserClass.VOICE_ONLY) for sid in roster_ids],
        strata,
        unknown,
    )


# ---------------------------------------------------------------- features.csv


def write_features_csv(path, m: FeatureMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subscriber_id", *m.descriptor_names, "label", *STRATUM_COLUMNS])
        for i, sid in enumerate(m.subscriber_ids):
            label = "" if m.classes is None else m.classes[i].value
            strata = ["" if m.strata is None else (m.strata[a][i] or "") for a in STRATUM_AXES]
            w.writerow([sid, *map(repr, m.values[i].tolist()), label, *strata])


def read_features_csv(path) -> FeatureMatrix:
    df = pd.read_csv(path, dtype={"subscriber_id": str, "label": str, **{c: str for c in STRATUM_COLUMNS}},
                     keep_default_na=False, float_precision="round_trip")
    names = [c for c in df.columns if c not in ("subscriber_id", "label", *STRATUM_COLUMNS)]
    labels = df["label"].tolist()
    classes = None if all(v == "" for v in labels) else [UserClass(v) for v in labels]
    strata = {a: [v or None for v in df[c].tolist()] for a, c in zip(STRATUM_AXES, STRATUM_COLUMNS)}
    return FeatureMatrix(
        df["subscriber_id"].tolist(),
        names,
        df[names].to_numpy(dtype=np.float64),
        classes,
        strata,
    )
