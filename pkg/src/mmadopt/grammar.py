"""Feature-descriptor automaton: the space of filter -> group -> focus -> aggregate paths.

Every accepted path through the automaton is one numeric per-subscriber
feature. Enum declaration order fixes the enumeration order, so
``enumerate_descriptors()`` is stable across runs and platforms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache


class ChannelFilter(Enum):
    CALL = "call"
    SMS = "sms"
    ANY = "any"


class Direction(Enum):
    OUTGOING = "out"
    INCOMING = "in"
    ANY = "any"


class DayFilter(Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    ANY = "anyday"


class GroupKey(Enum):
    NONE = "nogroup"
    DAY_OF_WEEK = "by_dow"
    CALENDAR_DAY = "by_day"
    CALENDAR_WEEK = "by_week"
    CONTACT = "by_contact"
    CONTACT_LOCATION = "by_contact_loc"


class Focus(Enum):
    EVENT_COUNT = "events"
    DURATION = "duration"
    UNIQUE_CONTACTS = "uniq_contacts"
    UNIQUE_LOCATIONS = "uniq_locations"
    ACTIVE_DAYS = "active_days"
    DEGREE_PERCENTILE = "degree_pct"


class InnerAgg(Enum):
    SUM = "sum"
    MEAN = "mean"
    DISTINCT_COUNT = "distinct"
    COUNT = "count"


class OuterAgg(Enum):
    IDENTITY = "identity"
    MEAN = "mean"
    VARIANCE = "variance"
    MIN = "min"
    MAX = "max"
    SUM = "sum"


class Normalizer(Enum):
    NONE = ""
    PER_ACTIVE_DAY = "per_active_day"
    PER_UNIQUE_LOCATION = "per_location"
    PER_LOCATION_PER_DAY = "per_location_per_day"


class FeatureCategory(Enum):
    USAGE = "Usage"
    MOBILITY = "Mobility"
    NETWORK = "Network"


@dataclass(frozen=True, order=False)
class FeatureDescriptor:
    channel: ChannelFilter
    direction: Direction
    day_filter: DayFilter
    group_key: GroupKey
    focus: Focus
    inner_agg: InnerAgg
    outer_agg: OuterAgg
    normalizer: Normalizer = Normalizer.NONE

    @property
    def slice(self) -> tuple[ChannelFilter, Direction, DayFilter]:
        return (self.channel, self.direction, self.day_filter)

    @property
    def name(self) -> str:
        return canonical_name(self)

    @property
    def category(self) -> FeatureCategory:
        return category_of(self)


_ALLOWED_INNER = {
    Focus.EVENT_COUNT: {InnerAgg.COUNT},
    Focus.ACTIVE_DAYS: {InnerAgg.COUNT},
    Focus.UNIQUE_CONTACTS: {InnerAgg.DISTINCT_COUNT},
    Focus.UNIQUE_LOCATIONS: {InnerAgg.DISTINCT_COUNT},
    Focus.DURATION: {InnerAgg.SUM, InnerAgg.MEAN},
    Focus.DEGREE_PERCENTILE: {InnerAgg.COUNT},
}


_LOCATION_NORMALIZERS = (Normalizer.PER_UNIQUE_LOCATION, Normalizer.PER_LOCATION_PER_DAY)


def is_valid(d: FeatureDescriptor) -> bool:
    if d.focus is Focus.DURATION and d.channel is not ChannelFilter.CALL:
        return False
    if (d.group_key is GroupKey.NONE) != (d.outer_agg is OuterAgg.IDENTITY):
        return False
    if d.inner_agg not in _ALLOWED_INNER[d.focus]:
        return False
    if d.focus is Focus.DEGREE_PERCENTILE and (
        d.group_key is not GroupKey.NONE or d.normalizer is not Normalizer.NONE
    ):
        return False
    if d.focus is Focus.ACTIVE_DAYS and d.group_key not in (GroupKey.NONE, GroupKey.CALENDAR_WEEK):
        return False
    # normalizers rescale whole-window totals ("per location per day"); grouped
    # features already carry their own denominator through the outer aggregate
    if d.normalizer is not Normalizer.NONE and d.group_key is not GroupKey.NONE:
        return False
    # a location denominator over a usage quantity would mix two categories in
    # one column; only network size is measured per location
    if d.normalizer in _LOCATION_NORMALIZERS and d.focus is not Focus.UNIQUE_CONTACTS:
        return False
    return True


@lru_cache(maxsize=None)
def _enumerate() -> tuple[FeatureDescriptor, ...]:
    out = []
    for combo in itertools.product(
        ChannelFilter, Direction, DayFilter, GroupKey, Focus, InnerAgg, OuterAgg, Normalizer
    ):
        d = FeatureDescriptor(*combo)
        if is_valid(d):
            out.append(d)
    return tuple(out)


def enumerate_descriptors() -> list[FeatureDescriptor]:
    """All valid descriptors, in lexicographic order of enum positions, field by field."""
    return list(_enumerate())


def canonical_name(d: FeatureDescriptor) -> str:
    parts = [
        d.channel.value,
        d.direction.value,
        d.day_filter.value,
        d.group_key.value,
        d.focus.value,
        d.inner_agg.value,
        d.outer_agg.value,
    ]
    if d.normalizer is not Normalizer.NONE:
        parts.append(d.normalizer.value)
    return ".".join(parts)


_BY_NAME: dict[str, FeatureDescriptor] | None = None


def descriptor_by_name(name: str) -> FeatureDescriptor:
    global _BY_NAME
    if _BY_NAME is None:
        _BY_NAME = {canonical_name(d): d for d in _enumerate()}
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"no descriptor named {name!r}") from None


def category_of(d: FeatureDescriptor) -> FeatureCategory:
    # call duration is a usage quantity whatever it is grouped by
    if d.focus is Focus.DURATION:
        return FeatureCategory.USAGE
    if d.focus is Focus.UNIQUE_LOCATIONS or d.group_key is GroupKey.CONTACT_LOCATION:
        return FeatureCategory.MOBILITY
    if d.focus in (Focus.UNIQUE_CONTACTS, Focus.DEGREE_PERCENTILE) or d.group_key is GroupKey.CONTACT:
        return FeatureCategory.NETWORK
    return FeatureCategory.USAGE
