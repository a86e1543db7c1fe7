"""Frozen, literal prompt fixture used by the golden snapshot tests.

A 28-day window ending 2014-07-24 with three event days (a basketball
game, a two-showing family day, and a pop concert that repeats on the
2014-07-25 target), planted deviations, and fractional baselines so the
half-up rounding path is exercised. Everything is deterministic literals;
no RNG.
"""

from datetime import date, time, timedelta

from mpe.decomposition import Flows, decompose
from mpe.events import EventRecord, FormattedEvent
from mpe.prompts import AblationConfig, DayContext, EventFeatures, HistoryWindow
from mpe.trips import DailyDemand

WINDOW_END = date(2014, 7, 24)
TARGET_DATE = date(2014, 7, 25)
T = 28

# Mon..Sun planted regular demand; Friday echoes the 331/207 magnitudes.
BASE_OUT = [300, 296, 298, 305, 331, 362, 340]
BASE_IN = [185, 183, 184, 190, 207, 228, 214]

_CONCERT = EventRecord(
    title="Aurora Vale Live in Concert",
    description="International pop star Aurora Vale brings her arena tour with special guests.",
    date=date(2014, 7, 24),
    start_time=time(19, 30),
    end_time=time(22, 30),
)
_CONCERT_FORMATTED = ("Pop Music Concert",
                      "Aurora Vale performs a major arena pop concert with special guests.")

_BASKETBALL = EventRecord(
    title="Hawks vs. Comets",
    description=None,
    date=date(2014, 7, 18),
    start_time=time(19, 30),
    end_time=time(22, 0),
)
_BASKETBALL_FORMATTED = ("Basketball Game",
                         "A regular season matchup between the Hawks and the Comets.")

_FAMILY_DESC = "A family show with life-size dinosaurs on stage."
_FAMILY_1 = EventRecord("Dino Quest Family Spectacular", _FAMILY_DESC,
                        date(2014, 7, 20), time(13, 0), time(16, 0))
_FAMILY_2 = EventRecord("Dino Quest Family Spectacular", _FAMILY_DESC,
                        date(2014, 7, 20), time(17, 0), time(20, 0))
_FAMILY_FORMATTED = ("Family Show",
                     "Dino Quest brings life-size dinosaurs to the arena for a family showing.")

NO_DESCRIPTION_EVENT = EventRecord(
    title="Brooklyn Nets vs. Dallas Mavericks",
    description=None,
    date=date(2015, 5, 1),
    start_time=time(19, 30),
    end_time=time(22, 30),
)
WITH_DESCRIPTION_EVENT = _CONCERT

# date -> (records, formatted pair, (effect_out, effect_in))
_EVENT_DAYS = {
    _BASKETBALL.date: ((_BASKETBALL,), _BASKETBALL_FORMATTED, (180, 110)),
    _FAMILY_1.date: ((_FAMILY_1, _FAMILY_2), _FAMILY_FORMATTED, (90, 60)),
    _CONCERT.date: ((_CONCERT,), _CONCERT_FORMATTED, (231, 146)),
}

TARGET_EVENT = EventRecord(
    title=_CONCERT.title,
    description=_CONCERT.description,
    date=TARGET_DATE,
    start_time=time(19, 30),
    end_time=time(22, 30),
)
TARGET_BASELINE = Flows(331.4, 207.25)  # renders as out 331 in 207


def _day_events(day: date, ablation: AblationConfig):
    if day not in _EVENT_DAYS:
        return ()
    records, formatted, _ = _EVENT_DAYS[day]
    if ablation.event_features is EventFeatures.C_T_H_PRIME:
        category, summary = formatted
        return tuple(FormattedEvent(category, summary, r) for r in records)
    return records


def build_snapshot_window(ablation: AblationConfig) -> HistoryWindow:
    days = []
    for i in range(T):
        day = WINDOW_END - timedelta(days=T - 1 - i)
        weekday = day.weekday()
        effect_out, effect_in = _EVENT_DAYS.get(day, ((), (), (0, 0)))[2]
        wiggle_out = 0 if day in _EVENT_DAYS else ((i * 7) % 11) - 5
        wiggle_in = 0 if day in _EVENT_DAYS else ((i * 5) % 9) - 4
        actual = DailyDemand(
            day,
            BASE_OUT[weekday] + wiggle_out + effect_out,
            BASE_IN[weekday] + wiggle_in + effect_in,
        )
        baseline = Flows(BASE_OUT[weekday] + 0.4, BASE_IN[weekday] + 0.25)
        days.append(DayContext(
            date=day,
            events=_day_events(day, ablation),
            decomposition=decompose(actual, baseline),
        ))
    return HistoryWindow(tuple(days))


def build_snapshot_target(ablation: AblationConfig) -> DayContext:
    if ablation.event_features is EventFeatures.C_T_H_PRIME:
        category, summary = _CONCERT_FORMATTED
        events = (FormattedEvent(category, summary, TARGET_EVENT),)
    else:
        events = (TARGET_EVENT,)
    return DayContext(date=TARGET_DATE, events=events, decomposition=None)
