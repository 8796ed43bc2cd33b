"""
From segments to a daily journey
================================

Segments between turning points are labelled trip, non-trip or unknown,
then merged; a short stop between two trips counts as a connection.
"""

from datetime import date

from cdrjourneys.ingest import AntennaRecord, AntennaRegistry, date_to_day
from cdrjourneys.journey import Activity, extract_trips, merge_activities, place_of
from cdrjourneys.journey import classify_arrays, KIND_NAMES

# covered path, chord displacement and duration for five segments
covered = [0, 6000, 400, 5200, 150_000]
displacement = [0, 5500, 300, 5000, 20_000]
duration = [90, 30, 10, 25, 120]
kinds = [KIND_NAMES[k] for k in classify_arrays(covered, displacement, duration, d_min=732)]
print(kinds)

registry = AntennaRegistry([
    AntennaRecord("a", -33.45, -70.65, "z1", "Centro"),
    AntennaRecord("b", -33.40, -70.60, "z2", "Norte"),
    AntennaRecord("c", -33.36, -70.55, "z3", "Oriente"),
])
t0 = date_to_day(date(2015, 6, 1)) * 86400 + 7 * 3600
legs = [("non_trip", 60, "a", "a"), ("trip", 30, "a", "b"), ("non_trip", 10, "b", "b"),
        ("trip", 25, "b", "c"), ("non_trip", 300, "c", "c")]
items, t = [], t0
for kind, minutes, o, d in legs:
    items.append(Activity(kind, t, t + minutes * 60, place_of(registry, o), place_of(registry, d)))
    t += minutes * 60

# the 10-minute stop at b is absorbed: one trip a -> c
journey = merge_activities(items, "u1")
for a in journey.activities:
    print(a.kind, a.p_origin.antenna_id, "->", a.p_destination.antenna_id, f"{a.duration:.0f} min")
print(extract_trips(journey))
