"""
A day as a space-time timetable
===============================

One user's events become points (minutes since midnight, metres travelled),
and the polyline simplifier keeps only the corners where motion changes.
"""

from datetime import date

from cdrjourneys.ingest import AntennaRecord, AntennaRegistry, UserDayTrace, date_to_day
from cdrjourneys.timetable import build_timetable, explain_rdp, simplify_rdp

# three antennas on a north-south line, roughly 4.4 km apart
registry = AntennaRegistry([
    AntennaRecord("home", -33.45, -70.65, "z1", "Centro"),
    AntennaRecord("mid", -33.41, -70.65, "z2", "Norte"),
    AntennaRecord("work", -33.37, -70.65, "z3", "Norte"),
])

day0 = date_to_day(date(2015, 6, 1)) * 86400
hm = lambda h, m: day0 + h * 3600 + m * 60  # noqa: E731
trace = UserDayTrace("u1", date(2015, 6, 1), (
    (hm(7, 0), "home"), (hm(7, 40), "home"), (hm(8, 0), "mid"), (hm(8, 20), "work"),
    (hm(12, 0), "work"), (hm(17, 30), "work"), (hm(18, 0), "mid"), (hm(18, 25), "home"),
))

tt = build_timetable(trace, registry)
for p in tt.points:
    print(f"{p.t:7.1f} min  {p.d:8.1f} m  {p.antenna_id}")

# 500 m tolerance, 100 m of distance per minute of time
kept = simplify_rdp(tt, epsilon=500, time_scale=100)
print("turning points:", [(p.antenna_id, p.t) for p in kept.points])

# why each point stayed or went
for step in explain_rdp(tt, 500, 100):
    print(step.index, "kept" if step.retained else "dropped", step.chord, round(step.deviation, 1))
