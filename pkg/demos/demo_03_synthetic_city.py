"""
Recovering trips in a synthetic city
====================================

Generate commuters with known itineraries, run the estimator on their CDR
trace, and score what comes back against the ground truth.
"""

import numpy as np

from cdrjourneys import geo, synthcity
from cdrjourneys.filters import entropy_cuts, trace_entropies
from cdrjourneys.ingest import group_user_days
from cdrjourneys.journey import estimate_journeys

cfg = synthcity.SynthConfig(seed=1, users=300)
registry, events, truth = synthcity.generate(cfg)
print(len(registry), "antennas,", len(events), "events,", len(truth.trips()), "true trips")

traces = group_user_days(events)
h = trace_entropies(traces)
print("hourly entropy, nats: median %.2f, range %.2f-%.2f" % (np.median(h), h.min(), h.max()))

# these users are active all day, so keep the middle of the entropy distribution
kept = traces.select(entropy_cuts(h, "quantile").retained)

zone_q = geo.zone_threshold_array(registry, geo.zone_quantiles(registry, q=0.8))
print("mean d_min %.0f m" % zone_q.mean())

batch = estimate_journeys(kept, zone_q)
recovered = list(batch)
report = synthcity.score_recovery(truth, recovered, labels=registry.municipality_labels,
                                  universe={(j.user_id, j.day) for j in recovered})
print(report)
