"""
Origin-destination matrices and rank agreement
==============================================

Trips become municipality-by-municipality counts; two matrices are compared
by Spearman rank correlation on raw counts.
"""

import numpy as np

from cdrjourneys import odflow, synthcity
from cdrjourneys.filters import entropy_cuts, trace_entropies
from cdrjourneys.geo import zone_quantiles, zone_threshold_array
from cdrjourneys.ingest import group_user_days
from cdrjourneys.journey import estimate_journeys

registry, events, truth = synthcity.generate(synthcity.SynthConfig(seed=2, users=500))
labels = registry.municipality_labels
traces = group_user_days(events)
kept = traces.select(entropy_cuts(trace_entropies(traces), "quantile").retained)
trips = estimate_journeys(kept, zone_threshold_array(registry, zone_quantiles(registry))).trips()

estimated = odflow.build_od_codes(trips.mun_o, trips.mun_d, labels)
reference = odflow.build_od(truth.trips(), labels)
print("estimated trips", estimated.total, "reference trips", reference.total)

# the reference covers every user, the estimate only the retained ones; ranks do not care
print("with diagonal   ", odflow.spearman(estimated, reference))
print("without diagonal", odflow.spearman(estimated, reference, include_diagonal=False))

# row-normalised view, as used for side-by-side heat maps
norm = odflow.l2_normalize_rows(estimated)
print(np.round(norm.counts[:4, :4], 3))

stats = odflow.trip_stats(trips.t_start, trips.duration, trips.displacement)
print("mean duration %.1f min, mean distance %.2f km" % (stats.mean_duration_min, stats.mean_distance_km))
