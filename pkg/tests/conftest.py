import io
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log
from cdrjourneys import synthcity
from cdrjourneys.ingest import AntennaRecord, AntennaRegistry, load_registry

REGISTRY_CSV = """antenna_id,lat,lon,zone_id,municipality_id
a1,-33.4500,-70.6500,z1,mA
a2,-33.4500,-70.6400,z1,mA
a3,-33.4600,-70.6500,z2,mA
a4,-33.4000,-70.6000,z3,mB
a5,-33.4010,-70.6010,z3,mB
a6,-33.3000,-70.5000,z4,mC
"""


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture
def registry():
    return load_registry(io.BytesIO(REGISTRY_CSV.encode()))


@pytest.fixture
def equator_registry():
    """Antennas on the equator one degree of longitude apart."""
    return AntennaRegistry([
        AntennaRecord("e0", 0.0, 0.0, "z0", "m0"),
        AntennaRecord("e1", 0.0, 1.0, "z1", "m1"),
        AntennaRecord("e2", 0.0, 2.0, "z2", "m2"),
    ])


@pytest.fixture(scope="session")
def small_city():
    cfg = synthcity.SynthConfig(seed=7, users=60, municipalities=4, zones_per_municipality=4)
    return (cfg,) + synthcity.generate(cfg)


@pytest.fixture(scope="session")
def small_city_files(tmp_path_factory, small_city):
    cfg, reg, events, truth = small_city
    out = tmp_path_factory.mktemp("small_city")
    return synthcity.write_outputs(str(out), reg, events, truth)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default synthetic city pushed through ``run`` with its generated config."""
    from cdrjourneys.config import load_config
    from cdrjourneys.pipeline import run_pipeline

    root = tmp_path_factory.mktemp("default_city")
    reg, events, truth = synthcity.generate(synthcity.SynthConfig())
    paths = synthcity.write_outputs(str(root / "in"), reg, events, truth)
    out = str(root / "out")
    result = run_pipeline(load_config(paths["config"]), [paths["cdr"]], paths["antennas"], out)
    return paths, out, result, truth
