import hashlib
import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ENGINE = ("linalg.py", "model.py", "cubature.py", "sde.py", "filters.py", "harness.py")


def _engine_digest(config_text: str) -> str:
    import svdckf

    src = Path(svdckf.__file__).parent
    h = hashlib.sha256(config_text.encode())
    h.update(np.__version__.encode())
    for name in _ENGINE:
        h.update((src / name).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def reference_sweep(request):
    """Full-scale sweep with the default scenario.

    It takes about an hour on one core, so the results are cached under
    pytest's cache directory, keyed by the scenario and by the source of
    every module that affects the numbers.  Set ``SVDCKF_FRESH_SWEEP=1`` to
    force recomputation.
    """
    from svdckf.harness import ScenarioConfig, emit_report, read_results_csv, run_benchmark

    config = ScenarioConfig()
    key = _engine_digest(config.to_ini())
    cache = Path(request.config.cache.mkdir("reference_sweep")) / key
    csv_path = cache / "results.csv"
    if csv_path.exists() and not os.environ.get("SVDCKF_FRESH_SWEEP"):
        return read_results_csv(csv_path)
    results = run_benchmark(config)
    emit_report(results, cache, config)
    return read_results_csv(csv_path)
