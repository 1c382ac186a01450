import os
import time
from pathlib import Path

import numpy as np
import pytest

from selfonn_ecg import cli

DATA_ENV = "SELFONN_ECG_DATA"


def mitbih_dir():
    d = os.environ.get(DATA_ENV)
    if d and (Path(d) / "100.hea").exists():
        return Path(d)
    return None


requires_mitbih = pytest.mark.skipif(mitbih_dir() is None,
                                     reason=f"MIT-BIH records not available (set {DATA_ENV})")


def rel_err(a, b, floor=1e-300):
    """Max abs difference over the larger magnitude (at least ``floor``)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# wall-clock seconds of each synth -> train -> evaluate run, keyed by run dir
RUN_SECONDS = {}


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def synthetic_runs(tmp_path_factory):
    """Two identical seeded synth -> train -> evaluate runs (shared by CLI and acceptance tests)."""
    root = tmp_path_factory.mktemp("synthetic_runs")
    runs = []
    for tag in ("a", "b"):
        run = root / tag
        t0 = time.perf_counter()
        assert run_cli("train", "--synthetic", "--seed", 7, "--out", run) == 0
        assert run_cli("evaluate", "--checkpoint", run / "model.json",
                       "--dataset", run / "dataset", "--out", run / "eval") == 0
        RUN_SECONDS[str(run)] = time.perf_counter() - t0
        runs.append(run)
    return runs
