import os
import sys

# keep test numerics reproducible and fast on any machine: small-matrix
# workloads lose to BLAS thread sync, and determinism wants one thread
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

# other pytest plugins may import numpy before this file runs, in which case
# the env vars come too late; clamp the already-loaded pools if possible
try:
    import threadpoolctl

    _limits = threadpoolctl.threadpool_limits(1)
except Exception:
    pass

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

# acceptance tests register their PASS/FAIL lines here; the summary hook
# prints them outside pytest's capture so they show up in any run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
