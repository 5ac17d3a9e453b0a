import os
import sys

# pin BLAS to one thread before numpy loads so --deterministic runs repeat bit for bit
if "--deterministic" in sys.argv:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = "1"

from gaa.cli import main  # noqa: E402

sys.exit(main())
