"""Desk-scale end-to-end DPD learning: stimuli, PA models, BPTT training and metrics."""
import os as _os

if _os.environ.get("DPD_FORGE_DETERMINISTIC") == "1":
    # must run before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ[_var] = "1"

__version__ = "0.1.0"
