import os

# pin math-library threads before numpy loads anywhere; single-threaded BLAS
# keeps every numeric result reproducible
_threads = os.environ.get("KOOP_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)
