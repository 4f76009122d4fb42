import os

# Keep BLAS single-threaded: the solver's matrices are small and threaded
# BLAS only adds sync overhead (the solver also enforces this internally
# via threadpoolctl; the env var covers everything else).
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
