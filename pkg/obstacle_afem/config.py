from __future__ import annotations

import os
from functools import lru_cache

from dotenv import load_dotenv


# Load variables from a local .env file if present
load_dotenv()


class Settings:
    """Solver and experiment settings resolved from environment variables.

    Defaults reproduce the reference experiments, so nothing has to be set
    to run them.
    """

    # Obstacle solver
    c_pdas: float = float(os.getenv("AFEM_C_PDAS", "1.0"))
    pdas_max_iter: int = int(os.getenv("AFEM_PDAS_MAX_ITER", "200"))
    tau_feas: float = float(os.getenv("AFEM_TAU_FEAS", "1e-9"))
    tau_comp: float = float(os.getenv("AFEM_TAU_COMP", "1e-9"))
    tau_sign: float = float(os.getenv("AFEM_TAU_SIGN", "1e-9"))

    # Linear algebra
    tau_lin: float = float(os.getenv("AFEM_TAU_LIN", "1e-12"))
    linear_solver: str = os.getenv("AFEM_LINEAR_SOLVER", "direct")  # direct | cg
    cg_max_iter: int = int(os.getenv("AFEM_CG_MAX_ITER", "20000"))

    # Estimator
    residual_sign_tol: float = float(os.getenv("AFEM_RESIDUAL_SIGN_TOL", "1e-12"))
    radicand_tol: float = float(os.getenv("AFEM_RADICAND_TOL", "1e-10"))

    # Adaptive loop
    marking_factor: float = float(os.getenv("AFEM_MARKING_FACTOR", "1.2"))
    max_elements: int = int(os.getenv("AFEM_MAX_ELEMENTS", "20000"))
    max_iterations: int = int(os.getenv("AFEM_MAX_ITERATIONS", "200"))

    # Runs
    output_dir: str = os.getenv("AFEM_OUTPUT_DIR", "results")
    workers: int = int(os.getenv("AFEM_WORKERS", "1"))
    log_level: str = os.getenv("AFEM_LOG_LEVEL", "INFO")

    # Misc
    app_name: str = os.getenv("APP_NAME", "obstacle-afem")
    schema_version: str = "1.0"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
