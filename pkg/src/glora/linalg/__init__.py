"""Dense linear-algebra kernels: reduced QR, thin SVD, symmetric eigendecomposition, rank."""
from glora.linalg._backend import backend_name, compiled_available, set_backend, use_backend
from glora.linalg.core import (
    DEFAULT_RANK_TOL,
    EigResult,
    QrResult,
    SvdResult,
    check_matrix,
    numerical_rank,
    reduced_qr,
    solve_upper,
    sym_eig,
    thin_svd,
)

__all__ = [
    "DEFAULT_RANK_TOL",
    "EigResult",
    "QrResult",
    "SvdResult",
    "backend_name",
    "check_matrix",
    "compiled_available",
    "numerical_rank",
    "reduced_qr",
    "set_backend",
    "solve_upper",
    "sym_eig",
    "thin_svd",
    "use_backend",
]
