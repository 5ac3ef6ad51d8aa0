"""
Low-rank factor state ``Y = U @ S @ V.T`` and the two ways of producing it:
a full PureSVD fit and a single projector-splitting (KSL) update that only
looks at the newly arrived interactions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from psirec.exceptions import NumericalError, ShapeError
from psirec.linalg import TOL, as_csr, qr_thin, spmm, spmm_transposed, svd_thin, truncated_svd


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FactorModel:
    """
    Factored rank-``r`` approximation of an ``M x N`` interaction matrix.

    ``U`` (M, r) and ``V`` (N, r) have orthonormal columns, ``S`` is an
    ``r x r`` core. PureSVD fits produce a diagonal ``S``; after a PSI step it
    is lower triangular. Arrays are read-only copies.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "U", _frozen(self.U))
        object.__setattr__(self, "S", _frozen(self.S))
        object.__setattr__(self, "V", _frozen(self.V))
        r = self.U.shape[1]
        if self.U.ndim != 2 or self.V.ndim != 2 or self.V.shape[1] != r or self.S.shape != (r, r):
            raise ShapeError(
                f"inconsistent factor shapes U{self.U.shape} S{self.S.shape} V{self.V.shape}"
            )

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def orthonormality_error(self) -> float:
        eye = np.eye(self.rank)
        return max(
            float(np.abs(self.U.T @ self.U - eye).max()),
            float(np.abs(self.V.T @ self.V - eye).max()),
        )

    def check(self, tol: float = TOL.model_orthonormality) -> None:
        for name in ("U", "S", "V"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"non-finite entries in {name}")
        err = self.orthonormality_error()
        if err > tol:
            raise NumericalError(f"factors lost orthonormality (max deviation {err:.3e})")


def train_puresvd(A, r: int, seed: int = 0) -> FactorModel:
    """Fit PureSVD: rank-``r`` truncated SVD of the zero-filled interaction matrix."""
    U, s, V = truncated_svd(A, r, seed=seed)
    return FactorModel(U=U, S=np.diag(s), V=V, step_index=0)


def psi_step(model: FactorModel, delta, decomposition: str = "qr") -> FactorModel:
    """
    Advance ``model`` by one projector-splitting step with increment ``delta``.

    ``delta`` holds only the interactions collected since the previous step
    (sparse, same ``M x N`` shape as the model). With ``decomposition="svd"``
    the two orthogonalizations use an SVD instead of QR; the subspaces
    produced are the same, the factors generally are not.
    """
    if decomposition == "qr":
        factorize = qr_thin
    elif decomposition == "svd":
        factorize = svd_thin
    else:
        raise ValueError(f"unknown decomposition {decomposition!r}, expected 'qr' or 'svd'")

    dA = as_csr(delta)
    if dA.shape != model.shape:
        raise ShapeError(f"psi_step: delta shape {dA.shape} does not match model shape {model.shape}")
    U0, S0, V0 = model.U, model.S, model.V

    dA_V0 = spmm(dA, V0)
    K1 = U0 @ S0 + dA_V0
    U1, S1_hat = factorize(K1)
    S0_tilde = S1_hat - U1.T @ dA_V0
    L1 = V0 @ S0_tilde.T + spmm_transposed(dA, U1)
    V1, S1_t = factorize(L1)

    out = FactorModel(U=U1, S=S1_t.T, V=V1, step_index=model.step_index + 1)
    if not (np.all(np.isfinite(out.U)) and np.all(np.isfinite(out.S)) and np.all(np.isfinite(out.V))):
        raise NumericalError("psi_step produced non-finite factors")
    return out


def reconstruct(model: FactorModel, max_entries: int = TOL.reconstruct_max_entries) -> np.ndarray:
    """Dense ``U @ S @ V.T``. Meant for small matrices; refuses large ones."""
    M, N = model.shape
    if M * N > max_entries:
        raise ValueError(
            f"refusing to densify a {M}x{N} model ({M * N} entries > {max_entries}); "
            "reconstruct() is for small test matrices"
        )
    return (model.U @ model.S) @ model.V.T


# checkpoint layout: magic, version, M, N, r, step_index, then U, S, V as <f8 row-major
_MAGIC = b"PSIF"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")


def save_model(model: FactorModel, path) -> None:
    M, N = model.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, M, N, model.rank, model.step_index))
        for a in (model.U, model.S, model.V):
            fh.write(a.astype("<f8").tobytes(order="C"))


def load_model(path) -> FactorModel:
    raw = Path(path).read_bytes()
    magic, version, M, N, r, step = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a factor model checkpoint (magic={magic!r}, version={version})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != M * r + r * r + N * r:
        raise ValueError(f"{path}: truncated checkpoint")
    U = body[: M * r].reshape(M, r)
    S = body[M * r: M * r + r * r].reshape(r, r)
    V = body[M * r + r * r:].reshape(N, r)
    return FactorModel(U=U, S=S, V=V, step_index=int(step))
