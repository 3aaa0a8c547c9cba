"""Dense matrix kernels and their contracts.

A "matrix" throughout the package is a 2-D float64 numpy array in row-major
(C) order; helpers here validate that shape contract.  Operations are pure:
inputs are never mutated, every call returns a fresh array.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DefinitenessError, FormatError, NumericError, ShapeError

SYMMETRY_TOL = 1e-8


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def require_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name}: non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax; max-shifted so the exponentials cannot overflow."""
    m = as_matrix(m, "softmax input")
    require_finite(m, "softmax input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(m: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Standardize each row to zero mean / unit variance, then scale and shift.

    gain and bias have one entry per column; eps sits inside the square root.
    """
    m = as_matrix(m, "layer_norm input")
    gain = np.asarray(gain, dtype=np.float64).reshape(-1)
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if gain.shape[0] != m.shape[1] or bias.shape[0] != m.shape[1]:
        raise ShapeError(
            f"layer_norm: gain/bias length {gain.shape[0]}/{bias.shape[0]} "
            f"vs {m.shape[1]} columns")
    mu = m.mean(axis=1, keepdims=True)
    var = m.var(axis=1, keepdims=True)
    normed = (m - mu) / np.sqrt(var + eps)
    return normed * gain + bias


def cholesky_logdet(s: np.ndarray) -> float:
    """log det of a symmetric PD matrix via its triangular factorization.

    The input is symmetrized as (S + S^T)/2 first; asymmetry beyond
    SYMMETRY_TOL is rejected rather than silently averaged away.
    """
    s = as_matrix(s, "cholesky input")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"cholesky: matrix not square, shape {s.shape}")
    require_finite(s, "cholesky input")
    asym = float(np.abs(s - s.T).max()) if s.size else 0.0
    if asym > SYMMETRY_TOL:
        raise NumericError(f"cholesky: asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")
    sym = 0.5 * (s + s.T)
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError(
            "cholesky: matrix is not positive definite; add eps*I before "
            "factorizing") from exc
    return float(2.0 * np.sum(np.log(np.diagonal(chol))))


def save_matrix_csv(path, m: np.ndarray, header: list[str] | None = None) -> None:
    """Write a matrix row-major; repr-formatted floats round-trip exactly."""
    m = as_matrix(m, "save_matrix_csv input")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            if len(header) != m.shape[1]:
                raise ShapeError(
                    f"save_matrix_csv: header length {len(header)} vs "
                    f"{m.shape[1]} columns")
            writer.writerow(header)
        for row in m:
            writer.writerow([repr(float(x)) for x in row])


def load_matrix_csv(path, has_header: bool | None = None
                    ) -> tuple[np.ndarray, list[str] | None]:
    """Read a matrix written by save_matrix_csv.

    has_header=None auto-detects: a first row with any token that does not
    parse as a float is treated as a header.
    """
    path = Path(path)
    with path.open("r", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise FormatError(f"{path}: empty matrix file")

    def parses(tokens: list[str]) -> bool:
        try:
            for tok in tokens:
                float(tok)
        except ValueError:
            return False
        return True

    header: list[str] | None = None
    if has_header is True or (has_header is None and not parses(rows[0])):
        header = [tok.strip() for tok in rows[0]]
        rows = rows[1:]
    if not rows:
        raise FormatError(f"{path}: header but no data rows")
    width = len(rows[0])
    data = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: ragged row {i + 1} has {len(row)} fields, expected "
                f"{width}")
        try:
            data[i] = [float(tok) for tok in row]
        except ValueError as exc:
            raise FormatError(f"{path}: unparseable value in row {i + 1}") from exc
    return data, header
