"""Verification artifacts: latent spectra, entropy, attention maps, cost bench.

Three kinds of evidence about a trained forecaster are produced here:

  * spectrum snapshots of each encoder stage's latent row covariance:
    eigenvalues, effective rank, differential entropy, and the off-diagonal
    mass of the correlation matrix (the "density" of the covariance picture);
  * head-averaged attention-map exports for both the compression and the
    reconstruction stages;
  * a wall-clock and score-entry comparison of hierarchical latent-query
    attention against flat all-channel self-attention.

Eigenvalues are computed with an in-package cyclic Jacobi solver so the
snapshot path has no dependency on an external eigensolver; tests compare it
against an independent routine.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .errors import ParameterError, ShapeError
from .linalg import as_matrix, cholesky_logdet, save_matrix_csv
from .model import ForwardTrace, _attention
from .rng import Stream

DEFAULT_TOL_RATIO = 1e-6
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
BENCH_WARMUPS = 3
BENCH_REPEATS = 10

LOG_2PIE = float(np.log(2.0 * np.pi * np.e))


# -- eigenvalues -----------------------------------------------------------


def jacobi_eigenvalues(sigma: np.ndarray, tol: float = JACOBI_TOL,
                       max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted descending.  The input is symmetrized first;
    convergence is declared when the off-diagonal Frobenius norm falls to
    tol times the matrix Frobenius norm.
    """
    a = as_matrix(sigma, "jacobi input")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"jacobi needs a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    if n == 1:
        return a[0].copy()
    scale = float(np.sqrt((a * a).sum()))
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        # cancellation can push the subtraction a hair below zero
        off_sq = max(float((a * a).sum() - (np.diag(a) ** 2).sum()), 0.0)
        off = float(np.sqrt(off_sq))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                # rotation angle zeroing a[p,q]
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta      # asymptote; theta**2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta)
                                          + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                col_p = c * a[:, p] - s * a[:, q]
                col_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = col_p, col_q
    vals = np.sort(np.diag(a))[::-1]
    return np.ascontiguousarray(vals)


def effective_rank(h: np.ndarray, tol_ratio: float = DEFAULT_TOL_RATIO) -> int:
    """Number of singular values within tol_ratio of the largest.

    Singular values come from the eigenvalues of the smaller Gram matrix of
    h, so the cost is cubic in min(rows, cols) only.  A zero matrix has
    rank 0.
    """
    if not (0.0 < tol_ratio < 1.0):
        raise ParameterError(f"tol_ratio must be in (0, 1), got {tol_ratio}")
    h = as_matrix(h, "effective_rank input")
    rows, cols = h.shape
    gram = h @ h.T if rows <= cols else h.T @ h
    eigs = jacobi_eigenvalues(gram)
    eigs = np.clip(eigs, 0.0, None)
    if eigs[0] == 0.0:
        return 0
    singular = np.sqrt(eigs)
    return int(np.sum(singular >= tol_ratio * singular[0]))


def entropy(sigma: np.ndarray) -> float:
    """Differential entropy of a Gaussian with covariance sigma.

    0.5 * log((2*pi*e)^n * det(sigma)), with the log-determinant from the
    Cholesky factorization.  sigma must be positive definite; add a ridge
    first if it may be singular.
    """
    sigma = as_matrix(sigma, "entropy input")
    n = sigma.shape[0]
    return 0.5 * (n * LOG_2PIE + cholesky_logdet(sigma))


def offdiagonal_mass(sigma: np.ndarray) -> float:
    """Mean absolute off-diagonal entry of the correlation-normalized matrix.

    The covariance-evolution claim ("dense at init, sparser after training")
    is measured with this scalar; a 1x1 matrix has mass 0.
    """
    sigma = as_matrix(sigma, "offdiagonal_mass input")
    n = sigma.shape[0]
    if n == 1:
        return 0.0
    d = np.sqrt(np.clip(np.diag(sigma), 1e-12, None))
    corr = sigma / np.outer(d, d)
    off = np.abs(corr).sum() - np.abs(np.diag(corr)).sum()
    return float(off / (n * (n - 1)))


# -- spectrum snapshots ----------------------------------------------------


@dataclass
class SpectrumSnapshot:
    """Spectral summary of one encoder stage's latent row covariance."""
    epoch: int
    layer: int
    eigenvalues: np.ndarray      # descending
    effective_rank: int
    entropy_value: float
    logdet_value: float
    offdiag_mass: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "layer": self.layer,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "effective_rank": self.effective_rank,
            "entropy": self.entropy_value,
            "logdet": self.logdet_value,
            "offdiag_mass": self.offdiag_mass,
        }


def snapshot(trace: ForwardTrace, epoch: int) -> list[SpectrumSnapshot]:
    """One SpectrumSnapshot per encoder stage of a forward trace.

    The covariance is H H^T / d as in the training penalty; the entropy and
    log-det use the same ridge as the penalty so trajectories line up with
    the optimized quantity.
    """
    eps = trace.config.eps_cov
    out = []
    for layer, node in enumerate(trace.h_nodes[1:], start=1):
        h = node.value
        d = h.shape[1]
        sigma = (h @ h.T) / float(d)
        ridged = sigma + eps * np.eye(sigma.shape[0])
        eigs = jacobi_eigenvalues(sigma)
        out.append(SpectrumSnapshot(
            epoch=epoch,
            layer=layer,
            eigenvalues=eigs,
            effective_rank=effective_rank(h),
            entropy_value=entropy(ridged),
            logdet_value=cholesky_logdet(ridged),
            offdiag_mass=offdiagonal_mass(sigma),
        ))
    return out


def export_snapshots(out_dir, trace: ForwardTrace, epoch: int) -> dict:
    """Write covariance and attention CSVs for one epoch; return an index.

    Files: cov_epoch{E}_layer{L}.csv (raw latent covariance), and
    attn_down/attn_up maps per stage.  The returned dict is one entry for
    the run's artifact index.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snaps = snapshot(trace, epoch)
    files = []
    for snap, node in zip(snaps, trace.h_nodes[1:]):
        h = node.value
        sigma = (h @ h.T) / float(h.shape[1])
        name = f"cov_epoch{epoch}_layer{snap.layer}.csv"
        save_matrix_csv(out_dir / name, sigma)
        files.append(name)
    for i, attn in enumerate(trace.attn_down, start=1):
        name = f"attn_down_epoch{epoch}_layer{i}.csv"
        save_matrix_csv(out_dir / name, attn)
        files.append(name)
    for i, attn in enumerate(trace.attn_up, start=1):
        name = f"attn_up_epoch{epoch}_layer{i}.csv"
        save_matrix_csv(out_dir / name, attn)
        files.append(name)
    return {
        "epoch": epoch,
        "files": files,
        "snapshots": [s.to_dict() for s in snaps],
    }


def write_artifact_index(out_dir, entries: list[dict]) -> None:
    path = Path(out_dir) / "artifacts.json"
    with open(path, "w") as fh:
        json.dump({"entries": entries}, fh, indent=2, sort_keys=True)


# -- attention cost benchmark ----------------------------------------------


MECHANISMS = ("HLQN", "FlatAttention")


@dataclass
class CostSample:
    channels: int
    d: int
    ratio: int
    heads: int
    mechanism: str
    seconds: float               # median wall-time, forward + backward
    score_entries: int           # analytic count, first stage, per head

    def to_dict(self) -> dict:
        return {"channels": self.channels, "d": self.d, "ratio": self.ratio,
                "heads": self.heads, "mechanism": self.mechanism,
                "seconds": self.seconds, "score_entries": self.score_entries}


def score_entries(channels: int, ratio: int, mechanism: str) -> int:
    """Exact per-head score-matrix element count of the first stage."""
    if mechanism == "HLQN":
        return max(1, channels // ratio) * channels
    if mechanism == "FlatAttention":
        return channels * channels
    raise ParameterError(f"unknown mechanism '{mechanism}'")


def _single_thread_limit():
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except ImportError:
        import contextlib
        return contextlib.nullcontext()


def _time_attention(channels: int, d: int, queries: int, heads: int,
                    repeats: int, seed: int) -> float:
    """Median seconds for one taped attention forward + backward pass."""
    stream = Stream(seed, (509, channels, queries))
    h_val = stream.normal_matrix(channels, d, 1.0)
    q_val = stream.normal_matrix(queries, d, 1.0)
    weights = {name: stream.normal_matrix(d, d, 0.02)
               for name in ("w_q", "w_k", "w_v", "w_o")}

    def run_once() -> float:
        tape = Tape()
        nodes = {name: tape.leaf(val) for name, val in weights.items()}
        h_node = tape.constant(h_val)
        q_node = tape.leaf(q_val)
        start = time.perf_counter()
        out, _ = _attention(tape, q_node, h_node, h_node,
                            nodes["w_q"], nodes["w_k"], nodes["w_v"],
                            nodes["w_o"], heads)
        loss = tape.mean(tape.square(out))
        tape.backward(loss)
        return time.perf_counter() - start

    with _single_thread_limit():
        for _ in range(BENCH_WARMUPS):
            run_once()
        times = [run_once() for _ in range(max(repeats, BENCH_REPEATS))]
    return float(np.median(times))


def bench_attention(channel_list, d: int = 64, ratio: int = 16,
                    heads: int = 1, repeats: int = BENCH_REPEATS,
                    seed: int = 0) -> list[CostSample]:
    """Compare hierarchical first-stage attention against the flat variant.

    The hierarchical mechanism reads all C channels through C/ratio latent
    queries; the flat baseline performs full C x C self-attention with the
    same width and head count.  Timings are medians over repeated taped
    forward+backward passes with warm-ups discarded; score-entry counts are
    computed, not measured.
    """
    samples = []
    for channels in channel_list:
        if channels < 1:
            raise ParameterError(f"channel count must be positive, got {channels}")
        latent = max(1, channels // ratio)
        t_h = _time_attention(channels, d, latent, heads, repeats, seed)
        samples.append(CostSample(channels=channels, d=d, ratio=ratio,
                                  heads=heads, mechanism="HLQN", seconds=t_h,
                                  score_entries=score_entries(channels, ratio,
                                                              "HLQN")))
        t_f = _time_attention(channels, d, channels, heads, repeats, seed)
        samples.append(CostSample(channels=channels, d=d, ratio=ratio,
                                  heads=heads, mechanism="FlatAttention",
                                  seconds=t_f,
                                  score_entries=score_entries(channels, ratio,
                                                              "FlatAttention")))
    return samples


def write_bench_csv(path, samples: list[CostSample]) -> None:
    import csv
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "channels", "d", "ratio", "heads", "mechanism", "seconds",
            "score_entries"])
        writer.writeheader()
        for s in samples:
            writer.writerow(s.to_dict())
