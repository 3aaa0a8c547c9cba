"""Linear VAR(1) processes with closed-form Bayes risks.

The process is z_{t+1} = A z_t + eps_{t+1}, eps ~ N(0, diag(noise)).  Two
coefficient structures are generated here: "independent" (diagonal A, each
channel a private AR(1)) and "anti_self" (zero diagonal, so a channel's next
value depends only on *other* channels).  Drawn matrices are rescaled toward
a target spectral radius; the default target sits below one so the closed
forms below apply, while the synthetic comparison in baselines.py asks for a
target slightly above one to obtain a slowly growing collective mode.

Closed forms use the stationary covariance S: the best p-channel predictor of
channel t's next value has risk R_p = Var(Y) - c_p S_p^{-1} c_p^T with
Y = (A z)_t + eps_t, c_p = (A S)_{t,1:p}, and the risk of the full-information
predictor collapses to the noise floor sigma_tt.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ParameterError, ShapeError
from .linalg import as_matrix
from .rng import Stream

STRUCTURES = ("independent", "anti_self", "custom")

DEFAULT_TARGET_RADIUS = 0.95
RADIUS_ITERS = 200
RADIUS_TOL = 1e-8
STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITERS = 10 ** 5


@dataclass
class VarProcessSpec:
    structure: str
    C: int
    A: np.ndarray
    noise_diag: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        if self.A.shape != (self.C, self.C):
            raise ShapeError(f"A shape {self.A.shape} vs C={self.C}")
        self.noise_diag = np.asarray(self.noise_diag, dtype=np.float64).reshape(-1)
        if self.noise_diag.shape[0] != self.C:
            raise ShapeError(f"noise_diag length {self.noise_diag.shape[0]} vs C={self.C}")
        if np.any(self.noise_diag <= 0):
            raise ParameterError("noise variances must be positive")

    @property
    def noise_cov(self) -> np.ndarray:
        return np.diag(self.noise_diag)

    def to_dict(self) -> dict:
        return {
            "structure": self.structure,
            "C": self.C,
            "A": self.A.tolist(),
            "noise_diag": self.noise_diag.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VarProcessSpec":
        return cls(structure=d["structure"], C=int(d["C"]),
                   A=np.asarray(d["A"], dtype=np.float64),
                   noise_diag=np.asarray(d["noise_diag"], dtype=np.float64),
                   seed=int(d.get("seed", 0)))


def spectral_radius(a: np.ndarray, iters: int = RADIUS_ITERS,
                    tol: float = RADIUS_TOL, seed: int = 0) -> float:
    """Dominant |eigenvalue| estimate by normalized power iteration.

    The per-step growth ratio is tracked for early exit; the returned value is
    the geometric-mean growth over the completed sweeps, which stays stable
    even when a complex pair makes single-step ratios oscillate.
    """
    a = as_matrix(a, "spectral_radius input")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"spectral_radius: matrix not square, {a.shape}")
    n = a.shape[0]
    v = Stream(seed, (n, 101)).normal(n)
    v /= np.linalg.norm(v)
    ratios = []
    prev_ratio = None
    for _ in range(iters):
        w = a @ v
        ratio = float(np.linalg.norm(w))
        if ratio == 0.0:
            return 0.0
        ratios.append(ratio)
        v = w / ratio
        if prev_ratio is not None and abs(ratio - prev_ratio) <= tol * max(1.0, ratio):
            return ratio
        prev_ratio = ratio
    # no per-step convergence (e.g. a dominant complex pair): average the
    # growth over the tail, where the start vector's transient has died out
    tail = ratios[len(ratios) // 4:]
    return float(np.exp(np.mean(np.log(tail))))


def make_var_spec(structure: str, C: int, seed: int = 0,
                  target_radius: float = DEFAULT_TARGET_RADIUS) -> VarProcessSpec:
    """Draw a coefficient matrix for one of the named structures.

    independent: diagonal entries uniform in [0.8, 1.0].
    anti_self:   zero diagonal, off-diagonal uniform in [0.5, 1.0].
    A is rescaled to target_radius whenever its measured radius reaches it.
    With the default target the returned process is strictly stable and the
    closed-form risks apply.  Targets at or above 1 are allowed for the
    synthetic comparison, which relies on a slowly growing collective mode;
    such specs have no stationary law and the risk oracles reject them.
    Noise covariance is identity.
    """
    if C < 2:
        raise ParameterError(f"C must be >= 2, got {C}")
    if not (0.0 < target_radius <= 2.0):
        raise ParameterError(f"target_radius must be in (0, 2], got {target_radius}")
    stream = Stream(seed, (_structure_id(structure), C))
    if structure == "independent":
        a = np.diag(stream.uniform(0.8, 1.0, C))
    elif structure == "anti_self":
        a = stream.uniform(0.5, 1.0, (C, C))
        np.fill_diagonal(a, 0.0)
    else:
        raise ParameterError(f"unknown structure '{structure}'")
    measured = spectral_radius(a)
    if measured >= target_radius:
        a = a * (target_radius / measured)
    return VarProcessSpec(structure=structure, C=C, A=a,
                          noise_diag=np.ones(C), seed=seed)


def _structure_id(structure: str) -> int:
    try:
        return STRUCTURES.index(structure)
    except ValueError:
        raise ParameterError(f"unknown structure '{structure}'") from None


def simulate(spec: VarProcessSpec, steps: int, burn_in: int = 0,
             seed: int | None = None) -> np.ndarray:
    """Run the recursion for `steps` draws and drop the first `burn_in`.

    Returns a channel-major (C x kept) matrix.  z_0 ~ N(0, I); the kept block
    starts at z_{burn_in + 1}.  Bit-reproducible for a given seed.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if not (0 <= burn_in < steps):
        raise ParameterError(f"burn_in must be in [0, steps), got {burn_in}")
    use_seed = spec.seed if seed is None else seed
    stream = Stream(use_seed, (_structure_id(spec.structure), spec.C, 7))
    z = stream.normal(spec.C)
    scale = np.sqrt(spec.noise_diag)
    noise = stream.normal((spec.C, steps)) * scale[:, None]
    out = np.empty((spec.C, steps), dtype=np.float64)
    for t in range(steps):
        z = spec.A @ z + noise[:, t]
        out[:, t] = z
    return out[:, burn_in:]


def stationary_covariance(spec: VarProcessSpec, tol: float = STATIONARY_TOL,
                          max_iters: int = STATIONARY_MAX_ITERS) -> np.ndarray:
    """Fixed point of S <- A S A^T + Q, iterated to absolute change <= tol."""
    radius = spectral_radius(spec.A)
    if radius >= 1.0:
        raise ParameterError(
            f"stationary covariance needs spectral radius < 1, measured {radius:.4f}")
    q = spec.noise_cov
    s = q.copy()
    a = spec.A
    for _ in range(max_iters):
        nxt = a @ s @ a.T + q
        delta = float(np.abs(nxt - s).max())
        s = nxt
        if delta <= tol:
            return 0.5 * (s + s.T)
    raise ConvergenceError(
        f"stationary covariance did not reach {tol} in {max_iters} iterations; "
        "is the process stable?")


@dataclass
class RiskPair:
    r_ci: float
    r_cd: float
    var_conditional: float
    cross_coefficient: float

    @property
    def gap(self) -> float:
        return self.r_ci - self.r_cd


def bayes_risk_ci_cd(spec: VarProcessSpec, target: int = 0) -> RiskPair:
    """Closed-form one-step risks for the two-channel system.

    The channel-independent optimum conditions on the target's own history
    only; the channel-dependent optimum sees both channels and collapses to
    the noise floor.  Their gap is a_cross^2 * Var(w | x) under the
    stationary law, where w is the other channel and x the target.
    """
    if spec.C != 2:
        raise ParameterError(f"bayes_risk_ci_cd needs a 2-channel spec, got C={spec.C}")
    if target not in (0, 1):
        raise ParameterError(f"target must be 0 or 1, got {target}")
    other = 1 - target
    s = stationary_covariance(spec)
    sigma_t = float(spec.noise_diag[target])
    var_cond = float(s[other, other] - s[target, other] ** 2 / s[target, target])
    a_cross = float(spec.A[target, other])
    r_cd = sigma_t
    r_ci = sigma_t + a_cross ** 2 * var_cond
    return RiskPair(r_ci=r_ci, r_cd=r_cd, var_conditional=var_cond,
                    cross_coefficient=a_cross)


@dataclass
class RiskReport:
    spec: VarProcessSpec
    target: int
    risks: np.ndarray
    var_y: float
    noise_floor: float
    gaps: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gaps = self.risks[0] - self.risks


def bayes_risk_sequence(spec: VarProcessSpec, target: int = 0) -> RiskReport:
    """Bayes risk of predicting channel `target` from the first p channels,
    for p = 1..C, under the stationary law.

    R_p = Var(Y) - c_p S_p^{-1} c_p^T, Y = (A z)_target + eps_target.
    The sequence is non-increasing and terminates at the noise floor.
    """
    if not (0 <= target < spec.C):
        raise ParameterError(f"target {target} out of range for C={spec.C}")
    s = stationary_covariance(spec)
    a = spec.A
    c_full = (a @ s)[target]
    var_y = float(a[target] @ s @ a[target] + spec.noise_diag[target])
    risks = np.empty(spec.C, dtype=np.float64)
    for p in range(1, spec.C + 1):
        coeffs = np.linalg.solve(s[:p, :p], c_full[:p])
        risks[p - 1] = var_y - float(c_full[:p] @ coeffs)
    return RiskReport(spec=spec, target=target, risks=risks, var_y=var_y,
                      noise_floor=float(spec.noise_diag[target]))


def monte_carlo_risks(spec: VarProcessSpec, n_samples: int, seed: int = 0,
                      target: int = 0, subset_sizes: list[int] | None = None
                      ) -> dict[int, float]:
    """Sampled risk of the conditional-mean predictor that sees the first p
    channels, for each p in subset_sizes (default: 1..C).

    Draws (z_t, z_{t+1}) pairs from the stationary law and scores the exact
    Gaussian conditional mean, independently of the closed-form algebra.
    """
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    sizes = list(range(1, spec.C + 1)) if subset_sizes is None else subset_sizes
    s = stationary_covariance(spec)
    chol = np.linalg.cholesky(s + 1e-15 * np.eye(spec.C))
    stream = Stream(seed, (_structure_id(spec.structure), spec.C, 13))
    z_t = stream.normal((n_samples, spec.C)) @ chol.T
    eps = stream.normal(n_samples) * np.sqrt(spec.noise_diag[target])
    y = z_t @ spec.A[target] + eps
    c_full = (spec.A @ s)[target]
    out = {}
    for p in sizes:
        if not (1 <= p <= spec.C):
            raise ParameterError(f"subset size {p} out of range")
        coeffs = np.linalg.solve(s[:p, :p], c_full[:p])
        pred = z_t[:, :p] @ coeffs
        out[p] = float(np.mean((y - pred) ** 2))
    return out
