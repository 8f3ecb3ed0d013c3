"""Simplex regularizers and the FTRL argmax solver.

Four regularizers are supported, each 1-strongly convex with respect to the
norm listed next to it:

``entropy``      sum_a x_a log x_a                     (l1 norm)
``euclidean``    (1/2) * ||x||_2^2                     (l2 norm)
``log``          -sum_a log x_a                        (l2 norm)
``tsallis:q=Q``  -(1/(q(1-q))) * sum_a x_a^q, 0<q<1    (l2 norm)

The log regularizer is unbounded at the simplex boundary, so its solver works
on the truncated simplex {x : x_a >= 1e-9, sum x = 1}; the other three live on
the full simplex.  ``ftrl_argmax`` computes

    argmax_x  <x, U> - R(x) / eta

in closed form for entropy (softmax) and euclidean (projection), and by
bisection on the scalar KKT multiplier for log and tsallis.  Bisection runs in
coordinates shifted by max(U) so the bracket stays well conditioned no matter
how large cumulative utilities grow, and must reach |sum x - 1| <= 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import LOG_FLOOR, SUM_TOL

_KINDS = ("entropy", "euclidean", "log", "tsallis")

_CODES = {
    "entropy": _kernels.REG_ENTROPY,
    "euclidean": _kernels.REG_EUCLIDEAN,
    "log": _kernels.REG_LOG,
    "tsallis": _kernels.REG_TSALLIS,
}


@dataclass(frozen=True)
class RegularizerSpec:
    """A parsed regularizer choice.

    Attributes
    ----------
    kind : str
        One of "entropy", "euclidean", "log", "tsallis".
    q : float or None
        Tsallis exponent in (0, 1); None for the other kinds.
    """

    kind: str
    q: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "tsallis":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValueError("tsallis exponent q must lie in (0, 1)")
        elif self.q is not None:
            raise ValueError(f"{self.kind} takes no exponent")

    @property
    def code(self) -> int:
        """Integer code used by the compiled kernels."""
        return _CODES[self.kind]

    @property
    def norm(self) -> str:
        """Norm in which the regularizer is 1-strongly convex: l1 or l2."""
        return "l1" if self.kind == "entropy" else "l2"

    @property
    def label(self) -> str:
        """Canonical config-string form, e.g. "tsallis:q=0.5"."""
        if self.kind == "tsallis":
            return f"tsallis:q={repr(float(self.q))}"
        return self.kind


def parse_regularizer(text: str) -> RegularizerSpec:
    """Parse a config string like "entropy" or "tsallis:q=0.5".

    Raises ValueError with a readable message on malformed input.
    """
    s = text.strip()
    if s in ("entropy", "euclidean", "log"):
        return RegularizerSpec(s)
    if s.startswith("tsallis"):
        rest = s[len("tsallis"):]
        if not rest.startswith(":q="):
            raise ValueError(
                f"malformed regularizer {text!r}: tsallis needs ':q=<real>'"
            )
        try:
            q = float(rest[3:])
        except ValueError:
            raise ValueError(f"malformed tsallis exponent in {text!r}") from None
        return RegularizerSpec("tsallis", q)
    raise ValueError(f"unknown regularizer {text!r}")


def _check_point(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("x must be a 1-D vector with at least 2 entries")
    if np.any(x < 0.0):
        raise ValueError("x must be nonnegative")
    return x


def reg_value(spec: RegularizerSpec, x) -> float:
    """Evaluate R(x) on the (closed) simplex.

    Entropy and tsallis extend continuously to the boundary; the log
    regularizer raises ValueError there.
    """
    x = _check_point(x)
    if spec.kind == "entropy":
        pos = x[x > 0.0]
        return float(np.sum(pos * np.log(pos)))
    if spec.kind == "euclidean":
        return float(0.5 * np.dot(x, x))
    if spec.kind == "log":
        if np.any(x <= 0.0):
            raise ValueError("log regularizer undefined at the simplex boundary")
        return float(-np.sum(np.log(x)))
    q = spec.q
    return float(-np.sum(x**q) / (q * (1.0 - q)))


def reg_grad(spec: RegularizerSpec, x) -> np.ndarray:
    """Gradient of R at an interior point (ValueError at the boundary)."""
    x = _check_point(x)
    if spec.kind == "euclidean":
        return x.copy()
    if np.any(x <= 0.0):
        raise ValueError(f"{spec.kind} gradient undefined at the boundary")
    if spec.kind == "entropy":
        return 1.0 + np.log(x)
    if spec.kind == "log":
        return -1.0 / x
    return -(x ** (spec.q - 1.0)) / (1.0 - spec.q)


def reg_range(spec: RegularizerSpec, m: int) -> float:
    """max R - min R over the solver's domain with m actions.

    This is the constant R in the regret bound R/eta^(T) + sum eta_t
    ||u_t||_*^2 and in the gap-to-probability bound R/(eta * Gap).  For the
    log regularizer the domain is the truncated simplex, so the range is
    finite and depends on the floor.
    """
    if m < 2:
        raise ValueError("need at least 2 actions")
    if spec.kind == "entropy":
        return float(np.log(m))
    if spec.kind == "euclidean":
        return 0.5 * (1.0 - 1.0 / m)
    if spec.kind == "log":
        tau = LOG_FLOOR
        top = -np.log(1.0 - (m - 1) * tau) - (m - 1) * np.log(tau)
        return float(top - m * np.log(m))
    q = spec.q
    return float((m ** (1.0 - q) - 1.0) / (q * (1.0 - q)))


def simplex_project(y) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 1:
        raise ValueError("y must be a 1-D vector")
    out = np.empty_like(y)
    # Projection equals the euclidean FTRL solve with U = y, eta = 1.
    _kernels.solve_simplex(_kernels.REG_EUCLIDEAN, 0.0, y, 1.0, out)
    return out


def ftrl_argmax(spec: RegularizerSpec, U, eta: float) -> np.ndarray:
    """Solve argmax_{x in simplex} <x, U> - R(x)/eta.

    Parameters
    ----------
    spec : RegularizerSpec
    U : array_like
        Cumulative utility vector (any finite float64 values).
    eta : float
        Strictly positive learning rate.

    Returns
    -------
    numpy.ndarray
        A point of the simplex with |sum x - 1| <= 1e-12.

    Raises
    ------
    RuntimeError
        If the bisection solver fails to reach the residual tolerance.
    """
    U = np.ascontiguousarray(U, dtype=np.float64)
    if U.ndim != 1 or U.shape[0] < 2:
        raise ValueError("U must be a 1-D vector with at least 2 entries")
    if not np.all(np.isfinite(U)):
        raise ValueError("U must be finite")
    if not (eta > 0.0 and np.isfinite(eta)):
        raise ValueError("eta must be positive and finite")
    out = np.empty_like(U)
    resid = _kernels.solve_simplex(spec.code, spec.q or 0.0, U, float(eta), out)
    if resid > SUM_TOL:
        raise RuntimeError(
            f"{spec.kind} solver did not converge: |sum x - 1| = {resid:.3e}"
        )
    return out


def uniform(m: int) -> np.ndarray:
    """The uniform strategy, which is argmin R for every supported R."""
    if m < 2:
        raise ValueError("need at least 2 actions")
    return np.full(m, 1.0 / m)
