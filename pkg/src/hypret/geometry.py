"""Exact hyperbolic kernels: Lorentz and Poincare models at curvature -1,
origin exp/log maps, and the distortion/capacity calculators.

Conventions
-----------
* Lorentz points are arrays whose last axis has length d+1; index 0 is the
  time-like coordinate, so a valid point satisfies -y0^2 + sum(yi^2) == -1
  and y0 >= 1.
* Tangent vectors live in the origin tangent space and have length d; their
  Euclidean norm is the hyperbolic radius.
* Poincare points are length-d arrays with Euclidean norm < 1.

All functions accept a single vector or a batch with points on the last axis,
and accumulate in float64.
"""
from __future__ import annotations

import math

import numpy as np

from ._kernels import tangent_distance_matrix, tangent_distance_matrix_np  # noqa: F401
from ._kernels import pair_distance_grads_np

# Curvature is fixed at -1 throughout; curvature-c rescaling is out of scope.
CURVATURE = -1.0

# Guard for the arcosh argument in derivative-bearing paths and for the
# 0/0 limit of the origin log map. Distance values clamp the argument at
# exactly 1 so coincident points return 0.
EPS_CLAMP = 1e-7

# Below this excess over 1, y0 is treated as exactly 1 (a few ulps).
_DEGENERATE_T = 4e-15

# Poincare points are clamped strictly inside the ball.
BALL_MAX_NORM = 1.0 - 1e-12


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("invalid point: non-finite input")
    return a


def lorentz_inner(a, b) -> np.ndarray:
    """Lorentzian inner product -a0*b0 + sum(ai*bi) over the last axis."""
    a = _as_f64(a)
    b = _as_f64(b)
    spatial = np.sum(a[..., 1:] * b[..., 1:], axis=-1)
    return spatial - a[..., 0] * b[..., 0]


def lorentz_distance(a, b) -> np.ndarray:
    """Geodesic distance arcosh(-<a, b>_L); exactly 0 for coincident points."""
    z = -lorentz_inner(a, b)
    z = np.maximum(z, 1.0)
    return np.arccosh(z)


def lorentz_exp0(u) -> np.ndarray:
    """Origin exponential map: u -> (cosh|u|, sinh(|u|) u / |u|)."""
    u = _as_f64(u)
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    s = np.where(r < 1e-4, 1.0 + r * r / 6.0, np.sinh(np.maximum(r, 1e-300)) / np.maximum(r, 1e-300))
    head = np.cosh(r)
    return np.concatenate([head, s * u], axis=-1)


def lorentz_log0(y, eps: float = EPS_CLAMP) -> np.ndarray:
    """Origin logarithmic map: y -> arcosh(y0)/sqrt(y0^2-1) * y[1:].

    The 0/0 limit at y0 == 1 is handled by a series for the scale factor;
    y0 within a few ulps of 1 maps to the zero vector.
    """
    y = _as_f64(y)
    y0 = y[..., 0:1]
    t = y0 - 1.0
    tail = y[..., 1:]
    scale = np.empty_like(y0)
    tiny = t <= _DEGENERATE_T
    small = (~tiny) & (t < eps)
    big = t >= eps
    scale[tiny] = 0.0
    scale[small] = 1.0 - t[small] / 3.0
    if np.any(big):
        y0b = y0[big]
        scale[big] = np.arccosh(y0b) / np.sqrt(y0b * y0b - 1.0)
    return scale * tail


def project_to_hyperboloid(y) -> np.ndarray:
    """Rescale the time-like coordinate so the point lies on the sheet."""
    y = _as_f64(y)
    tail = y[..., 1:]
    head = np.sqrt(1.0 + np.sum(tail * tail, axis=-1, keepdims=True))
    return np.concatenate([head, tail], axis=-1)


def is_on_hyperboloid(y, tol: float = 1e-9) -> bool:
    """Check <y, y>_L == -1 within tol, scaled by y0^2 (the residual of the
    defining equation grows with the squared time-like coordinate, so an
    absolute test is only meaningful near the origin)."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        return False
    norm = lorentz_inner(y, y)
    scale = np.maximum(1.0, y[..., 0] ** 2)
    return bool(np.all(np.abs(norm + 1.0) <= tol * scale) and np.all(y[..., 0] >= 1.0 - tol))


def tangent_distance(u, v) -> float:
    """Hyperbolic distance between exp0(u) and exp0(v) from tangent coordinates."""
    u = _as_f64(u)
    v = _as_f64(v)
    d, _, _ = pair_distance_grads_np(u, v[None, :])
    return float(d[0])


def tangent_distance_grads(u, v):
    """(distance, grad_u, grad_v) of d_H(exp0(u), exp0(v)) in tangent coordinates."""
    u = _as_f64(u)
    v = _as_f64(v)
    d, gu, gv = pair_distance_grads_np(u, v[None, :])
    return float(d[0]), gu[0], gv[0]


# ---------------------------------------------------------------------------
# Poincare ball
# ---------------------------------------------------------------------------


def poincare_exp0(u) -> np.ndarray:
    """Origin exponential map into the ball: tanh(|u|/2) u / |u|."""
    u = _as_f64(u)
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    f = np.where(r < 1e-4, 0.5 - r * r / 24.0, np.tanh(np.maximum(r, 1e-300) / 2.0) / np.maximum(r, 1e-300))
    return f * u


def poincare_log0(x) -> np.ndarray:
    """Origin logarithmic map out of the ball: 2 artanh(|x|) x / |x|."""
    x = _as_f64(x)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n >= 1.0):
        raise ValueError("outside ball")
    f = np.where(n < 1e-4, 2.0 + 2.0 * n * n / 3.0, 2.0 * np.arctanh(np.minimum(n, BALL_MAX_NORM)) / np.maximum(n, 1e-300))
    return f * x


def clamp_to_ball(x) -> np.ndarray:
    """Scale a point down so its norm stays strictly below 1."""
    x = _as_f64(x)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(n > BALL_MAX_NORM, BALL_MAX_NORM / np.maximum(n, 1e-300), 1.0)
    return x * scale


def poincare_distance(x, y) -> np.ndarray:
    x = _as_f64(x)
    y = _as_f64(y)
    nx = np.sum(x * x, axis=-1)
    ny = np.sum(y * y, axis=-1)
    if np.any(nx >= 1.0) or np.any(ny >= 1.0):
        raise ValueError("outside ball")
    diff = x - y
    num = 2.0 * np.sum(diff * diff, axis=-1)
    z = 1.0 + num / ((1.0 - nx) * (1.0 - ny))
    return np.arccosh(np.maximum(z, 1.0))


def lorentz_to_poincare(y) -> np.ndarray:
    y = _as_f64(y)
    return y[..., 1:] / (1.0 + y[..., 0:1])


def poincare_to_lorentz(x) -> np.ndarray:
    x = _as_f64(x)
    n2 = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(n2 >= 1.0):
        raise ValueError("outside ball")
    denom = 1.0 - n2
    head = (1.0 + n2) / denom
    return np.concatenate([head, 2.0 * x / denom], axis=-1)


# ---------------------------------------------------------------------------
# distortion and capacity calculators
# ---------------------------------------------------------------------------


def kappa(radius: float) -> float:
    """Tangent-space distortion factor sinh(R)/R; monotone, -> 1 as R -> 0."""
    if not math.isfinite(radius) or radius <= 0.0:
        raise ValueError("radius must be > 0")
    if radius < 1e-4:
        return 1.0 + radius * radius / 6.0
    return math.sinh(radius) / radius


def oversampling_threshold(radius: float, k: int) -> int:
    """Candidate-list size heuristic ceil(kappa(R) * k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(math.ceil(kappa(radius) * k))


def required_radius(depth: int, branching: float, dim: int) -> float:
    """Leading-term radius D*ln(b)/(d-1) needed to separate a b-ary hierarchy.

    This drops the O(log(1/eps)/(d-1)) separation term, so it is a
    lower-bound heuristic rather than a guarantee.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if branching <= 1.0:
        raise ValueError("branching must be > 1")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return depth * math.log(branching) / (dim - 1)
