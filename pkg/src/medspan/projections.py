"""Projections of score vectors onto the probability simplex.

Two projection families: plain softmax (dense weights, differentiable through
built-in tape ops) and fusedmax (sparse, contiguous weights), computed as the
Euclidean simplex projection of the 1-d total-variation prox.  Both accept
either raw numpy vectors or :class:`~medspan.tensor.Tensor` inputs; tensor
inputs stay on the tape, with fusedmax contributing its own backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

__all__ = [
    "ProjectionConfig",
    "softmax_project",
    "simplex_project",
    "tv_prox",
    "fusedmax_project",
    "fusedmax_jvp",
    "project",
    "check_simplex",
]

# entries at or below this after simplex projection are clamped to exactly 0
# so downstream support / contiguity logic is deterministic
_SUPPORT_EPS = 1e-12


@dataclass(frozen=True)
class ProjectionConfig:
    """Which projection to use, its temperature, and the fused-lasso weight."""

    kind: str = "softmax"
    temperature: float = 1.0
    tv_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("softmax", "fusedmax"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not self.tv_weight > 0:
            raise ValueError(f"tv_weight must be positive, got {self.tv_weight}")

    def with_kind(self, kind: str) -> "ProjectionConfig":
        return ProjectionConfig(kind=kind, temperature=self.temperature, tv_weight=self.tv_weight)


def _check_vector(s: np.ndarray, name: str) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError(f"{name}: expected a non-empty 1-d vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{name}: input contains NaN or infinity")
    return s


def check_simplex(a: np.ndarray, atol: float = 1e-9) -> bool:
    """True when ``a`` is entrywise >= -1e-12 and sums to 1 within ``atol``."""
    a = np.asarray(a, dtype=np.float64)
    return bool(a.min(initial=0.0) >= -_SUPPORT_EPS and abs(a.sum() - 1.0) <= atol)


# ---------------------------------------------------------------------------
# softmax


def softmax_project(s, cfg: ProjectionConfig | None = None):
    """exp(s_i / t) / sum_j exp(s_j / t), with max subtraction for stability."""
    cfg = cfg or ProjectionConfig()
    if isinstance(s, T.Tensor):
        if s.data.ndim != 1 or s.size == 0:
            raise ValueError(f"softmax_project: expected a non-empty vector, got {s.shape}")
        if not np.all(np.isfinite(s.data)):
            raise ValueError("softmax_project: input contains NaN or infinity")
        scaled = s if cfg.temperature == 1.0 else T.mul(s, 1.0 / cfg.temperature)
        return T.softmax_rows(scaled)
    s = _check_vector(s, "softmax_project")
    z = s / cfg.temperature
    e = np.exp(z - z.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# simplex projection (sort-and-threshold)


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort descending, find the largest rho with u_rho - (cumsum - 1)/rho > 0,
    subtract the resulting threshold and clip at zero.
    """
    v = _check_vector(v, "simplex_project")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    tau = css[cond][-1] / rho
    out = np.maximum(v - tau, 0.0)
    out[out <= _SUPPORT_EPS] = 0.0
    return out


# ---------------------------------------------------------------------------
# 1-d total-variation prox (Condat's direct non-iterative method)


def tv_prox(s: np.ndarray, lambda_tv: float) -> np.ndarray:
    """argmin_y 0.5 ||y - s||^2 + lambda_tv * sum |y_{d+1} - y_d|.

    Direct O(n) taut-string sweep; the output is piecewise constant and has
    the same mean as the input.
    """
    y = _check_vector(s, "tv_prox")
    if lambda_tv < 0:
        raise ValueError(f"tv_prox: lambda_tv must be nonnegative, got {lambda_tv}")
    if lambda_tv == 0:
        return y.copy()
    n = y.size
    x = np.empty(n)
    if n == 1:
        x[0] = y[0]
        return x
    lam = float(lambda_tv)
    k = k0 = kminus = kplus = 0
    vmin = y[0] - lam
    vmax = y[0] + lam
    umin = lam
    umax = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                # negative jump at the end of the current segment
                x[k0 : kminus + 1] = vmin
                k = k0 = kminus = kminus + 1
                vmin = y[k]
                umin = lam
                umax = y[k] + lam - vmax
            elif umax > 0.0:
                x[k0 : kplus + 1] = vmax
                k = k0 = kplus = kplus + 1
                vmax = y[k]
                umax = -lam
                umin = y[k] - lam - vmin
            else:
                x[k0:] = vmin + umin / (k - k0 + 1)
                return x
        if y[k + 1] + umin < vmin - lam:
            x[k0 : kminus + 1] = vmin
            k = k0 = kminus = kplus = kminus + 1
            vmin = y[k]
            vmax = y[k] + 2.0 * lam
            umin = lam
            umax = -lam
        elif y[k + 1] + umax > vmax + lam:
            x[k0 : kplus + 1] = vmax
            k = k0 = kminus = kplus = kplus + 1
            vmin = y[k] - 2.0 * lam
            vmax = y[k]
            umin = lam
            umax = -lam
        else:
            k += 1
            umin += y[k] - vmin
            umax += y[k] - vmax
            if umin >= lam:
                vmin += (umin - lam) / (k - k0 + 1)
                umin = lam
                kminus = k
            if umax <= -lam:
                vmax += (umax + lam) / (k - k0 + 1)
                umax = -lam
                kplus = k


# ---------------------------------------------------------------------------
# fusedmax = simplex_project o tv_prox, with a hand-derived backward


def _segment_ids(tv_out: np.ndarray) -> np.ndarray:
    """Label each position with the index of its maximal constant TV run."""
    if tv_out.size == 0:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate(([0], np.cumsum(np.diff(tv_out) != 0.0))).astype(np.intp)


def _fusedmax_forward(s: np.ndarray, temperature: float, tv_weight: float):
    s = _check_vector(s, "fusedmax_project")
    z = s / temperature
    tv_out = tv_prox(z, tv_weight) if s.size > 1 else z.copy()
    a = simplex_project(tv_out)
    state = {
        "support": a > 0.0,
        "segments": _segment_ids(tv_out),
        "temperature": temperature,
    }
    return a, state


def fusedmax_jvp(state, upstream_grad: np.ndarray) -> np.ndarray:
    """Backward rule for fusedmax.

    Simplex backward first (center the upstream gradient over the support),
    then TV backward (replace values within each constant segment of the TV
    output by the segment mean), then scale by 1 / temperature.
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    support = state["support"]
    segments = state["segments"]
    if g.shape != support.shape:
        raise ValueError(
            f"fusedmax_jvp: gradient shape {g.shape} does not match saved state {support.shape}"
        )
    nnz = int(support.sum())
    gp = np.zeros_like(g)
    if nnz:
        gp[support] = g[support] - g[support].sum() / nnz
    nseg = int(segments[-1]) + 1 if segments.size else 0
    seg_sum = np.bincount(segments, weights=gp, minlength=nseg)
    seg_cnt = np.bincount(segments, minlength=nseg)
    out = (seg_sum / seg_cnt)[segments]
    return out / state["temperature"]


def _fusedmax_backward(state, g):
    return (fusedmax_jvp(state, g),)


_fusedmax_op = T.register_custom(
    lambda s, temperature=1.0, tv_weight=1.0: _fusedmax_forward(s, temperature, tv_weight),
    _fusedmax_backward,
    name="fusedmax",
)


def fusedmax_project(s, cfg: ProjectionConfig | None = None):
    """Sparse, contiguity-favoring projection: simplex_project(tv_prox(s/t))."""
    cfg = cfg or ProjectionConfig(kind="fusedmax")
    if isinstance(s, T.Tensor):
        return _fusedmax_op(s, temperature=cfg.temperature, tv_weight=cfg.tv_weight)
    a, _ = _fusedmax_forward(s, cfg.temperature, cfg.tv_weight)
    return a


def project(s, cfg: ProjectionConfig):
    """Dispatch on ``cfg.kind``."""
    if cfg.kind == "softmax":
        return softmax_project(s, cfg)
    return fusedmax_project(s, cfg)
