"""Error metrics, operator shift and convergence-order helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class ErrorValue:
    """Either a relative error in percent or an absolute L2 error.

    ``kind`` is ``"rel_l2_pct"`` normally and ``"abs_l2"`` when the reference
    norm is effectively zero.
    """

    value: float
    kind: str = "rel_l2_pct"

    def __float__(self):
        return self.value


def _arr(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def abs_l2(pred, truth, mask=None) -> float:
    p, t = _arr(pred), _arr(truth)
    if p.shape != t.shape:
        raise InvalidArgument(f"shape mismatch {p.shape} vs {t.shape}")
    d = p - t
    if mask is not None:
        d = d[np.broadcast_to(mask, d.shape)]
    return float(np.sqrt(np.sum(d * d)))


def rel_l2(pred, truth, mask=None) -> ErrorValue:
    """``100 * ||pred - truth|| / ||truth||`` with a guard for vanishing truth."""
    p, t = _arr(pred), _arr(truth)
    if p.shape != t.shape:
        raise InvalidArgument(f"shape mismatch {p.shape} vs {t.shape}")
    if mask is not None:
        m = np.broadcast_to(mask, t.shape)
        p, t = p[m], t[m]
    if t.size == 0:
        raise InvalidArgument("empty comparison support")
    num = float(np.sqrt(np.sum((p - t) ** 2)))
    den = float(np.sqrt(np.sum(t * t)))
    if den < 1e-8 * math.sqrt(t.size):
        return ErrorValue(num, "abs_l2")
    return ErrorValue(100.0 * num / den)


def coefficient_error(phi_hat, phi) -> ErrorValue:
    """Relative error of a recovered coefficient vector."""
    return rel_l2(np.atleast_1d(phi_hat), np.atleast_1d(phi))


def terminal_shift(u_unseen, u_train) -> float:
    """Relative deviation in percent between two terminal states."""
    return rel_l2(u_unseen, u_train).value


def operator_shift(params_train, params_unseen, ic, cfg) -> float:
    """Shift between the terminal states of two operators from a shared IC.

    Solver divergence propagates as :class:`DivergenceError`.
    """
    from .pde import solve

    return terminal_shift(solve(params_unseen, ic, cfg), solve(params_train, ic, cfg))


def analytic_operator_shift(k: float, T: float) -> float:
    """Shift implied by the exact ``exp(kT)`` factor between ADR and AD."""
    return 100.0 * math.expm1(k * T)


def observed_order(coarse, mid, fine) -> float:
    """Richardson order from three nested solutions (refinement factor 2).

    Arrays are compared on the coarse nodes; ``mid`` and ``fine`` must hold
    the coarse nodes at every 2nd and 4th index.
    """
    c, m, f = _arr(coarse), _arr(mid), _arr(fine)
    m_c = m[..., ::2, ::2]
    f_c = f[..., ::4, ::4]
    if not (c.shape == m_c.shape == f_c.shape):
        raise InvalidArgument("solutions are not nested by factor 2")
    e1 = np.linalg.norm(c - m_c)
    e2 = np.linalg.norm(m_c - f_c)
    return float(math.log2(e1 / e2))


def fit_order(steps, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(step)``."""
    h = np.log(np.asarray(steps, dtype=np.float64))
    e = np.log(np.asarray(errors, dtype=np.float64))
    return float(np.polyfit(h, e, 1)[0])
