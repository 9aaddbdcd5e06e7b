"""Infer-and-validate model selection over a library of candidate PDE classes.

For each candidate the coefficients are sampled from the two snapshots, the
terminal state is regenerated from the sampled coefficients and the initial
snapshot, and the candidate is scored by the absolute L2 discrepancy on the
observed terminal points.  Repeating the procedure gives selection
frequencies and coefficient intervals.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidArgument, SelectionError
from .fields import derive_seed
from .tasks import forward_predict, infer_params, measurement, task_spec

log = logging.getLogger(__name__)

AMBIGUITY_RTOL = 0.01


@dataclass(frozen=True, eq=False)
class CandidateScore:
    class_id: int
    phi: np.ndarray
    error: float

    @property
    def valid(self) -> bool:
        return math.isfinite(self.error)


def score_candidate(prior, cls, u0, uT, fraction: float, mask_seed: int, seed: int):
    """``(phi_hat, E)`` for one candidate; ``E = inf`` if sampling diverges."""
    if cls.d_c < 1:
        raise InvalidArgument(f"candidate {cls.name} has no coefficients to infer")
    try:
        phi = infer_params(prior, cls, u0, uT, fraction, derive_seed(seed, 0),
                           mask_seed=mask_seed)
        uT_hat = forward_predict(prior, cls, phi, u0, fraction, derive_seed(seed, 1),
                                 mask_seed=mask_seed)
    except DivergenceError as exc:
        log.warning("candidate %s invalid: %s", cls.name, exc)
        return np.full(cls.d_c, np.nan), math.inf
    support = measurement(task_spec("infer_params", cls, fraction), cls,
                          np.shape(uT), mask_seed).masks[2]
    err = float(np.linalg.norm((uT_hat - np.asarray(uT))[support]))
    return phi, err


def _argmin(scores):
    """Lowest error, exact ties to the lower class id; ``None`` if all invalid."""
    valid = [s for s in scores if s.valid]
    if not valid:
        return None
    return min(valid, key=lambda s: (s.error, s.class_id))


@dataclass
class SelectionResult:
    selected: int
    phi: np.ndarray
    errors: dict
    frequencies: dict
    intervals: list
    repeats: list = field(default_factory=list)
    ambiguous: bool = False


def select_model(prior, candidates, u0, uT, fraction: float, R: int = 10,
                 seed: int = 0, mask_seed: int | None = None) -> SelectionResult:
    """Modal class over ``R`` infer-and-validate repeats.

    ``errors`` is the discrepancy table of the representative repeat (the
    first one whose winner is the modal class), so the selected class is its
    argmin.  ``intervals`` holds per-coefficient 2.5/97.5 percentiles of the
    modal class's estimates and is empty when ``R == 1``.
    """
    if R < 1:
        raise InvalidArgument("R must be >= 1")
    candidates = sorted(candidates, key=lambda c: c.id)
    if not candidates:
        raise InvalidArgument("empty candidate library")
    if len(candidates) < 2:
        log.warning("candidate library has a single class")
    mask_seed = seed if mask_seed is None else mask_seed
    repeats = []
    for r in range(R):
        rs = derive_seed(seed, r)
        row = [CandidateScore(c.id, *score_candidate(prior, c, u0, uT, fraction, mask_seed,
                                                     derive_seed(rs, c.id)))
               for c in candidates]
        repeats.append(row)
    winners = [_argmin(row) for row in repeats]
    won = [w.class_id for w in winners if w is not None]
    if not won:
        raise SelectionError("every candidate was invalid in every repeat")
    counts = Counter(won)
    top = max(counts.values())
    modal = min(c for c, n in counts.items() if n == top)
    rep = next(i for i, w in enumerate(winners) if w is not None and w.class_id == modal)
    table = {s.class_id: s.error for s in repeats[rep]}
    ests = np.array([s.phi for row in repeats for s in row
                     if s.class_id == modal and s.valid])
    intervals = []
    if R > 1:
        lo, hi = np.percentile(ests, [2.5, 97.5], axis=0)
        intervals = list(zip(lo.tolist(), hi.tolist()))
    ranked = sorted(v for v in table.values() if math.isfinite(v))
    ambiguous = len(ranked) > 1 and ranked[1] - ranked[0] <= AMBIGUITY_RTOL * max(ranked[0],
                                                                                   1e-300)
    freqs = {c.id: counts.get(c.id, 0) / len(won) for c in candidates}
    return SelectionResult(modal, winners[rep].phi, table, freqs, intervals, repeats, ambiguous)


def _pde_text(cls, phi) -> str:
    p = dict(cls.fixed)
    p.update(zip(cls.param_names, phi))
    fmt = lambda v: f"{v:.2f}"
    drift = f"[{fmt(p.get('ax', 0.0))}, {fmt(p.get('ay', 0.0))}]"
    if cls.family == "diffusion":
        return f"u_t = {fmt(p['nu'])} Lap(u)"
    if cls.family == "advection":
        return f"u_t + {drift} . grad(u) = 0"
    if cls.family == "advection_diffusion":
        return f"u_t + {drift} . grad(u) = {fmt(p['nu'])} Lap(u)"
    return f"{cls.name}({', '.join(fmt(v) for v in phi)})"


def summary_text(result: SelectionResult, classes, true_class=None, true_phi=None) -> str:
    """Three-line summary: true law, sampled law and 95% intervals."""
    by_id = {c.id: c for c in classes}
    lines = []
    if true_class is not None:
        lines.append(f"True PDE:     {_pde_text(by_id[true_class], true_phi)}")
    cls = by_id[result.selected]
    lines.append(f"Sampled PDE:  {_pde_text(cls, result.phi)}")
    if result.intervals:
        parts = [f"{n} = {(lo + hi) / 2:.3f} +/- {(hi - lo) / 2:.3f}"
                 for n, (lo, hi) in zip(cls.param_names, result.intervals)]
        lines.append("95% Interval: " + ", ".join(parts))
    freq = ", ".join(f"{by_id[c].name}={f:.2f}" for c, f in result.frequencies.items())
    lines.append(f"Frequencies:  {freq}" + ("  [ambiguous]" if result.ambiguous else ""))
    return "\n".join(lines) + "\n"
