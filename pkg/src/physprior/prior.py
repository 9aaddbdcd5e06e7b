"""Class-conditional denoisers: the closed-form mixture oracle and the DSM loss.

All arrays here live in normalised data space.  A denoiser maps a noisy
field ``x`` at noise level ``sigma`` to an estimate of the clean field; the
score follows as ``(D(x) - x) / sigma**2``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

# weights below exp(-LOGIT_CUTOFF) relative to the nearest sample are dropped
LOGIT_CUTOFF = 80.0


def edm_weight(sigma, sigma_data: float):
    """DSM loss weight ``(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def edm_scalings(sigma, sigma_data: float):
    """Preconditioning ``(c_skip, c_out, c_in, c_noise)`` at ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / s2
    c_out = sigma * sigma_data / np.sqrt(s2)
    c_in = 1.0 / np.sqrt(s2)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


class Denoiser:
    """Interface for class-conditional denoisers.

    Subclasses implement :meth:`denoise`.  Those with an exact Jacobian also
    implement :meth:`denoise_vjp`, which returns the estimate together with
    a function computing ``J^T v``.
    """

    has_jacobian = False

    def denoise(self, x, sigma: float, c: int) -> np.ndarray:
        raise NotImplementedError

    def score(self, x, sigma: float, c: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (self.denoise(x, sigma, c) - x) / sigma**2

    def denoise_vjp(self, x, sigma: float, c: int):
        raise NotImplementedError("this denoiser has no exact Jacobian")

    def jvp_t(self, x, sigma: float, c: int, v) -> np.ndarray:
        return self.denoise_vjp(x, sigma, c)[1](v)


class MixtureOraclePrior(Denoiser):
    """Exact posterior mean for Gaussian-noised empirical class distributions.

    Parameters
    ----------
    samples : dict
        Maps class id to an array ``(N_c, ...)`` of normalised training fields.
        Every class needs at least one sample.
    """

    has_jacobian = True

    def __init__(self, samples: dict):
        self._x = {}
        self._sq = {}
        self.shape = None
        for c, xs in samples.items():
            xs = np.asarray(xs, dtype=np.float64)
            if xs.shape[0] < 1:
                raise InvalidArgument(f"class {c} has no samples")
            if self.shape is None:
                self.shape = xs.shape[1:]
            elif xs.shape[1:] != self.shape:
                raise InvalidArgument("all classes must share one field shape")
            flat = np.ascontiguousarray(xs.reshape(xs.shape[0], -1))
            self._x[int(c)] = flat
            self._sq[int(c)] = np.einsum("ij,ij->i", flat, flat)

    @classmethod
    def from_dataset(cls, ds) -> "MixtureOraclePrior":
        return cls({c.id: ds.normalized(c.id) for c in ds.classes if ds.of_class(c.id)})

    @property
    def classes(self):
        return sorted(self._x)

    def count(self, c: int) -> int:
        return self._bank(c)[0].shape[0]

    def _bank(self, c):
        try:
            return self._x[int(c)], self._sq[int(c)]
        except KeyError:
            raise InvalidArgument(f"class {c} is not registered with the prior") from None

    def _flat(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.shape:
            return x.reshape(1, -1), False
        if x.shape[1:] != self.shape:
            raise InvalidArgument(f"field shape {x.shape} does not match prior {self.shape}")
        return x.reshape(x.shape[0], -1), True

    def _weights(self, xf, sigma, c):
        """Per-row (indices, weights) of the mixture components that matter.

        Indices are a slice when every component is kept, avoiding copies.
        """
        if not sigma > 0:
            raise InvalidArgument("sigma must be positive")
        X, sq = self._bank(c)
        xsq = np.einsum("ij,ij->i", xf, xf)
        d2 = np.maximum(xsq[:, None] - 2.0 * (xf @ X.T) + sq[None, :], 0.0)
        # the expansion loses absolute accuracy ~eps*|x|^2; where that is visible
        # in the logits, recompute surviving candidates from explicit differences
        rounding = 1e-14 * (xsq + sq.max())
        out = []
        for b in range(xf.shape[0]):
            exact = rounding[b] / (2.0 * sigma**2) > 1e-10
            cut = d2[b].min() + 2.0 * sigma**2 * LOGIT_CUTOFF + (1e3 * rounding[b] if exact else 0)
            keep = d2[b] <= cut
            idx = slice(None) if keep.all() else np.flatnonzero(keep)
            if exact:
                diff = X[idx] - xf[b]
                dist = np.einsum("ij,ij->i", diff, diff)
            else:
                dist = d2[b, idx]
            logits = -dist / (2.0 * sigma**2)
            logits -= logits.max()
            w = np.exp(logits)
            out.append((idx, w / w.sum()))
        return out

    def weights(self, x, sigma: float, c: int) -> np.ndarray:
        """Full mixture weight vector for a single field."""
        xf, _ = self._flat(x)
        idx, w = self._weights(xf[:1], sigma, c)[0]
        full = np.zeros(self.count(c))
        full[idx] = w
        return full

    def denoise(self, x, sigma: float, c: int) -> np.ndarray:
        return self.denoise_vjp(x, sigma, c)[0]

    def denoise_vjp(self, x, sigma: float, c: int):
        xf, batched = self._flat(x)
        X, _ = self._bank(c)
        # pruned banks are copied once and shared with the vjp
        parts = [(X[idx], w) for idx, w in self._weights(xf, sigma, c)]
        x0 = np.stack([w @ Xi for Xi, w in parts])
        shape = (xf.shape[0],) + self.shape if batched else self.shape

        def vjp(v):
            vf = np.asarray(v, dtype=np.float64).reshape(xf.shape)
            rows = []
            for b, (Xi, w) in enumerate(parts):
                # sum_i w_i (x_i - x0) <x_i - x0, v> without forming x_i - x0
                wc = w * (Xi @ vf[b] - x0[b] @ vf[b])
                rows.append((wc @ Xi - x0[b] * wc.sum()) / sigma**2)
            return np.stack(rows).reshape(shape)

        return x0.reshape(shape), vjp


def dsm_loss(denoiser: Denoiser, x0, class_ids, sigmas, noise, sigma_data: float) -> float:
    """Weighted denoising score-matching loss over a batch.

    ``noise`` holds the additive perturbations ``n ~ N(0, sigma^2 I)``
    themselves, one per batch row.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if np.any(sigmas <= 0):
        raise InvalidArgument("sigma draws must be positive")
    class_ids = np.broadcast_to(np.asarray(class_ids), sigmas.shape)
    total = 0.0
    for b in range(x0.shape[0]):
        d = denoiser.denoise(x0[b] + noise[b], float(sigmas[b]), int(class_ids[b]))
        total += float(edm_weight(sigmas[b], sigma_data)) * float(np.sum((d - x0[b]) ** 2))
    return total / x0.shape[0]
