"""Pure-Python kernels.

Reference semantics for the compiled twin in ``_ckernels.pyx``. Both must
produce bit-identical floats, so keep the operation order in sync.
"""

from __future__ import annotations

import math
from collections import deque
from fractions import Fraction

BACKEND = "python"


class Ewma:
    """y_0 = x_0, y_t = alpha*x_t + (1 - alpha)*y_{t-1}."""

    def __init__(self, alpha: float):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
        self.alpha = float(alpha)
        self.value = 0.0
        self.count = 0

    def update(self, x: float) -> float:
        x = float(x)
        if self.count == 0:
            self.value = x
        else:
            self.value = self.alpha * x + (1.0 - self.alpha) * self.value
        self.count += 1
        return self.value


class RollingMax:
    """Session-local max normalisation over the last ``window`` values."""

    def __init__(self, window: int, eps: float = 1e-9):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window!r}")
        self.window = int(window)
        self.eps = float(eps)
        self._buf: deque[float] = deque(maxlen=self.window)

    def update(self, x: float) -> float:
        x = float(x)
        self._buf.append(x)
        peak = max(self._buf)
        if peak < self.eps:
            peak = self.eps
        v = x / peak
        if v < 0.0:
            return 0.0
        return v


class RollingZ:
    """Absolute rolling z-score, population std over the window incl. x."""

    def __init__(self, window: int, eps: float = 1e-9):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window!r}")
        self.window = int(window)
        self.eps = float(eps)
        self._buf: deque[float] = deque(maxlen=self.window)

    def update(self, x: float) -> float:
        x = float(x)
        self._buf.append(x)
        n = len(self._buf)
        mean = 0.0
        for v in self._buf:
            mean += v
        mean /= n
        var = 0.0
        for v in self._buf:
            var += (v - mean) * (v - mean)
        var /= n
        return abs(x - mean) / (math.sqrt(var) + self.eps)


def ewma_series(xs, alpha: float) -> list[float]:
    state = Ewma(alpha)
    return [state.update(x) for x in xs]


def rolling_max_norm_series(xs, window: int, eps: float = 1e-9) -> list[float]:
    state = RollingMax(window, eps)
    return [state.update(x) for x in xs]


def presquash_sums(kind_idx, conf, offsets, weights, effects) -> list[float]:
    """Accumulate w*p*e per screen; returns a flat [net, mem, res] * n list.

    ``kind_idx[j] < 0`` marks a component whose class has no prior entry;
    it is skipped. ``effects`` is flat, three entries per class.
    """
    n_screens = len(offsets) - 1
    out = [0.0] * (3 * n_screens)
    for s in range(n_screens):
        s_net = 0.0
        s_mem = 0.0
        s_res = 0.0
        for j in range(offsets[s], offsets[s + 1]):
            k = kind_idx[j]
            if k < 0:
                continue
            p = conf[j]
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            w = weights[k]
            s_net += w * p * effects[3 * k]
            s_mem += w * p * effects[3 * k + 1]
            s_res += w * p * effects[3 * k + 2]
        out[3 * s] = s_net
        out[3 * s + 1] = s_mem
        out[3 * s + 2] = s_res
    return out


def bh_count(p_values, q: float) -> int:
    """Number of hypotheses rejected by the Benjamini-Hochberg step-up rule."""
    ps = sorted(float(p) for p in p_values)
    m = len(ps)
    k = 0
    for i in range(m, 0, -1):
        p, bound = ps[i - 1], (i / m) * q
        if abs(p - bound) <= 1e-12 * max(bound, 1e-300):
            # too close for float rounding to decide; compare exactly
            if Fraction(p) <= Fraction(i, m) * Fraction(q):
                k = i
                break
        elif p <= bound:
            k = i
            break
    return k
