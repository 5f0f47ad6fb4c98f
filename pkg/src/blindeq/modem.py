"""Square-QAM constellations with Maxwell-Boltzmann shaping, sampling,
entropy, MAP hard decision, and the shaping-aware soft demapper.

Normalization convention: the shaping parameter ``nu`` applies to the
unscaled odd-integer amplitude levels {..., -3, -1, 1, 3, ...}.  The levels
are then scaled by a common factor so that the expected 2-D symbol energy
under the prior equals 1.  In metrics evaluated on the *scaled* levels the
shaping term uses ``nu_scaled = nu / scale**2``, which leaves MAP decisions
invariant under the normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .sigproc import ComplexSignal


@dataclass(frozen=True)
class Constellation:
    m: int                      # modulation order (perfect square)
    nu: float                   # shaping parameter on integer levels, >= 0
    levels: np.ndarray          # sqrt(M) scaled amplitude levels, increasing
    prior: np.ndarray           # per-level Maxwell-Boltzmann probabilities
    scale: float                # integer level -> scaled level factor
    nu_scaled: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nu_scaled",
                           self.nu / self.scale ** 2 if self.scale > 0 else 0.0)

    @property
    def n_levels(self) -> int:
        return self.levels.shape[0]

    def table(self) -> str:
        rows = [f"{a:+.6f}  {p:.6f}" for a, p in zip(self.levels, self.prior)]
        return "level      prior\n" + "\n".join(rows)


def build_constellation(m: int, nu: float = 0.0) -> Constellation:
    """Unit-energy square M-QAM with a Maxwell-Boltzmann prior."""
    root = math.isqrt(m)
    if root * root != m or root < 2:
        raise ConfigError(f"modulation order must be a perfect square >= 4, got {m}")
    if not np.isfinite(nu) or nu < 0:
        raise ConfigError(f"shaping parameter must be finite and >= 0, got {nu}")
    ints = np.arange(-(root - 1), root, 2, dtype=np.float64)
    prior = np.exp(-nu * ints ** 2)
    prior /= prior.sum()
    # E[|x|^2] = E[(x^I)^2] + E[(x^Q)^2] with independent components
    energy_2d = 2.0 * float(prior @ ints ** 2)
    scale = 1.0 / math.sqrt(energy_2d)
    return Constellation(m=m, nu=nu, levels=ints * scale, prior=prior, scale=scale)


def entropy(c: Constellation) -> float:
    """Constellation entropy in bits (2-D, independent I/Q)."""
    p = c.prior[c.prior > 0]
    return -2.0 * float(p @ np.log2(p))


def nu_for_entropy(m: int, h_target: float, tol: float = 1e-9) -> float:
    """Invert the monotone-decreasing entropy(nu) map by bisection."""
    h_max = math.log2(m)
    if not 2.0 < h_target <= h_max:
        raise ConfigError(f"target entropy {h_target} outside (2, {h_max}] for M={m}")
    if abs(h_target - h_max) < tol:
        return 0.0
    lo, hi = 0.0, 1.0
    while entropy(build_constellation(m, hi)) > h_target:
        hi *= 2.0
        if hi > 1e6:
            raise ConfigError(f"cannot bracket entropy target {h_target}")
    while True:
        mid = 0.5 * (lo + hi)
        h_mid = entropy(build_constellation(m, mid))
        if abs(h_mid - h_target) < tol or (hi - lo) < 1e-15:
            return mid
        if h_mid > h_target:
            lo = mid
        else:
            hi = mid


def sample_symbols(c: Constellation, n: int, rng: np.random.Generator) -> ComplexSignal:
    """i.i.d. symbols at 1 sample/symbol, I and Q drawn independently."""
    if n <= 0:
        raise ConfigError(f"symbol count must be positive, got {n}")
    i_lev = rng.choice(c.n_levels, size=n, p=c.prior)
    q_lev = rng.choice(c.n_levels, size=n, p=c.prior)
    return ComplexSignal(c.levels[i_lev] + 1j * c.levels[q_lev], sps=1)


def symbol_indices(c: Constellation, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact level indices of noiseless constellation points (genie reference)."""
    i_idx = np.argmin(np.abs(x.real[:, None] - c.levels[None, :]), axis=1)
    q_idx = np.argmin(np.abs(x.imag[:, None] - c.levels[None, :]), axis=1)
    return i_idx, q_idx


def decision_boundaries(c: Constellation, sigma_sq: float) -> np.ndarray:
    """MAP decision boundaries between adjacent levels.

    Equating -(v-a)^2/(2 s2) - nu a^2 across neighbours a < b gives the
    boundary v = (1 + 2 nu s2) (a + b) / 2; large nu pulls boundaries
    outward so inner levels win more often.
    """
    mids = 0.5 * (c.levels[:-1] + c.levels[1:])
    return (1.0 + 2.0 * c.nu_scaled * sigma_sq) * mids


def map_decide(x_hat: np.ndarray, c: Constellation, sigma_sq: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-component MAP hard decision; returns (I, Q) level index arrays.

    Points exactly on a boundary go to the inner (smaller |A|) level.
    """
    if sigma_sq <= 0:
        raise ConfigError(f"noise variance must be positive, got {sigma_sq}")
    b = decision_boundaries(c, sigma_sq)
    x_hat = np.asarray(x_hat)
    i_idx = _decide_component(x_hat.real, b)
    q_idx = _decide_component(x_hat.imag, b)
    return i_idx, q_idx


def _decide_component(v: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    # side="left" on the negative half and "right" on the positive half keeps
    # exact boundary hits on the inner level
    k = boundaries.shape[0]
    left = np.searchsorted(boundaries, v, side="left")
    right = np.searchsorted(boundaries, v, side="right")
    inner = (k + 1) // 2  # first index of the non-negative levels
    return np.where(left >= inner, left, right)


def soft_demap(x_hat: np.ndarray, c: Constellation, sigma_sq: float,
               matched: bool = True) -> np.ndarray:
    """Per-symbol, per-component posterior approximations.

    Returns an array of shape (N, 2, sqrt(M)); axis 1 is (I, Q).  With
    ``matched=False`` the shaping correction is dropped (uniform-QAM
    demapper), reproducing the mismatched-demapper variant.
    """
    if sigma_sq <= 0:
        raise ConfigError(f"noise variance must be positive, got {sigma_sq}")
    x_hat = np.asarray(x_hat)
    comps = np.stack([x_hat.real, x_hat.imag], axis=1)  # (N, 2)
    logits = -((comps[:, :, None] - c.levels[None, None, :]) ** 2) / (2.0 * sigma_sq)
    if matched:
        logits = logits - c.nu_scaled * c.levels[None, None, :] ** 2
    logits -= logits.max(axis=2, keepdims=True)
    q = np.exp(logits)
    q /= q.sum(axis=2, keepdims=True)
    return q
