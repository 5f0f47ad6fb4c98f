"""Monte-Carlo evaluation: frame slicing, phase/conjugation/shift/pol-swap
ambiguity resolution, symbol-error-rate statistics, and the noise-variance
and channel-estimate reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import ConfigError
from .modem import Constellation, map_decide, symbol_indices

# the blind receivers leave a phase ambiguity of multiples of pi/4 (pi/2 from
# the constellation symmetry, pi/4 from the fourth-power CPE convention) plus
# a possible conjugation
_ROTATIONS = np.exp(1j * np.pi / 4.0 * np.arange(8))


def slice_frames(x: np.ndarray, n_frame: int) -> np.ndarray:
    """Split a symbol vector into complete frames, shape (n_ind, n_frame)."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ConfigError(f"slice_frames expects a 1-D vector, got {x.shape}")
    n_ind = x.shape[0] // n_frame
    if n_ind == 0:
        raise ConfigError(f"need at least {n_frame} symbols, got {x.shape[0]}")
    return x[: n_ind * n_frame].reshape(n_ind, n_frame)


@dataclass
class Alignment:
    shift: int          # x_hat[i + shift] lines up with ref[i]
    rotation: int       # index into the 8 pi/4 rotations
    conjugate: bool
    ser: float
    n_eval: int


def _candidate_shifts(x_hat: np.ndarray, ref: np.ndarray, max_shift: int):
    """Correlation-peak shift candidates for the plain and conjugated frame."""
    n = ref.shape[0]
    cands = {0}
    for sig in (x_hat, np.conj(x_hat)):
        corr = np.correlate(sig, ref, mode="full")  # lag = idx - (n - 1)
        lags = np.arange(corr.shape[0]) - (n - 1)
        ok = np.abs(lags) <= max_shift
        cands.add(int(lags[ok][np.argmax(np.abs(corr[ok]))]))
    return sorted(cands)


def ser_estimate(x_hat: np.ndarray, ref_i: np.ndarray, ref_q: np.ndarray,
                 c: Constellation, sigma_sq: float) -> tuple[int, int]:
    """(errors, evaluated) for MAP hard decisions against reference indices."""
    i_idx, q_idx = map_decide(x_hat, c, sigma_sq)
    errors = int(np.count_nonzero((i_idx != ref_i) | (q_idx != ref_q)))
    return errors, x_hat.shape[0]


def resolve_ambiguity(x_hat: np.ndarray, ref: np.ndarray, c: Constellation,
                      sigma_sq: float, max_shift: int = 50,
                      edge_trim: int = 0) -> Alignment:
    """Minimum-SER alignment over shift, pi/4 rotations, and conjugation.

    Shifts are restricted to correlation-peak candidates (always including
    zero, so the result is never worse than the identity alignment);
    rotations and conjugation are searched exhaustively.  The estimate is
    amplitude-normalized to the reference before decisions, removing the
    residual gain ambiguity of blind equalizers.
    """
    if x_hat.shape != ref.shape:
        raise ConfigError(f"shape mismatch: {x_hat.shape} vs {ref.shape}")
    amp = np.mean(np.abs(x_hat))
    if amp > 0:
        x_hat = x_hat * (np.mean(np.abs(ref)) / amp)
    n = ref.shape[0]
    ref_i_all, ref_q_all = symbol_indices(c, ref)
    best = None
    for s in _candidate_shifts(x_hat, ref, max_shift):
        lo_hat, lo_ref = max(s, 0), max(-s, 0)
        length = n - abs(s) - 2 * edge_trim
        if length <= 0:
            continue
        seg = x_hat[lo_hat + edge_trim: lo_hat + edge_trim + length]
        ri = ref_i_all[lo_ref + edge_trim: lo_ref + edge_trim + length]
        rq = ref_q_all[lo_ref + edge_trim: lo_ref + edge_trim + length]
        for conj in (False, True):
            base = np.conj(seg) if conj else seg
            for r in range(8):
                err, n_eval = ser_estimate(base * _ROTATIONS[r], ri, rq, c, sigma_sq)
                ser = err / n_eval
                if best is None or ser < best.ser:
                    best = Alignment(shift=s, rotation=r, conjugate=conj,
                                     ser=ser, n_eval=n_eval)
    return best


def resolve_pol_pairing(x_hat: np.ndarray, ref: np.ndarray, c: Constellation,
                        sigma_sq: float, frame: int = -1,
                        n_frame: int = 10_000) -> tuple[int, ...]:
    """Run-level polarization assignment (identity or swap), decided once on
    a single frame by total minimum SER."""
    pol = x_hat.shape[0]
    if pol == 1:
        return (0,)
    frames_hat = [slice_frames(x_hat[p], n_frame)[frame] for p in range(pol)]
    frames_ref = [slice_frames(ref[p], n_frame)[frame] for p in range(pol)]
    costs = {}
    for perm in ((0, 1), (1, 0)):
        costs[perm] = sum(
            resolve_ambiguity(frames_hat[perm[p]], frames_ref[p], c, sigma_sq).ser
            for p in range(pol))
    return min(costs, key=costs.get)


def moving_average(x: np.ndarray, window: int = 10) -> np.ndarray:
    """Trailing-window mean over frame-wise values, length n - window + 1."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1 or window > x.shape[0]:
        raise ConfigError(f"window {window} invalid for {x.shape[0]} frames")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(x, kernel, mode="valid")


def frame_ser_curve(x_hat: np.ndarray, ref: np.ndarray, c: Constellation,
                    sigma_sq, n_frame: int = 10_000, edge_trim: int = 0,
                    max_shift: int = 50) -> np.ndarray:
    """Per-frame SER with per-frame ambiguity resolution, one polarization.

    sigma_sq may be a scalar or a per-frame vector (estimates from training).
    """
    fh = slice_frames(x_hat, n_frame)
    fr = slice_frames(ref[: fh.size], n_frame)
    sig = np.broadcast_to(np.asarray(sigma_sq, dtype=np.float64), (fh.shape[0],))
    out = np.empty(fh.shape[0])
    for k in range(fh.shape[0]):
        out[k] = resolve_ambiguity(fh[k], fr[k], c, float(sig[k]),
                                   max_shift=max_shift, edge_trim=edge_trim).ser
    return out


@dataclass
class SerReport:
    final_ser: float            # min over MA indices of the successful mean
    ma_mean: np.ndarray         # mean MA curve over successful traces
    n_success: int              # successful (run, pol) traces
    n_fail: int
    per_trace: np.ndarray       # (n_traces, n_ma) MA curves


def aggregate_runs(ma_curves: np.ndarray, threshold: float = 0.3) -> SerReport:
    """Combine per-(run, pol) moving-average SER curves.

    A trace is successful iff its minimum MA value is below the threshold;
    unsuccessful traces are excluded from the mean but counted.  When every
    trace fails, the report carries final_ser = 1.0.
    """
    ma = np.asarray(ma_curves, dtype=np.float64)
    if ma.ndim != 2:
        raise ConfigError(f"expected (n_traces, n_ma) curves, got {ma.shape}")
    success = ma.min(axis=1) < threshold
    n_s = int(success.sum())
    if n_s == 0:
        return SerReport(final_ser=1.0, ma_mean=np.ones(ma.shape[1]),
                         n_success=0, n_fail=ma.shape[0], per_trace=ma)
    mean = ma[success].mean(axis=0)
    return SerReport(final_ser=float(mean.min()), ma_mean=mean,
                     n_success=n_s, n_fail=int(ma.shape[0] - n_s), per_trace=ma)


def snr_report(sigma_sq, es: float = 1.0) -> np.ndarray:
    """Estimated SNR in dB from noise-variance estimates (Es / sigma^2)."""
    sig = np.asarray(sigma_sq, dtype=np.float64)
    if np.any(sig <= 0):
        raise ConfigError("noise-variance estimates must be positive")
    return 10.0 * np.log10(es / sig)


@dataclass
class IpReport:
    nmse: float                 # normalized MSE after alignment, linear
    nmse_db: float
    shift: int
    gain: complex               # complex scale applied to the true response
    h_est: np.ndarray
    h_ref_aligned: np.ndarray   # gain * shifted true response on the est grid


def ip_report(h_est: np.ndarray, h_true: np.ndarray) -> IpReport:
    """Compare an estimated impulse response against the truth.

    The estimate carries the blind delay/phase/gain ambiguity, so the truth
    is aligned by the correlation peak and a complex least-squares gain
    before computing ||h_est - g h_true|| ^ 2 / ||g h_true|| ^ 2.
    """
    h_est = np.asarray(h_est, dtype=np.complex128).ravel()
    h_true = np.asarray(h_true, dtype=np.complex128).ravel()
    corr = np.correlate(h_est, h_true, mode="full")
    lag = int(np.argmax(np.abs(corr))) - (h_true.shape[0] - 1)
    ref = np.zeros_like(h_est)
    lo = max(lag, 0)
    hi = min(lag + h_true.shape[0], h_est.shape[0])
    ref[lo:hi] = h_true[lo - lag: hi - lag]
    denom = float(np.vdot(ref, ref).real)
    if denom == 0.0:
        raise ConfigError("impulse responses do not overlap after alignment")
    gain = complex(np.vdot(ref, h_est) / denom)
    aligned = gain * ref
    err = float(np.linalg.norm(h_est - aligned) ** 2)
    power = float(np.linalg.norm(aligned) ** 2)
    if power == 0.0:
        raise ConfigError("estimate has no component along the aligned truth")
    nmse = err / power
    return IpReport(nmse=nmse, nmse_db=10.0 * np.log10(max(nmse, 1e-30)),
                    shift=lag, gain=gain, h_est=h_est, h_ref_aligned=aligned)


def qam_awgn_ser(m: int, snr_db: float) -> float:
    """Closed-form symbol error rate of uniform square M-QAM over AWGN."""
    root = int(np.sqrt(m))
    if root * root != m:
        raise ConfigError(f"modulation order must be a perfect square, got {m}")
    snr = 10.0 ** (snr_db / 10.0)
    arg = np.sqrt(3.0 * snr / (2.0 * (m - 1)))
    p = (1.0 - 1.0 / root) * erfc(arg)
    return float(1.0 - (1.0 - p) ** 2)
