"""Channel matrices, plug-in mutual information and the shuffled zero-leakage bound."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_MAX_BINS = 512


class Verdict(str, Enum):
    CHANNEL_PRESENT = "channel_present"
    NO_CHANNEL = "consistent_with_no_channel"


@dataclass
class ChannelMatrix:
    """Empirical ``p(t_bin | s)``.

    ``probs[b, k]`` is the probability of output bin ``b`` given input
    ``inputs[k]``: outputs down the rows, inputs across the columns.
    ``bin_edges`` is ``None`` when every distinct latency is its own bin
    (then ``bins`` lists them), otherwise it holds ``len(bins) + 1`` edges.
    """

    inputs: np.ndarray
    bins: np.ndarray
    probs: np.ndarray
    bin_edges: np.ndarray | None = None


@dataclass(frozen=True)
class MutualInfoResult:
    m_millibits: float
    m0_millibits: float
    shuffles: int
    confidence: float
    bins_used: int

    @property
    def verdict(self) -> Verdict:
        return classify(self.m_millibits, self.m0_millibits)


def _pairs(log):
    # a TraceLog, or any iterable of (s, t) pairs
    if hasattr(log, "secrets"):
        s, t = np.asarray(log.secrets), np.asarray(log.latencies)
    else:
        pairs = np.asarray(list(log), dtype=np.int64).reshape(-1, 2)
        s, t = pairs[:, 0], pairs[:, 1]
    if s.size == 0:
        raise ValueError("empty trace log")
    return s, t


def encode_outputs(t: np.ndarray, max_bins: int = DEFAULT_MAX_BINS):
    """Map latencies to bin codes ``0..B-1``.

    Returns ``(codes, bins, edges)``.  With at most ``max_bins`` distinct
    values each is its own bin and ``edges`` is ``None``; otherwise
    equal-width bins span ``[min t, max t]``, as many as numpy's ``"auto"``
    histogram rule asks for but never more than ``max_bins``.
    """
    values, codes = np.unique(t, return_inverse=True)
    if len(values) <= max_bins:
        return codes.ravel(), values, None
    # bin count from numpy's "auto" rule (max of Sturges and Freedman-Diaconis)
    n_bins = min(max_bins, len(np.histogram_bin_edges(t, bins="auto")) - 1)
    lo, hi = float(t.min()), float(t.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    codes = np.clip(((t - lo) / (hi - lo) * n_bins).astype(np.int64), 0, n_bins - 1)
    return codes, 0.5 * (edges[:-1] + edges[1:]), edges


def build_matrix(log, max_bins: int = DEFAULT_MAX_BINS) -> ChannelMatrix:
    s, t = _pairs(log)
    inputs, s_codes = np.unique(s, return_inverse=True)
    t_codes, bins, edges = encode_outputs(t, max_bins)
    counts = np.zeros((len(bins), len(inputs)))
    np.add.at(counts, (t_codes, s_codes.ravel()), 1)
    probs = counts / counts.sum(axis=0, keepdims=True)
    return ChannelMatrix(inputs, bins, probs, edges)


def _entropy_bits(counts: np.ndarray, n: int) -> float:
    c = counts[counts > 0].astype(np.float64)
    return float(np.log2(n) - (c * np.log2(c)).sum() / n)


def _mi_codes(s_codes: np.ndarray, n_s: int, t_codes: np.ndarray, n_t: int) -> float:
    n = len(s_codes)
    joint = np.bincount(s_codes * n_t + t_codes, minlength=n_s * n_t)
    h_s = _entropy_bits(np.bincount(s_codes, minlength=n_s), n)
    h_t = _entropy_bits(np.bincount(t_codes, minlength=n_t), n)
    return max(h_s + h_t - _entropy_bits(joint, n), 0.0)


def _codes(log, max_bins):
    s, t = _pairs(log)
    inputs, s_codes = np.unique(s, return_inverse=True)
    t_codes, bins, _ = encode_outputs(t, max_bins)
    return s_codes.ravel().astype(np.int64), len(inputs), t_codes.astype(np.int64), len(bins)


def mutual_information(log, max_bins: int = DEFAULT_MAX_BINS) -> float:
    """Plug-in estimate of I(S;T) over the empirical joint distribution, in millibits."""
    return 1000.0 * _mi_codes(*_codes(log, max_bins))


def zero_leakage_bound(
    log,
    reps: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
    max_bins: int = DEFAULT_MAX_BINS,
) -> float:
    """Upper ``confidence`` quantile of the MI of input/output pairs decorrelated by shuffling.

    Repetition ``r`` permutes the outputs with its own generator seeded from
    ``(seed, r)``, so reps are independent of scheduling.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    s_codes, n_s, t_codes, n_t = _codes(log, max_bins)
    values = np.empty(reps)
    for r in range(reps):
        rng = np.random.default_rng([seed, r])
        values[r] = _mi_codes(s_codes, n_s, rng.permutation(t_codes), n_t)
    return 1000.0 * float(np.quantile(values, confidence))


def classify(m: float, m0: float) -> Verdict:
    if m < 0 or m0 < 0:
        raise ValueError("mutual information values must be non-negative")
    return Verdict.CHANNEL_PRESENT if m > m0 else Verdict.NO_CHANNEL


def analyze(
    log,
    reps: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
    max_bins: int = DEFAULT_MAX_BINS,
) -> MutualInfoResult:
    s_codes, n_s, t_codes, n_t = _codes(log, max_bins)
    m = 1000.0 * _mi_codes(s_codes, n_s, t_codes, n_t)
    m0 = zero_leakage_bound(log, reps, confidence, seed, max_bins)
    return MutualInfoResult(m, m0, reps, confidence, n_t)
