"""Fourier-Fejer estimators of spot volatility and volatility of volatility.

First pass: Fourier coefficients of log returns,
    c_k(dp) = (1/T) sum_l exp(-i k (2pi/T) t_l) (p(t_{l+1}) - p(t_l)).
Convolution pass: coefficients of the (co-)volatility,
    c_k(C_ab) = T/(2Nc+1) sum_{|l|<=Nc, |k-l|<=Nc} c_l(dp_a) c_{k-l}(dp_b).
Second pass: coefficients of the (co-)vol-of-vol,
    c_k(C~) = (2pi/T)^2 T/(2S+1) sum_{|l|<=S, |k-l|<=S} l(l-k) c_l(C) c_{k-l}(C).
Spot paths are recovered by Fejer inversion,
    s(tau) = sum_{|k|<M} (1 - |k|/M) c_k exp(i k (2pi/T) tau).

Both convolutions truncate BOTH factor indices at the first-pass cap. This
keeps the estimated covariance matrix exactly positive semi-definite at
every tau (the estimator becomes an integral of rank-one terms against the
nonnegative Fejer kernel) and makes cross-coefficient conjugate symmetry
exact; the dropped edge terms are of relative order kmax/Nc. The (2pi/T)^2
factor in the second pass restores natural units so that constant-parameter
simulations recover xi^2 levels; this scale convention is pinned by the
simulator-based tests.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConsistencyError
from .ingest import LogPriceGrid
from .panel import SpotPanel, pair_list
from .timegrids import intraday_taus

logger = logging.getLogger(__name__)

IMAG_RESIDUE_TOL = 1e-9


@dataclass
class CoeffArray:
    """Dense complex Fourier coefficients for harmonics k = -K..K."""

    values: np.ndarray
    K: int
    T: float = 1.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if len(self.values) != 2 * self.K + 1:
            raise ValueError(
                f"CoeffArray with K={self.K} needs {2 * self.K + 1} values, "
                f"got {len(self.values)}"
            )

    def get(self, k: int) -> complex:
        if abs(k) > self.K:
            raise IndexError(f"harmonic {k} outside |k| <= {self.K}")
        return complex(self.values[k + self.K])

    def band(self, kmax: int) -> np.ndarray:
        """Values for |k| <= kmax as a contiguous array."""
        if kmax > self.K:
            raise ValueError(f"requested band {kmax} exceeds K={self.K}")
        c = self.K
        return self.values[c - kmax: c + kmax + 1]


@dataclass
class CuttingFreqs:
    """Harmonic caps for the two estimation passes.

    N: first-pass convolution cap, M: spot inversion cap,
    S: second-pass convolution cap, L_inv: vol-of-vol inversion cap.
    """

    N: int
    M: int
    S: int
    L_inv: int

    def __post_init__(self) -> None:
        if not (0 < self.L_inv < self.S < self.N):
            raise ValueError(
                f"need 0 < L_inv < S < N, got L_inv={self.L_inv} S={self.S} N={self.N}"
            )
        if not (0 < self.M < self.N):
            raise ValueError(f"need 0 < M < N, got M={self.M} N={self.N}")


def default_cutting_freqs(n: int) -> CuttingFreqs:
    """Nyquist-limited first pass, square-root spot inversion cap,
    fourth-root second-pass cap.

    The second pass squares estimated coefficients, so its noise bias
    grows like S^2/n; a fourth-root S keeps that bias subdominant while
    a square-root S would freeze it at a constant level.
    """
    s = max(int(math.isqrt(math.isqrt(n))), 5)
    return CuttingFreqs(N=n // 2, M=int(math.isqrt(n)), S=s, L_inv=int(math.isqrt(4 * s)))


@dataclass
class SpotSeries:
    """One estimated path on the intraday grid."""

    ident: str
    kind: str  # vol | covol | vov | covov
    taus: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("vol", "covol", "vov", "covov"):
            raise ValueError(f"unknown series kind {self.kind!r}")
        if len(self.taus) != len(self.values):
            raise ValueError("taus and values length mismatch")


def return_coeffs(grid: LogPriceGrid, kmax: int, method: str = "auto") -> CoeffArray:
    """Fourier coefficients of the log returns for |k| <= kmax.

    The uniform session grid admits an FFT fast path (the DFT kernel is
    exactly exp(-i k 2pi l / n), periodic in k with period n); `method`
    can force the direct evaluation, which matches to ~1e-12.
    """
    if kmax < 0:
        raise ValueError("kmax must be nonnegative")
    r = grid.returns()
    n, T = grid.n, grid.T
    if method not in ("auto", "fft", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "fft"):
        spectrum = np.fft.fft(r)
        k = np.arange(-kmax, kmax + 1)
        values = spectrum[np.mod(k, n)] / T
    else:
        times = np.arange(n) * (T / n)
        values = return_coeffs_nonuniform(times, r, T, kmax).values
    return CoeffArray(values=values, K=kmax, T=T)


def return_coeffs_nonuniform(times: np.ndarray, returns: np.ndarray, T: float,
                             kmax: int) -> CoeffArray:
    """Direct evaluation of the return coefficients on explicit times t_l."""
    if kmax < 0:
        raise ValueError("kmax must be nonnegative")
    times = np.asarray(times, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if times.shape != returns.shape:
        raise ValueError("times and returns must align")
    omega = 2.0 * np.pi / T
    ks = np.arange(-kmax, kmax + 1)
    values = np.empty(2 * kmax + 1, dtype=np.complex128)
    # chunk over k to bound the (k, l) phase matrix
    step = 512
    for lo in range(0, len(ks), step):
        kc = ks[lo: lo + step]
        phase = np.exp(-1j * omega * np.outer(kc, times))
        values[lo: lo + step] = phase @ returns / T
    return CoeffArray(values=values, K=kmax, T=T)


def covol_coeffs(a: CoeffArray, b: CoeffArray, Nc: int, kmax: int) -> CoeffArray:
    """Convolve two return-coefficient arrays into (co-)volatility coefficients.

    c_k(C) = T/(2Nc+1) * sum over |l| <= Nc and |k-l| <= Nc of
    c_l(dp_a) c_{k-l}(dp_b), for |k| <= kmax. With a = b this is the
    volatility of a single asset.
    """
    if kmax < 0 or Nc <= 0:
        raise ValueError("need Nc > 0 and kmax >= 0")
    if kmax > Nc:
        raise ValueError(f"kmax={kmax} must not exceed Nc={Nc}")
    need = Nc + kmax
    if a.K < need or b.K < need:
        raise ValueError(
            f"inputs must cover |k| <= Nc + kmax = {need}, have K={a.K}, {b.K}"
        )
    if a.T != b.T:
        raise ValueError("coefficient arrays with different periods")
    T = a.T
    av = a.band(Nc)
    bv = b.band(Nc)
    # full convolution covers k = -2Nc .. 2Nc; index k at position k + 2Nc
    if Nc <= 256:
        conv = np.convolve(av, bv)
    else:
        conv = fftconvolve(av, bv)
    c = 2 * Nc
    out = conv[c - kmax: c + kmax + 1] * (T / (2 * Nc + 1))
    return CoeffArray(values=out, K=kmax, T=T)


def vov_coeffs(cov: CoeffArray, Scap: int, kmax: int) -> CoeffArray:
    """Second-pass convolution: (co-)vol-of-vol coefficients.

    c_k(C~) = (2pi/T)^2 * T/(2S+1) * sum over |l| <= S and |k-l| <= S of
    l(l-k) c_l(C) c_{k-l}(C). Implemented through d_l = l c_l(C):
    l(l-k) c_l c_{k-l} = -d_l d_{k-l}, so the sum is minus a plain
    convolution of the d array with itself.
    """
    if kmax < 0 or Scap <= 0:
        raise ValueError("need Scap > 0 and kmax >= 0")
    if kmax > Scap:
        raise ValueError(f"kmax={kmax} must not exceed Scap={Scap}")
    need = Scap + kmax
    if cov.K < need:
        raise ValueError(f"input must cover |l| <= S + kmax = {need}, has K={cov.K}")
    T = cov.T
    ls = np.arange(-Scap, Scap + 1)
    d = ls * cov.band(Scap)
    conv = np.convolve(d, d)
    c = 2 * Scap
    omega2 = (2.0 * np.pi / T) ** 2
    out = -conv[c - kmax: c + kmax + 1] * (T / (2 * Scap + 1)) * omega2
    return CoeffArray(values=out, K=kmax, T=T)


def fejer_invert(coeffs: CoeffArray, Mcap: int, taus: np.ndarray,
                 ident: str = "", kind: str = "vol") -> SpotSeries:
    """Evaluate the Fejer-weighted Fourier sum at the grid times.

    The result of a conjugate-symmetric coefficient array is real; the
    imaginary residue is checked against a relative tolerance and dropped.
    """
    if Mcap <= 0:
        raise ValueError("Mcap must be positive")
    if coeffs.K < Mcap - 1:
        raise ValueError(f"coeffs must cover |k| < {Mcap}, have K={coeffs.K}")
    taus = np.asarray(taus, dtype=np.float64)
    ks = np.arange(-(Mcap - 1), Mcap)
    weights = 1.0 - np.abs(ks) / Mcap
    omega = 2.0 * np.pi / coeffs.T
    phase = np.exp(1j * omega * np.outer(taus, ks))
    s = phase @ (weights * coeffs.band(Mcap - 1))
    scale = np.max(np.abs(s)) if len(s) else 0.0
    if scale > 0.0:
        residue = np.max(np.abs(s.imag)) / scale
        if residue >= IMAG_RESIDUE_TOL:
            raise ConsistencyError(
                f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_TOL:.0e} "
                f"for {ident or 'series'} ({kind})"
            )
    return SpotSeries(ident=ident, kind=kind, taus=taus, values=s.real.copy())


def estimate_day(grids: list[LogPriceGrid], freqs: CuttingFreqs | None = None,
                 taus: np.ndarray | None = None,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All four estimate families for one day.

    Returns (vol (N, B), vov (N, B), covol (P, B), covov (P, B)) with
    pairs ordered lexicographically i < j.
    """
    n = grids[0].n
    if any(g.n != n for g in grids):
        raise ValueError("grids for one day must share n")
    if any(g.day != grids[0].day for g in grids):
        raise ValueError("grids for one day must share the date")
    if freqs is None:
        freqs = default_cutting_freqs(n)
    if taus is None:
        taus = np.asarray(intraday_taus())
    nA = len(grids)
    kmax1 = max(freqs.M - 1, freqs.S + freqs.L_inv - 1)
    ret_k = freqs.N + kmax1
    rets = [return_coeffs(g, ret_k) for g in grids]

    B = len(taus)
    vol = np.empty((nA, B))
    vov = np.empty((nA, B))
    pairs = pair_list(nA)
    covol = np.empty((len(pairs), B))
    covov = np.empty((len(pairs), B))

    for i in range(nA):
        cc = covol_coeffs(rets[i], rets[i], freqs.N, kmax1)
        vol[i] = fejer_invert(cc, freqs.M, taus, grids[i].symbol, "vol").values
        vv = vov_coeffs(cc, freqs.S, freqs.L_inv - 1)
        vov[i] = fejer_invert(vv, freqs.L_inv, taus, grids[i].symbol, "vov").values
    for p, (i, j) in enumerate(pairs):
        cc = covol_coeffs(rets[i], rets[j], freqs.N, kmax1)
        ident = f"{grids[i].symbol}-{grids[j].symbol}"
        covol[p] = fejer_invert(cc, freqs.M, taus, ident, "covol").values
        vv = vov_coeffs(cc, freqs.S, freqs.L_inv - 1)
        covov[p] = fejer_invert(vv, freqs.L_inv, taus, ident, "covov").values
    return vol, vov, covol, covov


def estimate_panel(days: list[list[LogPriceGrid]],
                   freqs: CuttingFreqs | None = None,
                   taus: np.ndarray | None = None) -> SpotPanel:
    """Run both estimation passes over a sequence of synchronized days.

    Each element of `days` holds one LogPriceGrid per asset, all for the
    same date and in a consistent asset order. Days with a missing or
    inconsistent asset set are excluded with a warning.
    """
    if not days:
        raise ValueError("no days to estimate")
    taus = np.asarray(intraday_taus()) if taus is None else np.asarray(taus)
    symbols = [g.symbol for g in days[0]]
    nA = len(symbols)

    kept_dates: list[dt.date] = []
    blocks = []
    for day_grids in days:
        if (len(day_grids) != nA
                or any(g is None for g in day_grids)
                or [g.symbol for g in day_grids] != symbols):
            got = [g.symbol for g in day_grids if g is not None]
            logger.warning("excluding day with incomplete asset set: %s", got)
            continue
        blocks.append(estimate_day(day_grids, freqs, taus))
        kept_dates.append(day_grids[0].day)
    if not blocks:
        raise ValueError("no complete days to estimate")

    vol = np.concatenate([b[0] for b in blocks], axis=1)
    vov = np.concatenate([b[1] for b in blocks], axis=1)
    covol = np.concatenate([b[2] for b in blocks], axis=1)
    covov = np.concatenate([b[3] for b in blocks], axis=1)
    return SpotPanel(assets=list(symbols), dates=kept_dates,
                     taus=list(map(float, taus)), vol=vol, vov=vov,
                     covol=covol, covov=covov)
