"""Synthetic multi-asset price/volatility paths for estimator verification.

The generative system per asset i is

    dp_i = mu1_i dt + sqrt(V_i) dW_i1
    dV_i = kappa_i (theta_i - V_i) dt + xi_i * sqrt(V_i) dW_i2   (cir mode)
                                       xi_i                dW_i2   (const mode)

with corr(W_1) = price_corr, corr(W_2) = vol_corr and per-asset leverage
corr(W_i1, W_i2). Discretized by full-truncation Euler at step T/n. True
spot quantities follow from the coefficients: C_ij = rho^P_ij sqrt(V_i V_j),
V~_i = xi_i^2 V_i (cir) or xi_i^2 (const), C~_ij = rho^V_ij sqrt(V~_i V~_j).

The planted-spillover fixture generates a SpotPanel directly from a
30-minute-grid recurrence (documented on the function) in which asset 0
drives the follower variances through a persistent latent gate that is
observable only in the co-vol-of-vol edge series.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import LogPriceGrid
from .panel import SpotPanel, pair_list
from .timegrids import intraday_taus, synthetic_sessions

VOV_MODES = ("cir", "const")


@dataclass
class SvModelSpec:
    """Parameter set for the simulated stochastic-volatility universe."""

    N: int
    mu1: np.ndarray                  # (N,) price drift per day
    kappa: np.ndarray                # (N,) variance mean-reversion speed
    theta: np.ndarray                # (N,) variance mean level
    xi: np.ndarray                   # (N,) vol-of-vol scale
    vov_mode: list[str]              # per asset: "cir" or "const"
    price_corr: np.ndarray           # (N, N)
    vol_corr: np.ndarray             # (N, N)
    leverage: np.ndarray             # (N,) corr(W_i1, W_i2)
    v0: np.ndarray                   # (N,) initial variances
    symbols: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = self.N
        for name in ("mu1", "kappa", "theta", "xi", "leverage", "v0"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            setattr(self, name, arr)
        self.price_corr = _check_corr(np.asarray(self.price_corr, float), "price_corr", n)
        self.vol_corr = _check_corr(np.asarray(self.vol_corr, float), "vol_corr", n)
        if np.any(self.v0 <= 0):
            raise ValueError("v0 must be strictly positive")
        if np.any(self.kappa < 0) or np.any(self.theta < 0) or np.any(self.xi < 0):
            raise ValueError("kappa, theta, xi must be nonnegative")
        if np.any(np.abs(self.leverage) > 1):
            raise ValueError("leverage entries must lie in [-1, 1]")
        if len(self.vov_mode) != n or any(m not in VOV_MODES for m in self.vov_mode):
            raise ValueError(f"vov_mode must be {n} entries from {VOV_MODES}")
        if not self.symbols:
            self.symbols = [f"A{i:02d}" for i in range(n)]
        if len(self.symbols) != n:
            raise ValueError("symbols length mismatch")

    @classmethod
    def default(cls, N: int, theta: float = 1e-4, xi: float = 0.5,
                kappa: float = 5.0, rho_price: float = 0.3,
                rho_vol: float = 0.3, leverage: float = -0.5) -> "SvModelSpec":
        """Homogeneous CIR universe with uniform cross correlations."""
        eye = np.eye(N)
        return cls(
            N=N,
            mu1=np.zeros(N),
            kappa=np.full(N, kappa),
            theta=np.full(N, theta),
            xi=np.full(N, xi * theta ** 0.5 / 0.01),  # scale-free-ish default
            vov_mode=["cir"] * N,
            price_corr=eye + rho_price * (1 - eye),
            vol_corr=eye + rho_vol * (1 - eye),
            leverage=np.full(N, leverage),
            v0=np.full(N, theta),
        )


def _check_corr(m: np.ndarray, name: str, n: int) -> np.ndarray:
    if m.shape != (n, n):
        raise ValueError(f"{name} must be ({n}, {n}), got {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if not np.allclose(np.diag(m), 1.0, atol=1e-12):
        raise ValueError(f"{name} must have unit diagonal")
    if np.linalg.eigvalsh(m).min() < -1e-10:
        raise ValueError(f"{name} is not positive semi-definite")
    return m


def _psd_factor(m: np.ndarray, name: str) -> np.ndarray:
    """Square root L with L L^T = m for a PSD matrix."""
    w, u = np.linalg.eigh(m)
    if w.min() < -1e-10:
        raise ValueError(f"{name} is not positive semi-definite")
    return u * np.sqrt(np.clip(w, 0.0, None))


def _vol_shock_factor(spec: SvModelSpec) -> np.ndarray:
    """Factor R^(1/2) for the residual shocks of the variance Brownians.

    W_i2 = rho_i W_i1 + sqrt(1-rho_i^2) Z_i, so corr(Z) must equal
    (Q_ij - rho_i rho_j P_ij) / sqrt((1-rho_i^2)(1-rho_j^2)).
    """
    rho = spec.leverage
    p, q = spec.price_corr, spec.vol_corr
    s = np.sqrt(np.clip(1.0 - rho**2, 0.0, None))
    n = spec.N
    r = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            want = q[i, j] - rho[i] * rho[j] * p[i, j]
            if s[i] == 0.0 or s[j] == 0.0:
                if abs(want) > 1e-12:
                    raise ValueError(
                        "vol_corr incompatible with unit leverage on asset "
                        f"{i if s[i] == 0 else j}"
                    )
                r[i, j] = 0.0
            else:
                r[i, j] = want / (s[i] * s[j])
    return _psd_factor(_check_corr(r, "implied vol-shock correlation", n), "vol-shock")


@dataclass
class SimulatedDay:
    """One simulated day: price grids plus truth on the intraday grid."""

    grids: list[LogPriceGrid]
    true_spot: np.ndarray    # (N, B+1)
    true_covol: np.ndarray   # (P, B+1)
    true_vov: np.ndarray     # (N, B+1)
    true_covov: np.ndarray   # (P, B+1)
    seed: int
    step_variance: np.ndarray | None = None  # (N, n+1) step-resolution V


def _truth_from_variance(spec: SvModelSpec, v: np.ndarray,
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(covol, vov, covov) implied by variance levels v with shape (N, K)."""
    pairs = pair_list(spec.N)
    vov = np.empty_like(v)
    for i in range(spec.N):
        if spec.vov_mode[i] == "cir":
            vov[i] = spec.xi[i] ** 2 * v[i]
        else:
            vov[i] = spec.xi[i] ** 2
    covol = np.empty((len(pairs), v.shape[1]))
    covov = np.empty_like(covol)
    for p, (i, j) in enumerate(pairs):
        covol[p] = spec.price_corr[i, j] * np.sqrt(v[i] * v[j])
        covov[p] = spec.vol_corr[i, j] * np.sqrt(vov[i] * vov[j])
    return covol, vov, covov


def simulate_paths(spec: SvModelSpec, days: int, n: int = 23400,
                   seed: int = 0, start: dt.date | None = None,
                   keep_steps: bool = False) -> list[SimulatedDay]:
    """Full-truncation Euler simulation of `days` consecutive sessions.

    Day d uses an independent child seed of `seed`; variance paths carry
    over from day to day so multi-day panels have persistent volatility.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    nA = spec.N
    lp = _psd_factor(spec.price_corr, "price_corr")
    lz = _vol_shock_factor(spec)
    rho = spec.leverage
    srho = np.sqrt(np.clip(1.0 - rho**2, 0.0, None))
    T = 1.0
    dt_step = T / n
    sqdt = math.sqrt(dt_step)
    taus = np.asarray(intraday_taus())
    tau_idx = np.minimum(np.round(taus * n).astype(int), n)

    dates = synthetic_sessions(days, start)
    seeds = np.random.SeedSequence(seed).spawn(days)
    out: list[SimulatedDay] = []
    v_carry = spec.v0.copy()
    p_carry = np.zeros(nA)
    for d in range(days):
        rng = np.random.default_rng(seeds[d])
        g1 = rng.standard_normal((n, nA))
        g2 = rng.standard_normal((n, nA))
        eps_p = g1 @ lp.T
        eps_z = g2 @ lz.T

        p_path = np.empty((n + 1, nA))
        v_path = np.empty((n + 1, nA))
        p = p_carry.copy()
        vt = v_carry.copy()
        p_path[0] = p
        v_path[0] = np.maximum(vt, 0.0)
        mu1 = spec.mu1
        kap, th, xi = spec.kappa, spec.theta, spec.xi
        cir = np.asarray([m == "cir" for m in spec.vov_mode])
        for l in range(n):
            v_pos = np.maximum(vt, 0.0)
            sv = np.sqrt(v_pos)
            w2 = rho * eps_p[l] + srho * eps_z[l]
            p = p + mu1 * dt_step + sv * sqdt * eps_p[l]
            diff = np.where(cir, xi * sv, xi)
            vt = vt + kap * (th - v_pos) * dt_step + diff * sqdt * w2
            p_path[l + 1] = p
            v_path[l + 1] = np.maximum(vt, 0.0)
        p_carry = p
        v_carry = vt

        grids = [
            LogPriceGrid(symbol=spec.symbols[i], day=dates[d],
                         values=p_path[:, i], n=n, T=T)
            for i in range(nA)
        ]
        v_tau = v_path[tau_idx].T  # (N, B+1)
        covol, vov, covov = _truth_from_variance(spec, v_tau)
        out.append(SimulatedDay(
            grids=grids, true_spot=v_tau, true_covol=covol, true_vov=vov,
            true_covov=covov, seed=seed,
            step_variance=v_path.T.copy() if keep_steps else None,
        ))
    return out


def truth_panel(spec: SvModelSpec, sim_days: list[SimulatedDay],
                ) -> SpotPanel:
    """Assemble the true processes into a SpotPanel on the intraday grid.

    Uses the first 14 grid values per day (the estimator's tau grid).
    """
    taus = intraday_taus()
    b_per = len(taus)
    vol = np.concatenate([day.true_spot[:, :b_per] for day in sim_days], axis=1)
    vov = np.concatenate([day.true_vov[:, :b_per] for day in sim_days], axis=1)
    covol = np.concatenate([day.true_covol[:, :b_per] for day in sim_days], axis=1)
    covov = np.concatenate([day.true_covov[:, :b_per] for day in sim_days], axis=1)
    return SpotPanel(assets=list(spec.symbols),
                     dates=[d.grids[0].day for d in sim_days],
                     taus=list(map(float, taus)), vol=vol, vov=vov,
                     covol=covol, covov=covov)


@dataclass
class PlantedSpillover:
    """Planted-spillover fixture: panel plus generation truth."""

    panel: SpotPanel
    driver: int          # asset index whose variance drives the others
    gate: np.ndarray     # latent spill gate per global instant
    spill_strength: float
    seed: int


def planted_spillover_dataset(N: int, days: int, spill_strength: float,
                              seed: int = 0, noise_scale: float = 1.0,
                              ) -> PlantedSpillover:
    """SpotPanel on the 30-minute grid with a planted spillover channel.

    Generative recurrence (global instant b, 14 per day):

      gate:      g_{b+1} = 0.50 g_b + 0.90 * ns * eps,    lam_b = sigmoid(g_b)
      driver:    log V_{0,b+1} = (1-phi0) log th_0 + phi0 log V_{0,b}
                                  + sig0 * ns * eps
      follower:  V_{j,b+1} = (1-s) [th_j + phi_j (V_{j,b} - th_j)]
                             + s [th_j + c lam_b (V_{0,b} - th_0)]
                             + sig_j * ns * eps,   floored at 1e-8
      vov:       V~_{i,b} = 0.25 V_{i,b}
      covol:     C_{ij,b} = 0.3 sqrt(V_i V_j) (1 + 0.05 ns eps)
      covov:     C~_{0j,b} = [(1-s) 0.1 + s 0.8 lam_b] * 0.25 sqrt(th_0 th_j)
                 C~_{ij,b} = 0.1 sqrt(V~_i V~_j) (1 + 0.05 ns eps), i,j != 0

    with s = spill_strength and ns = noise_scale. The spill gate lam is
    observable only through the covov series of driver pairs, i.e. only
    through edge features, and it rides on a fixed scale there so it
    enters those features affinely with no level nuisance. Gate and
    driver mix fast (phi0 = 0.5, gate AR 0.5) so stale copies of the
    spill signal embedded in follower lags decay quickly: fresh V_0 and
    lam are readable only from the driver node and its pair edges.
    With ns = 0 and s = 1 the follower
    recurrence is an exact function of V_{0,b} (the gate freezes at
    sigmoid(0)). The true best predictor of V_j uses lagged V_0
    whenever s > 0.
    """
    if not 0.0 <= spill_strength <= 1.0:
        raise ValueError("spill_strength must lie in [0, 1]")
    if N < 2:
        raise ValueError("need at least 2 assets")
    rng = np.random.default_rng(seed)
    per_day = len(intraday_taus())
    T = days * per_day
    s = spill_strength
    ns = noise_scale

    th0 = 1e-4
    phi0, sig0 = 0.5, 0.35
    thetas = th0 * (1.0 + 0.5 * np.arange(N) / max(N - 1, 1))  # heterogeneous
    phi_f, sig_f = 0.6, 8e-6
    gain = 1.0

    gate_state = np.empty(T)
    g = 0.0
    for b in range(T):
        gate_state[b] = g
        g = 0.50 * g + 0.90 * ns * rng.standard_normal()
    lam = 1.0 / (1.0 + np.exp(-gate_state))

    vol = np.empty((N, T))
    x0 = math.log(th0)
    logv = x0
    for b in range(T):
        vol[0, b] = math.exp(logv)
        logv = (1 - phi0) * x0 + phi0 * logv + sig0 * ns * rng.standard_normal()
    for j in range(1, N):
        vj = thetas[j]
        for b in range(T):
            vol[j, b] = vj
            own = thetas[j] + phi_f * (vj - thetas[j])
            spill = thetas[j] + gain * lam[b] * (vol[0, b] - th0)
            vj = (1 - s) * own + s * spill + sig_f * ns * rng.standard_normal()
            vj = max(vj, 1e-8)

    vov = 0.25 * vol
    pairs = pair_list(N)
    covol = np.empty((len(pairs), T))
    covov = np.empty((len(pairs), T))
    for p, (i, j) in enumerate(pairs):
        covol[p] = 0.3 * np.sqrt(vol[i] * vol[j]) * (
            1.0 + 0.05 * ns * rng.standard_normal(T))
        if i == 0:
            flat = 0.25 * math.sqrt(thetas[0] * thetas[j])
            covov[p] = ((1 - s) * 0.1 + s * 0.8 * lam) * flat
        else:
            base = np.sqrt(vov[i] * vov[j])
            covov[p] = 0.1 * base * (1.0 + 0.05 * ns * rng.standard_normal(T))

    panel = SpotPanel(
        assets=[f"A{i:02d}" for i in range(N)],
        dates=synthetic_sessions(days),
        taus=list(map(float, intraday_taus())),
        vol=vol, vov=vov, covol=covol, covov=covov,
    )
    return PlantedSpillover(panel=panel, driver=0, gate=lam,
                            spill_strength=s, seed=seed)
