"""Seeded Monte Carlo experiments and the datasets behind the standard figures.

Every trial draws its noise from a counter-based generator keyed by
``(seed, trial)``, so results do not depend on execution order and a single
trial can be replayed on its own.

SNR convention: ``SNR_dB = 10 log10(|s|^2 / sigma^2)`` per source and
sensor, with unit source amplitudes, so ``sigma = 10**(-SNR_dB / 20)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import cbf_estimate, nlls_ml_estimate
from .class_estimator import CertificationError, solve_class_for_order
from .consistency import check_consistency
from .manifold import NoiseModel, SparseRepresentation, UlaManifold, trial_rng
from .performance import (
    EMPIRICAL_GAMMA,
    EULER_GAMMA,
    LambdaMoments,
    extreme_value_moments,
    montecarlo_lambda_moments,
    predict_performance,
)
from .perturbation import build_expansion

__all__ = [
    "CSV_VERSION",
    "FIGURES",
    "ExperimentConfig",
    "TrialResult",
    "MethodAggregate",
    "MonteCarloResult",
    "ScenarioError",
    "load_config",
    "snr_to_sigma",
    "match_estimates",
    "run_montecarlo",
    "run_figure",
    "write_csv",
    "max_sampled_dual",
    "continuous_dual_max_ula",
]

CSV_VERSION = 1
FIGURES = ("lambda_moments", "mse_vs_m", "bias_vs_m", "mse_vs_snr", "var_vs_snr")
OUTLIER_FACTOR = 10.0


class ScenarioError(ValueError):
    """The configured scenario cannot support the requested analysis."""


def snr_to_sigma(snr_db: float, amplitude: float = 1.0) -> float:
    return float(amplitude * 10 ** (-snr_db / 20))


@dataclass(frozen=True)
class ExperimentConfig:
    """Scenario description for Monte Carlo runs on a ULA.

    ``separation`` is the electrical-angle gap between neighboring sources,
    or the preset ``"twice-rayleigh"`` (``4 pi / m``). Sources are centered
    on ``center``. ``ms`` and ``snrs_db`` are the sweep axes of the figures.
    """

    m: int = 15
    ms: Tuple[int, ...] = (8, 12, 16, 24, 32, 48, 64)
    T: int = 1
    n_sources: int = 2
    separation: Union[str, float] = "twice-rayleigh"
    center: float = 0.0
    amplitudes: Tuple[complex, ...] = (1.0, 1.0)
    sigma: float = 1e-3
    snrs_db: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    trials: int = 100
    seed: int = 0
    methods: Tuple[str, ...] = ("class",)
    moments: str = "asymptotic"  # or "montecarlo"
    gamma_expectation: float = EMPIRICAL_GAMMA
    moment_trials: int = 400
    lambda_ms: Tuple[int, ...] = (32, 64, 128, 256, 512, 1024)
    lambda_trials: int = 2000
    output: Optional[str] = None

    def separation_for(self, m: int) -> float:
        if isinstance(self.separation, str):
            if self.separation != "twice-rayleigh":
                raise ValueError(f"unknown separation preset {self.separation!r}")
            return 4 * np.pi / m
        return float(self.separation)

    def truth(self, m: Optional[int] = None) -> SparseRepresentation:
        m = m or self.m
        d = self.separation_for(m)
        n = self.n_sources
        th = self.center + d * (np.arange(n) - (n - 1) / 2)
        amps = np.asarray(self.amplitudes[:n], dtype=complex)
        if amps.size != n:
            raise ValueError("one amplitude per source required")
        return SparseRepresentation(th, np.tile(amps[:, None], (1, self.T)))


_TUPLE_FIELDS = {"ms": int, "snrs_db": float, "amplitudes": complex, "methods": str, "lambda_ms": int}


def load_config(source, **overrides) -> ExperimentConfig:
    """Read ``key = value`` lines (``#`` comments) into an :class:`ExperimentConfig`.

    Tuple-valued keys take comma-separated lists.
    """
    text = Path(source).read_text() if isinstance(source, (str, Path)) and Path(source).exists() else str(source)
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values: Dict[str, object] = {}
    for raw in text.splitlines():
        ln = raw.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ValueError(f"cannot parse config line {raw!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        if k not in types:
            raise ValueError(f"unknown config key {k!r}")
        values[k] = _parse_value(k, v)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def _parse_value(key, v):
    if key in _TUPLE_FIELDS:
        conv = _TUPLE_FIELDS[key]
        return tuple(conv(x.strip()) for x in v.split(",") if x.strip())
    if key == "separation":
        try:
            return float(v)
        except ValueError:
            return v
    if key in ("m", "T", "n_sources", "trials", "seed", "moment_trials", "lambda_trials"):
        return int(v)
    if key in ("center", "sigma", "gamma_expectation"):
        return float(v)
    return v


# --- matching and aggregation --------------------------------------------------------


def match_estimates(estimates, truth, period: Optional[float] = None):
    """Minimum-cost assignment of estimates to true positions.

    Returns ``(errors, outliers)``: signed errors per true position (NaN
    when a source has no estimate) and the unassigned estimates.
    """
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    tru = np.atleast_1d(np.asarray(truth, dtype=float))
    diff = est[None, :] - tru[:, None]
    if period is not None:
        diff = (diff + period / 2) % period - period / 2
    errors = np.full(tru.size, np.nan)
    if est.size == 0:
        return errors, est
    r, c = linear_sum_assignment(np.abs(diff))
    errors[r] = diff[r, c]
    outliers = np.delete(est, c)
    return errors, outliers


@dataclass(frozen=True)
class TrialResult:
    trial: int
    method: str
    thetas: np.ndarray
    errors: np.ndarray
    outliers: np.ndarray
    lam: float
    certified: bool
    flagged: bool = False


@dataclass(frozen=True)
class MethodAggregate:
    method: str
    bias: np.ndarray
    variance: np.ndarray
    mse: np.ndarray
    bias_trimmed: np.ndarray
    variance_trimmed: np.ndarray
    mse_trimmed: np.ndarray
    outlier_rate: float
    missing_rate: float
    trials: int
    mean_lambda: float = math.nan
    mean_square_lambda: float = math.nan


@dataclass(frozen=True)
class MonteCarloResult:
    config: ExperimentConfig
    m: int
    sigma: float
    truth: SparseRepresentation
    records: Tuple[TrialResult, ...]
    aggregates: Dict[str, MethodAggregate]
    prediction: Optional[object] = None
    all_certified: bool = True


def _aggregate(method, recs: Sequence[TrialResult], pred_std: Optional[np.ndarray]) -> MethodAggregate:
    E = np.array([r.errors for r in recs])
    missing = np.isnan(E).any(axis=1)
    extra = np.array([r.outliers.size > 0 for r in recs])
    good = E[~missing]

    def stats(M):
        if M.shape[0] == 0:
            nan = np.full(E.shape[1], np.nan)
            return nan, nan, nan
        b = M.mean(axis=0)
        v = M.var(axis=0)
        return b, v, b**2 + v

    b, v, mse = stats(good)
    if pred_std is not None:
        far = np.any(np.abs(good) > OUTLIER_FACTOR * pred_std[None, :], axis=1)
    else:
        far = np.zeros(good.shape[0], dtype=bool)
    bt, vt, mt = stats(good[~far])
    n = len(recs)
    out_rate = (np.count_nonzero(far) + np.count_nonzero(extra[~missing])) / n if n else 0.0
    lams = np.array([r.lam for r in recs if np.isfinite(r.lam)])
    return MethodAggregate(
        method,
        b,
        v,
        mse,
        bt,
        vt,
        mt,
        float(out_rate),
        float(missing.mean()) if n else 0.0,
        n,
        float(lams.mean()) if lams.size else math.nan,
        float(np.mean(lams**2)) if lams.size else math.nan,
    )


def _moments(cfg: ExperimentConfig, exp, noise, m):
    if cfg.moments == "montecarlo":
        mc_noise = replace(noise, seed=noise.seed + 1_000_003)
        return montecarlo_lambda_moments(exp, mc_noise, cfg.moment_trials)
    if cfg.moments != "asymptotic":
        raise ValueError("moments must be 'asymptotic' or 'montecarlo'")
    return extreme_value_moments(m, cfg.T, noise.sigma, cfg.gamma_expectation)


def _prediction(cfg, m, sigma, require):
    man = UlaManifold(m)
    truth = cfg.truth(m)
    try:
        exp = build_expansion(man, truth)
        verdict = check_consistency(man, exp)
    except ValueError as e:
        if require:
            raise ScenarioError(f"no first-order analysis for this scenario: {e}") from e
        return None, None
    if not verdict.consistent:
        if require:
            raise ScenarioError(
                f"scenario is not consistent (worst value {verdict.worst_value:.4g} at {verdict.worst_theta:.4g});"
                " the first-order analysis does not apply"
            )
        return None, None
    noise = NoiseModel(sigma, cfg.seed)
    return exp, predict_performance(exp, noise, _moments(cfg, exp, noise, m))


def run_montecarlo(
    config: ExperimentConfig,
    m: Optional[int] = None,
    sigma: Optional[float] = None,
    require_theory: bool = False,
) -> MonteCarloResult:
    """Run every configured method on ``config.trials`` noise draws."""
    m = m or config.m
    sigma = config.sigma if sigma is None else sigma
    man = UlaManifold(m)
    truth = config.truth(m)
    X0 = truth.synthesize(man)
    n = truth.n
    exp, pred = _prediction(config, m, sigma, require_theory)
    pred_std = np.sqrt(np.diag(pred.covariance) + pred.bias**2) if pred is not None and sigma > 0 else None
    noise = NoiseModel(sigma, config.seed)
    recs: List[TrialResult] = []
    period = man.width
    all_cert = True
    for k in range(config.trials):
        X = X0 + noise.draw(m, config.T, trial=k)
        for method in config.methods:
            if method == "class":
                try:
                    sol = solve_class_for_order(X, man, n).solution
                    th, lam, cert = sol.thetas, sol.lam, sol.certificate.passed
                except CertificationError as e:
                    best = e.best
                    th = best.thetas if best is not None else np.zeros(0)
                    lam = best.lam if best is not None else math.nan
                    cert = False
                all_cert &= cert
                flagged = not cert
            elif method == "ml":
                est = nlls_ml_estimate(X, man, n, seed=config.seed + k)
                th, lam, cert, flagged = est.thetas, math.nan, True, est.flagged
            elif method == "cbf":
                est = cbf_estimate(X, man, n)
                th, lam, cert, flagged = est.thetas, math.nan, True, est.flagged
            else:
                raise ValueError(f"unknown method {method!r}")
            err, out = match_estimates(th, truth.thetas, period)
            recs.append(TrialResult(k, method, np.asarray(th), err, out, float(lam), bool(cert), bool(flagged)))
    aggs = {
        meth: _aggregate(meth, [r for r in recs if r.method == meth], pred_std) for meth in config.methods
    }
    return MonteCarloResult(config, m, float(sigma), truth, tuple(recs), aggs, pred, all_cert)


# --- extreme values of the noise dual ---------------------------------------------------


def max_sampled_dual(N_batch) -> np.ndarray:
    """``max_k ||a^H(2 pi k / m) N||^2`` over the ``m`` DFT points, per draw.

    ``N_batch`` has shape ``(trials, m, T)``.
    """
    N = np.asarray(N_batch)
    F = np.fft.fft(N, axis=1)
    return np.max(np.sum(np.abs(F) ** 2, axis=2), axis=1)


def continuous_dual_max_ula(N_batch, oversample: int = 16) -> np.ndarray:
    """``max_phi ||a^H(phi) N||^2`` per draw (zero-padded FFT plus parabolic refinement)."""
    N = np.asarray(N_batch)
    trials, m, T = N.shape
    L = oversample * m
    F = np.fft.fft(N, n=L, axis=1)
    P = np.sum(np.abs(F) ** 2, axis=2)
    k = np.argmax(P, axis=1)
    idx = np.arange(trials)
    y0, y1, y2 = P[idx, (k - 1) % L], P[idx, k], P[idx, (k + 1) % L]
    den = y0 - 2 * y1 + y2
    off = np.where(den < 0, 0.5 * (y0 - y2) / np.where(den < 0, den, -1.0), 0.0)
    off = np.clip(off, -0.5, 0.5)
    # exact evaluation at the refined frequency
    phi = 2 * np.pi * (k + off) / L
    ph = np.exp(-1j * np.outer(phi, np.arange(m)))  # trials x m
    val = np.sum(np.abs(np.einsum("tm,tmk->tk", ph, N)) ** 2, axis=1)
    return np.maximum(val, y1)


def _noise_batch(seed, m, T, start, count, sigma=1.0):
    out = np.empty((count, m, T), dtype=complex)
    for i in range(count):
        rng = trial_rng(seed, start + i)
        out[i] = (rng.standard_normal((m, T)) + 1j * rng.standard_normal((m, T))) * (sigma / math.sqrt(2))
    return out


def lambda_moment_rows(config: ExperimentConfig) -> List[dict]:
    rows = []
    for m in config.lambda_ms:
        tot_c = tot_s = tot_c1 = 0.0
        done = 0
        chunk = max(1, min(config.lambda_trials, 2**21 // (16 * m * config.T)))
        while done < config.lambda_trials:
            cnt = min(chunk, config.lambda_trials - done)
            N = _noise_batch(config.seed, m, config.T, done, cnt, config.sigma)
            c = continuous_dual_max_ula(N)
            tot_c += c.sum()
            tot_c1 += np.sqrt(c).sum()
            tot_s += max_sampled_dual(N).sum()
            done += cnt
        e2 = tot_c / done
        norm = config.sigma**2 * m
        th_g = extreme_value_moments(m, config.T, config.sigma, EULER_GAMMA)
        th_e = extreme_value_moments(m, config.T, config.sigma, EMPIRICAL_GAMMA)
        rows.append(
            {
                "m": m,
                "E_lambda": tot_c1 / done,
                "E_lambda_sq": e2,
                "E_lambda_sq_norm": e2 / norm,
                "E_lambda_sq_sampled_norm": tot_s / done / norm,
                "theory_norm_gumbel": th_g.mean_square / norm,
                "theory_norm_empirical": th_e.mean_square / norm,
                "theory_E_lambda_empirical": th_e.mean,
            }
        )
    return rows


def _mc_rows(res: MonteCarloResult, x_name: str, x_value) -> List[dict]:
    rows = []
    pred = res.prediction
    s2 = res.sigma**2 if res.sigma > 0 else math.nan
    for meth, agg in res.aggregates.items():
        for i in range(res.truth.n):
            row = {
                x_name: x_value,
                "method": meth,
                "source": i,
                "trials": agg.trials,
                "bias": agg.bias[i],
                "variance": agg.variance[i],
                "mse": agg.mse[i],
                "mse_norm": agg.mse[i] / s2,
                "variance_norm": agg.variance[i] / s2,
                "bias_norm": agg.bias[i] / res.sigma if res.sigma > 0 else math.nan,
                "mse_trimmed": agg.mse_trimmed[i],
                "variance_trimmed": agg.variance_trimmed[i],
                "outlier_rate": agg.outlier_rate,
                "missing_rate": agg.missing_rate,
            }
            if pred is not None:
                row.update(
                    {
                        "theory_bias": pred.bias[i],
                        "theory_variance": pred.covariance[i, i],
                        "theory_mse": pred.mse[i],
                        "theory_noise_variance": pred.noise_term[i, i],
                        "theory_mse_norm": pred.mse[i] / s2,
                        "theory_bias_norm": pred.bias[i] / res.sigma,
                    }
                )
            else:
                row.update(
                    {k: math.nan for k in ("theory_bias", "theory_variance", "theory_mse", "theory_noise_variance", "theory_mse_norm", "theory_bias_norm")}
                )
            rows.append(row)
    return rows


def run_figure(which: str, config: ExperimentConfig, output=None) -> List[dict]:
    """Regenerate the dataset behind one of the standard figures.

    ``which`` is one of :data:`FIGURES`. Rows carry both empirical values and
    theory columns; ``output`` (or ``config.output``) receives a CSV.

    Raises
    ------
    ScenarioError
        If a sweep point is not consistent for the pure-case analysis.
    """
    if which not in FIGURES:
        raise ValueError(f"unknown figure {which!r}; choose from {', '.join(FIGURES)}")
    rows: List[dict] = []
    if which == "lambda_moments":
        rows = lambda_moment_rows(config)
    elif which in ("mse_vs_m", "bias_vs_m"):
        for m in config.ms:
            _prediction(config, m, config.sigma, True)
            res = run_montecarlo(config, m=m, require_theory=True)
            rows.extend(_mc_rows(res, "m", m))
    else:
        cfg = config if len(config.methods) > 1 else replace(config, methods=("class", "ml", "cbf"))
        for snr in cfg.snrs_db:
            res = run_montecarlo(cfg, m=cfg.m, sigma=snr_to_sigma(snr))
            rows.extend(_mc_rows(res, "snr_db", snr))
    out = output or config.output
    if out is not None:
        write_csv(out, rows, comment=f"figure={which} version={CSV_VERSION}")
    return rows


def write_csv(target, rows: Sequence[dict], comment: Optional[str] = None) -> str:
    """Deterministic CSV: fixed column order, floats with 17 significant digits."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    if rows:
        cols = list(rows[0].keys())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    text = buf.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    elif target is not None:
        target.write(text)
    return text


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v
