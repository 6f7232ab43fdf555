"""Synthetic data generators: regression samples and full panel CSVs.

The panel scenarios emit files in the ingestion schema together with a
metadata sidecar and a ground-truth coefficient sidecar, so end-to-end
runs and acceptance experiments need no proprietary data.

Returns follow a one-factor structure with characteristic factors:

    r[i, t+1] = mu + f[t+1] + sum_j x[i, j, t] * g[j, t+1] + e[i, t+1]
    g[j, t]   = a[j] * f[t] + sd_char * h[j, t]

so the long-short predictor returns inherit g and covary with the
(roughly f-driven) equally weighted benchmark through a.  The population
minimum-variance coefficients are then

    theta*_k = -kappa * sd_mkt^2 * a_k / d_k / (1 + kappa^2 sd_mkt^2 a' D^-1 a)

with d_k = kappa^2 sd_char^2 + kappa * sd_idio^2 / N and kappa = (N-1)/N,
a large-N approximation recorded in the sidecar (exact zeros when a = 0;
expansion terms are zero for Gaussian characteristics).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .portfolio import RegressionSample

SCENARIOS = ("planted-sparse", "null", "factor-structure")


def make_planted_sample(K: int, T: int, support: Sequence, magnitudes: Sequence,
                        seed: int, snr: float = 5.0, predictor_sd: float = 0.02,
                        orthonormal: bool = False):
    """Regression sample with a known sparse coefficient vector.

    Benchmark returns are -theta*' rc plus Gaussian noise scaled so the
    signal-to-noise variance ratio equals snr.  With orthonormal=True the
    predictor columns are exactly mean-zero, unit-sd, and mutually
    orthogonal (requires K < T).

    Returns (RegressionSample, theta_star).
    """
    rng = np.random.default_rng(seed)
    theta_star = np.zeros(K)
    theta_star[list(support)] = np.asarray(magnitudes, dtype=np.float64)
    if orthonormal:
        rc = make_orthonormal_columns(T, K, rng) * predictor_sd
    else:
        rc = rng.standard_normal((T, K)) * predictor_sd
    signal = rc @ theta_star
    noise_sd = float(np.sqrt(max(np.var(signal), 1e-30) / snr))
    rb = -signal + rng.standard_normal(T) * noise_sd
    return RegressionSample(rb, rc), theta_star


def make_noise_sample(K: int, T: int, seed: int, predictor_sd: float = 0.02,
                      noise_sd: float = 0.01) -> RegressionSample:
    """Pure-noise sample: benchmark independent of every predictor."""
    rng = np.random.default_rng(seed)
    rc = rng.standard_normal((T, K)) * predictor_sd
    rb = rng.standard_normal(T) * noise_sd
    return RegressionSample(rb, rc)


def make_orthonormal_columns(T: int, K: int, rng) -> np.ndarray:
    """K mean-zero columns with unit sample sd and diagonal Gram/(T-1).

    Built by orthogonalizing random columns against the constant vector,
    so sample covariance of the columns is exactly the identity.
    """
    if K + 1 > T:
        raise ValueError(f"orthonormal design needs K + 1 <= T (got K={K}, T={T})")
    block = np.column_stack([np.ones(T), rng.standard_normal((T, K))])
    q, _ = np.linalg.qr(block)
    return q[:, 1:] * np.sqrt(T - 1.0)


@dataclass(frozen=True)
class ScenarioParams:
    """Panel DGP knobs; defaults give a desk-scale panel in seconds."""

    months: int = 160
    firms: int = 60
    chars: int = 12
    missing_rate: float = 0.02
    mean_return: float = 0.008
    sd_market: float = 0.04
    sd_char: float = 0.02
    sd_idio: float = 0.06
    start_month: int = 199001
    ew_vol_band: tuple = (0.5, 2.0)


def _month_sequence(start: int, count: int) -> list:
    months = []
    year, month = divmod(start, 100)
    for _ in range(count):
        months.append(year * 100 + month)
        month += 1
        if month > 12:
            year, month = year + 1, 1
    return months


def _scenario_loadings(scenario: str, params: ScenarioParams) -> np.ndarray:
    """Market loadings a_j of the characteristic factors."""
    a = np.zeros(params.chars)
    if scenario == "planted-sparse":
        plant = [-0.8, 0.6, -0.5]
        a[: len(plant)] = plant
    elif scenario == "factor-structure":
        signs = np.where(np.arange(params.chars) % 2 == 0, 1.0, -1.0)
        a = 0.25 * signs / np.sqrt(params.chars)
    elif scenario != "null":
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    return a


def population_theta(a: np.ndarray, params: ScenarioParams) -> np.ndarray:
    """Large-N population minimum-variance coefficients for the DGP."""
    kappa = (params.firms - 1.0) / params.firms
    d = kappa ** 2 * params.sd_char ** 2 + kappa * params.sd_idio ** 2 / params.firms
    sf2 = params.sd_market ** 2
    ratio = a / d
    return -kappa * sf2 * ratio / (1.0 + kappa ** 2 * sf2 * float(a @ ratio))


def generate_panel_files(scenario: str, seed: int, out_dir,
                         params: Optional[ScenarioParams] = None,
                         prefix: str = "panel") -> dict:
    """Write the scenario CSV, metadata sidecar, and theta* sidecar.

    The last continuous characteristic is replaced by a binary indicator
    (listed in the metadata), one square exclusion and one interaction
    exclusion are declared to exercise the expansion config.  Returns the
    written paths plus the base-coefficient ground truth.
    """
    params = params or ScenarioParams()
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    C, N, M = params.chars, params.firms, params.months
    names = [f"c{j + 1:02d}" for j in range(C - 1)] + ["bflag"]
    a = _scenario_loadings(scenario, params)
    a[-1] = 0.0  # binary characteristic carries no planted effect
    theta_star = population_theta(a, params)

    months = _month_sequence(params.start_month, M)
    firm_ids = [f"F{i + 1:04d}" for i in range(N)]

    csv_path = out_dir / f"{prefix}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("date,id,ret_fwd," + ",".join(names) + "\n")
        for month in months:
            x = rng.standard_normal((N, C))
            x[:, -1] = (rng.random(N) < 0.4).astype(np.float64)
            x_std = np.empty_like(x)
            for j in range(C):
                col = x[:, j]
                sd = col.std(ddof=1)
                x_std[:, j] = (col - col.mean()) / sd if sd > 0 else 0.0
            f = rng.standard_normal() * params.sd_market
            g = a * f + params.sd_char * rng.standard_normal(C)
            e = rng.standard_normal(N) * params.sd_idio
            r_next = params.mean_return + f + x_std @ g + e
            missing = rng.random((N, C - 1)) < params.missing_rate
            for i in range(N):
                cells = []
                for j in range(C):
                    if j < C - 1 and missing[i, j]:
                        cells.append("")
                    else:
                        cells.append(f"{x[i, j]:.12g}")
                fh.write(f"{month},{firm_ids[i]},{r_next[i]:.12g}," + ",".join(cells) + "\n")

    meta_path = out_dir / f"{prefix}_meta.txt"
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic panel metadata\n")
        fh.write("binary = bflag\n")
        fh.write(f"square_exclude = {names[0]}\n")
        fh.write(f"interaction_exclude = {names[1]}:{names[2]}\n")
        fh.write(f"size_column = {names[0]}\n")

    theta_path = out_dir / f"{prefix}_theta.csv"
    with open(theta_path, "w", encoding="utf-8") as fh:
        fh.write("predictor,theta_star\n")
        for name, val in zip(names, theta_star):
            fh.write(f"{name},{val:.12g}\n")

    info_path = out_dir / f"{prefix}_scenario.json"
    ew_vol_target = float(np.sqrt(params.sd_market ** 2 + params.sd_idio ** 2 / N))
    with open(info_path, "w", encoding="utf-8") as fh:
        json.dump({
            "scenario": scenario,
            "seed": seed,
            "months": M,
            "firms": N,
            "chars": C,
            "ew_vol_target_monthly": ew_vol_target,
            "ew_vol_band": list(params.ew_vol_band),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {
        "csv": csv_path,
        "metadata": meta_path,
        "theta": theta_path,
        "scenario": info_path,
        "theta_star": theta_star,
        "ew_vol_target": ew_vol_target,
    }
