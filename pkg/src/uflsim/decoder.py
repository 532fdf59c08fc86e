"""Multiplicity estimation from the superimposed uplink signal.

The receiver never learns who transmitted; it estimates, per zone and
codeword, how many clients sent that codeword. The estimator is an AMP
recursion with Onsager-corrected residuals and a Bayesian denoiser that
models each effective-channel row as a zero-mean complex Gaussian whose
per-AP variance scales with the (integer) send count. A truncated Poisson
prior encodes that few codewords are active per zone in a subround.

The decoder only knows zone-centroid fading profiles, never true client
positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .channel import CommCodebook, Geometry, ReceivedSignal, lsfc_profile
from .errors import ConfigError, DecodeFailure, InputError


@dataclass(frozen=True)
class PriorConfig:
    """Truncated Poisson prior on per-(zone, codeword) send counts."""

    mean: float
    k_max: int

    def __post_init__(self):
        if self.mean <= 0:
            raise ConfigError(f"prior mean must be > 0, got {self.mean}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")

    @classmethod
    def for_target(
        cls, target_participants: int, num_zones: int, words_per_zone: int, k_max: int
    ) -> "PriorConfig":
        return cls(target_participants / (num_zones * words_per_zone), k_max)

    @property
    def pmf(self) -> np.ndarray:
        return truncated_poisson(self.mean, self.k_max)


def truncated_poisson(mean: float, k_max: int) -> np.ndarray:
    """Poisson pmf restricted to {0..k_max} and renormalized."""
    if mean <= 0:
        raise ConfigError(f"mean must be > 0, got {mean}")
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    k = np.arange(k_max + 1)
    logp = k * math.log(mean) - mean - np.array([math.lgamma(i + 1) for i in k])
    p = np.exp(logp - logsumexp(logp))
    return p / p.sum()


@dataclass
class AmpState:
    """Mutable state of the AMP recursion (diagnostics, not an interface)."""

    x_hat: np.ndarray     # total codewords x antennas, effective-channel estimate
    residual: np.ndarray  # blocklength x antennas
    tau2: float           # effective noise variance on the normalized scale
    iterations: int = 0


@dataclass(frozen=True)
class TypeEstimate:
    """Decoded multiplicities and the normalized type for one subround."""

    per_zone: np.ndarray  # zones x codewords, integer counts
    iterations: int = 0
    tau2: float = float("nan")

    @property
    def counts(self) -> np.ndarray:
        """Codeword multiplicities summed over zones."""
        return self.per_zone.sum(axis=0)

    @property
    def num_participants(self) -> int:
        return int(self.per_zone.sum())

    @property
    def type_vector(self) -> np.ndarray:
        """Normalized multiplicities; all-zero when nobody was decoded."""
        counts = self.counts.astype(np.float64)
        total = counts.sum()
        return counts / total if total > 0 else counts


class ZoneBlockDenoiser:
    """Posterior-mean denoiser for rows with per-AP block covariances.

    A row observed as r = x + v, v ~ CN(0, tau2 I), with x | k ~ CN(0,
    k * Sigma_zone) and Sigma_zone block-diagonal (one fading coefficient
    per AP, repeated over its antennas), admits a closed-form posterior
    over k and a per-block Wiener shrinkage for x.
    """

    def __init__(self, zone_gammas: np.ndarray, antennas_per_ap: int, prior: PriorConfig):
        self.zone_gammas = np.atleast_2d(np.asarray(zone_gammas, dtype=np.float64))
        if np.any(self.zone_gammas <= 0):
            raise ConfigError("fading coefficients must be positive")
        self.antennas_per_ap = antennas_per_ap
        self.prior = prior
        self.log_prior = np.log(prior.pmf)
        self.k_values = np.arange(prior.k_max + 1, dtype=np.float64)

    def _zone_terms(self, zone: int, tau2: float):
        gammas = self.zone_gammas[zone]                       # (B,)
        variances = self.k_values[:, None] * gammas[None, :] + tau2   # (K+1, B)
        gains = self.k_values[:, None] * gammas[None, :] / variances  # (K+1, B)
        return variances, gains

    def _block_energy(self, rows: np.ndarray) -> np.ndarray:
        m, f = rows.shape
        b = f // self.antennas_per_ap
        return (np.abs(rows) ** 2).reshape(m, b, self.antennas_per_ap).sum(axis=2)

    def log_posterior(self, rows: np.ndarray, tau2: float, zone: int) -> np.ndarray:
        """Unnormalized-then-normalized log posterior over counts, per row."""
        variances, _ = self._zone_terms(zone, tau2)
        energy = self._block_energy(rows)                     # (M, B)
        const = -self.antennas_per_ap * np.log(np.pi * variances).sum(axis=1)  # (K+1,)
        loglik = const[None, :] - energy @ (1.0 / variances).T  # (M, K+1)
        logpost = self.log_prior[None, :] + loglik
        return logpost - logsumexp(logpost, axis=1, keepdims=True)

    def estimate_zone(self, rows: np.ndarray, tau2: float, zone: int):
        """Posterior-mean rows and per-row divergence for one zone block."""
        variances, gains = self._zone_terms(zone, tau2)
        post = np.exp(self.log_posterior(rows, tau2, zone))   # (M, K+1)
        mean_gain = post @ gains                              # (M, B)
        inv_var_mean = post @ (1.0 / variances)               # (M, B)
        gain_over_var = post @ (gains / variances)            # (M, B)
        x_hat = rows * np.repeat(mean_gain, self.antennas_per_ap, axis=1)
        energy = self._block_energy(rows)
        f = rows.shape[1]
        divergence = (
            self.antennas_per_ap * mean_gain.sum(axis=1)
            + (energy * (mean_gain * inv_var_mean - gain_over_var)).sum(axis=1)
        ) / f
        return x_hat, divergence

    # run_amp protocol -----------------------------------------------------
    def estimate(self, effective_obs: np.ndarray, tau2: float):
        m = effective_obs.shape[0] // self.zone_gammas.shape[0]
        x_hat = np.empty_like(effective_obs)
        divergences = np.empty(effective_obs.shape[0])
        for zone in range(self.zone_gammas.shape[0]):
            rows = slice(zone * m, (zone + 1) * m)
            x_hat[rows], divergences[rows] = self.estimate_zone(
                effective_obs[rows], tau2, zone
            )
        return x_hat, float(divergences.mean())

    def posteriors(self, effective_obs: np.ndarray, tau2: float) -> np.ndarray:
        m = effective_obs.shape[0] // self.zone_gammas.shape[0]
        out = np.empty((effective_obs.shape[0], self.prior.k_max + 1))
        for zone in range(self.zone_gammas.shape[0]):
            rows = slice(zone * m, (zone + 1) * m)
            out[rows] = np.exp(self.log_posterior(effective_obs[rows], tau2, zone))
        return out


def denoise_row(
    row: np.ndarray,
    tau2: float,
    zone_gammas: np.ndarray,
    prior: PriorConfig,
    antennas_per_ap: int = 4,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Denoise a single effective-channel row.

    Returns (posterior-mean row, posterior over counts, divergence). The
    divergence is the coordinate-averaged derivative of the denoiser,
    which feeds the Onsager correction.
    """
    row = np.asarray(row)
    if not np.all(np.isfinite(row)):
        raise InputError("non-finite entries in the observed row")
    if tau2 <= 0:
        raise ConfigError(f"tau2 must be > 0, got {tau2}")
    den = ZoneBlockDenoiser(zone_gammas, antennas_per_ap, prior)
    rows = row[None, :]
    x_hat, div = den.estimate_zone(rows, tau2, 0)
    post = np.exp(den.log_posterior(rows, tau2, 0))
    return x_hat[0], post[0], float(div[0])


def run_amp(
    observation: np.ndarray,
    codebook_matrix: np.ndarray,
    denoiser,
    n_iters: int = 25,
    damping: float = 0.7,
    tol: float = 1e-6,
) -> AmpState:
    """AMP recursion for observation = codebook_matrix @ X + noise.

    Columns of codebook_matrix must be (approximately) unit-norm. The
    effective noise variance is re-estimated from the residual energy each
    iteration; the residual keeps an Onsager correction weighted by the
    mean denoiser divergence.
    """
    n, f = observation.shape
    total_words = codebook_matrix.shape[1]
    x_hat = np.zeros((total_words, f), dtype=np.complex128)
    residual = observation.astype(np.complex128, copy=True)
    tau2_init = float((np.abs(observation) ** 2).sum() / (n * f))
    tau2_floor = max(1e-15 * tau2_init, 1e-300)
    tau2 = max(tau2_init, tau2_floor)

    state = AmpState(x_hat, residual, tau2)
    for iteration in range(1, n_iters + 1):
        effective_obs = state.x_hat + codebook_matrix.conj().T @ state.residual
        denoised, mean_div = denoiser.estimate(effective_obs, state.tau2)
        x_new = damping * denoised + (1.0 - damping) * state.x_hat
        onsager = (total_words / n) * mean_div
        residual = observation - codebook_matrix @ x_new + onsager * state.residual
        tau2 = float((np.abs(residual) ** 2).sum() / (n * f))
        if not np.isfinite(tau2) or tau2 < 0:
            raise DecodeFailure(
                f"effective noise variance collapsed to {tau2}", iteration
            )
        delta = np.linalg.norm(x_new - state.x_hat)
        scale = np.linalg.norm(state.x_hat)
        state = AmpState(x_new, residual, max(tau2, tau2_floor), iteration)
        if scale > 0 and delta / scale < tol:
            break
    return state


def amp_decode(
    received: ReceivedSignal,
    codebook: CommCodebook,
    geometry: Geometry,
    prior: PriorConfig,
    n_iters: int = 25,
    damping: float = 0.7,
    tol: float = 1e-6,
) -> TypeEstimate:
    """Estimate per-zone codeword multiplicities from one subround.

    The received samples are rescaled so the codebook columns act with
    unit gain, AMP is run to convergence, and counts are read off as the
    posterior MAP per (zone, codeword). Pure function of its inputs.
    """
    y = received.samples
    n = codebook.blocklength
    if y.shape[0] != n:
        raise ConfigError(
            f"received blocklength {y.shape[0]} != codebook blocklength {n}"
        )
    normalized = y / np.sqrt(n * received.power)
    zone_gammas = lsfc_profile(geometry.zone_centroids, geometry)
    denoiser = ZoneBlockDenoiser(zone_gammas, geometry.antennas_per_ap, prior)
    state = run_amp(normalized, codebook.matrix, denoiser, n_iters, damping, tol)

    effective_obs = state.x_hat + codebook.matrix.conj().T @ state.residual
    post = denoiser.posteriors(effective_obs, state.tau2)
    counts = post.argmax(axis=1).reshape(codebook.num_zones, codebook.words_per_zone)
    return TypeEstimate(counts, iterations=state.iterations, tau2=state.tau2)


def estimate_round_participants(per_subround_counts) -> int:
    """Robust per-round participant estimate: the median subround count."""
    counts = np.asarray(per_subround_counts, dtype=np.float64)
    if counts.size < 1:
        raise InputError("at least one subround count is required")
    return int(math.floor(float(np.median(counts)) + 0.5))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two type vectors."""
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())
