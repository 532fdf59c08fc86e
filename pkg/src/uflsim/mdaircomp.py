"""Perfect-CSI pre-equalized digital aggregation baseline.

Each client inverts its channel toward a single per-zone reference
antenna (the first antenna of the AP closest to the zone centroid), so
same-codeword transmissions add coherently there with a known real gain.
The other antennas are discarded: coherence holds only at the reference.
Clients in a deep fade skip the subround instead of spending unbounded
inversion power.

Multiplicities are then recovered per zone from the reference-antenna
signal with the same AMP machinery as the main decoder, but with a
deterministic known gain instead of an unknown fading channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import CommCodebook, Geometry, SubroundTransmission, lsfc_profile
from .decoder import PriorConfig, TypeEstimate, run_amp
from .errors import ConfigError, InputError
from .rng import complex_normal


class DeepFadeSkip(InputError):
    """Channel inversion would need infeasible power; skip the subround."""


@dataclass(frozen=True)
class PreEqConfig:
    """Pre-equalization settings for the baseline."""

    snr_rx_db: float = 10.0
    deep_fade_threshold: float = 1e-6

    def __post_init__(self):
        if self.deep_fade_threshold <= 0:
            raise ConfigError("deep_fade_threshold must be > 0")


def reference_antennas(geometry: Geometry) -> np.ndarray:
    """First antenna index of the AP nearest each zone centroid."""
    diffs = geometry.zone_centroids[:, None, :] - geometry.ap_positions[None, :, :]
    nearest_ap = np.sqrt((diffs ** 2).sum(axis=2)).argmin(axis=1)
    return nearest_ap * geometry.antennas_per_ap


def received_amplitude(
    cfg: PreEqConfig,
    noise_var: float,
    blocklength: int,
    num_zones: int,
    target_participants: int,
) -> float:
    """Per-symbol amplitude at the reference antenna after pre-equalization.

    Sized from the expected per-zone participant count (the true count is
    unknown at the clients) so the zone's aggregate received SNR matches
    the configured level.
    """
    snr = 10.0 ** (cfg.snr_rx_db / 10.0)
    return float(np.sqrt(snr * noise_var * blocklength * num_zones / target_participants))


def preequalize(symbol: complex, h_ref: complex, p_norm: float,
                threshold: float = 1e-6) -> complex:
    """Transmit sample that delivers p_norm * symbol at the reference antenna."""
    if abs(h_ref) < threshold:
        raise DeepFadeSkip(
            f"|h_ref| = {abs(h_ref):.3g} below {threshold:g}; inversion infeasible"
        )
    return p_norm * symbol / h_ref


def synthesize_reference_signals(
    tx: SubroundTransmission,
    client_positions: np.ndarray,
    geometry: Geometry,
    codebook: CommCodebook,
    cfg: PreEqConfig,
    p_norm: float,
    noise_var: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Per-zone reference-antenna signals for one subround.

    Returns (signals, skipped): signals has one length-N row per zone;
    skipped counts clients dropped by the deep-fade rule. Pre-equalization
    makes each surviving client contribute exactly p_norm times its
    codeword at its zone's reference antenna.
    """
    if tx.num_zones != codebook.num_zones or tx.words_per_zone != codebook.words_per_zone:
        raise ConfigError("transmission map and codebook disagree on zones/words")
    n = codebook.blocklength
    ref = reference_antennas(geometry)
    signals = np.zeros((geometry.num_zones, n), dtype=np.complex128)
    skipped = 0
    if tx.num_participants:
        gammas = lsfc_profile(client_positions, geometry)  # (L, B)
        ref_ap = ref // geometry.antennas_per_ap
        ref_gamma = gammas[np.arange(tx.num_participants), ref_ap[tx.zones]]
        h_ref = complex_normal(rng, tx.num_participants, 1.0) * np.sqrt(ref_gamma)
        kept = np.abs(h_ref) >= cfg.deep_fade_threshold
        skipped = int((~kept).sum())
        for zone, m in zip(tx.zones[kept], tx.indices[kept]):
            signals[zone] += p_norm * codebook.zone_block(zone)[:, m]
    if noise_var > 0:
        signals += complex_normal(rng, signals.shape, noise_var)
    return signals, skipped


class ScalarCountDenoiser:
    """Posterior-mean denoiser for rows r = gain * k + noise, k integer."""

    def __init__(self, gain: float, prior: PriorConfig):
        if gain <= 0:
            raise ConfigError(f"gain must be > 0, got {gain}")
        self.gain = gain
        self.prior = prior
        self.log_prior = np.log(prior.pmf)
        self.levels = gain * np.arange(prior.k_max + 1, dtype=np.float64)

    def log_posterior(self, rows: np.ndarray, tau2: float) -> np.ndarray:
        sq_dist = (np.abs(rows[:, None, :] - self.levels[None, :, None]) ** 2).sum(axis=2)
        logpost = self.log_prior[None, :] - sq_dist / tau2  # (M, K+1)
        return logpost - logsumexp(logpost, axis=1, keepdims=True)

    def posteriors(self, rows: np.ndarray, tau2: float) -> np.ndarray:
        return np.exp(self.log_posterior(rows, tau2))

    def estimate(self, rows: np.ndarray, tau2: float):
        post = self.posteriors(rows, tau2)
        mean = post @ self.levels
        second = post @ self.levels ** 2
        x_hat = np.broadcast_to(mean[:, None], rows.shape).astype(np.complex128)
        divergence = (second - mean ** 2) / tau2
        return x_hat.copy(), float(divergence.mean())


def mdaircomp_decode(
    zone_signals: np.ndarray,
    codebook: CommCodebook,
    prior: PriorConfig,
    p_norm: float,
    n_iters: int = 25,
    damping: float = 0.7,
    tol: float = 1e-6,
) -> TypeEstimate:
    """Recover per-zone multiplicities from the reference-antenna signals."""
    zone_signals = np.asarray(zone_signals)
    if zone_signals.shape != (codebook.num_zones, codebook.blocklength):
        raise ConfigError(
            f"zone signals of shape {zone_signals.shape} do not match "
            f"{codebook.num_zones} zones x blocklength {codebook.blocklength}"
        )
    denoiser = ScalarCountDenoiser(p_norm, prior)
    counts = np.zeros((codebook.num_zones, codebook.words_per_zone), dtype=np.int64)
    iterations = 0
    tau2 = float("nan")
    for zone in range(codebook.num_zones):
        block = codebook.zone_block(zone)
        state = run_amp(
            zone_signals[zone][:, None], block, denoiser, n_iters, damping, tol
        )
        effective = state.x_hat + block.conj().T @ state.residual
        post = denoiser.posteriors(effective, state.tau2)
        counts[zone] = post.argmax(axis=1)
        iterations = max(iterations, state.iterations)
        tau2 = state.tau2
    return TypeEstimate(counts, iterations=iterations, tau2=tau2)
