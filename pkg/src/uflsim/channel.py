"""D-MIMO geometry, fading, codebook generation, and received signals.

The deployment is a 3x3 grid of 100 m squares. Access points sit every
50 m along all gridlines (square corners and edge midpoints), which gives
exactly 40 APs and puts each zone centroid 50 m from its nearest AP. Each
square is one zone; clients use the subcodebook of the zone they stand in.

Channels are spatially-white quasi-static Rayleigh: per client, the 4
antennas of AP b see i.i.d. complex Gaussians whose variance is the
large-scale fading coefficient of the client's position toward that AP.
Channels are redrawn independently every subround.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .rng import complex_normal

PATHLOSS_EXPONENT = 3.67
PATHLOSS_D0 = 13.57  # metres; distance at which the LSFC is 1/2


@dataclass(frozen=True)
class Geometry:
    """AP layout, zone partition, and antenna bookkeeping."""

    grid_squares: int = 3          # squares per side
    square_side: float = 100.0     # metres
    ap_spacing: float = 50.0       # metres between APs along gridlines
    antennas_per_ap: int = 4
    ap_positions: np.ndarray = field(init=False)
    zone_centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        side = self.grid_squares * self.square_side
        ticks = np.arange(0.0, side + 1e-9, self.ap_spacing)
        lines = np.arange(0.0, side + 1e-9, self.square_side)
        points = set()
        for y in lines:
            points.update((float(x), float(y)) for x in ticks)
        for x in lines:
            points.update((float(x), float(y)) for y in ticks)
        aps = np.array(sorted(points))
        centers = lines[:-1] + self.square_side / 2.0
        centroids = np.array([(x, y) for y in centers for x in centers])
        object.__setattr__(self, "ap_positions", aps)
        object.__setattr__(self, "zone_centroids", centroids)

    @property
    def area_side(self) -> float:
        return self.grid_squares * self.square_side

    @property
    def num_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def num_zones(self) -> int:
        return len(self.zone_centroids)

    @property
    def num_antennas(self) -> int:
        return self.num_aps * self.antennas_per_ap

    def zone_of(self, position) -> int:
        """Index of the square containing the position (row-major)."""
        x, y = position
        if not (0.0 <= x <= self.area_side and 0.0 <= y <= self.area_side):
            raise InputError(f"position {position} outside the coverage area")
        col = min(int(x // self.square_side), self.grid_squares - 1)
        row = min(int(y // self.square_side), self.grid_squares - 1)
        return row * self.grid_squares + col

    def centroid_nearest_ap_distance(self) -> float:
        """Distance between a zone centroid and its closest AP."""
        diffs = self.zone_centroids[:, None, :] - self.ap_positions[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=2)).min(axis=1).max())


def build_geometry() -> Geometry:
    """The default deployment (40 APs x 4 antennas, 9 zones)."""
    return Geometry()


def lsfc(
    client_pos,
    ap_pos,
    alpha: float = PATHLOSS_EXPONENT,
    d0: float = PATHLOSS_D0,
) -> float:
    """Large-scale fading coefficient 1 / (1 + (distance/d0)^alpha)."""
    dist = float(np.hypot(client_pos[0] - ap_pos[0], client_pos[1] - ap_pos[1]))
    return 1.0 / (1.0 + (dist / d0) ** alpha)


def lsfc_profile(positions: np.ndarray, geometry: Geometry) -> np.ndarray:
    """LSFCs of each position toward every AP (len(positions) x B)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    diffs = positions[:, None, :] - geometry.ap_positions[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    return 1.0 / (1.0 + (dist / PATHLOSS_D0) ** PATHLOSS_EXPONENT)


def calibrate_noise(snr_rx_db: float, power: float, geometry: Geometry) -> float:
    """Noise variance that puts the received SNR at the requested level.

    The received SNR discounts the transmit SNR by the path loss between a
    zone centroid and its closest AP.
    """
    snr_rx = 10.0 ** (snr_rx_db / 10.0)
    varsigma = geometry.centroid_nearest_ap_distance()
    return power / (snr_rx * (1.0 + (varsigma / PATHLOSS_D0) ** PATHLOSS_EXPONENT))


@dataclass(frozen=True)
class CommCodebook:
    """Unit-norm complex codewords, partitioned into per-zone blocks."""

    matrix: np.ndarray  # blocklength x (num_zones * words_per_zone)
    num_zones: int
    words_per_zone: int

    def __post_init__(self):
        if self.matrix.shape[1] != self.num_zones * self.words_per_zone:
            raise ConfigError(
                f"codebook has {self.matrix.shape[1]} columns, expected "
                f"{self.num_zones} x {self.words_per_zone}"
            )

    @property
    def blocklength(self) -> int:
        return self.matrix.shape[0]

    @property
    def total_words(self) -> int:
        return self.matrix.shape[1]

    def zone_block(self, zone: int) -> np.ndarray:
        m = self.words_per_zone
        return self.matrix[:, zone * m:(zone + 1) * m]


def gen_codebook(
    blocklength: int, num_zones: int, words_per_zone: int, rng: np.random.Generator
) -> CommCodebook:
    """I.i.d. complex Gaussian entries, then exact unit-norm columns."""
    if min(blocklength, num_zones, words_per_zone) < 1:
        raise ConfigError("blocklength, num_zones, words_per_zone must be >= 1")
    c = complex_normal(rng, (blocklength, num_zones * words_per_zone), 1.0 / blocklength)
    c /= np.linalg.norm(c, axis=0, keepdims=True)
    return CommCodebook(c, num_zones, words_per_zone)


@dataclass(frozen=True)
class SubroundTransmission:
    """Who sends what: per participant, a zone and a codeword index."""

    zones: np.ndarray    # zone id per participant
    indices: np.ndarray  # codeword index per participant, 0-based
    num_zones: int
    words_per_zone: int

    def __post_init__(self):
        zones = np.asarray(self.zones, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "zones", zones)
        object.__setattr__(self, "indices", indices)
        if zones.shape != indices.shape:
            raise InputError("zones and indices must align one per participant")
        if zones.size and not (0 <= zones.min() and zones.max() < self.num_zones):
            raise InputError(f"zone ids must lie in [0, {self.num_zones})")
        if indices.size and not (0 <= indices.min() and indices.max() < self.words_per_zone):
            raise InputError(f"codeword indices must lie in [0, {self.words_per_zone})")

    @property
    def num_participants(self) -> int:
        return len(self.zones)

    def multiplicities(self) -> np.ndarray:
        """Count of senders per (zone, codeword), shape U x M."""
        k = np.zeros((self.num_zones, self.words_per_zone), dtype=np.int64)
        np.add.at(k, (self.zones, self.indices), 1)
        return k


@dataclass(frozen=True)
class ReceivedSignal:
    """What the APs jointly observed for one subround."""

    samples: np.ndarray  # blocklength x total antennas, complex
    noise_var: float
    power: float


def draw_channels(
    positions: np.ndarray, geometry: Geometry, rng: np.random.Generator
) -> np.ndarray:
    """One channel vector per position (rows), length = total antennas."""
    gammas = lsfc_profile(positions, geometry)
    per_antenna = np.repeat(gammas, geometry.antennas_per_ap, axis=1)
    raw = complex_normal(rng, per_antenna.shape, 1.0)
    return raw * np.sqrt(per_antenna)


def synthesize_received(
    tx: SubroundTransmission,
    client_positions: np.ndarray,
    geometry: Geometry,
    codebook: CommCodebook,
    power: float,
    noise_var: float,
    rng: np.random.Generator,
) -> ReceivedSignal:
    """Superimpose all participants' codewords through fresh fading channels.

    Clients transmitting the same codeword in the same zone add up in the
    effective channel of that codeword.
    """
    if tx.num_zones != codebook.num_zones or tx.words_per_zone != codebook.words_per_zone:
        raise ConfigError("transmission map and codebook disagree on zones/words")
    n = codebook.blocklength
    f = geometry.num_antennas
    if tx.num_participants != len(np.atleast_2d(client_positions)) and tx.num_participants > 0:
        raise InputError("one position per participant is required")

    effective = np.zeros((codebook.total_words, f), dtype=np.complex128)
    if tx.num_participants:
        channels = draw_channels(client_positions, geometry, rng)
        rows = tx.zones * tx.words_per_zone + tx.indices
        np.add.at(effective, rows, channels)
    noise = complex_normal(rng, (n, f), noise_var) if noise_var > 0 else 0.0
    samples = np.sqrt(n * power) * (codebook.matrix @ effective) + noise
    return ReceivedSignal(samples, noise_var, power)


def geometry_to_csv(geometry: Geometry) -> str:
    """Auditable dump of AP positions and zone centroids."""
    buf = io.StringIO()
    buf.write("kind,index,x,y\n")
    for i, (x, y) in enumerate(geometry.ap_positions):
        buf.write(f"ap,{i},{float(x)!r},{float(y)!r}\n")
    for u, (x, y) in enumerate(geometry.zone_centroids):
        buf.write(f"zone_centroid,{u},{float(x)!r},{float(y)!r}\n")
    return buf.getvalue()
