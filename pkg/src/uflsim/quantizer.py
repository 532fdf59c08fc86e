"""Vector quantization of model updates with error accumulation.

Each client adds the quantization error it carried over from earlier
rounds to its fresh update, splits the result into fixed-length
subvectors, and maps each to the nearest codeword of a shared codebook.
The residual is carried into the next round, so no update mass is lost.

The server refits the codebook every round with k-means++ on the
subvectors of its own held-out update, then broadcasts it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .model import Architecture, TrainConfig, compute_update, local_train


@dataclass(frozen=True)
class QuantCodebook:
    """M codewords of dimension Q; M must be a power of two (J index bits)."""

    codewords: np.ndarray

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.float64)
        object.__setattr__(self, "codewords", cw)
        if cw.ndim != 2 or cw.shape[0] < 1:
            raise ConfigError(f"codewords must be a nonempty M x Q matrix, got {cw.shape}")
        m = cw.shape[0]
        if m & (m - 1):
            raise ConfigError(f"codebook size {m} is not a power of two")
        if not np.all(np.isfinite(cw)):
            raise ConfigError("codebook contains non-finite entries")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

    @property
    def index_bits(self) -> int:
        return int(self.size).bit_length() - 1


@dataclass(frozen=True)
class QuantResult:
    indices: np.ndarray   # nearest-codeword index per subvector, 0-based
    quantized: np.ndarray  # concatenated codewords, truncated to the input length
    new_error: np.ndarray  # residual to carry into the next round


def num_subvectors(total_len: int, dim: int) -> int:
    return -(-total_len // dim)


def _pad_and_split(vec: np.ndarray, dim: int) -> np.ndarray:
    d = num_subvectors(len(vec), dim)
    padded = np.zeros(d * dim)
    padded[:len(vec)] = vec
    return padded.reshape(d, dim)


def nearest_codewords(subvectors: np.ndarray, cb: QuantCodebook) -> np.ndarray:
    """Index of the closest codeword per subvector; ties to the smaller index."""
    # ||s - q||^2 = ||s||^2 - 2 s.q + ||q||^2; the ||s||^2 term is constant
    # per row and can be dropped from the argmin.
    scores = -2.0 * subvectors @ cb.codewords.T + (cb.codewords ** 2).sum(axis=1)
    return scores.argmin(axis=1)


def quantize_update(
    update: np.ndarray, error_prev: np.ndarray, cb: QuantCodebook
) -> QuantResult:
    """Quantize update + carried error to the nearest codeword per subvector.

    quantized + new_error == update + error_prev holds exactly; the
    zero-padded tail of the last subvector never enters the carried error.
    """
    update = np.asarray(update, dtype=np.float64)
    error_prev = np.asarray(error_prev, dtype=np.float64)
    if update.shape != error_prev.shape:
        raise InputError(
            f"update shape {update.shape} != carried error shape {error_prev.shape}"
        )
    if not (np.all(np.isfinite(update)) and np.all(np.isfinite(error_prev))):
        raise InputError("non-finite entries in update or carried error")
    target = update + error_prev
    subvectors = _pad_and_split(target, cb.dim)
    indices = nearest_codewords(subvectors, cb)
    quantized = cb.codewords[indices].ravel()[:len(target)]
    return QuantResult(indices, quantized, target - quantized)


def dequantize(indices: np.ndarray, cb: QuantCodebook, total_len: int) -> np.ndarray:
    """Concatenate the indexed codewords and truncate to total_len."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= cb.size):
        raise InputError(f"codeword indices must lie in [0, {cb.size})")
    if indices.size * cb.dim < total_len:
        raise InputError(
            f"{indices.size} subvectors of dim {cb.dim} cannot cover length {total_len}"
        )
    return cb.codewords[indices].ravel()[:total_len]


def distortion(samples: np.ndarray, cb: QuantCodebook) -> float:
    """Mean squared distance from each sample to its nearest codeword."""
    idx = nearest_codewords(samples, cb)
    return float(((samples - cb.codewords[idx]) ** 2).sum(axis=1).mean())


def kmeanspp_fit(
    samples: np.ndarray,
    num_codewords: int,
    max_iters: int = 25,
    rng: np.random.Generator | None = None,
    tol: float = 1e-9,
) -> QuantCodebook:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when every centroid moves less than `tol` or after `max_iters`.
    Empty clusters are re-seeded at the sample farthest from its assigned
    centroid.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise InputError(f"samples must be 2-D, got shape {samples.shape}")
    n = samples.shape[0]
    if n < num_codewords:
        raise ConfigError(
            f"{n} samples cannot seed {num_codewords} codewords"
        )
    if rng is None:
        rng = np.random.default_rng()

    # Seeding: first center uniform, then proportional to squared distance
    # to the nearest chosen center.
    centers = np.empty((num_codewords, samples.shape[1]))
    centers[0] = samples[rng.integers(n)]
    d2 = ((samples - centers[0]) ** 2).sum(axis=1)
    for j in range(1, num_codewords):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = samples[rng.integers(n)]
        else:
            centers[j] = samples[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((samples - centers[j]) ** 2).sum(axis=1))

    for _ in range(max_iters):
        cb = QuantCodebook(centers)
        assign = nearest_codewords(samples, cb)
        new_centers = centers.copy()
        for j in range(num_codewords):
            members = samples[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        empty = np.flatnonzero(np.bincount(assign, minlength=num_codewords) == 0)
        if len(empty):
            residual = ((samples - new_centers[assign]) ** 2).sum(axis=1)
            for j in empty:
                far = int(residual.argmax())
                new_centers[j] = samples[far]
                residual[far] = 0.0
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if movement < tol:
            break
    return QuantCodebook(centers)


def server_codebook_round(
    server_params: np.ndarray,
    arch: Architecture,
    server_ds,
    server_err: np.ndarray,
    cfg: TrainConfig,
    num_codewords: int,
    dim: int,
    rng: np.random.Generator,
) -> tuple[QuantCodebook, np.ndarray]:
    """One server-side codebook refresh.

    The server takes a single training step on its held-out data, adds its
    own carried quantization error, and fits k-means++ on the resulting
    subvectors. Its carried error is updated against the new codebook, so
    the server mirrors the clients' accumulation behavior.
    """
    if len(server_ds) == 0:
        raise InputError("server dataset is empty")
    one_step = TrainConfig(
        epochs=1,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
    )
    trained = local_train(server_params, arch, server_ds, one_step, rng)
    target = compute_update(trained, server_params) + server_err
    samples = _pad_and_split(target, dim)
    cb = kmeanspp_fit(samples, num_codewords, rng=rng)
    quantized = cb.codewords[nearest_codewords(samples, cb)].ravel()[:len(target)]
    return cb, target - quantized


def codebook_to_csv(cb: QuantCodebook, round_index: int) -> str:
    """Snapshot: one header line `J,Q,round`, then M rows of Q entries."""
    buf = io.StringIO()
    buf.write(f"{cb.index_bits},{cb.dim},{round_index}\n")
    for row in cb.codewords:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def codebook_from_csv(text: str) -> tuple[QuantCodebook, int]:
    """Inverse of codebook_to_csv; returns (codebook, round_index)."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    try:
        j, q, round_index = (int(x) for x in lines[0].split(","))
    except ValueError as exc:
        raise InputError(f"bad codebook CSV header: {lines[0]!r}") from exc
    rows = [np.array([float(x) for x in ln.split(",")]) for ln in lines[1:]]
    cw = np.vstack(rows)
    if cw.shape != (2 ** j, q):
        raise InputError(
            f"codebook CSV body {cw.shape} does not match header (J={j}, Q={q})"
        )
    return QuantCodebook(cw), round_index
