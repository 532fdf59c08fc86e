"""End-to-end federated training rounds.

One round: activate clients, refresh and broadcast the quantization
codebook (quantized scenarios), gate candidates, select participants,
train locally, carry quantization errors, transmit subround by subround,
decode types, aggregate, steer the selection threshold with the decoded
participant count, and evaluate on the held-out test set.

The server only ever sees decoded quantities; true participant counts
are logged for diagnostics but never feed server logic.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import data as datamod
from . import mdaircomp as md
from . import model as mdl
from . import quantizer as qz
from . import rng as rngmod
from . import selection as sel
from .config import ScenarioConfig
from .decoder import (
    DecodeFailure,
    PriorConfig,
    TypeEstimate,
    amp_decode,
    estimate_round_participants,
    tv_distance,
)
from .errors import ConfigError, InputError

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "round", "test_accuracy", "test_loss", "num_active", "num_candidates",
    "num_selected", "L_hat", "theta", "mean_tv_type_error", "wall_time_s",
)


@dataclass(frozen=True)
class RoundRecord:
    """Per-round metrics; `theta` is the threshold broadcast that round."""

    round: int
    test_accuracy: float
    test_loss: float
    num_active: int
    num_candidates: int
    num_selected: int
    l_hat: int
    theta: float
    mean_tv_type_error: float
    wall_time_s: float

    def __post_init__(self):
        if not (self.num_selected <= self.num_candidates <= self.num_active):
            raise InputError(
                f"inconsistent counts: selected {self.num_selected} <= "
                f"candidates {self.num_candidates} <= active {self.num_active}"
            )

    def to_csv_row(self) -> str:
        return (
            f"{self.round},{self.test_accuracy!r},{self.test_loss!r},"
            f"{self.num_active},{self.num_candidates},{self.num_selected},"
            f"{self.l_hat},{self.theta!r},{self.mean_tv_type_error!r},"
            f"{self.wall_time_s!r}"
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "RoundRecord":
        parts = row.strip().split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise InputError(f"expected {len(CSV_COLUMNS)} CSV fields, got {len(parts)}")
        return cls(
            round=int(parts[0]),
            test_accuracy=float(parts[1]),
            test_loss=float(parts[2]),
            num_active=int(parts[3]),
            num_candidates=int(parts[4]),
            num_selected=int(parts[5]),
            l_hat=int(parts[6]),
            theta=float(parts[7]),
            mean_tv_type_error=float(parts[8]),
            wall_time_s=float(parts[9]),
        )


def aggregate_perfect(
    params_prev: np.ndarray, updates: list[np.ndarray], global_lr: float
) -> tuple[np.ndarray, int]:
    """Average the received updates into the global model.

    Empty rounds leave the model unchanged and report zero participants.
    """
    if not updates:
        return np.array(params_prev, copy=True), 0
    stacked = np.stack(updates)
    return params_prev + global_lr * stacked.mean(axis=0), len(updates)


def aggregate_from_type(
    block_prev: np.ndarray,
    type_vector: np.ndarray,
    cb: qz.QuantCodebook,
    global_lr: float,
) -> np.ndarray:
    """Move one model subblock by the type-weighted codeword average.

    An all-zero type (failed or empty subround) leaves the block unchanged.
    """
    type_vector = np.asarray(type_vector, dtype=np.float64)
    if type_vector.shape != (cb.size,):
        raise ConfigError(
            f"type vector of length {type_vector.shape} does not match "
            f"codebook size {cb.size}"
        )
    if len(block_prev) > cb.dim:
        raise ConfigError(
            f"block of length {len(block_prev)} exceeds codeword dim {cb.dim}"
        )
    combo = cb.codewords.T @ type_vector
    return block_prev + global_lr * combo[:len(block_prev)]


class FederatedSimulation:
    """Holds all run state and drives rounds.

    decode_override, when set, replaces the subround decoder with a
    callable (transmission, received_or_None) -> TypeEstimate; used to
    splice ground-truth types into the channel scenarios for testing.
    """

    def __init__(self, cfg: ScenarioConfig, decode_override=None,
                 collect_diagnostics: bool = False):
        self.cfg = cfg
        self.decode_override = decode_override
        self.collect_diagnostics = collect_diagnostics
        self.subround_diagnostics: list[tuple] = []

        self.arch = cfg.architecture()
        self.train_cfg = cfg.train_config()
        self.sel_cfg = cfg.selection_config()
        seed = cfg.seed

        train_ds, val_ds, test_ds = self._load_data()
        self.server_ds = val_ds
        self.test_ds = test_ds
        self.val_ds = val_ds
        spec = datamod.PartitionSpec(cfg.num_clients, cfg.dirichlet_alpha)
        self.shards = datamod.dirichlet_partition(
            train_ds, spec, rngmod.substream(seed, rngmod.TAG_DATA, 3)
        )

        self.geometry = ch.build_geometry()
        pos_rng = rngmod.substream(seed, rngmod.TAG_POSITIONS)
        self.positions = pos_rng.uniform(
            0.0, self.geometry.area_side, (cfg.num_clients, 2)
        )
        self.client_zones = np.array(
            [self.geometry.zone_of(p) for p in self.positions]
        )

        self.params = mdl.init_params(self.arch, rngmod.substream(seed, rngmod.TAG_INIT))
        self.width = self.arch.param_count
        self.theta = cfg.theta_init
        self.client_errors: dict[int, np.ndarray] = {}
        self.server_err = np.zeros(self.width)
        self.codebook: qz.QuantCodebook | None = None

        self.num_subrounds = qz.num_subvectors(self.width, cfg.subvector_dim)
        if cfg.scenario in ("perfect_quant", "tuma", "mdaircomp"):
            if self.num_subrounds < cfg.codebook_size:
                raise ConfigError(
                    f"{self.num_subrounds} subvectors cannot fit a codebook of "
                    f"{cfg.codebook_size} words; lower index_bits or subvector_dim"
                )

        self.prior = PriorConfig.for_target(
            cfg.target_participants, self.geometry.num_zones, cfg.codebook_size,
            cfg.k_max,
        )
        self.noise_var = ch.calibrate_noise(cfg.snr_rx_db, cfg.power, self.geometry)
        self.comm_codebook: ch.CommCodebook | None = None
        if cfg.scenario == "tuma":
            self.comm_codebook = ch.gen_codebook(
                cfg.blocklength, self.geometry.num_zones, cfg.codebook_size,
                rngmod.substream(seed, rngmod.TAG_COMM_CODEBOOK),
            )
        elif cfg.scenario == "mdaircomp":
            self.comm_codebook = ch.gen_codebook(
                cfg.blocklength, self.geometry.num_zones, cfg.codebook_size,
                rngmod.substream(seed, rngmod.TAG_COMM_CODEBOOK),
            )
            self.preeq = md.PreEqConfig(cfg.snr_rx_db, cfg.deep_fade_threshold)
            self.p_norm = md.received_amplitude(
                self.preeq, self.noise_var, cfg.blocklength,
                self.geometry.num_zones, cfg.target_participants,
            )
        self._executor: ThreadPoolExecutor | None = None

    # -- setup helpers ------------------------------------------------------

    def _load_data(self):
        cfg = self.cfg
        if cfg.dataset == "synthetic":
            full = datamod.synthetic_dataset(
                cfg.synthetic_samples, cfg.synthetic_classes, cfg.synthetic_dim,
                cfg.synthetic_separation,
                rngmod.substream(cfg.seed, rngmod.TAG_DATA, 1),
            )
        else:
            images = f"{cfg.data_dir}/train-images-idx3-ubyte"
            labels = f"{cfg.data_dir}/train-labels-idx1-ubyte"
            try:
                full = datamod.load_idx(images, labels)
            except FileNotFoundError as exc:
                raise ConfigError(
                    f"FMNIST IDX files not found under '{cfg.data_dir}' "
                    f"({exc}); point data_dir at them or use dataset=synthetic"
                ) from exc
        return datamod.split(
            full, tuple(cfg.split_ratios),
            rngmod.substream(cfg.seed, rngmod.TAG_DATA, 2),
        )

    def _map(self, fn, items):
        if self._executor is not None:
            return list(self._executor.map(fn, items))
        return [fn(item) for item in items]

    def _has_data(self, cid: int) -> bool:
        return len(self.shards[cid]) > 0

    # -- one round ----------------------------------------------------------

    def run_round(self, t: int) -> RoundRecord:
        cfg = self.cfg
        seed = cfg.seed
        start = time.perf_counter()
        theta_broadcast = self.theta

        active = sel.activate(
            cfg.num_clients, cfg.activation_prob,
            rngmod.substream(seed, rngmod.TAG_ACTIVATE, t),
        )

        if cfg.scenario in ("perfect_quant", "tuma", "mdaircomp"):
            self.codebook, self.server_err = qz.server_codebook_round(
                self.params, self.arch, self.server_ds, self.server_err,
                self.train_cfg, cfg.codebook_size, cfg.subvector_dim,
                rngmod.substream(seed, rngmod.TAG_SERVER_CODEBOOK, t),
            )

        candidates, selected = self._select(t, active, theta_broadcast)
        num_selected = len(selected)

        def train_one(cid: int) -> np.ndarray:
            trained = mdl.local_train(
                self.params, self.arch, self.shards[cid], self.train_cfg,
                rngmod.substream(seed, rngmod.TAG_TRAIN, t, cid),
            )
            return mdl.compute_update(trained, self.params)

        updates = self._map(train_one, selected)

        if cfg.scenario == "perfect":
            self.params, l_hat = aggregate_perfect(self.params, updates, cfg.global_lr)
            mean_tv = float("nan")
        else:
            l_hat, mean_tv = self._quantized_aggregation(t, selected, updates)

        if cfg.selection == "self":
            self.theta = sel.update_threshold(
                self.theta, l_hat, cfg.target_participants, cfg.theta_step
            )

        test_loss, test_acc = mdl.evaluate(self.params, self.arch, self.test_ds)
        return RoundRecord(
            round=t,
            test_accuracy=test_acc,
            test_loss=test_loss,
            num_active=len(active),
            num_candidates=len(candidates),
            num_selected=num_selected,
            l_hat=l_hat,
            theta=theta_broadcast,
            mean_tv_type_error=mean_tv,
            wall_time_s=time.perf_counter() - start,
        )

    def _select(self, t: int, active: np.ndarray, theta: float):
        cfg = self.cfg
        seed = cfg.seed
        if cfg.selection == "random":
            selected = sel.random_select(
                active, cfg.target_participants, cfg.activation_prob,
                cfg.num_clients, rngmod.substream(seed, rngmod.TAG_SELECT, t),
            )
            return active, [cid for cid in selected.tolist() if self._has_data(cid)]

        gated = sel.candidate_gate(
            active, cfg.candidate_pool_size, cfg.activation_prob, cfg.num_clients,
            rngmod.substream(seed, rngmod.TAG_GATE, t),
        )
        candidates = [cid for cid in gated.tolist() if self._has_data(cid)]
        loss_list = self._map(
            lambda cid: mdl.evaluate(self.params, self.arch, self.shards[cid])[0],
            candidates,
        )
        losses = dict(zip(candidates, loss_list))
        if cfg.selection == "poc":
            selected = sel.poc_select(candidates, losses, cfg.target_participants)
            return candidates, selected.tolist()
        selected = [
            cid for cid in candidates
            if sel.self_select(
                losses[cid], theta, cfg.steepness,
                rngmod.substream(seed, rngmod.TAG_SELECT, t, cid),
            )
        ]
        return candidates, selected

    def _quantized_aggregation(self, t: int, selected: list[int], updates):
        """Quantize, transmit subround-by-subround, decode, and apply."""
        cfg = self.cfg
        cb = self.codebook
        width = self.width
        dim = cfg.subvector_dim

        if not selected:
            return 0, float("nan")

        indices = np.empty((len(selected), self.num_subrounds), dtype=np.int64)
        for row, (cid, update) in enumerate(zip(selected, updates)):
            err = self.client_errors.get(cid)
            if err is None:
                err = np.zeros(width)
            result = qz.quantize_update(update, err, cb)
            self.client_errors[cid] = result.new_error
            indices[row] = result.indices
        zones = self.client_zones[selected]
        positions = self.positions[selected]

        def decode_subround(d: int):
            tx = ch.SubroundTransmission(
                zones, indices[:, d], self.geometry.num_zones, cfg.codebook_size
            )
            true_type = tx.multiplicities().sum(axis=0) / tx.num_participants
            try:
                est = self._decode(t, d, tx, positions)
            except DecodeFailure as exc:
                logger.warning("round %d subround %d: decode failed: %s", t, d, exc)
                return None, true_type, None
            return est.type_vector, true_type, est

        outcomes = self._map(decode_subround, range(self.num_subrounds))

        counts, tvs = [], []
        for d, (est_type, true_type, est) in enumerate(outcomes):
            lo = d * dim
            hi = min(lo + dim, width)
            if est_type is not None:
                self.params[lo:hi] = aggregate_from_type(
                    self.params[lo:hi], est_type, cb, cfg.global_lr
                )
                counts.append(est.num_participants)
                tvs.append(tv_distance(est_type, true_type))
                if self.collect_diagnostics:
                    self.subround_diagnostics.append(
                        (t, d, est.iterations, est.tau2, est.num_participants,
                         tv_distance(est_type, true_type))
                    )
        l_hat = estimate_round_participants(counts) if counts else 0
        mean_tv = float(np.mean(tvs)) if tvs else float("nan")
        return l_hat, mean_tv

    def _decode(
        self, t: int, d: int, tx: ch.SubroundTransmission, positions: np.ndarray
    ) -> TypeEstimate:
        cfg = self.cfg
        if cfg.scenario == "perfect_quant":
            return TypeEstimate(tx.multiplicities())
        rng = rngmod.substream(cfg.seed, rngmod.TAG_CHANNEL, t, d)
        if cfg.scenario == "tuma":
            received = ch.synthesize_received(
                tx, positions, self.geometry, self.comm_codebook,
                cfg.power, self.noise_var, rng,
            )
            if self.decode_override is not None:
                return self.decode_override(tx, received)
            return amp_decode(
                received, self.comm_codebook, self.geometry, self.prior,
                cfg.amp_iters, cfg.amp_damping, cfg.amp_tol,
            )
        signals, skipped = md.synthesize_reference_signals(
            tx, positions, self.geometry, self.comm_codebook, self.preeq,
            self.p_norm, self.noise_var, rng,
        )
        if skipped:
            logger.debug("round %d subround %d: %d deep-fade skips", t, d, skipped)
        if self.decode_override is not None:
            return self.decode_override(tx, signals)
        return md.mdaircomp_decode(
            signals, self.comm_codebook, self.prior, self.p_norm,
            cfg.amp_iters, cfg.amp_damping, cfg.amp_tol,
        )

    # -- whole runs ---------------------------------------------------------

    def run(self, on_record=None) -> tuple[list[RoundRecord], np.ndarray]:
        records = []
        executor = None
        try:
            if self.cfg.threads > 1:
                executor = ThreadPoolExecutor(max_workers=self.cfg.threads)
                self._executor = executor
            for t in range(1, self.cfg.rounds + 1):
                record = self.run_round(t)
                records.append(record)
                if on_record is not None:
                    on_record(record)
        finally:
            if executor is not None:
                executor.shutdown()
                self._executor = None
        return records, self.params


def run_training(cfg: ScenarioConfig, on_record=None):
    """Convenience wrapper: build a simulation and run all rounds."""
    sim = FederatedSimulation(cfg)
    return sim.run(on_record=on_record)
