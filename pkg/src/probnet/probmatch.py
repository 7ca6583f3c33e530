"""Reinforcement streams from declarative distribution specs, hypothesis
encoding, and multi-network replication studies.

A :class:`DistributionSpec` names a probability mass function over H
hypotheses, possibly time-varying through a schedule of parameter
switches.  Streams turn a spec into per-epoch reinforcement batches:

* :class:`TrainingStream` redraws every reinforcement each epoch
  (Bernoulli with the epoch's probabilities).  Its error sequence is
  noisy, so it suits long cessation-free runs and tracking experiments.
* :class:`FixedSetStream` draws one reinforcement set per schedule
  regime and replays it every epoch, which is the setting under which
  the relative-change cessation rule is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import stats

from . import training
from .netcore import Network
from .reports import write_csv

PAPER_INSTANCES_PER_HYPOTHESIS = 15


@dataclass
class Support:
    lo: float
    hi: float
    bins: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("support requires hi > lo")
        if self.bins < 1:
            raise ValueError("support requires at least one bin")


@dataclass
class DistributionSpec:
    """Declarative target pmf, possibly time-varying.

    ``kind`` is one of table, binomial, poisson, gaussian, gamma, beta.
    Continuous kinds are discretized over ``support`` into equal-width
    bins whose probability is the cdf mass of the bin renormalized over
    [lo, hi].  ``schedule`` lists (switch_epoch, replacement-params)
    pairs with strictly increasing epochs; replacements are merged into
    the active parameter set at their epoch.
    """

    kind: str
    params: dict
    support: Support | None = None
    schedule: list[tuple[int, dict]] = field(default_factory=list)

    _CONTINUOUS = ("gaussian", "gamma", "beta")
    _KINDS = ("table", "binomial", "poisson") + _CONTINUOUS

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind in self._CONTINUOUS and self.support is None:
            raise ValueError(f"{self.kind} requires a support (lo, hi, bins)")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule switch epochs must be strictly increasing")
        self.params_at(0)  # validate base parameters eagerly

    @property
    def n_hypotheses(self) -> int:
        if self.kind == "table":
            return len(self.params["probabilities"])
        if self.kind == "binomial":
            return int(self.params["n"]) + 1
        if self.kind == "poisson":
            return int(self.params["count"])
        return self.support.bins

    @property
    def switch_epochs(self) -> tuple[int, ...]:
        return tuple(e for e, _ in self.schedule)

    def params_at(self, epoch: int) -> dict:
        params = dict(self.params)
        for switch, repl in self.schedule:
            if epoch >= switch:
                params.update(repl)
        _validate_params(self.kind, params)
        return params


def _validate_params(kind: str, params: dict) -> None:
    if kind == "table":
        p = np.asarray(params["probabilities"], dtype=np.float64)
        if (p < 0).any():
            raise ValueError("table probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("table probabilities must sum to 1 within 1e-9")
    elif kind == "binomial":
        if params["n"] < 1 or not 0.0 <= params["p"] <= 1.0:
            raise ValueError("binomial requires n >= 1 and p in [0, 1]")
    elif kind == "poisson":
        if params["mu"] <= 0 or params["count"] < 1:
            raise ValueError("poisson requires mu > 0 and count >= 1")
    elif kind == "gaussian":
        if params["sd"] <= 0:
            raise ValueError("gaussian requires sd > 0")
    elif kind == "gamma":
        if params["shape"] <= 0 or params["scale"] <= 0:
            raise ValueError("gamma requires shape > 0 and scale > 0")
    elif kind == "beta":
        if params["a"] <= 0 or params["b"] <= 0:
            raise ValueError("beta requires a > 0 and b > 0")


def pmf(spec: DistributionSpec, epoch: int = 0) -> np.ndarray:
    """Probabilities over the H hypotheses active at ``epoch``.

    Table entries are returned verbatim; generated kinds are renormalized
    over their (possibly truncated) support so the vector sums to 1.
    """
    params = spec.params_at(epoch)
    if spec.kind == "table":
        return np.asarray(params["probabilities"], dtype=np.float64)
    if spec.kind == "binomial":
        n = int(params["n"])
        mass = stats.binom.pmf(np.arange(n + 1), n, params["p"])
    elif spec.kind == "poisson":
        mass = stats.poisson.pmf(np.arange(int(params["count"])), params["mu"])
    else:
        dist = _frozen_dist(spec.kind, params)
        edges = np.linspace(spec.support.lo, spec.support.hi, spec.support.bins + 1)
        mass = np.diff(dist.cdf(edges))
    total = mass.sum()
    if total <= 0:
        raise ValueError("distribution has no mass on the requested support")
    return mass / total


def _frozen_dist(kind: str, params: dict):
    if kind == "gaussian":
        return stats.norm(loc=params["mean"], scale=params["sd"])
    if kind == "gamma":
        return stats.gamma(params["shape"], scale=params["scale"])
    return stats.beta(params["a"], params["b"])


def encode_hypothesis(index: int, n_hypotheses: int) -> float:
    """Scalar input encoding in [-1, 1], affine in the hypothesis index."""
    if not 0 <= index < n_hypotheses:
        raise ValueError(f"hypothesis index {index} out of range [0, {n_hypotheses})")
    if n_hypotheses == 1:
        return 0.0
    return -1.0 + 2.0 * index / (n_hypotheses - 1)


def encodings(n_hypotheses: int) -> np.ndarray:
    return np.array([encode_hypothesis(i, n_hypotheses) for i in range(n_hypotheses)])


@dataclass
class ReinforcementSample:
    """One observation: a hypothesis and its 0/1 reinforcement."""

    hypothesis_index: int
    input_encoding: float
    reinforcement: int

    def __post_init__(self):
        if self.reinforcement not in (0, 1):
            raise ValueError("reinforcement must be 0 or 1")


class EpochBatch(training._Batch):
    """One epoch of reinforcements, compressed to per-hypothesis counts."""

    __slots__ = ("shuffle_seed",)

    def __init__(self, encodings, counts, positives, hypothesis_ids=None,
                 shuffle_seed=0):
        super().__init__(encodings, counts, positives, hypothesis_ids)
        self.shuffle_seed = shuffle_seed

    def samples(self) -> list[ReinforcementSample]:
        """Expand to individual samples in a deterministic shuffled order."""
        out = []
        for i, hyp in enumerate(self.hypothesis_ids):
            n, k = int(self.counts[i]), int(self.positives[i])
            enc = float(self.encodings[i])
            out.extend(ReinforcementSample(int(hyp), enc, 1) for _ in range(k))
            out.extend(ReinforcementSample(int(hyp), enc, 0) for _ in range(n - k))
        rng = np.random.default_rng(self.shuffle_seed)
        rng.shuffle(out)
        return out


def _draw_batch(spec: DistributionSpec, epoch: int, instances: int,
                seed_material) -> EpochBatch:
    p = pmf(spec, epoch)
    rng = np.random.default_rng(np.random.SeedSequence(seed_material))
    k = rng.binomial(instances, p)
    H = len(p)
    return EpochBatch(encodings(H), np.full(H, instances), k,
                      shuffle_seed=list(seed_material) + [1])


@dataclass
class TrainingStream:
    """Fresh reinforcements every epoch: r ~ Bernoulli(P_epoch(h)).

    Emits exactly H * instances_per_hypothesis samples per epoch; the
    same (seed, epoch) pair always yields the same batch.
    """

    spec: DistributionSpec
    instances_per_hypothesis: int = PAPER_INSTANCES_PER_HYPOTHESIS
    rng_seed: int = 0

    def __post_init__(self):
        if self.instances_per_hypothesis < 1:
            raise ValueError("instances_per_hypothesis must be positive")

    @property
    def n_hypotheses(self) -> int:
        return self.spec.n_hypotheses

    @property
    def switch_epochs(self) -> tuple[int, ...]:
        return self.spec.switch_epochs

    def batch_for_epoch(self, epoch: int) -> EpochBatch:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return _draw_batch(self.spec, epoch, self.instances_per_hypothesis,
                           [self.rng_seed, epoch])


@dataclass
class FixedSetStream:
    """One reinforcement set per schedule regime, replayed every epoch.

    This is the fixed-training-set reading of the cessation loop: the
    error sequence is smooth, so relative-change stagnation and cessation
    fire reliably.  At each schedule switch a new set is drawn from the
    replacement distribution.
    """

    spec: DistributionSpec
    instances_per_hypothesis: int = PAPER_INSTANCES_PER_HYPOTHESIS
    rng_seed: int = 0

    def __post_init__(self):
        if self.instances_per_hypothesis < 1:
            raise ValueError("instances_per_hypothesis must be positive")
        self._cache: dict[int, EpochBatch] = {}

    @property
    def n_hypotheses(self) -> int:
        return self.spec.n_hypotheses

    @property
    def switch_epochs(self) -> tuple[int, ...]:
        return self.spec.switch_epochs

    def _regime(self, epoch: int) -> int:
        regime = 0
        for i, switch in enumerate(self.spec.switch_epochs):
            if epoch >= switch:
                regime = i + 1
        return regime

    def _regime_start(self, regime: int) -> int:
        return 0 if regime == 0 else self.spec.switch_epochs[regime - 1]

    def batch_for_epoch(self, epoch: int) -> EpochBatch:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        regime = self._regime(epoch)
        if regime not in self._cache:
            self._cache[regime] = _draw_batch(
                self.spec, self._regime_start(regime),
                self.instances_per_hypothesis, [self.rng_seed, regime])
        return self._cache[regime]


def next_epoch_batch(stream, epoch: int) -> list[ReinforcementSample]:
    """The epoch's reinforcement samples, expanded and shuffled."""
    return stream.batch_for_epoch(epoch).samples()


# ---------------------------------------------------------------------------
# Replication studies
# ---------------------------------------------------------------------------

def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic child seed: SeedSequence over (master, *path)."""
    ss = np.random.SeedSequence([int(master_seed)] + [int(p) for p in path])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ReplicationReport:
    """Cross-network statistics for R independently trained networks."""

    true_p: np.ndarray
    mean_outputs: np.ndarray
    sd_outputs: np.ndarray
    hidden_counts: np.ndarray
    epochs_trained: np.ndarray
    epochs_to_cessation: np.ndarray       # NaN where cessation never fired
    halted_by: list[str]
    recruit_counts: np.ndarray            # (R, n_regimes)
    final_outputs: np.ndarray             # (R, H)
    histories: list[training.TrainHistory] | None = None

    @property
    def n_replications(self) -> int:
        return len(self.halted_by)

    def write_report_csv(self, path) -> None:
        rows = [(i, self.true_p[i], self.mean_outputs[i], self.sd_outputs[i])
                for i in range(len(self.true_p))]
        write_csv(path, ("hypothesis", "true_p", "mean_output", "sd_output"), rows)

    def write_summary_csv(self, path) -> None:
        rows = []
        for r in range(self.n_replications):
            epochs = int(self.epochs_trained[r])
            rows.append((r, int(self.hidden_counts[r]), epochs, self.halted_by[r]))
        write_csv(path, ("replication", "hidden_units", "epochs", "halted_by"), rows)


def make_stream(spec: DistributionSpec, sampling: str, instances: int, seed: int):
    if sampling == "fresh":
        return TrainingStream(spec, instances, seed)
    if sampling == "fixed":
        return FixedSetStream(spec, instances, seed)
    raise ValueError(f"unknown sampling mode {sampling!r}")


def run_replications(spec: DistributionSpec, cfg: training.TrainConfig, R: int,
                     sampling: str = "fixed",
                     instances: int = PAPER_INSTANCES_PER_HYPOTHESIS,
                     keep_histories: bool = False) -> ReplicationReport:
    """Train R independent networks on the spec and aggregate results.

    Per-replication seeds derive deterministically from cfg.rng_seed, so
    the report does not depend on execution order.  Runs that hit their
    epoch cap are recorded via ``halted_by``, not raised.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    H = spec.n_hypotheses
    n_regimes = len(spec.switch_epochs) + 1
    finals = np.empty((R, H))
    hidden = np.empty(R, dtype=int)
    epochs = np.empty(R, dtype=int)
    to_cess = np.full(R, np.nan)
    halted = []
    recruits = np.zeros((R, n_regimes), dtype=int)
    histories = [] if keep_histories else None

    boundaries = list(spec.switch_epochs)
    for r in range(R):
        rep_cfg = replace(cfg, rng_seed=derive_seed(cfg.rng_seed, r, 0))
        stream = make_stream(spec, sampling, instances, derive_seed(cfg.rng_seed, r, 1))
        net = Network.minimal(1, 1, rng_seed=rep_cfg.rng_seed)
        net, history = training.train_sdcc(net, stream, rep_cfg)
        finals[r] = net.forward_batch(encodings(H)[:, None])[:, 0]
        hidden[r] = net.n_hidden
        epochs[r] = history.epochs_run
        cess_epoch = history.first_cessation_epoch()
        if cess_epoch is not None:
            to_cess[r] = cess_epoch
        halted.append(history.halted_by)
        for ep in history.recruit_epochs():
            regime = sum(1 for b in boundaries if ep >= b)
            recruits[r, regime] += 1
        if keep_histories:
            histories.append(history)

    last_epoch = int(epochs.max()) - 1 if epochs.max() > 0 else 0
    return ReplicationReport(
        true_p=pmf(spec, max(last_epoch, 0)),
        mean_outputs=finals.mean(axis=0),
        sd_outputs=finals.std(axis=0),
        hidden_counts=hidden,
        epochs_trained=epochs,
        epochs_to_cessation=to_cess,
        halted_by=halted,
        recruit_counts=recruits,
        final_outputs=finals,
        histories=histories,
    )


# ---------------------------------------------------------------------------
# Adaptation lag
# ---------------------------------------------------------------------------

@dataclass
class AdaptationResult:
    """Epochs needed to bring every output within tolerance of the pmf.

    ``initial_epochs`` counts from the start against the initial pmf;
    each entry of ``switch_lags`` counts from its switch against the
    replacement pmf.  ``None`` marks a tolerance that was never reached.
    """

    initial_epochs: int | None
    switch_lags: list[tuple[int, int | None]]
    tolerance: float


def adaptation_lag(history: training.TrainHistory, spec: DistributionSpec,
                   tolerance: float = 0.05) -> AdaptationResult:
    """Measure how quickly outputs reach the active pmf, per regime."""
    outputs = history.output_matrix()
    if outputs.size == 0:
        raise ValueError("history carries no per-epoch outputs")
    T = outputs.shape[0]

    def first_within(start: int, target: np.ndarray) -> int | None:
        for t in range(start, T):
            if np.max(np.abs(outputs[t] - target)) <= tolerance:
                return t
        return None

    initial = first_within(0, pmf(spec, 0))
    lags = []
    for switch, _ in spec.schedule:
        if switch >= T:
            lags.append((switch, None))
            continue
        hit = first_within(switch, pmf(spec, switch))
        lags.append((switch, None if hit is None else hit - switch))
    return AdaptationResult(initial, lags, tolerance)
