"""Constructive training: output-weight descent, candidate recruitment,
and the learning-cessation stopping rule.

The trainer alternates two phases.  The *output phase* runs batch gradient
descent (with momentum) on the trainable weights, which are exactly the
connections feeding output units.  When the output phase stops making
relative progress, a pool of candidate hidden units is trained to track
the residual error and the best one is recruited: its incoming weights are
frozen and it gains a trainable connection to every output unit.

Learning cessation monitors the per-epoch error sequence and halts when
the relative change stays below ``epsilon_c`` for ``patience`` consecutive
epochs.  Because the rule compares consecutive errors, it is meaningful on
streams that replay a fixed reinforcement set each epoch (where the error
sequence is smooth); on streams that redraw reinforcements every epoch the
sampling noise keeps resetting the counter, so such runs are normally
driven by ``hard_epoch_cap`` with cessation disabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .netcore import OUTPUT, Connection, Network

EVENT_NONE = "none"
EVENT_RECRUIT_SIBLING = "recruit_sibling"
EVENT_RECRUIT_DESCENDANT = "recruit_descendant"
EVENT_CESSATION = "cessation"


@dataclass
class TrainConfig:
    """Knobs for SDCC training; all positive fields must be > 0."""

    epsilon_c: float = 0.01
    patience: int = 10
    learning_rate: float = 3.0
    momentum: float = 0.9
    max_output_epochs_per_phase: int = 150
    max_candidate_epochs: int = 120
    pool_size: int = 8
    rng_seed: int = 0
    cessation_enabled: bool = True
    hard_epoch_cap: int | None = None
    # Recruitment control.  Stagnation uses the cessation rule with its own
    # patience; a new recruit is only allowed while the previous one cut the
    # plateau error by at least min_recruit_gain (growth stops helping =>
    # cessation takes over).
    stagnation_patience: int = 8
    stagnation_epsilon: float | None = None
    min_recruit_gain: float = 0.015
    # Install the winning candidate only if it actually tracks the residual
    # error: |correlation| at or above this value.  0 disables the check.
    min_candidate_correlation: float = 0.0
    max_hidden_units: int = 25
    candidate_learning_rate: float | None = None
    init_weight_scale: float = 1.0
    output_init_scale: float = 0.3
    init_trainable: bool = True
    # "uniform": weights ~ U[-scale, +scale].  "saturated": fixed magnitude
    # `scale` with random sign, so a naive net starts committed to wrong
    # answers and must unwind them (slow initial learning, as when circuitry
    # has never seen the task).
    init_weight_style: str = "uniform"
    # Start the output bias at logit(base rate) of the first batch instead
    # of a random draw; avoids the plunge-and-overshoot transient on tasks
    # whose targets are all far from 0.5 (e.g. many-bin discretizations).
    init_bias_to_base_rate: bool = False
    # Fahlman's flat-spot fix: added to the logistic derivative in output
    # deltas so saturated outputs keep a usable gradient.
    prime_offset: float = 0.1
    # Optional 1/t decay for the output-phase rate: lr(t) = lr/(1 + t/tau).
    # Shrinks the stationary noise bias of long runs on redrawn batches.
    lr_decay_epochs: int | None = None
    # When True, reaching cessation suspends weight updates instead of
    # ending the run; a later error spike (e.g. the environment changed)
    # resumes learning.  Termination is then by hard_epoch_cap.
    dormant_cessation: bool = False

    def validate(self) -> None:
        positive = {
            "epsilon_c": self.epsilon_c,
            "patience": self.patience,
            "learning_rate": self.learning_rate,
            "max_output_epochs_per_phase": self.max_output_epochs_per_phase,
            "max_candidate_epochs": self.max_candidate_epochs,
            "pool_size": self.pool_size,
            "stagnation_patience": self.stagnation_patience,
            "max_hidden_units": self.max_hidden_units,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.hard_epoch_cap is not None and self.hard_epoch_cap <= 0:
            raise ValueError("hard_epoch_cap must be strictly positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.cessation_enabled and self.hard_epoch_cap is None:
            raise ValueError("a run needs cessation or a hard_epoch_cap to terminate")

    @property
    def stagnation_eps(self) -> float:
        return self.stagnation_epsilon if self.stagnation_epsilon is not None else self.epsilon_c

    @property
    def candidate_lr(self) -> float:
        return (self.candidate_learning_rate
                if self.candidate_learning_rate is not None else self.learning_rate)


@dataclass
class CessationState:
    """Progress monitor: counts consecutive epochs of small relative change."""

    epsilon_c: float
    patience: int
    counter: int = 0
    prev_error: float | None = None
    epoch: int = 0


def cessation_step(state: CessationState, new_error: float,
                   cfg: TrainConfig | None = None) -> tuple[CessationState, bool]:
    """Advance the cessation monitor with this epoch's error.

    Resets the counter when |E(t) - E(t-1)| >= eps * |E(t)|, increments it
    otherwise, and reports halt once the counter reaches the patience.
    The first call (no previous error) never increments.
    """
    if not np.isfinite(new_error):
        raise ValueError("cessation_step requires a finite error")
    eps = cfg.epsilon_c if cfg is not None else state.epsilon_c
    patience = cfg.patience if cfg is not None else state.patience
    if state.prev_error is not None:
        if abs(new_error - state.prev_error) >= eps * abs(new_error):
            state.counter = 0
        else:
            state.counter = min(state.counter + 1, patience)
    state.prev_error = new_error
    state.epoch += 1
    return state, state.counter >= patience


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

class _Batch:
    """Per-hypothesis compression of a reinforcement batch.

    Stores, for each distinct hypothesis, its input encoding (a scalar or a
    vector), the number of presented instances, and the sum of its targets
    (the count of positive reinforcements for 0/1 targets).  The
    sum-of-squared error and all gradients depend on the samples only
    through these sums; ``target_sq`` carries sum(target^2), which equals
    the positive count for 0/1 reinforcements but differs for continuous
    regression targets.
    """

    __slots__ = ("inputs", "counts", "positives", "hypothesis_ids", "target_sq")

    def __init__(self, inputs, counts, positives, hypothesis_ids=None,
                 target_sq=None):
        inputs = np.asarray(inputs, dtype=np.float64)
        self.inputs = inputs[:, None] if inputs.ndim == 1 else inputs
        self.counts = np.asarray(counts, dtype=np.float64)
        self.positives = np.asarray(positives, dtype=np.float64)
        if hypothesis_ids is None:
            hypothesis_ids = np.arange(len(self.inputs))
        self.hypothesis_ids = np.asarray(hypothesis_ids)
        self.target_sq = (self.positives if target_sq is None
                          else np.asarray(target_sq, dtype=np.float64))

    @property
    def encodings(self) -> np.ndarray:
        return self.inputs[:, 0]

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def _as_batch(batch) -> _Batch:
    """Accept either a compressed batch or an iterable of samples.

    Sample objects need ``hypothesis_index``, ``input_encoding`` and
    ``reinforcement`` attributes (see probmatch.ReinforcementSample).
    """
    if isinstance(batch, _Batch):
        return batch
    if hasattr(batch, "encodings") and hasattr(batch, "positives"):
        return _Batch(batch.encodings, batch.counts, batch.positives,
                      getattr(batch, "hypothesis_ids", None))
    samples = list(batch)
    if not samples:
        raise ValueError("batch must not be empty")
    by_hyp: dict[int, list] = {}
    enc: dict[int, float] = {}
    for s in samples:
        by_hyp.setdefault(s.hypothesis_index, []).append(s.reinforcement)
        enc[s.hypothesis_index] = s.input_encoding
    ids = sorted(by_hyp)
    counts = [len(by_hyp[i]) for i in ids]
    positives = [sum(by_hyp[i]) for i in ids]
    return _Batch([enc[i] for i in ids], counts, positives, ids)


# ---------------------------------------------------------------------------
# Error and the output phase
# ---------------------------------------------------------------------------

def _output_unit(net: Network):
    outs = net.output_units
    if len(outs) != 1:
        raise ValueError("reinforcement training supports single-output networks")
    return outs[0]


def _outputs_for(net: Network, batch: _Batch) -> np.ndarray:
    return net.forward_batch(batch.inputs)[:, 0]


def _sse(outputs: np.ndarray, batch: _Batch) -> float:
    # 1/2 sum_i sum_j (o_i - r_ij)^2, expanded over the 0/1 counts
    o = outputs
    return float(0.5 * np.sum(batch.counts * o * o
                              - 2.0 * batch.positives * o + batch.target_sq))


def epoch_error(net: Network, batch) -> float:
    """Sum-of-squared output error, E = 1/2 sum_i sum_j (o_i - r_ij)^2.

    Outputs are recomputed with the current weights.  Rejects empty batches.
    """
    b = _as_batch(batch)
    if b.total == 0:
        raise ValueError("batch must not be empty")
    _output_unit(net)
    return _sse(_outputs_for(net, b), b)


class _OutputPhase:
    """Momentum state and cached index structure for output-weight descent."""

    def __init__(self, net: Network, cfg: TrainConfig):
        self.net = net
        self.cfg = cfg
        self.velocity: dict[tuple[int, int], float] = {}
        self.rebuild()

    def rebuild(self) -> None:
        net = self.net
        self.out_unit = _output_unit(net)
        self.trainable = [c for c in net.connections if not c.frozen]
        order, pos, _, _ = net._evaluation_plan()
        self.src_rows = np.array([pos[c.source] for c in self.trainable], dtype=np.intp)
        self.out_row = pos[self.out_unit.id]
        for c in self.trainable:
            self.velocity.setdefault((c.source, c.target), 0.0)

    def init_weights(self, rng: np.random.Generator, scale: float,
                     style: str = "uniform") -> None:
        for c in self.trainable:
            draw = rng.uniform(-scale, scale)
            if style == "saturated":
                c.weight = float(scale * np.sign(draw) if draw != 0 else scale)
            elif style == "uniform":
                c.weight = float(draw)
            else:
                raise ValueError(f"unknown init_weight_style {style!r}")

    def step(self, batch: _Batch, lr_scale: float = 1.0) -> np.ndarray:
        """One pass over the batch: a single batch-gradient update.

        Returns the post-update outputs per hypothesis.  The gradient is
        normalized by the number of samples so the learning rate does not
        scale with batch size.
        """
        net, cfg = self.net, self.cfg
        acts = net.activations(batch.inputs)
        o = acts[self.out_row]
        delta = (batch.counts * o - batch.positives) * (o * (1.0 - o) + cfg.prime_offset)
        grads = acts[self.src_rows] @ delta / batch.total
        mu, lr = cfg.momentum, cfg.learning_rate * lr_scale
        for c, g in zip(self.trainable, grads):
            key = (c.source, c.target)
            v = mu * self.velocity[key] - lr * float(g)
            self.velocity[key] = v
            c.weight += v
        return _outputs_for(net, batch)


def train_one_epoch(net: Network, batch, cfg: TrainConfig):
    """One output-phase pass over the batch (momentum starts at rest).

    Only unfrozen weights change.  Returns ``(outputs, net)`` where
    ``outputs`` holds the post-update activation for every distinct
    hypothesis in the batch, ordered by hypothesis index.
    """
    b = _as_batch(batch)
    outputs = _OutputPhase(net, cfg).step(b)
    return outputs, net


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------

SIBLING = "sibling"
DESCENDANT = "descendant"


@dataclass
class Candidate:
    kind: str                      # sibling | descendant
    layer: int
    source_ids: list[int]
    weights: np.ndarray
    score: float | None = None
    output_covs: np.ndarray | None = None
    correlation: float | None = None


@dataclass
class CandidatePool:
    candidates: list[Candidate]
    rng: np.random.Generator = field(repr=False, default=None)
    output_init_scale: float = 0.1

    @property
    def scored(self) -> bool:
        return all(c.score is not None for c in self.candidates)

    def best_index(self) -> int:
        scores = [c.score for c in self.candidates]
        # ties break to the lowest index
        return int(np.argmax(scores))


def make_pool(net: Network, cfg: TrainConfig, rng: np.random.Generator) -> CandidatePool:
    """Fresh candidate pool: half siblings, half descendants.

    Before the first hidden layer exists every candidate is a descendant
    (the first recruit creates layer 1).  Candidate incoming weights are
    drawn uniform in [-init_weight_scale, +init_weight_scale].
    """
    deepest = net.max_hidden_layer
    non_out = [u for u in net.units if u.kind != OUTPUT]
    desc_sources = [u.id for u in non_out]                      # everything below the new layer
    sib_sources = [u.id for u in non_out if u.layer < deepest]  # strictly below the current one
    kinds = [DESCENDANT] * cfg.pool_size if deepest == 0 else (
        [SIBLING] * (cfg.pool_size // 2)
        + [DESCENDANT] * (cfg.pool_size - cfg.pool_size // 2))
    cands = []
    for kind in kinds:
        sources = sib_sources if kind == SIBLING else desc_sources
        layer = deepest if kind == SIBLING else deepest + 1
        w = rng.uniform(-cfg.init_weight_scale, cfg.init_weight_scale, size=len(sources))
        cands.append(Candidate(kind, max(layer, 1), list(sources), w))
    return CandidatePool(cands, rng, output_init_scale=cfg.output_init_scale)


@dataclass
class PhaseResiduals:
    """Per-sample output errors at an output-phase plateau.

    ``inputs`` has shape (n_samples, n_inputs); ``errors`` has shape
    (n_samples,) or (n_samples, n_outputs).
    """

    inputs: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        e = np.asarray(self.errors, dtype=np.float64)
        self.errors = e[:, None] if e.ndim == 1 else e


def _train_candidate_group(A_src: np.ndarray, C: np.ndarray, W: np.ndarray,
                           n_total: float, cfg: TrainConfig):
    """Gradient-ascend the covariance score for one group of candidates.

    ``A_src``: (n_src, m) source activations per column; ``C``: (m, n_out)
    centred-residual coefficients such that cov_o = v . C[:, o] for a
    candidate activation row v; ``W``: (k, n_src) candidate weights,
    updated in place.  Returns (scores, covs) for the trained group.
    """
    mu = cfg.momentum
    lr = cfg.candidate_lr
    vel = np.zeros_like(W)
    best = -np.inf
    stall = 0
    epochs = 0
    for _ in range(cfg.max_candidate_epochs):
        V = expit(W @ A_src)                       # (k, m)
        covs = V @ C                               # (k, n_out)
        coeff = (V * (1.0 - V)) * (np.sign(covs) @ C.T)
        vel = mu * vel + lr * (coeff @ A_src.T) / n_total
        W += vel
        epochs += 1
        score = np.abs(covs).sum(axis=1).max()
        if score <= best * (1.0 + 1e-6):
            stall += 1
            if stall >= cfg.stagnation_patience:
                break
        else:
            best = score
            stall = 0
    V = expit(W @ A_src)
    covs = V @ C
    scores = np.abs(covs).sum(axis=1)
    return scores, covs, epochs


def _score_pool(net: Network, pool: CandidatePool, columns: np.ndarray,
                C: np.ndarray, col_weights: np.ndarray, resid_ss: np.ndarray,
                cfg: TrainConfig):
    """Shared core: train/score the pool against activation columns.

    Candidates are trained together as matrix rows, which is identical to
    training them one at a time (they are independent).  ``col_weights``
    are per-column sample multiplicities and ``resid_ss`` the per-output
    centred residual sum of squares (for the correlation figure).  Returns
    the pool and the number of candidate-phase epochs consumed (the
    maximum over groups; groups conceptually train in parallel).
    """
    order, pos, _, _ = net._evaluation_plan()
    acts = net.activations(columns)
    n_total = float(col_weights.sum())
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, cand in enumerate(pool.candidates):
        groups.setdefault(tuple(cand.source_ids), []).append(i)
    phase_epochs = 0
    for source_ids, members in groups.items():
        rows = np.array([pos[s] for s in source_ids], dtype=np.intp)
        W = np.stack([pool.candidates[i].weights for i in members])
        scores, covs, used = _train_candidate_group(acts[rows], C, W, n_total, cfg)
        phase_epochs = max(phase_epochs, used)
        V = expit(W @ acts[rows])
        v_mean = (V * col_weights).sum(axis=1, keepdims=True) / n_total
        v_ss = ((V - v_mean) ** 2 * col_weights).sum(axis=1)
        denom = np.sqrt(np.outer(v_ss, resid_ss))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(denom > 0, np.abs(covs) / denom, 0.0)
        for j, i in enumerate(members):
            cand = pool.candidates[i]
            cand.weights = W[j]
            cand.score = float(scores[j])
            cand.output_covs = covs[j]
            cand.correlation = float(corr[j].max())
    return pool, phase_epochs


def train_candidates(net: Network, pool: CandidatePool, residuals: PhaseResiduals,
                     cfg: TrainConfig) -> CandidatePool:
    """Train every candidate to maximize |covariance| with the residuals.

    Candidate incoming weights are adjusted by gradient ascent on
    S = sum over outputs of |sum over samples (v_p - v_mean)(e_p - e_mean)|;
    the network itself is untouched.  Returns the pool with final scores
    and residual correlations.
    """
    C = residuals.errors - residuals.errors.mean(axis=0, keepdims=True)
    resid_ss = (C ** 2).sum(axis=0)
    ones = np.ones(residuals.errors.shape[0])
    pool, _ = _score_pool(net, pool, residuals.inputs, C, ones, resid_ss, cfg)
    return pool


def recruit(net: Network, pool: CandidatePool) -> Network:
    """Install the highest-scoring candidate into the network.

    The winner's incoming weights are frozen; it gains one trainable
    connection to every output unit, initialized small with sign opposite
    to its residual covariance.  All other candidates are discarded.
    """
    if not pool.candidates:
        raise ValueError("cannot recruit from an empty pool")
    if not pool.scored:
        raise ValueError("pool must be scored before recruitment")
    winner = pool.candidates[pool.best_index()]
    unit = net.add_hidden_unit(winner.layer,
                               list(zip(winner.source_ids, winner.weights)),
                               freeze_incoming=True)
    rng = pool.rng if pool.rng is not None else np.random.default_rng(0)
    outs = sorted(net.output_units, key=lambda u: u.id)
    for j, out in enumerate(outs):
        cov = winner.output_covs[j] if winner.output_covs is not None else 0.0
        magnitude = float(rng.uniform(0.0, pool.output_init_scale))
        sign = -np.sign(cov) if cov != 0 else 1.0
        net.connections.append(Connection(unit.id, out.id, sign * magnitude))
    net.invalidate()
    net.validate()
    return net


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    error: float
    hidden_units: int
    event: str = EVENT_NONE


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    hypothesis_ids: np.ndarray | None = None
    halted_by: str = "cap"

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    @property
    def hidden_unit_count(self) -> int:
        return self.records[-1].hidden_units if self.records else 0

    def output_matrix(self) -> np.ndarray:
        """Per-epoch network outputs, shape (n_epochs, n_hypotheses)."""
        return np.stack(self.outputs) if self.outputs else np.empty((0, 0))

    def events(self, kind: str | None = None) -> list[EpochRecord]:
        return [r for r in self.records if kind is None or r.event == kind]

    def first_cessation_epoch(self) -> int | None:
        for r in self.records:
            if r.event == EVENT_CESSATION:
                return r.epoch
        return None

    def recruit_epochs(self) -> list[int]:
        return [r.epoch for r in self.records
                if r.event in (EVENT_RECRUIT_SIBLING, EVENT_RECRUIT_DESCENDANT)]

    def to_csv(self, path) -> None:
        from .reports import write_csv
        rows = [(r.epoch, repr(r.error), r.hidden_units, r.event) for r in self.records]
        write_csv(path, ("epoch", "error", "hidden_units", "event"), rows)


# ---------------------------------------------------------------------------
# The SDCC loop
# ---------------------------------------------------------------------------

def train_sdcc(net: Network, stream, cfg: TrainConfig) -> tuple[Network, TrainHistory]:
    """Grow and train ``net`` on a reinforcement stream (in place).

    ``stream`` must provide ``batch_for_epoch(epoch)``.  Each epoch is one
    dataset pass: either an output-phase step or one epoch of candidate
    training (during which the network's weights, and hence its outputs,
    are frozen -- the classic flat stretches of constructive learning
    curves).  When the output phase stagnates and the last recruitment
    paid off, a candidate pool is trained on the plateau residuals and its
    winner recruited.  Cessation (if enabled) monitors output-phase epochs
    only; it ends the run, or suspends it when ``dormant_cessation`` is
    set, in which case a later error spike (the environment changed)
    resumes learning and re-opens the recruitment gate.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    phase = _OutputPhase(net, cfg)
    if cfg.init_trainable:
        phase.init_weights(rng, cfg.init_weight_scale, cfg.init_weight_style)
        if cfg.init_bias_to_base_rate:
            first = _as_batch(stream.batch_for_epoch(0))
            rate = min(max(first.positives.sum() / first.total, 1e-3), 1 - 1e-3)
            bias_id = net.bias_unit.id
            for c in phase.trainable:
                if c.source == bias_id:
                    c.weight = float(np.log(rate / (1.0 - rate)))
                else:
                    c.weight *= 0.1
    cess = CessationState(cfg.epsilon_c, cfg.patience)
    stag = CessationState(cfg.stagnation_eps, cfg.stagnation_patience)
    history = TrainHistory()

    cap = cfg.hard_epoch_cap if cfg.hard_epoch_cap is not None else 10_000_000
    phase_epochs = 0
    last_plateau: float | None = None
    window: list[float] = []
    dormant = False
    epoch = 0

    def emit(outputs, batch, event=EVENT_NONE) -> EpochRecord:
        record = EpochRecord(epoch, _sse(outputs, batch), net.n_hidden, event)
        history.records.append(record)
        history.outputs.append(outputs)
        return record

    while epoch < cap:
        batch = _as_batch(stream.batch_for_epoch(epoch))
        if history.hypothesis_ids is None:
            history.hypothesis_ids = batch.hypothesis_ids

        if dormant:
            record = emit(_outputs_for(net, batch), batch)
            cess, _ = cessation_step(cess, record.error)
            if cess.counter == 0:           # error spiked: the world changed
                dormant = False
                stag = CessationState(cfg.stagnation_eps, cfg.stagnation_patience)
                phase_epochs = 0
                window.clear()
                last_plateau = None
            epoch += 1
            continue

        scale = (1.0 if cfg.lr_decay_epochs is None
                 else 1.0 / (1.0 + epoch / cfg.lr_decay_epochs))
        outputs = phase.step(batch, scale)
        record = emit(outputs, batch)
        epoch += 1

        if cfg.cessation_enabled:
            cess, halt = cessation_step(cess, record.error)
            if halt:
                record.event = EVENT_CESSATION
                if cfg.dormant_cessation:
                    dormant = True
                    continue
                history.halted_by = "cessation"
                return net, history

        window.append(record.error)
        if len(window) > cfg.stagnation_patience:
            window.pop(0)
        stag, stagnant = cessation_step(stag, record.error)
        phase_epochs += 1
        if not (stagnant or phase_epochs >= cfg.max_output_epochs_per_phase):
            continue

        plateau = float(np.mean(window))
        gate_open = (last_plateau is None
                     or plateau <= (1.0 - cfg.min_recruit_gain) * last_plateau)
        if gate_open and net.n_hidden < cfg.max_hidden_units:
            # candidate phase: trained against this plateau's residuals;
            # its dataset passes tick the epoch clock with frozen outputs
            residuals = _phase_residuals(batch, outputs)
            pool = make_pool(net, cfg, rng)
            pool, cand_epochs = _train_candidates_compressed(net, pool, batch,
                                                             residuals, cfg)
            frozen_out = _outputs_for(net, batch)
            for _ in range(cand_epochs):
                if epoch >= cap:
                    break
                cand_batch = _as_batch(stream.batch_for_epoch(epoch))
                emit(frozen_out, cand_batch)
                epoch += 1
            winner = pool.candidates[pool.best_index()]
            if winner.score > 0.0 and winner.correlation >= cfg.min_candidate_correlation:
                recruit(net, pool)
                phase.rebuild()
                history.records[-1].event = (EVENT_RECRUIT_SIBLING if winner.kind == SIBLING
                                             else EVENT_RECRUIT_DESCENDANT)
                history.records[-1].hidden_units = net.n_hidden
                last_plateau = plateau
                cess = CessationState(cfg.epsilon_c, cfg.patience,
                                      prev_error=history.records[-1].error)
        stag = CessationState(cfg.stagnation_eps, cfg.stagnation_patience)
        phase_epochs = 0
        window.clear()

    history.halted_by = "cap"
    return net, history


def _phase_residuals(batch: _Batch, outputs: np.ndarray) -> np.ndarray:
    """Per-hypothesis centred residual coefficients (see train_candidates)."""
    s = batch.counts * outputs - batch.positives      # sum_j (o_i - r_ij)
    mean = s.sum() / batch.total
    return (s - batch.counts * mean)[:, None]         # (H, 1)


def _train_candidates_compressed(net: Network, pool: CandidatePool, batch: _Batch,
                                 C: np.ndarray, cfg: TrainConfig):
    """Candidate training on the per-hypothesis compressed batch.

    The correlation figure is taken against the per-hypothesis mean
    residuals (the learnable structure), not the raw per-sample errors
    whose irreducible Bernoulli spread would swamp it.
    """
    between_ss = (C[:, 0] ** 2 / batch.counts).sum()
    return _score_pool(net, pool, batch.inputs, C, batch.counts,
                       np.array([max(between_ss, 0.0)]), cfg)
