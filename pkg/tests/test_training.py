import math

import numpy as np
import pytest

from probnet import netcore, training
from probnet.netcore import Network, serialize
from probnet.probmatch import (DistributionSpec, FixedSetStream, ReinforcementSample,
                               TrainingStream, encodings)
from probnet.training import (CandidatePool, CessationState, PhaseResiduals,
                              TrainConfig, cessation_step, epoch_error, make_pool,
                              recruit, train_candidates, train_one_epoch, train_sdcc)

DISCRETE = DistributionSpec("table", {"probabilities": [0.2, 0.4, 0.1, 0.3]})


def output_at(net, p):
    """Minimal net whose output is exactly p at input 0 (bias-only logit)."""
    b = math.log(p / (1 - p))
    for c in net.connections:
        if c.source == net.bias_unit.id:
            c.weight = b
    net.invalidate()
    return net


class TestEpochError:
    def test_single_sample(self):
        """o=0.5, r=1 -> 1/2 (0.5-1)^2 = 0.125."""
        net = Network.minimal(1, 1)
        samples = [ReinforcementSample(0, 0.0, 1)]
        assert epoch_error(net, samples) == pytest.approx(0.125, abs=1e-12)

    def test_two_samples_hand_arithmetic(self):
        """o=0.2 against {0,1}: 1/2 (0.04 + 0.64) = 0.34."""
        net = output_at(Network.minimal(1, 1), 0.2)
        samples = [ReinforcementSample(0, 0.0, 0), ReinforcementSample(0, 0.0, 1)]
        assert epoch_error(net, samples) == pytest.approx(0.34, abs=1e-9)

    def test_zero_when_outputs_equal_targets(self):
        net = output_at(Network.minimal(1, 1), 0.999999999)
        samples = [ReinforcementSample(0, 0.0, 1)] * 4
        assert epoch_error(net, samples) == pytest.approx(0.0, abs=1e-9)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            epoch_error(Network.minimal(1, 1), [])


class TestCessation:
    def test_large_relative_changes_never_count(self):
        """Errors 10, 9, 8 keep resetting the counter."""
        state = CessationState(0.01, 3)
        for e in (10.0, 9.0, 8.0):
            state, halt = cessation_step(state, e)
            assert state.counter == 0 and not halt

    def test_halt_after_patience_small_changes(self):
        """eps=0.01, patience=2: [10.0, 10.0005, 10.0006] halts on the third."""
        state = CessationState(0.01, 2)
        halts = []
        for e in (10.0, 10.0005, 10.0006):
            state, halt = cessation_step(state, e)
            halts.append(halt)
        assert halts == [False, False, True]

    def test_intermediate_jump_resets(self):
        state = CessationState(0.01, 3)
        errors = (10.0, 10.00001, 12.0, 12.00001, 12.00002, 12.00003)
        halts = [cessation_step(state, e)[1] for e in errors]
        assert halts == [False, False, False, False, False, True]

    def test_first_call_never_increments(self):
        state = CessationState(0.01, 1)
        state, halt = cessation_step(state, 5.0)
        assert state.counter == 0 and not halt

    def test_counter_never_exceeds_patience(self):
        state = CessationState(0.5, 4)
        rng = np.random.default_rng(0)
        for e in 10.0 + rng.uniform(-0.01, 0.01, size=200):
            state, _ = cessation_step(state, float(e))
            assert 0 <= state.counter <= 4

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            cessation_step(CessationState(0.01, 3), float("nan"))


class TestTrainOneEpoch:
    def test_all_positive_targets_drive_error_down_monotonically(self):
        net = Network.minimal(1, 1)
        cfg = TrainConfig(learning_rate=1.0, hard_epoch_cap=1)
        samples = [ReinforcementSample(0, 0.0, 1)] * 10
        errors = [epoch_error(net, samples)]
        for _ in range(200):
            train_one_epoch(net, samples, cfg)
            errors.append(epoch_error(net, samples))
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 0.01

    def test_mixed_targets_approach_half(self):
        """Half 0 / half 1 for one hypothesis: SSE minimizer is the mean, 0.5."""
        net = Network.minimal(1, 1)
        for c in net.connections:
            c.weight = 0.7
        net.invalidate()
        cfg = TrainConfig(learning_rate=1.0, hard_epoch_cap=1)
        samples = ([ReinforcementSample(0, 1.0, 0)] * 8
                   + [ReinforcementSample(0, 1.0, 1)] * 8)
        for _ in range(400):
            outputs, net = train_one_epoch(net, samples, cfg)
        assert outputs[0] == pytest.approx(0.5, abs=0.01)

    def test_one_epoch_reduces_error_and_is_deterministic(self):
        stream = FixedSetStream(DISCRETE, 15, 321)
        batch = stream.batch_for_epoch(0)
        cfg = TrainConfig(learning_rate=2.0, hard_epoch_cap=1)

        def run_once():
            net = Network.minimal(1, 1)
            rng = np.random.default_rng(5)
            for c in net.connections:
                c.weight = rng.uniform(-1, 1)
            net.invalidate()
            before = epoch_error(net, batch)
            outputs, net = train_one_epoch(net, batch, cfg)
            return before, epoch_error(net, batch), serialize(net)

        b1, a1, s1 = run_once()
        b2, a2, s2 = run_once()
        assert a1 < b1
        assert (b1, a1, s1) == (b2, a2, s2)

    def test_only_unfrozen_weights_change(self):
        net = Network.minimal(1, 1)
        h = net.add_hidden_unit(1, [(0, 0.25), (1, -0.5)])
        net.connections.append(netcore.Connection(h.id, 2, 0.1))
        net.invalidate()
        frozen_before = [c.weight for c in net.connections if c.frozen]
        samples = [ReinforcementSample(0, 0.5, 1)] * 6
        cfg = TrainConfig(learning_rate=2.0, hard_epoch_cap=1)
        for _ in range(25):
            train_one_epoch(net, samples, cfg)
        frozen_after = [c.weight for c in net.connections if c.frozen]
        assert frozen_before == frozen_after


class TestCandidates:
    def _residuals(self, net, fn):
        X = np.linspace(-1, 1, 40)[:, None]
        return PhaseResiduals(X, fn(X[:, 0]))

    def test_zero_residuals_zero_scores(self):
        net = Network.minimal(1, 1)
        cfg = TrainConfig()
        pool = make_pool(net, cfg, np.random.default_rng(0))
        pool = train_candidates(net, pool, self._residuals(net, np.zeros_like), cfg)
        assert all(c.score == pytest.approx(0.0, abs=1e-12) for c in pool.candidates)

    def test_correlated_residual_beats_initial_score(self):
        """Trained score exceeds the brute-force covariance of the raw draw."""
        net = Network.minimal(1, 1)
        cfg = TrainConfig()
        rng = np.random.default_rng(1)
        pool = make_pool(net, cfg, rng)
        raw = [c.weights.copy() for c in pool.candidates]
        residuals = self._residuals(net, lambda x: x.copy())
        pool = train_candidates(net, pool, residuals, cfg)

        from scipy.special import expit

        X = residuals.inputs[:, 0]
        e = residuals.errors[:, 0]
        def brute_cov(w):
            v = expit(w[0] * X + w[1])     # sources: input id 0, bias id 1
            return abs(np.sum((v - v.mean()) * (e - e.mean())))

        best = pool.candidates[pool.best_index()]
        assert best.score > 0
        assert best.score > max(brute_cov(w) for w in raw)
        # score equals the spec formula computed by brute force
        trained = brute_cov(best.weights)
        assert best.score == pytest.approx(trained, rel=1e-9)

    def test_argmax_stable_across_reruns(self):
        net = Network.minimal(1, 1)
        cfg = TrainConfig(pool_size=8)
        residuals = self._residuals(net, lambda x: np.sin(2 * x))

        def winner():
            pool = make_pool(net, cfg, np.random.default_rng(77))
            return train_candidates(net, pool, residuals, cfg).best_index()

        assert winner() == winner()


class TestRecruit:
    def test_first_recruit_structure(self):
        """First recruit: one hidden unit at layer 1, one new output connection."""
        net = Network.minimal(1, 1)
        cfg = TrainConfig()
        pool = make_pool(net, cfg, np.random.default_rng(2))
        X = np.linspace(-1, 1, 30)[:, None]
        pool = train_candidates(net, pool, PhaseResiduals(X, X[:, 0] ** 2), cfg)
        n_conn = len(net.connections)
        recruit(net, pool)
        assert net.n_hidden == 1
        unit = net.hidden_units[0]
        assert unit.layer == 1
        incoming = net.incoming(unit.id)
        assert all(c.frozen for c in incoming)
        assert {c.source for c in incoming} == {0, 1}
        outgoing = [c for c in net.connections if c.source == unit.id]
        assert len(outgoing) == 1 and not outgoing[0].frozen
        assert len(net.connections) == n_conn + 3

    def test_descendant_receives_all_earlier_units(self):
        net = Network.minimal(1, 1)
        h1 = net.add_hidden_unit(1, [(0, 0.3), (1, 0.1)])
        net.connections.append(netcore.Connection(h1.id, 2, 0.2))
        net.invalidate()
        cand = training.Candidate(training.DESCENDANT, 2, [0, 1, h1.id],
                                  np.array([0.5, -0.5, 1.0]),
                                  score=1.0, output_covs=np.array([0.4]))
        pool = CandidatePool([cand], np.random.default_rng(0))
        recruit(net, pool)
        new = [u for u in net.hidden_units if u.layer == 2][0]
        assert {c.source for c in net.incoming(new.id)} == {0, 1, h1.id}
        assert net.output_units[0].layer == 3

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            recruit(Network.minimal(1, 1), CandidatePool([], None))


class TestTrainSDCC:
    def test_degenerate_always_reinforced(self):
        """All reinforcements 1: output approaches 1 with no hidden units."""
        spec = DistributionSpec("table", {"probabilities": [1.0]})
        stream = FixedSetStream(spec, 15, 5)
        cfg = TrainConfig(rng_seed=0, cessation_enabled=False, hard_epoch_cap=600)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        assert net.forward([0.0])[0] > 0.95
        assert net.n_hidden == 0

    def test_seed_determinism_bit_for_bit(self):
        def run():
            stream = FixedSetStream(DISCRETE, 15, 44)
            cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
            net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
            return serialize(net), hist.errors.tobytes()

        assert run() == run()

    def test_frozen_weights_bit_identical_through_training(self):
        stream = FixedSetStream(DISCRETE, 15, 44)
        cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        assert net.n_hidden >= 1
        frozen = {(c.source, c.target): c.weight for c in net.connections if c.frozen}
        batch = stream.batch_for_epoch(0)
        for _ in range(60):
            train_one_epoch(net, batch, cfg)
        after = {(c.source, c.target): c.weight for c in net.connections if c.frozen}
        assert frozen == after

    def test_structure_growth_monotone(self):
        stream = FixedSetStream(DISCRETE, 15, 44)
        cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        counts = [r.hidden_units for r in hist.records]
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    def test_error_non_increasing_across_recruitments(self):
        """Plateau error after a post-recruitment phase <= the plateau before."""
        stream = FixedSetStream(DISCRETE, 15, 44)
        cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        marks = hist.recruit_epochs() + ([hist.records[-1].epoch])
        errs = {r.epoch: r.error for r in hist.records}
        plateaus = [errs[e] for e in marks]
        assert len(plateaus) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(plateaus, plateaus[1:]))

    def test_sample_level_matching_fixed_set(self):
        """Theorem check at H=4: long cessation-free training on a fixed set
        drives every output to its empirical frequency k/n within 0.02."""
        stream = FixedSetStream(DISCRETE, 15, 321)
        batch = stream.batch_for_epoch(0)
        cfg = TrainConfig(rng_seed=2, cessation_enabled=False, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        outputs = net.forward_batch(encodings(4)[:, None])[:, 0]
        np.testing.assert_allclose(outputs, batch.positives / batch.counts, atol=0.02)

    def test_cap_reached_flagged_not_error(self):
        stream = FixedSetStream(DISCRETE, 15, 1)
        cfg = TrainConfig(rng_seed=1, cessation_enabled=False, hard_epoch_cap=40)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        assert hist.halted_by == "cap"
        assert hist.epochs_run == 40

    def test_cessation_event_recorded(self):
        stream = FixedSetStream(DISCRETE, 15, 44)
        cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        assert hist.halted_by == "cessation"
        assert hist.records[-1].event == "cessation"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(cessation_enabled=False, hard_epoch_cap=None).validate()
        with pytest.raises(ValueError):
            TrainConfig(patience=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0).validate()

    def test_history_csv_round_trip(self, tmp_path):
        stream = FixedSetStream(DISCRETE, 15, 44)
        cfg = TrainConfig(rng_seed=9, hard_epoch_cap=4000)
        net, hist = train_sdcc(Network.minimal(1, 1), stream, cfg)
        path = tmp_path / "history.csv"
        hist.to_csv(path)
        text = path.read_text()
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,error,hidden_units,event"
        assert len(lines) == hist.epochs_run + 1
        events = {line.split(",")[-1] for line in lines[1:]}
        assert events <= {"none", "recruit_sibling", "recruit_descendant", "cessation"}
        assert "\r" not in text
