"""Attention-factor weight disruption and the drift toward uniform priors.

Disruption multiplies every connection weight of a trained module by
r^t, r in [0, 1] -- frozen weights included, since the attention factor
acts on the connections themselves rather than on the module's output.
As disruption grows the module's normalized output distribution loses
structure; its entropy climbs toward the log2(N) maximum, which is the
uniform distribution: complete base-rate neglect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import exact_posterior
from .netcore import Network
from .probmatch import encodings
from .reports import write_csv


@dataclass
class DisruptionConfig:
    """Attention factor r applied t times to a module's connections."""

    r: float
    t: int = 1
    target: str = "prior"

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("attention factor r must lie in [0, 1]")
        if self.t < 1:
            raise ValueError("application count t must be at least 1")


@dataclass
class EntropyReading:
    t: int
    entropy_bits: float
    max_entropy_bits: float


def disrupt(net: Network, cfg: DisruptionConfig) -> Network:
    """A copy of ``net`` with every weight scaled by r^t.

    Non-destructive: the original network is untouched, so instantaneous
    neglect can be modelled without permanently losing the weights.
    Topology and frozen flags are preserved; frozen weights are scaled
    like any other connection.
    """
    factor = cfg.r ** cfg.t
    out = net.copy()
    for c in out.connections:
        c.weight *= factor
    return out


def normalized_prior(net: Network, n_hypotheses: int) -> np.ndarray:
    """Evaluate the net on every hypothesis encoding and normalize to sum 1."""
    outputs = net.forward_batch(encodings(n_hypotheses)[:, None])[:, 0]
    total = outputs.sum()
    if total <= 0.0:
        raise ValueError("cannot normalize: all outputs are zero")
    return outputs / total


def entropy(p) -> float:
    """Shannon entropy in bits; 0 log 0 := 0.  Rejects negative entries."""
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any():
        raise ValueError("probabilities must be non-negative")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


@dataclass
class SweepResult:
    readings: list[EntropyReading]
    priors: np.ndarray            # (t_max+1, H) normalized prior per step
    r: float

    @property
    def entropies(self) -> np.ndarray:
        return np.array([x.entropy_bits for x in self.readings])

    def tv_to_uniform(self) -> np.ndarray:
        H = self.priors.shape[1]
        return 0.5 * np.abs(self.priors - 1.0 / H).sum(axis=1)

    def write_csv(self, path) -> None:
        rows = [(self.r, x.t, x.entropy_bits, tv)
                for x, tv in zip(self.readings, self.tv_to_uniform())]
        write_csv(path, ("r", "t", "entropy_bits", "tv_distance_to_uniform"), rows)

    def write_priors_csv(self, path) -> None:
        H = self.priors.shape[1]
        header = ("t",) + tuple(f"h{i}" for i in range(H))
        rows = [(x.t, *self.priors[i]) for i, x in enumerate(self.readings)]
        write_csv(path, header, rows)


def neglect_sweep(net: Network, r: float, t_max: int, n_hypotheses: int) -> SweepResult:
    """Entropy of the normalized prior under growing disruption t = 0..t_max."""
    max_bits = float(np.log2(n_hypotheses))
    readings = []
    priors = np.empty((t_max + 1, n_hypotheses))
    for t in range(t_max + 1):
        module = net if t == 0 else disrupt(net, DisruptionConfig(r, t))
        p = normalized_prior(module, n_hypotheses)
        priors[t] = p
        readings.append(EntropyReading(t, entropy(p), max_bits))
    return SweepResult(readings, priors, r)


def neglected_posterior(likelihoods, prior_net: Network,
                        cfg: DisruptionConfig) -> np.ndarray:
    """Posterior with priors read from a disrupted prior module.

    r=1 reproduces full Bayes with the learned priors; r=0 flattens the
    priors entirely, so the posterior reduces to lik_i / sum_j lik_j.
    """
    lik = np.asarray(likelihoods, dtype=np.float64)
    module = disrupt(prior_net, cfg)
    prior = normalized_prior(module, len(lik))
    return exact_posterior(lik, prior)
