"""Bayes' rule: the exact closed form, a network trained to implement it,
and the two-module inference pipeline with posterior-to-prior feedback.

The exact rule is the oracle everything else is checked against.  The
learned module is a 3-input network (likelihood of the data under each of
two hypotheses, plus the prior of the first) trained by the constructive
algorithm on exact-posterior targets; with two mutually exclusive
hypotheses the second prior is always 1 - prior1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import training
from .netcore import Network
from .reports import write_csv


class ImpossibleDataError(ValueError):
    """All-hypothesis likelihood mass is zero: the data cannot occur."""


def exact_posterior(likelihoods, priors) -> np.ndarray:
    """Posterior over N hypotheses: lik_i * prior_i, normalized.

    Rejects inputs outside [0, 1], priors that do not sum to 1, and the
    zero-denominator case (impossible data).
    """
    lik = np.asarray(likelihoods, dtype=np.float64)
    pri = np.asarray(priors, dtype=np.float64)
    if lik.shape != pri.shape or lik.ndim != 1:
        raise ValueError("likelihoods and priors must be 1-d and equally long")
    if (lik < 0).any() or (lik > 1).any():
        raise ValueError("likelihoods must lie in [0, 1]")
    if (pri < 0).any() or (pri > 1).any():
        raise ValueError("priors must lie in [0, 1]")
    if abs(pri.sum() - 1.0) > 1e-9:
        raise ValueError("priors must sum to 1")
    joint = lik * pri
    denom = joint.sum()
    if denom <= 0.0:
        raise ImpossibleDataError("zero marginal likelihood: impossible data")
    return joint / denom


@dataclass
class BayesQuery:
    """Two-hypothesis query: P(d|h1), P(d|h2), P(h1), and the answer."""

    lik1: float
    lik2: float
    prior1: float
    posterior1: float | None = None


def answer_query(q: BayesQuery) -> BayesQuery:
    """Fill ``posterior1`` by the exact rule (P(h2) = 1 - prior1)."""
    post = exact_posterior([q.lik1, q.lik2], [q.prior1, 1.0 - q.prior1])
    q.posterior1 = float(post[0])
    return q


def make_bayes_training_set(n: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample (lik1, lik2, prior1) uniformly; targets from the exact rule.

    Triples whose marginal likelihood falls below 1e-6 are rejected and
    redrawn, so every target is well defined.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng_seed)
    X = np.empty((n, 3))
    filled = 0
    while filled < n:
        draw = rng.uniform(0.0, 1.0, size=(n - filled, 3))
        denom = draw[:, 0] * draw[:, 2] + draw[:, 1] * (1.0 - draw[:, 2])
        good = draw[denom >= 1e-6]
        X[filled:filled + len(good)] = good
        filled += len(good)
    y = X[:, 0] * X[:, 2] / (X[:, 0] * X[:, 2] + X[:, 1] * (1.0 - X[:, 2]))
    return X, y


class _RegressionReplay:
    """Stream replaying one regression batch every epoch."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self._batch = training._Batch(X, np.ones(len(y)), y, target_sq=y * y)

    def batch_for_epoch(self, epoch: int):
        return self._batch


@dataclass
class BayesFitReport:
    """Held-out regression of network output against the exact posterior."""

    slope: float
    intercept: float
    correlation: float
    max_abs_error: float
    n_train: int
    n_test: int
    test_inputs: np.ndarray = field(repr=False)
    test_exact: np.ndarray = field(repr=False)
    test_predicted: np.ndarray = field(repr=False)

    def write_csv(self, path) -> None:
        rows = [(i, x[0], x[1], x[2], e, p)
                for i, (x, e, p) in enumerate(zip(self.test_inputs, self.test_exact,
                                                  self.test_predicted))]
        write_csv(path, ("test_index", "lik1", "lik2", "prior1", "exact", "predicted"),
                  rows)


def train_bayes_module(train_set: tuple[np.ndarray, np.ndarray],
                       cfg: training.TrainConfig,
                       n_test: int = 2000) -> tuple[Network, BayesFitReport]:
    """Constructively train a 3-input/1-output network on Bayes' rule.

    The held-out test set is drawn from a seed derived from cfg.rng_seed.
    """
    X, y = train_set
    net = Network.minimal(3, 1, rng_seed=cfg.rng_seed)
    net, history = training.train_sdcc(net, _RegressionReplay(X, y), cfg)
    X_test, y_test = make_bayes_training_set(n_test, cfg.rng_seed + 0x7E57)
    pred = net.forward_batch(X_test)[:, 0]
    slope, intercept = np.polyfit(y_test, pred, 1)
    corr = np.corrcoef(y_test, pred)[0, 1]
    report = BayesFitReport(float(slope), float(intercept), float(corr),
                            float(np.max(np.abs(pred - y_test))),
                            len(y), n_test, X_test, y_test, pred)
    return net, report


# ---------------------------------------------------------------------------
# The two-module pipeline
# ---------------------------------------------------------------------------

@dataclass
class Pipeline:
    """Probability-matching modules feeding a Bayes module, with feedback.

    ``likelihood_modules[i]`` maps an encoded observation to P(d | h_i).
    ``prior_module`` supplies the initial prior over the two hypotheses;
    after each inference round the posterior becomes the next prior.
    ``bayes_module`` is a trained network, or None for the exact rule.
    """

    prior_module: Network
    likelihood_modules: list[Network]
    bayes_module: Network | None = None
    feedback_state: np.ndarray | None = None

    def __post_init__(self):
        if len(self.likelihood_modules) != 2:
            raise ValueError("the pipeline is defined for two hypotheses")
        if self.feedback_state is not None:
            self.feedback_state = np.asarray(self.feedback_state, dtype=np.float64)

    def current_prior(self) -> np.ndarray:
        from .attention import normalized_prior

        if self.feedback_state is None:
            self.feedback_state = normalized_prior(self.prior_module, 2)
        return self.feedback_state

    def reset(self) -> None:
        self.feedback_state = None


def pipeline_infer(p: Pipeline, observation: float) -> np.ndarray:
    """One inference round: likelihoods, prior, Bayes, feedback update.

    ``observation`` is the encoded stimulus fed to the likelihood modules.
    Returns the posterior vector and stores it as the next round's prior
    (renormalized; the learned module's output defines P(h1|d), with
    P(h2|d) := 1 - P(h1|d)).
    """
    lik = np.array([float(m.forward([observation])[0]) for m in p.likelihood_modules])
    prior = p.current_prior()
    if p.bayes_module is None:
        post = exact_posterior(lik, prior)
    else:
        p1 = float(p.bayes_module.forward([lik[0], lik[1], prior[0]])[0])
        post = np.array([p1, 1.0 - p1])
        post = post / post.sum()
    p.feedback_state = post
    return post


def write_pipeline_trace_csv(path, rounds) -> None:
    """``rounds``: iterable of (round, observation, prior1, lik1, lik2, posterior1)."""
    write_csv(path, ("round", "observation", "prior1", "lik1", "lik2", "posterior1"),
              rounds)
