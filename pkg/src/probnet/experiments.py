"""Experiment definitions behind the CLI: config schema, runners that
write the CSV/SVG artifacts, and the verification checks evaluated
against those artifacts."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bayes as bayes_mod
from . import netcore, probmatch, svgplot, training
from .attention import DisruptionConfig, entropy, neglect_sweep, normalized_prior
from .probmatch import DistributionSpec, Support, derive_seed, encodings, pmf
from .reports import read_csv, write_csv
from .training import TrainConfig

EXPERIMENT_KINDS = ("match", "overweight", "adapt", "bayes-fit", "pipeline", "neglect")


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


class RuntimeCapExceeded(RuntimeError):
    pass


def _expect(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def load_spec_file(path) -> DistributionSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"spec: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec: {path} is not valid JSON ({exc})") from None
    return spec_from_dict(doc, where=f"spec({path})")


def spec_from_dict(doc: dict, where: str = "spec") -> DistributionSpec:
    _expect(isinstance(doc, dict), where, "expected an object")
    _expect("kind" in doc, f"{where}.kind", "missing")
    _expect("params" in doc, f"{where}.params", "missing")
    support = None
    if doc.get("support") is not None:
        s = doc["support"]
        for k in ("lo", "hi", "bins"):
            _expect(k in s, f"{where}.support.{k}", "missing")
        support = Support(float(s["lo"]), float(s["hi"]), int(s["bins"]))
    schedule = [(int(e), dict(repl)) for e, repl in doc.get("schedule", [])]
    try:
        return DistributionSpec(doc["kind"], dict(doc["params"]), support, schedule)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def train_config_from_dict(doc: dict, where: str = "train") -> TrainConfig:
    _expect(isinstance(doc, dict), where, "expected an object")
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in doc:
        _expect(key in known, f"{where}.{key}", "unknown field")
    try:
        cfg = TrainConfig(**doc)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return cfg


@dataclass
class ExperimentConfig:
    experiment: str
    train: TrainConfig
    master_seed: int
    output_dir: str
    spec: DistributionSpec | None = None
    replications: int = 1
    sampling: str = "fixed"
    instances_per_hypothesis: int = probmatch.PAPER_INSTANCES_PER_HYPOTHESIS
    tolerance: float = 0.05
    verify: dict = field(default_factory=dict)
    bayes: dict = field(default_factory=dict)
    neglect: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    max_runtime_seconds: float | None = None
    config_text: str = ""


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from None
    _expect(isinstance(doc, dict), "config", "expected an object")

    _expect("experiment" in doc, "experiment", "missing")
    _expect(doc["experiment"] in EXPERIMENT_KINDS, "experiment",
            f"unknown experiment {doc['experiment']!r}; expected one of {EXPERIMENT_KINDS}")
    _expect("master_seed" in doc, "master_seed",
            "missing (seeding from the clock is not allowed)")
    _expect(isinstance(doc["master_seed"], int), "master_seed", "expected an integer")
    _expect("output_dir" in doc, "output_dir", "missing")

    spec = None
    if "spec" in doc and doc["spec"] is not None:
        if isinstance(doc["spec"], str):
            spec = load_spec_file(path.parent / doc["spec"])
        else:
            spec = spec_from_dict(doc["spec"])
    needs_spec = doc["experiment"] in ("match", "overweight", "adapt", "neglect")
    _expect(spec is not None or not needs_spec, "spec",
            f"required for experiment {doc['experiment']!r}")

    train = train_config_from_dict(doc.get("train", {}))
    replications = int(doc.get("replications", 1))
    _expect(replications >= 1, "replications", "must be at least 1")
    sampling = doc.get("sampling", "fixed")
    _expect(sampling in ("fixed", "fresh"), "sampling", "expected 'fixed' or 'fresh'")
    instances = int(doc.get("instances_per_hypothesis",
                            probmatch.PAPER_INSTANCES_PER_HYPOTHESIS))
    _expect(instances >= 1, "instances_per_hypothesis", "must be at least 1")

    cap = doc.get("max_runtime_seconds")
    if cap is not None:
        _expect(isinstance(cap, (int, float)) and cap > 0,
                "max_runtime_seconds", "must be a positive number")

    return ExperimentConfig(
        experiment=doc["experiment"],
        train=dataclasses.replace(train, rng_seed=doc["master_seed"]),
        master_seed=doc["master_seed"],
        output_dir=doc["output_dir"],
        spec=spec,
        replications=replications,
        sampling=sampling,
        instances_per_hypothesis=instances,
        tolerance=float(doc.get("tolerance", 0.05)),
        verify=dict(doc.get("verify", {})),
        bayes=dict(doc.get("bayes", {})),
        neglect=dict(doc.get("neglect", {})),
        pipeline=dict(doc.get("pipeline", {})),
        max_runtime_seconds=cap,
        config_text=text,
    )


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

class _Clock:
    def __init__(self, limit: float | None):
        self.limit = limit
        self.start = time.monotonic()

    def check(self) -> None:
        if self.limit is not None and time.monotonic() - self.start > self.limit:
            raise RuntimeCapExceeded(f"runtime cap of {self.limit}s exceeded")


def _write_history(history: training.TrainHistory, outdir: Path) -> list[str]:
    history.to_csv(outdir / "history.csv")
    return ["history.csv"]


def _write_replication_csvs(report, outdir: Path) -> list[str]:
    report.write_report_csv(outdir / "report.csv")
    report.write_summary_csv(outdir / "summary.csv")
    return ["report.csv", "summary.csv"]


def _match_figure(report, title: str) -> svgplot.Figure:
    H = len(report.true_p)
    xs = list(range(H))
    fig = svgplot.Figure(title, "hypothesis", "probability")
    fig.line(xs, report.true_p, "true p")
    fig.errorbars(xs, report.mean_outputs, report.sd_outputs, "network mean +/- sd")
    return fig


def run_match(cfg: ExperimentConfig, outdir: Path, clock: _Clock) -> list[str]:
    report = probmatch.run_replications(cfg.spec, cfg.train, cfg.replications,
                                        sampling=cfg.sampling,
                                        instances=cfg.instances_per_hypothesis,
                                        keep_histories=True)
    clock.check()
    artifacts = _write_replication_csvs(report, outdir)
    artifacts += _write_history(report.histories[0], outdir)
    name = "figure_match.svg" if cfg.experiment == "match" else "figure_overweight.svg"
    _match_figure(report, f"{cfg.experiment}: mean outputs vs true distribution").save(outdir / name)
    artifacts.append(name)
    return artifacts


def run_adapt(cfg: ExperimentConfig, outdir: Path, clock: _Clock) -> list[str]:
    _expect(bool(cfg.spec.schedule), "spec.schedule",
            "adapt experiment needs a schedule switch")
    report = probmatch.run_replications(cfg.spec, cfg.train, cfg.replications,
                                        sampling=cfg.sampling,
                                        instances=cfg.instances_per_hypothesis,
                                        keep_histories=True)
    clock.check()
    artifacts = _write_replication_csvs(report, outdir)
    artifacts += _write_history(report.histories[0], outdir)

    rows = []
    for r, history in enumerate(report.histories):
        res = probmatch.adaptation_lag(history, cfg.spec, cfg.tolerance)
        init = "" if res.initial_epochs is None else res.initial_epochs
        for switch, lag in res.switch_lags:
            rows.append((r, init, switch, "" if lag is None else lag))
    write_csv(outdir / "lags.csv",
              ("replication", "initial_epochs", "switch_epoch", "lag_epochs"), rows)
    artifacts.append("lags.csv")

    rows = [(r, g, int(report.recruit_counts[r, g]))
            for r in range(report.n_replications)
            for g in range(report.recruit_counts.shape[1])]
    write_csv(outdir / "recruits.csv", ("replication", "regime", "recruited_units"), rows)
    artifacts.append("recruits.csv")

    hist0 = report.histories[0]
    O = hist0.output_matrix()
    header = ("epoch",) + tuple(f"h{int(i)}" for i in hist0.hypothesis_ids)
    write_csv(outdir / "trajectory.csv", header,
              [(rec.epoch, *O[i]) for i, rec in enumerate(hist0.records)])
    artifacts.append("trajectory.csv")

    fig = svgplot.Figure("adaptation to a distribution switch", "epoch", "output")
    for j in range(min(O.shape[1], 4)):
        fig.line(range(O.shape[0]), O[:, j], f"h{j}")
    fig.save(outdir / "figure_adapt.svg")
    artifacts.append("figure_adapt.svg")
    return artifacts


def run_bayes_fit(cfg: ExperimentConfig, outdir: Path, clock: _Clock) -> list[str]:
    n_train = int(cfg.bayes.get("n_train", 2000))
    n_test = int(cfg.bayes.get("n_test", 2000))
    train_set = bayes_mod.make_bayes_training_set(n_train, derive_seed(cfg.master_seed, 0xB))
    net, report = bayes_mod.train_bayes_module(
        train_set, dataclasses.replace(cfg.train, rng_seed=derive_seed(cfg.master_seed, 0xF)),
        n_test=n_test)
    clock.check()
    report.write_csv(outdir / "fit.csv")
    write_csv(outdir / "fitstats.csv",
              ("slope", "intercept", "correlation", "max_abs_error",
               "n_train", "n_test", "hidden_units"),
              [(report.slope, report.intercept, report.correlation,
                report.max_abs_error, report.n_train, report.n_test, net.n_hidden)])
    netcore.save(net, outdir / "bayes_net.json")
    fig = svgplot.Figure("learned Bayes module vs exact rule", "exact posterior",
                         "network output")
    fig.line([0.0, 1.0], [0.0, 1.0], "identity")
    fig.scatter(report.test_exact, report.test_predicted, "test points")
    fig.save(outdir / "figure_bayes_fit.svg")
    return ["fit.csv", "fitstats.csv", "bayes_net.json", "figure_bayes_fit.svg"]


def _train_table_module(table, instances, train, seed) -> netcore.Network:
    spec = DistributionSpec("table", {"probabilities": list(table)})
    stream = probmatch.FixedSetStream(spec, instances, derive_seed(seed, 1))
    net = netcore.Network.minimal(1, 1, rng_seed=derive_seed(seed, 0))
    cfg = dataclasses.replace(train, rng_seed=derive_seed(seed, 0))
    net, _ = training.train_sdcc(net, stream, cfg)
    return net


def run_pipeline(cfg: ExperimentConfig, outdir: Path, clock: _Clock) -> list[str]:
    p = cfg.pipeline
    _expect("prior_table" in p, "pipeline.prior_table", "missing")
    _expect("likelihood_tables" in p, "pipeline.likelihood_tables", "missing")
    _expect(len(p["likelihood_tables"]) == 2, "pipeline.likelihood_tables",
            "expected one table per hypothesis (two)")
    observations = p.get("observations", [])
    _expect(len(observations) >= 1, "pipeline.observations", "need at least one")
    module_kind = p.get("bayes_module", "oracle")
    _expect(module_kind in ("oracle", "learned"), "pipeline.bayes_module",
            "expected 'oracle' or 'learned'")

    instances = int(p.get("module_instances", 400))
    prior_net = _train_table_module(p["prior_table"], instances, cfg.train,
                                    derive_seed(cfg.master_seed, 10))
    lik_nets = [
        _train_table_module(t, instances, cfg.train, derive_seed(cfg.master_seed, 11 + i))
        for i, t in enumerate(p["likelihood_tables"])
    ]
    clock.check()

    bayes_net = None
    if module_kind == "learned":
        n_train = int(cfg.bayes.get("n_train", 2000))
        train_set = bayes_mod.make_bayes_training_set(
            n_train, derive_seed(cfg.master_seed, 0xB))
        bayes_net, _ = bayes_mod.train_bayes_module(
            train_set,
            dataclasses.replace(cfg.train, rng_seed=derive_seed(cfg.master_seed, 0xF)))
        clock.check()

    pipe = bayes_mod.Pipeline(prior_net, lik_nets, bayes_net)
    n_obs_values = len(p["likelihood_tables"][0])
    rows = []
    for rnd, obs in enumerate(observations):
        _expect(0 <= int(obs) < n_obs_values, f"pipeline.observations[{rnd}]",
                f"observation index out of range [0, {n_obs_values})")
        enc = probmatch.encode_hypothesis(int(obs), n_obs_values)
        prior1 = float(pipe.current_prior()[0])
        lik = [float(m.forward([enc])[0]) for m in pipe.likelihood_modules]
        post = bayes_mod.pipeline_infer(pipe, enc)
        rows.append((rnd, int(obs), prior1, lik[0], lik[1], float(post[0])))
    bayes_mod.write_pipeline_trace_csv(outdir / "trace.csv", rows)

    artifacts = ["trace.csv"]
    for name, net in [("prior_net.json", prior_net),
                      ("likelihood1_net.json", lik_nets[0]),
                      ("likelihood2_net.json", lik_nets[1])]:
        netcore.save(net, outdir / name)
        artifacts.append(name)
    if bayes_net is not None:
        netcore.save(bayes_net, outdir / "bayes_net.json")
        artifacts.append("bayes_net.json")

    fig = svgplot.Figure("sequential inference: posterior feedback", "round",
                         "P(h1 | data)")
    fig.line([r[0] for r in rows], [r[5] for r in rows], "posterior1")
    fig.save(outdir / "figure_pipeline.svg")
    artifacts.append("figure_pipeline.svg")
    return artifacts


def run_neglect(cfg: ExperimentConfig, outdir: Path, clock: _Clock) -> list[str]:
    r = float(cfg.neglect.get("r", 0.8))
    t_max = int(cfg.neglect.get("t_max", 60))
    _expect(0.0 <= r <= 1.0, "neglect.r", "must lie in [0, 1]")
    _expect(t_max >= 1, "neglect.t_max", "must be at least 1")
    H = cfg.spec.n_hypotheses
    sampling = probmatch.make_stream(cfg.spec, cfg.sampling,
                                     cfg.instances_per_hypothesis,
                                     derive_seed(cfg.master_seed, 1))
    net = netcore.Network.minimal(1, 1, rng_seed=derive_seed(cfg.master_seed, 0))
    cfg_train = dataclasses.replace(cfg.train, rng_seed=derive_seed(cfg.master_seed, 0))
    net, history = training.train_sdcc(net, sampling, cfg_train)
    clock.check()

    sweep = neglect_sweep(net, r, t_max, H)
    sweep.write_csv(outdir / "sweep.csv")
    sweep.write_priors_csv(outdir / "priors.csv")
    netcore.save(net, outdir / "prior_net.json")
    artifacts = ["sweep.csv", "priors.csv", "prior_net.json"]
    artifacts += _write_history(history, outdir)

    fig = svgplot.Figure(f"entropy under disruption (r={r})", "t", "entropy (bits)")
    fig.line([x.t for x in sweep.readings], sweep.entropies, "entropy")
    fig.line([0, t_max], [math.log2(H)] * 2, "log2(H)")
    fig.save(outdir / "figure_neglect_entropy.svg")
    artifacts.append("figure_neglect_entropy.svg")

    fig = svgplot.Figure("prior distribution under growing disruption",
                         "hypothesis", "normalized prior")
    steps = sorted({0, t_max // 4, t_max // 2, t_max})
    for t in steps:
        fig.line(range(H), sweep.priors[t], f"t={t}")
    fig.save(outdir / "figure_neglect_priors.svg")
    artifacts.append("figure_neglect_priors.svg")
    return artifacts


_RUNNERS = {
    "match": run_match,
    "overweight": run_match,
    "adapt": run_adapt,
    "bayes-fit": run_bayes_fit,
    "pipeline": run_pipeline,
    "neglect": run_neglect,
}


def run_experiment(cfg: ExperimentConfig, outdir) -> list[str]:
    """Execute the experiment, write artifacts + manifest, return artifact names."""
    import hashlib

    from . import __version__

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    clock = _Clock(cfg.max_runtime_seconds)
    artifacts = _RUNNERS[cfg.experiment](cfg, outdir, clock)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": hashlib.sha256(cfg.config_text.encode("utf-8")).hexdigest(),
        "master_seed": cfg.master_seed,
        "library_version": __version__,
        "artifacts": sorted(artifacts),
    }
    from .reports import atomic_write_text

    atomic_write_text(outdir / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    return artifacts + ["manifest.json"]


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


class MissingArtifacts(FileNotFoundError):
    pass


def _read(outdir: Path, name: str):
    path = outdir / name
    if not path.exists():
        raise MissingArtifacts(f"missing artifact: {path}")
    return read_csv(path)


def _verify_match(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    tol = float(cfg.verify.get("accuracy_tolerance", 0.05))
    accurate_min = float(cfg.verify.get("accurate_min_p", 0.11))
    rare_max = float(cfg.verify.get("rare_max_p", 0.10))
    _, rows = _read(outdir, "report.csv")
    checks = []
    worst_acc, rare_ok, rare_seen = 0.0, True, False
    for row in rows:
        true_p, mean = float(row[1]), float(row[2])
        if true_p >= accurate_min:
            worst_acc = max(worst_acc, abs(mean - true_p))
        if true_p <= rare_max:
            rare_seen = True
            rare_ok = rare_ok and mean >= true_p
    checks.append(Check("accurate-band within tolerance", worst_acc <= tol,
                        f"worst |mean - true| = {worst_acc:.4f} vs {tol}"))
    if rare_seen:
        checks.append(Check("rare events not underweighted", rare_ok,
                            f"all mean >= true for true_p <= {rare_max}"))
    return checks


def _verify_overweight(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    tol = float(cfg.verify.get("accuracy_tolerance", 0.03))
    _, rows = _read(outdir, "report.csv")
    worst = max(abs(float(r[2]) - float(r[1])) for r in rows)
    return [Check("all outputs within tolerance", worst <= tol,
                  f"worst |mean - true| = {worst:.4f} vs {tol}")]


def _verify_adapt(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    checks = []
    if "max_lag_ratio" in cfg.verify:
        max_ratio = float(cfg.verify["max_lag_ratio"])
        _, rows = _read(outdir, "lags.csv")
        inits, lags = [], []
        reached = True
        for row in rows:
            if row[1] == "" or row[3] == "":
                reached = False
                continue
            inits.append(int(row[1]))
            lags.append(int(row[3]))
        checks.append(Check("every run reaches tolerance of both regimes", reached,
                            "initial and post-switch tolerances were reached"))
        if inits:
            ratio = float(np.mean(lags)) / max(float(np.mean(inits)), 1e-9)
            checks.append(Check("adaptation faster than initial learning",
                                ratio < max_ratio,
                                f"mean lag ratio {ratio:.3f} vs {max_ratio}"))
    if "min_reuse_wins" in cfg.verify:
        need = int(cfg.verify["min_reuse_wins"])
        _, rows = _read(outdir, "recruits.csv")
        per_rep: dict[int, dict[int, int]] = {}
        for rep, regime, count in rows:
            per_rep.setdefault(int(rep), {})[int(regime)] = int(count)
        wins = sum(1 for counts in per_rep.values() if counts.get(1, 0) < counts.get(0, 0))
        checks.append(Check("post-switch recruitment below pre-switch",
                            wins >= need,
                            f"{wins}/{len(per_rep)} runs recruited strictly fewer "
                            f"units after the switch (need {need})"))
    if not checks:
        raise ConfigError("verify: adapt needs max_lag_ratio or min_reuse_wins")
    return checks


def _verify_bayes_fit(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    header, rows = _read(outdir, "fitstats.csv")
    stats = dict(zip(header, rows[0]))
    slope = float(stats["slope"])
    icept = float(stats["intercept"])
    corr = float(stats["correlation"])
    lo, hi = cfg.verify.get("slope_range", [0.9, 1.1])
    imax = float(cfg.verify.get("max_abs_intercept", 0.05))
    cmin = float(cfg.verify.get("min_correlation", 0.98))
    return [
        Check("slope near one", lo <= slope <= hi, f"slope = {slope:.4f}"),
        Check("intercept near zero", abs(icept) <= imax, f"intercept = {icept:.4f}"),
        Check("high correlation", corr > cmin, f"correlation = {corr:.4f}"),
    ]


def _verify_pipeline(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    _, rows = _read(outdir, "trace.csv")
    valid = all(0.0 <= float(r[5]) <= 1.0 for r in rows)
    feedback = all(abs(float(rows[i][2]) - float(rows[i - 1][5])) <= 1e-9
                   for i in range(1, len(rows)))
    return [
        Check("posteriors are probabilities", valid, "posterior1 in [0, 1] each round"),
        Check("posterior feeds back as next prior", feedback,
              "prior1[k] equals posterior1[k-1]"),
    ]


def _verify_neglect(cfg: ExperimentConfig, outdir: Path) -> list[Check]:
    _, rows = _read(outdir, "sweep.csv")
    ent = np.array([float(r[2]) for r in rows])
    H = cfg.spec.n_hypotheses
    target = math.log2(H)
    tol = float(cfg.verify.get("final_entropy_tolerance", 0.05))
    max_drop = float(cfg.verify.get("max_step_drop_bits", 0.05))
    drops = ent[:-1] - ent[1:]
    return [
        Check("entropy reaches the uniform limit",
              abs(ent[-1] - target) <= tol,
              f"final = {ent[-1]:.4f} vs log2({H}) = {target:.4f}"),
        Check("entropy trend non-decreasing",
              ent[-1] >= ent[0] and (len(drops) == 0 or drops.max() <= max_drop),
              f"end-to-end rise = {ent[-1] - ent[0]:.4f} bits, "
              f"max step drop = {max(drops.max(), 0.0):.4f}"),
    ]


_VERIFIERS = {
    "match": _verify_match,
    "overweight": _verify_overweight,
    "adapt": _verify_adapt,
    "bayes-fit": _verify_bayes_fit,
    "pipeline": _verify_pipeline,
    "neglect": _verify_neglect,
}


def verify_experiment(cfg: ExperimentConfig, outdir) -> list[Check]:
    """Evaluate the experiment's acceptance checks against its artifacts."""
    outdir = Path(outdir)
    if not (outdir / "manifest.json").exists():
        raise MissingArtifacts(f"missing artifact: {outdir / 'manifest.json'}")
    return _VERIFIERS[cfg.experiment](cfg, outdir)
