import json
from pathlib import Path

import pytest

from probnet.experiments import load_config, run_experiment

REPO = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO / "configs"


@pytest.fixture(scope="session")
def experiment_runs(tmp_path_factory):
    """Run each shipped experiment config once; artifacts shared by tests.

    Returns a callable mapping a config name (e.g. 'match_discrete') to
    (ExperimentConfig, output directory), running it on first use.
    """
    root = tmp_path_factory.mktemp("experiments")
    cache = {}

    def run(name: str):
        if name not in cache:
            cfg = load_config(CONFIG_DIR / f"{name}.json")
            outdir = root / name
            run_experiment(cfg, outdir)
            cache[name] = (cfg, outdir)
        return cache[name]

    return run


@pytest.fixture()
def tiny_config(tmp_path):
    """A small, fast experiment config file for CLI-level tests."""
    spec = {"kind": "table", "params": {"probabilities": [0.3, 0.7]}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    doc = {
        "experiment": "match",
        "spec": "spec.json",
        "replications": 3,
        "sampling": "fixed",
        "instances_per_hypothesis": 15,
        "master_seed": 99,
        "output_dir": "out",
        "train": {"hard_epoch_cap": 400},
        "verify": {"accuracy_tolerance": 0.5, "rare_max_p": 0.0},
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(doc))
    return path
