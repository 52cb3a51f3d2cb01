"""Generator acceptance: train on the shipped corpus with the published best
config, then check epoch bound, reconstruction sanity, UVE, and the
cross-component parse contract.  Run with ``pytest -v -s`` for PASS lines.
"""

import subprocess
import sys

import pytest

from eqgen import VaeConfig, sample, train, uve, uve_strings
from eqgen.cli import default_corpus_path
from eqgen.training import reconstruct_teacher_forced

TRAIN_SEED = 0
SAMPLE_SEED = 0


def _ok(name: str):
    print(f"ACCEPTANCE PASS: {name}")


@pytest.fixture(scope="module")
def trained():
    corpus = [l.strip() for l in open(default_corpus_path()) if l.strip()]
    assert len(corpus) == 80
    return train(corpus, VaeConfig(), seed=TRAIN_SEED)


def test_training_completes_within_150_epochs(trained):
    assert trained.epochs_run <= 150
    _ok(f"training completed in {trained.epochs_run} <= 150 epochs")


def test_reconstruction_sanity(trained):
    recon = reconstruct_teacher_forced(trained.model, trained.train_lines)
    exact = sum(r == c for r, c in zip(recon, trained.train_lines))
    ratio = exact / len(trained.train_lines)
    assert ratio >= 0.5
    _ok(f"teacher-forced exact reconstructions {exact}/{len(trained.train_lines)} "
        f"({ratio:.0%}) >= 50%")


def test_uve_of_100_samples(trained):
    samples = sample(trained.model, 100, seed=SAMPLE_SEED)
    assert len(samples) == 100
    count = uve(samples, trained.corpus)
    assert count >= 30
    _ok(f"UVE of 100 samples at fixed seed = {count} >= 30")


def test_uve_counted_strings_pass_primary_parse_cli(trained):
    samples = sample(trained.model, 100, seed=SAMPLE_SEED)
    counted = uve_strings(samples, trained.corpus)
    assert counted
    for eq in counted:
        proc = subprocess.run(
            [sys.executable, "-m", "lbpforge", "parse", eq],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, f"primary rejected {eq!r}: {proc.stderr}"
    _ok(f"all {len(counted)} UVE-counted strings accepted by the primary parse CLI")


def test_samples_reproducible(trained):
    assert sample(trained.model, 20, seed=5) == sample(trained.model, 20, seed=5)
    _ok("sampling is reproducible at fixed seed")
