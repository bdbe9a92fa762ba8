"""Session-scoped trained artifacts for the end-to-end acceptance suite.

Training the toy codec, the 30k-step denoiser, and the two control adaptors
takes a couple of CPU-hours cold. Each artifact is cached on disk under
``tests/_artifacts`` keyed by a hash of everything that determines it (corpus
fingerprint, config, seed), so repeated test runs only pay the cost once.
Delete the directory to force a full retrain. ``python3 tests/artifact_builders.py``
warms the cache outside pytest.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # expose helpers/artifact_builders

import artifact_builders as ab


@pytest.fixture(scope="session")
def toy_corpora():
    return ab.build_corpora()


@pytest.fixture(scope="session")
def trained_codec(toy_corpora):
    return ab.build_codec(toy_corpora)


@pytest.fixture(scope="session")
def toy_schedule():
    return ab.build_schedule()


@pytest.fixture(scope="session")
def trained_denoiser(toy_corpora, trained_codec, toy_schedule):
    codec, stats = trained_codec
    return ab.build_denoiser(toy_corpora, codec, stats, toy_schedule)


@pytest.fixture(scope="session")
def controller_A(toy_corpora, trained_codec, trained_denoiser, toy_schedule):
    codec, stats = trained_codec
    base, _ = trained_denoiser
    return ab.build_controller(
        toy_corpora["trainA"], codec, stats, base, toy_schedule, "ctrl-A"
    )


@pytest.fixture(scope="session")
def controller_B(toy_corpora, trained_codec, trained_denoiser, toy_schedule):
    codec, stats = trained_codec
    base, _ = trained_denoiser
    return ab.build_controller(
        toy_corpora["trainB"], codec, stats, base, toy_schedule, "ctrl-B"
    )
