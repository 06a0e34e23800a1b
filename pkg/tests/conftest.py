from __future__ import annotations

import os
from typing import Iterator

import pytest

from request.run_config import ControlConfig, RunConfig
from request.suite_config import FaultFamily, SuiteConfig
from services.log import Log
from simkit.benchmark import generate_trial
from simkit.synthesizer import LabeledDataset


@pytest.fixture(scope="session", autouse=True)
def _log_to_tmp(tmp_path_factory: pytest.TempPathFactory) -> Iterator[None]:
    os.environ["ITERSENTINEL_LOG_DIR"] = str(tmp_path_factory.mktemp("logs"))
    Log.reset()
    yield
    Log.reset()


@pytest.fixture(scope="session")
def small_suite() -> SuiteConfig:
    """Two short trials, one CPU fault and one link fault."""
    return SuiteConfig(
        n_trials=2,
        cycles=400,
        train_cycles=250,
        onset=300,
        duration=60,
        families=[FaultFamily.CPU_CONTENTION, FaultFamily.NVLINK_SATURATION],
        run=RunConfig(control=ControlConfig(warmup=20)),
    )


@pytest.fixture(scope="session")
def small_dataset(small_suite: SuiteConfig) -> LabeledDataset:
    return generate_trial(small_suite, small_suite.resolved_trials()[0])
