from __future__ import annotations

import io
import json
from argparse import Namespace
from pathlib import Path

import pytest

from middleware.error_handler import EXIT_ERROR, EXIT_INTERRUPTED, CommandErrorHandler
from request.run_config import load_run_config
from request.suite_config import load_suite_config
from services.env import Env
from services.errors import EpisodeNotFound, RunDirectoryLocked
from services.log import Log
from services.run_lock import RunLock


def _dispatch(handler) -> tuple[int, dict]:
    stderr = io.StringIO()
    code = CommandErrorHandler(stderr).dispatch("check", handler, Namespace())
    return code, json.loads(stderr.getvalue())


def test_env_prefers_prefixed_name(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ITERSENTINEL_SAMPLE_KEY", "prefixed")
    monkeypatch.setenv("SAMPLE_KEY", "plain")
    assert Env.get("SAMPLE_KEY") == "prefixed"
    monkeypatch.delenv("ITERSENTINEL_SAMPLE_KEY")
    assert Env.get("SAMPLE_KEY") == "plain"
    assert Env.get("SAMPLE_MISSING", "fallback") == "fallback"


def test_environment_overrides_sit_between_file_and_set_flags(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = tmp_path / "run.yaml"
    path.write_text("control:\n  k: 2.0\n  window: 6\nseed: 3\n", encoding="utf-8")
    monkeypatch.setenv("ITERSENTINEL_SET", "control.k=2.5; control.window=12 ;")

    config = load_run_config(path, ["control.window=8"])
    assert (config.control.k, config.control.window, config.seed) == (2.5, 8, 3)

    suite = load_suite_config(None, ["n_trials=3"])
    assert suite.run.control.k == 3.0
    assert suite.n_trials == 3


def test_environment_overrides_reach_the_suite(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ITERSENTINEL_SUITE_SET", "n_trials=4;ground_truth.noise=0.1")
    suite = load_suite_config()
    assert (suite.n_trials, suite.ground_truth.noise) == (4, 0.1)


def test_config_path_falls_back_to_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("ITERSENTINEL_CONFIG", raising=False)
    monkeypatch.delenv("CONFIG", raising=False)
    assert Env.config_path() is None
    monkeypatch.setenv("ITERSENTINEL_CONFIG", "from_env.yaml")
    assert Env.config_path() == Path("from_env.yaml")
    assert Env.config_path("explicit.yaml") == Path("explicit.yaml")


def test_run_lock_is_exclusive_and_released(tmp_path: Path) -> None:
    lock_file = tmp_path / "out" / RunLock.LOCK_NAME
    with RunLock(tmp_path / "out"):
        assert lock_file.is_file()
        with pytest.raises(RunDirectoryLocked):
            RunLock(tmp_path / "out").acquire()
    assert not lock_file.exists()


def test_stage_reraises_and_logs(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ITERSENTINEL_LOG_DIR", str(tmp_path))
    Log.reset()
    try:
        with Log.stage("loading"):
            pass
        with pytest.raises(ValueError):
            with Log.stage("broken"):
                raise ValueError("boom")
        text = "".join(path.read_text(encoding="utf-8") for path in tmp_path.glob("itersentinel_*.log"))
    finally:
        Log.reset()
    assert "Stage 'loading' took" in text
    assert "Stage 'broken' failed" in text


def test_domain_error_keeps_its_details() -> None:
    def handler(_: Namespace) -> int:
        raise EpisodeNotFound("No alert episode 3", {"episode": 3})

    code, payload = _dispatch(handler)
    assert code == EXIT_ERROR
    assert payload == {
        "error": "EpisodeNotFound",
        "message": "No alert episode 3",
        "details": {"episode": 3},
        "exit_code": EXIT_ERROR,
    }


def test_missing_file_is_an_input_error(tmp_path: Path) -> None:
    def handler(_: Namespace) -> int:
        (tmp_path / "absent.json").read_text()
        return 0

    code, payload = _dispatch(handler)
    assert code == EXIT_ERROR
    assert payload["error"] == "FileNotFoundError"


def test_interrupt_and_unexpected_errors() -> None:
    def interrupted(_: Namespace) -> int:
        raise KeyboardInterrupt

    def broken(_: Namespace) -> int:
        raise RuntimeError("unexpected")

    assert _dispatch(interrupted)[0] == EXIT_INTERRUPTED
    code, payload = _dispatch(broken)
    assert code == EXIT_ERROR
    assert payload["error"] == "InternalError"


def test_success_passes_exit_code_through() -> None:
    stderr = io.StringIO()
    assert CommandErrorHandler(stderr).dispatch("check", lambda _: 2, Namespace()) == 2
    assert stderr.getvalue() == ""
