import os
from pathlib import Path

from dotenv import load_dotenv


class Env:
    """
    Process environment as a configuration layer.

    Settings are read as ``ITERSENTINEL_<NAME>`` first and ``<NAME>``
    second; the override lists only under the prefixed name. A ``.env``
    file in the working directory is loaded once, on first access, without
    overriding variables already set.

    Recognized settings
    -------------------
    CONFIG
        Default config file when no ``--config`` flag is given.
    SET
        ``key=value`` run-config overrides separated by ``;``, applied
        after the config file and before ``--set`` flags.
    SUITE_SET
        The same for suite files.
    LOG_DIR
        Directory of the rotating log file.
    LOG_LEVEL
        Console log level name, ``info`` by default.
    """

    PREFIX = "ITERSENTINEL_"
    OVERRIDE_SEPARATOR = ";"

    _loaded: bool = False

    @classmethod
    def _load_env(cls, dotenv_filename: str = ".env") -> None:
        if cls._loaded:
            return
        candidate = Path.cwd() / dotenv_filename
        if candidate.is_file():
            load_dotenv(candidate, override=False)
        cls._loaded = True

    @classmethod
    def get(cls, name: str, default: str | None = None) -> str | None:
        """
        Value of a setting, or ``default`` when neither spelling is set.

        Parameters
        ----------
        name : str
            Setting name, with or without the ``ITERSENTINEL_`` prefix.
        default : str | None, optional
            Returned when the setting is absent.
        """
        cls._load_env()
        if not name.startswith(cls.PREFIX):
            prefixed = os.environ.get(cls.PREFIX + name)
            if prefixed is not None:
                return prefixed
        return os.environ.get(name, default)

    @classmethod
    def config_path(cls, explicit: str | Path | None = None) -> Path | None:
        """The explicit path if given, else ``CONFIG`` from the environment."""
        value = explicit or cls.get("CONFIG")
        return Path(value) if value else None

    @classmethod
    def overrides(cls, name: str = "SET") -> list[str]:
        """``key=value`` overrides listed in setting ``name``, blanks dropped."""
        raw = cls.get(cls.PREFIX + name) or ""
        return [item.strip() for item in raw.split(cls.OVERRIDE_SEPARATOR) if item.strip()]
