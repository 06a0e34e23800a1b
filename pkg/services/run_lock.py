import json
import os
from pathlib import Path
from types import TracebackType

from services.errors import RunDirectoryLocked
from services.log import Log


class RunLock:
    """
    Advisory lock guarding an output directory against concurrent runs.

    The lock is a ``.itersentinel.lock`` file created with ``O_EXCL``; its
    presence means the directory is in use. Used as a context manager.

    Parameters
    ----------
    directory : Path
        Output directory to guard. Created if missing.
    """

    LOCK_NAME = ".itersentinel.lock"

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self.path = self.directory / self.LOCK_NAME
        self._held = False

    def acquire(self) -> None:
        """
        Create the lock file.

        Raises
        ------
        RunDirectoryLocked
            If another run already holds the directory.
        """
        self.directory.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            error_msg = f"Output directory {self.directory} is locked by another run."
            Log.error(error_msg)
            raise RunDirectoryLocked(error_msg, {"lock": str(self.path)}) from exc
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(json.dumps({"pid": os.getpid()}))
        self._held = True

    def release(self) -> None:
        """Remove the lock file if this instance holds it."""
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self._held = False

    def __enter__(self) -> "RunLock":
        self.acquire()
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.release()
