import sys
from pathlib import Path
from typing import IO

from response.alert import Alert


class AlertSink:
    """
    Newline-delimited JSON alert writer, to a file or standard output.

    Records are flushed one by one; readers must tolerate a repeated
    record after a crash and restart.
    """

    def __init__(self, path: Path | None = None, stream: IO[str] | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._stream = stream
        self._owned = False
        self.count = 0

    def _handle(self) -> IO[str]:
        if self._stream is None:
            if self.path is None:
                self._stream = sys.stdout
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._stream = open(self.path, "a", encoding="utf-8")
                self._owned = True
        return self._stream

    def write(self, alert: Alert) -> None:
        handle = self._handle()
        handle.write(alert.model_dump_json(exclude_none=True) + "\n")
        handle.flush()
        self.count += 1

    def close(self) -> None:
        if self._owned and self._stream is not None:
            self._stream.close()
        self._stream = None
        self._owned = False

    def __enter__(self) -> "AlertSink":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()
