import json
import sys
from argparse import Namespace
from typing import IO, Callable

import yaml
from pydantic import ValidationError

from services.errors import IterSentinelError
from services.log import Log

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALERTS = 2
EXIT_INTERRUPTED = 130


class CommandErrorHandler:
    """
    Error boundary around every subcommand.

    Turns exceptions into the CLI contract: a JSON object on stderr and a
    nonzero exit code. Commands return their own exit code on success
    (0, or 2 when monitor emitted alerts).

    Attributes
    ----------
    stderr : IO[str]
        Stream receiving the machine-readable error record.
    """

    def __init__(self, stderr: IO[str] | None = None) -> None:
        self.stderr = stderr or sys.stderr

    def _emit(self, payload: dict) -> int:
        self.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
        self.stderr.flush()
        return int(payload["exit_code"])

    def dispatch(self, command: str, handler: Callable[[Namespace], int], args: Namespace) -> int:
        """
        Run one command and translate its failure, if any.

        Parameters
        ----------
        command : str
            Subcommand name, used in log lines.
        handler : Callable[[Namespace], int]
            Command implementation.
        args : Namespace
            Parsed command-line arguments.

        Returns
        -------
        int
            Exit code for the process.
        """
        try:

            Log.info(f"Command '{command}' started")
            code = handler(args)
            Log.info(f"Command '{command}' finished with exit code {code}")
            return code

        except IterSentinelError as e:
            Log.error(f"{command}: {type(e).__name__}: {e.message}")
            return self._emit(e.to_dict())

        except ValidationError as e:
            # Models built outside the config loader
            error_msg = f"Invalid input: {e.error_count()} errors"
            Log.error(f"{command}: {error_msg}")
            return self._emit(
                {
                    "error": "ValidationError",
                    "message": error_msg,
                    "details": {"errors": [{"loc": ".".join(map(str, x["loc"])), "msg": x["msg"]} for x in e.errors()]},
                    "exit_code": EXIT_ERROR,
                }
            )

        except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
            error_msg = f"Input error: {e}"
            Log.error(f"{command}: {error_msg}")
            return self._emit(
                {"error": type(e).__name__, "message": error_msg, "details": {}, "exit_code": EXIT_ERROR}
            )

        except KeyboardInterrupt:
            Log.info(f"Command '{command}' interrupted by user (Ctrl+C)")
            return self._emit(
                {"error": "Interrupted", "message": "Interrupted by user", "details": {}, "exit_code": EXIT_INTERRUPTED}
            )

        except Exception as e:
            error_msg = f"Unexpected error in '{command}': {e}"
            Log.exception(error_msg)
            return self._emit(
                {"error": "InternalError", "message": error_msg, "details": {}, "exit_code": EXIT_ERROR}
            )
