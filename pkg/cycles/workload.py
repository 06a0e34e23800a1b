from typing import Sequence

from pydantic import BaseModel, ConfigDict, Field, computed_field

from cycles.segmenter import Cycle, Stage
from request.run_config import CycleConfig
from services.errors import MissingWorkloadArgs
from tracing.events import TraceEvent

# Prefix of raw args that only exist after the cycle finished
POST_PREFIX = "post_"


class WorkloadFeatures(BaseModel):
    """
    Predictor input extracted from one cycle.

    L_real and W_kv are derived on access and never stored.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    # Batch size
    B: int = Field(ge=0)

    # Input length (tokens)
    L_in: int = Field(ge=0)

    # Current output length (tokens)
    L_out: int = Field(ge=0)

    stage: Stage = Stage.DECODE

    # Remaining numeric args of the workload event, for the full-feature set
    extra: dict[str, float] = Field(default_factory=dict)

    @computed_field
    @property
    def L_real(self) -> int:
        return self.L_in + self.L_out

    @computed_field
    @property
    def W_kv(self) -> int:
        return self.B * self.L_real


def _as_count(value: object) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    return None


def extract_workload(
    cycle: Cycle, events: Sequence[TraceEvent], config: CycleConfig | None = None
) -> WorkloadFeatures:
    """
    Read B, L_in and L_out from the first cycle event carrying all three.

    Parameters
    ----------
    cycle : Cycle
        Segmented, classified cycle.
    events : Sequence[TraceEvent]
        Events that start within the cycle.
    config : CycleConfig | None, optional
        Arg names.

    Returns
    -------
    WorkloadFeatures
        Features with the cycle's stage.

    Raises
    ------
    MissingWorkloadArgs
        If no event carries integral batch and length args.
    """
    config = config or CycleConfig()
    keys = (config.batch_arg, config.input_len_arg, config.output_len_arg)
    for event in events:
        if not all(key in event.args for key in keys):
            continue
        counts = [_as_count(event.args[key]) for key in keys]
        if any(count is None or count < 0 for count in counts):
            continue
        extra = {
            key: float(value)
            for key, value in event.args.items()
            if key not in keys and isinstance(value, (int, float)) and not isinstance(value, bool)
        }
        return WorkloadFeatures(B=counts[0], L_in=counts[1], L_out=counts[2], stage=cycle.stage, extra=extra)

    raise MissingWorkloadArgs(
        f"Cycle {cycle.index} has no event carrying {', '.join(keys)}",
        {"cycle": cycle.index, "args": list(keys)},
    )
