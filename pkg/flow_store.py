import logging
import os
from functools import lru_cache

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from core.flow_io import DEFAULT_MAX_PIXELS, FlowMap, read_flo
from errors import FlowUnavailable

log = logging.getLogger(__name__)

# Network mounts occasionally fail a read transiently; a missing file is never retried.
TRANSIENT_IO_ERRORS = (TimeoutError, InterruptedError, BlockingIOError)
READ_ATTEMPTS = 3


@retry(
    stop=stop_after_attempt(READ_ATTEMPTS),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(TRANSIENT_IO_ERRORS),
    reraise=True,
    before_sleep=lambda retry_state: log.warning(
        "flow read failed (%s), retrying in %.1fs (attempt %d/%d)",
        retry_state.outcome.exception(), retry_state.next_action.sleep, retry_state.attempt_number, READ_ATTEMPTS,
    ),
)
def _read_with_retry(path, max_pixels):
    return read_flo(path, max_pixels=max_pixels)


class FlowStore:
    """Resolves flow_ref strings (paths relative to a root directory) to FlowMaps, with an LRU cache."""

    def __init__(self, root, max_pixels=DEFAULT_MAX_PIXELS, cache_size=256):
        self.root = os.path.abspath(root)
        self.max_pixels = max_pixels
        self.load = lru_cache(maxsize=cache_size)(self._load)

    def path_for(self, flow_ref):
        abs_path = os.path.abspath(os.path.join(self.root, flow_ref))
        # Keep references inside the flow directory
        if os.path.commonpath([abs_path, self.root]) != self.root:
            raise FlowUnavailable(f'flow_ref "{flow_ref}" points outside {self.root}')
        return abs_path

    def _load(self, flow_ref) -> FlowMap:
        path = self.path_for(flow_ref)
        if not os.path.isfile(path):
            raise FlowUnavailable(f'flow file "{flow_ref}" not found under {self.root}')
        try:
            return _read_with_retry(path, self.max_pixels)
        except OSError as e:
            raise FlowUnavailable(f'cannot read flow file "{flow_ref}": {e}') from e


class MemoryFlowStore:
    """In-memory store keyed by flow_ref, for generated scenes."""

    def __init__(self, flows=None):
        self.flows = dict(flows or {})

    def load(self, flow_ref) -> FlowMap:
        try:
            return self.flows[flow_ref]
        except KeyError:
            raise FlowUnavailable(f'no flow map registered for "{flow_ref}"') from None

    @classmethod
    def from_scene(cls, flows, track):
        return cls({frame.flow_ref: flow for frame, flow in zip(track.frames, flows)})

    def add_scene(self, flows, track):
        for frame, flow in zip(track.frames, flows):
            self.flows[frame.flow_ref] = flow
        return self
