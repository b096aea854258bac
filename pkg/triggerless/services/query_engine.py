"""Prediction-time dropout querying, the seed-tracking adversary and DoS scheduling.

Every query draws one mask per dropout-enabled layer, in layer order, from
the stream of the queried input. A campaign of ``q`` queries therefore
consumes ``q * plan.draws_per_query()`` draws, and anyone holding the master
seed can replay the exact mask sequence without running the model.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Union, overload

import numpy as np
import pandas as pd
import structlog

from triggerless.config import settings
from triggerless.core.dropout import Mask, RngStream, targets_dropped
from triggerless.core.exceptions import ContractViolation, HorizonExhaustedError
from triggerless.core.numeric import argmax_tiebreak_low
from triggerless.models.network import Parameters, forward, predict_labels
from triggerless.schemas.attack import DropoutPlan, TargetLayer
from triggerless.schemas.query import SessionState
from triggerless.utils.files import PathLike, write_csv

logger = structlog.get_logger(__name__)

_CAMPAIGN_CHUNK = 1000
_SCAN_CHUNK = 4096


# ==================== RECORDS ====================

@dataclass(frozen=True)
class QueryRecord:
    posteriors: np.ndarray
    label: int
    activated: bool
    query_index: int  # 1-based position in the session's query counter
    input_index: int = 0


class Transcript(Sequence[QueryRecord]):
    """All queries of one input, stored column-wise."""

    def __init__(
        self,
        input_index: int,
        posteriors: np.ndarray,
        labels: np.ndarray,
        activated: np.ndarray,
        query_indices: np.ndarray,
        clean_label: Optional[int] = None,
    ):
        self.input_index = input_index
        self.posteriors = posteriors
        self.labels = labels
        self.activated = activated
        self.query_indices = query_indices
        self.clean_label = clean_label

    @classmethod
    def from_labels(cls, labels, num_classes: int = 10, input_index: int = 0, clean_label: Optional[int] = None):
        """Transcript with one-hot posteriors, for hand-built cases."""
        labels = np.asarray(labels, dtype=np.int64)
        posteriors = np.eye(num_classes)[labels]
        return cls(
            input_index,
            posteriors,
            labels,
            np.zeros(labels.size, dtype=bool),
            np.arange(1, labels.size + 1),
            clean_label,
        )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @overload
    def __getitem__(self, i: int) -> QueryRecord: ...

    @overload
    def __getitem__(self, i: slice) -> "Transcript": ...

    def __getitem__(self, i: Union[int, slice]):
        if isinstance(i, slice):
            return Transcript(
                self.input_index,
                self.posteriors[i],
                self.labels[i],
                self.activated[i],
                self.query_indices[i],
                self.clean_label,
            )
        return QueryRecord(
            posteriors=self.posteriors[i],
            label=int(self.labels[i]),
            activated=bool(self.activated[i]),
            query_index=int(self.query_indices[i]),
            input_index=self.input_index,
        )

    def __iter__(self) -> Iterator[QueryRecord]:
        for i in range(len(self)):
            yield self[i]

    def truncate(self, num_queries: int) -> "Transcript":
        """The first ``num_queries`` queries."""
        return self[:num_queries]

    @classmethod
    def concat(cls, parts: List["Transcript"]) -> "Transcript":
        first = parts[0]
        return cls(
            first.input_index,
            np.concatenate([p.posteriors for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.activated for p in parts]),
            np.concatenate([p.query_indices for p in parts]),
            first.clean_label,
        )


# ==================== SESSION ====================

class QuerySession:
    """Query counter plus one RNG stream per input, keyed by input index."""

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ContractViolation("master seed must be non-negative")
        self.master_seed = master_seed
        self.query_counter = 0
        self._streams: Dict[int, RngStream] = {}

    def stream(self, stream_id: int) -> RngStream:
        if stream_id not in self._streams:
            self._streams[stream_id] = RngStream(self.master_seed, stream_id)
        return self._streams[stream_id]

    def consume(self, stream_id: int, queries: int, plan: DropoutPlan) -> None:
        """Serve ``queries`` throwaway queries on a stream without materialising outputs."""
        self.stream(stream_id).skip(queries * plan.draws_per_query())
        self.query_counter += queries

    def state(self) -> SessionState:
        return SessionState(
            master_seed=self.master_seed,
            query_counter=self.query_counter,
            streams={sid: s.counter for sid, s in self._streams.items()},
        )

    @classmethod
    def from_state(cls, state: SessionState) -> "QuerySession":
        session = cls(state.master_seed)
        session.query_counter = state.query_counter
        for sid, counter in state.streams.items():
            session._streams[sid] = RngStream(state.master_seed, sid, counter)
        return session


# ==================== MASKS AND FLAGS ====================

def draw_inference_masks(plan: DropoutPlan, stream: RngStream, queries: int) -> List[Optional[Mask]]:
    layers = plan.inference_layers()
    total = plan.draws_per_query()
    masks: List[Optional[Mask]] = [None] * plan.num_layers
    if not layers:
        return masks
    # row q holds query q's draws, layer after layer
    draws = stream.uniform(queries * total).reshape(queries, total)
    offset = 0
    for layer in layers:
        width, rate = plan.widths[layer], plan.inference_rates[layer]
        keep = draws[:, offset:offset + width] >= rate
        masks[layer] = Mask(keep=keep, scale=1.0 / (1.0 - rate))
        offset += width
    return masks


def _activation_flags(
    plan: DropoutPlan,
    masks: List[Optional[Mask]],
    queries: int,
    targets: Optional[List[TargetLayer]] = None,
) -> np.ndarray:
    flags = np.ones(queries, dtype=bool)
    for target in plan.targets if targets is None else targets:
        if not target.neurons:
            continue
        mask = masks[target.layer]
        if mask is None:
            flags[:] = False
        else:
            flags &= targets_dropped(mask, target.neurons)
    return flags


# ==================== QUERIES ====================

def query_campaign(
    params: Parameters,
    x: np.ndarray,
    plan: DropoutPlan,
    num_queries: int,
    session: QuerySession,
    input_index: int = 0,
    clean_label: Optional[int] = None,
) -> Transcript:
    """``num_queries`` sequential predictions of one input."""
    if num_queries < 1:
        raise ContractViolation("a campaign needs at least one query")
    stream = session.stream(input_index)
    parts = []
    done = 0
    while done < num_queries:
        n = min(_CAMPAIGN_CHUNK, num_queries - done)
        masks = draw_inference_masks(plan, stream, n)
        posteriors = forward(params, x, masks).posteriors
        posteriors = np.broadcast_to(posteriors, (n, posteriors.shape[-1])).copy()
        first = session.query_counter + 1
        session.query_counter += n
        parts.append(Transcript(
            input_index,
            posteriors,
            argmax_tiebreak_low(posteriors),
            _activation_flags(plan, masks, n),
            np.arange(first, first + n),
            clean_label,
        ))
        done += n
    return Transcript.concat(parts)


def predict(
    params: Parameters,
    x: np.ndarray,
    plan: DropoutPlan,
    session: QuerySession,
    input_index: int = 0,
) -> QueryRecord:
    """One prediction with prediction-time dropout."""
    return query_campaign(params, x, plan, 1, session, input_index)[0]


def campaign_over_inputs(
    params: Parameters,
    inputs: np.ndarray,
    plan: DropoutPlan,
    num_queries: int,
    master_seed: int,
    input_indices: Optional[Sequence[int]] = None,
) -> List[Transcript]:
    """One campaign per input, each on its own stream (stream id = input index)."""
    inputs = np.atleast_2d(inputs)
    indices = list(range(len(inputs))) if input_indices is None else list(input_indices)
    clean = predict_labels(params, inputs)
    session = QuerySession(master_seed)
    transcripts = [
        query_campaign(params, inputs[i], plan, num_queries, session, input_index=idx, clean_label=int(clean[i]))
        for i, idx in enumerate(indices)
    ]
    logger.info(
        "campaigns_complete",
        inputs=len(transcripts),
        queries_per_input=num_queries,
        activations=int(sum(t.activated.sum() for t in transcripts)),
    )
    return transcripts


# ==================== ADVANCED ADVERSARY ====================

def _scan_activation(
    stream: RngStream,
    plan: DropoutPlan,
    targets: List[TargetLayer],
    horizon: int,
) -> Optional[int]:
    """First query (1-based) within ``horizon`` whose draws drop every target."""
    live = [t for t in targets if t.neurons]
    if not live:
        return 1
    if any(plan.inference_rates[t.layer] <= 0 for t in live):
        return None

    offsets, offset = {}, 0
    for layer in plan.inference_layers():
        offsets[layer] = offset
        offset += plan.widths[layer]
    total = offset

    done = 0
    while done < horizon:
        n = min(_SCAN_CHUNK, horizon - done)
        draws = stream.uniform(n * total).reshape(n, total)
        flags = np.ones(n, dtype=bool)
        for target in live:
            cols = offsets[target.layer] + np.asarray(target.neurons)
            flags &= np.all(draws[:, cols] < plan.inference_rates[target.layer], axis=1)
        hits = np.flatnonzero(flags)
        if hits.size:
            return done + int(hits[0]) + 1
        done += n
    return None


def predict_activation_query(
    master_seed: int,
    stream_id: int,
    plan: DropoutPlan,
    targets: Optional[List[TargetLayer]],
    horizon: int,
) -> Optional[int]:
    """Offline replay of a fresh stream's mask draws; no forward passes."""
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    targets = plan.targets if targets is None else targets
    return _scan_activation(RngStream(master_seed, stream_id), plan, targets, horizon)


def schedule_dos(
    session: QuerySession,
    plan: DropoutPlan,
    targets: Optional[List[TargetLayer]] = None,
    stream_id: int = 0,
    horizon: Optional[int] = None,
) -> int:
    """Pad the stream so that its next prediction activates the backdoor.

    Returns the number of padding queries consumed.
    """
    horizon = settings.search_horizon if horizon is None else horizon
    targets = plan.targets if targets is None else targets
    replay = session.stream(stream_id).clone()
    first = _scan_activation(replay, plan, targets, horizon)
    if first is None:
        raise HorizonExhaustedError(horizon)
    padding = first - 1
    session.consume(stream_id, padding, plan)
    logger.info("dos_scheduled", stream_id=stream_id, padding=padding, query_counter=session.query_counter)
    return padding


# ==================== EXPORT ====================

def transcripts_frame(transcripts: List[Transcript]) -> pd.DataFrame:
    frames = []
    for t in transcripts:
        frame = pd.DataFrame({
            "input_index": np.full(len(t), t.input_index),
            "query_index": t.query_indices,
            "predicted_label": t.labels,
            "activated": t.activated.astype(int),
        })
        probs = pd.DataFrame(t.posteriors, columns=[f"p{c}" for c in range(t.posteriors.shape[1])])
        frames.append(pd.concat([frame, probs], axis=1))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def export_transcripts(path: PathLike, transcripts: List[Transcript]):
    return write_csv(path, transcripts_frame(transcripts))
