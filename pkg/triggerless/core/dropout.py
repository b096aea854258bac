"""Mask generation: Bernoulli dropout, crafted target masks and seeded streams.

A unit is dropped when its uniform draw falls below the rate, so every mask
of width ``w`` consumes exactly ``w`` draws from its stream whatever the rate.
"""
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from triggerless.core.exceptions import ContractViolation
from triggerless.schemas.query import StreamState

_SKIP_CHUNK = 1 << 20


@dataclass(frozen=True)
class Mask:
    """Keep/drop bits over the last axis and the scale applied to kept units.

    ``keep`` is ``(width,)`` for a single query or ``(batch, width)`` when one
    mask row is drawn per example.
    """
    keep: np.ndarray
    scale: float = 1.0
    # units whose factor is pinned to 1
    unscaled: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractViolation(f"mask scale must be positive, got {self.scale}")
        self.keep.setflags(write=False)

    @property
    def width(self) -> int:
        return self.keep.shape[-1]

    def factor(self) -> np.ndarray:
        """Multiplicative factor applied to the layer's activations."""
        factor = self.keep * self.scale
        if self.unscaled:
            factor[..., list(self.unscaled)] = 1.0
        return factor

    @classmethod
    def identity(cls, width: int) -> "Mask":
        return cls(keep=np.ones(width, dtype=bool), scale=1.0)


class RngStream:
    """Counter-tracked uniform stream keyed by (master seed, stream id).

    The draw sequence is a pure function of the key, so a stream rebuilt from
    its ``StreamState`` continues exactly where the original left off.
    """

    def __init__(self, master_seed: int, stream_id: int = 0, counter: int = 0):
        if master_seed < 0 or stream_id < 0:
            raise ContractViolation("master seed and stream id must be non-negative")
        self.master_seed = master_seed
        self.stream_id = stream_id
        self.counter = 0
        seq = np.random.SeedSequence(master_seed, spawn_key=(stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))
        if counter:
            self.skip(counter)

    def uniform(self, n: int) -> np.ndarray:
        draws = self._gen.random(n)
        self.counter += n
        return draws

    def skip(self, n: int) -> None:
        while n > 0:
            step = min(n, _SKIP_CHUNK)
            self.uniform(step)
            n -= step

    def clone(self) -> "RngStream":
        twin = RngStream.__new__(RngStream)
        twin.master_seed = self.master_seed
        twin.stream_id = self.stream_id
        twin.counter = self.counter
        twin._gen = np.random.Generator(np.random.PCG64())
        twin._gen.bit_generator.state = self._gen.bit_generator.state
        return twin

    def state(self) -> StreamState:
        return StreamState(master_seed=self.master_seed, stream_id=self.stream_id, counter=self.counter)

    @classmethod
    def from_state(cls, state: StreamState) -> "RngStream":
        return cls(state.master_seed, state.stream_id, state.counter)


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate {rate} must lie in [0, 1)")


def sample_standard_mask(width: int, rate: float, stream: RngStream) -> Mask:
    """Inverted-dropout mask: each unit dropped with probability ``rate``."""
    _check_rate(rate)
    keep = stream.uniform(width) >= rate
    return Mask(keep=keep, scale=1.0 / (1.0 - rate))


def sample_batch_mask(batch: int, width: int, rate: float, stream: RngStream) -> Mask:
    """One standard mask row per example, drawn row by row."""
    _check_rate(rate)
    keep = stream.uniform(batch * width).reshape(batch, width) >= rate
    return Mask(keep=keep, scale=1.0 / (1.0 - rate))


def _check_indices(width: int, target_neurons: Iterable[int]) -> np.ndarray:
    idx = np.asarray(sorted(set(target_neurons)), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ContractViolation(
            f"target neurons {idx.tolist()} out of range for width {width}"
        )
    return idx


def craft_target_mask(width: int, target_neurons: Iterable[int]) -> Mask:
    """Drop exactly the target neurons; no inverted-dropout compensation."""
    idx = _check_indices(width, target_neurons)
    keep = np.ones(width, dtype=bool)
    keep[idx] = False
    return Mask(keep=keep, scale=1.0)


def protect_targets(mask: Mask, target_neurons: Iterable[int]) -> Mask:
    """Copy of ``mask`` with the target neurons kept at factor 1.

    Protected units pass their activation through unscaled, as they do at
    low prediction-time rates.
    """
    idx = _check_indices(mask.width, target_neurons)
    keep = mask.keep.copy()
    keep[..., idx] = True
    unscaled = tuple(sorted(set(mask.unscaled) | set(idx.tolist())))
    return Mask(keep=keep, scale=mask.scale, unscaled=unscaled)


def targets_dropped(mask: Mask, target_neurons: Iterable[int]):
    """True iff every target neuron is dropped; row-wise for batch masks.

    An empty target set counts as dropped.
    """
    idx = _check_indices(mask.width, target_neurons)
    dropped = ~mask.keep[..., idx]
    result = np.all(dropped, axis=-1)
    return bool(result) if mask.keep.ndim == 1 else result
