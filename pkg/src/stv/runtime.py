"""Simulated multi-party execution environment.

A :class:`Session` wires ``K`` parties and one coordinator into a fully
connected set of ordered point-to-point channels.  Party 1 is the single
*active* party (it owns the forecast target); all others are *passive*.
The coordinator only deals correlated randomness and never receives
protocol data.

All protocol code in this package runs the parties in lock-step inside
one process: every cross-party data movement goes through
:meth:`Session.send` / :meth:`Session.recv`, which enforce per-channel
FIFO order and phase expectations (any out-of-phase message aborts the
session), append to the communication ledger exactly once per send, and
advance a global round clock.

Two instruments hang off the session:

* :class:`CommLedger` — one entry per message with element and byte
  counts.  Totals are a function of shapes, party count, method and
  iteration count only, never of data values.
* transcripts — per-party logs of every plaintext value a party
  materialises (reconstructions and received broadcasts), used by the
  privacy audits.

Sessions can be spawned with ``dry_run=True``: protocols then execute
with shape-only payloads and skip all numeric work, which makes
communication accounting cheap at large dimensions.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .backend import ELEMENT_BYTES, Backend
from .errors import ProtocolError

#: Reserved node index for the coordinator on channels and ledger rows.
COORDINATOR = 0


@dataclass(frozen=True)
class PartyId:
    """Identity of one party: index in ``[1, K]``; index 1 is active."""

    index: int

    @property
    def is_active(self) -> bool:
        return self.index == 1

    @property
    def role(self) -> str:
        return "active" if self.is_active else "passive"


@dataclass
class Message:
    sender: int
    receiver: int
    phase: str
    payload: np.ndarray | None
    elements: int
    round: int


@dataclass(frozen=True)
class LedgerEntry:
    phase: str
    sender: int
    receiver: int
    elements: int
    bytes: int


class CommLedger:
    """Append-only record of every message sent in a session."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def record(self, phase: str, sender: int, receiver: int, elements: int):
        self.entries.append(
            LedgerEntry(phase, sender, receiver, elements, elements * ELEMENT_BYTES)
        )

    def total(self, phase: str | None = None, exclude: str | None = None):
        """Summed ``(elements, bytes)`` over entries.

        ``phase`` filters by phase prefix; ``exclude`` drops a phase
        prefix (e.g. ``"triples"`` to omit coordinator randomness).
        """
        elements = 0
        for e in self.entries:
            if phase is not None and not e.phase.startswith(phase):
                continue
            if exclude is not None and e.phase.startswith(exclude):
                continue
            elements += e.elements
        return elements, elements * ELEMENT_BYTES

    def message_count(self) -> int:
        return len(self.entries)

    def to_jsonl(self, fp):
        """Write one JSON object per entry: phase, from, to, elements, bytes."""
        for e in self.entries:
            fp.write(
                json.dumps(
                    {
                        "phase": e.phase,
                        "from": e.sender,
                        "to": e.receiver,
                        "elements": e.elements,
                        "bytes": e.bytes,
                    }
                )
                + "\n"
            )

    def merge(self, other: "CommLedger"):
        self.entries.extend(other.entries)


@dataclass(frozen=True)
class TranscriptEvent:
    """One plaintext value materialised at a party."""

    phase: str
    shape: tuple


@dataclass
class Party:
    pid: PartyId
    rng: np.random.Generator
    #: Party-local plaintext state (own columns, thresholds, scalers).
    private: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        return self.pid.index


@dataclass
class Coordinator:
    rng: np.random.Generator


class Session:
    """K parties plus a coordinator with ordered channels and instruments."""

    def __init__(self, parties: int, backend: Backend, seed: int,
                 audit: bool = False, dry_run: bool = False):
        if parties < 2:
            raise ProtocolError(f"at least 2 parties required, got {parties}")
        self.K = parties
        self.backend = backend
        self.seed = seed
        self.audit = audit
        self.dry_run = dry_run

        streams = np.random.SeedSequence(seed).spawn(parties + 1)
        self.coordinator = Coordinator(np.random.default_rng(streams[0]))
        self.parties = {
            k: Party(PartyId(k), np.random.default_rng(streams[k]))
            for k in range(1, parties + 1)
        }

        nodes = [COORDINATOR] + list(self.parties)
        self.channels: dict[tuple[int, int], deque] = {
            (a, b): deque() for a in nodes for b in nodes if a != b
        }
        self.ledger = CommLedger()
        self.transcripts: dict[int, list[TranscriptEvent]] = {
            k: [] for k in self.parties
        }
        self.clock = 0
        self._tag_counter = 0

    # -- identity helpers ---------------------------------------------------

    @property
    def active(self) -> int:
        return 1

    def passive_parties(self) -> list[int]:
        return [k for k in self.parties if k != 1]

    @property
    def inverse_aggregator(self) -> int:
        """Lowest-index passive party; aggregates masked products during inversion."""
        return 2

    def party_rng(self, k: int) -> np.random.Generator:
        return self.parties[k].rng

    def next_tag(self) -> str:
        self._tag_counter += 1
        return f"t{self._tag_counter}"

    # -- transport ----------------------------------------------------------

    def send(self, sender: int, receiver: int, phase: str,
             payload: np.ndarray | None, elements: int | None = None):
        """Queue one message; ledgered exactly once, FIFO per channel."""
        if (sender, receiver) not in self.channels:
            raise ProtocolError(f"no channel {sender} -> {receiver}")
        if payload is not None:
            elements = int(np.asarray(payload).size)
        elif elements is None:
            raise ProtocolError("shape-only send requires an element count")
        self.clock += 1
        msg = Message(sender, receiver, phase, payload, elements, self.clock)
        self.channels[(sender, receiver)].append(msg)
        self.ledger.record(phase, sender, receiver, elements)

    def recv(self, receiver: int, sender: int, phase: str) -> Message:
        """Pop the next message on a channel; fail-stop on phase mismatch."""
        queue = self.channels[(sender, receiver)]
        if not queue:
            raise ProtocolError(
                f"party {receiver} expected {phase!r} from {sender} but the "
                f"channel is empty"
            )
        head = queue[0]
        if head.phase != phase:
            raise ProtocolError(
                f"protocol desync: party {receiver} expected {phase!r} from "
                f"{sender} but found {head.phase!r} (round {head.round})"
            )
        return queue.popleft()

    def broadcast(self, sender: int, phase: str, payload, elements=None,
                  include_coordinator: bool = False):
        """K-1 unicasts in ascending receiver order (each ledgered)."""
        receivers = list(self.parties)
        if include_coordinator:
            receivers = [COORDINATOR] + receivers
        for r in receivers:
            if r != sender:
                self.send(sender, r, phase, payload, elements)

    # -- instruments ----------------------------------------------------------

    def materialize(self, party: int, phase: str, shape) -> None:
        """Record that ``party`` holds a plaintext value in clear text.

        Locally generated randomness (masks, perturbations) is not logged:
        a party's own random draws are trivially known to it.
        """
        self.transcripts[party].append(TranscriptEvent(phase, tuple(shape)))

    def transcript_phases(self, party: int) -> set[str]:
        return {e.phase for e in self.transcripts[party]}


def spawn_session(parties: int, backend: Backend | None = None,
                  seed: int = 0, audit: bool = False,
                  dry_run: bool = False) -> Session:
    """Create a fresh session with ``parties`` parties and one coordinator."""
    return Session(parties, backend or Backend(), seed, audit=audit, dry_run=dry_run)
