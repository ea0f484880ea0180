"""M1-M4 message schemas, the canonical line codec and transports.

Every message is encoded as one UTF-8 JSON object with sorted keys and no
insignificant whitespace, terminated by a newline. Rates are integer kbit/s
and intervals are ``[start_tick, end_tick]`` pairs, so equal messages always
encode to identical bytes.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import orjson

from .envelope import (
    ACCEPT,
    AffectedSegment,
    CapabilityEnvelope,
    CapabilityNotification,
    ConflictSegment,
    Direction,
    EnvelopeEntry,
    FeasibilityVerdict,
    ProfileOption,
)
from .model import (
    AdaptationPermissions,
    DemandTrajectory,
    Interval,
    PhaseBounds,
    PlanningWindow,
    SegmentAssignment,
)

logger = logging.getLogger(__name__)

_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_APPEND_NEWLINE


class DecodeError(ValueError):
    """Malformed wire record.

    Parameters
    ----------
    msg : str
        Description.
    offset : int
        Byte offset in the record where decoding failed.
    """

    def __init__(self, msg: str, offset: int = 0):
        super().__init__(f"{msg} (at byte {offset})")
        self.offset = offset


class MessageKind(str, enum.Enum):
    M1_ENVELOPE = "M1_ENVELOPE"
    M2_TRAJECTORY = "M2_TRAJECTORY"
    M2_ACK = "M2_ACK"
    M3_NOTIFICATION = "M3_NOTIFICATION"
    M4_REVISION = "M4_REVISION"
    M4_ACK = "M4_ACK"


@dataclass(frozen=True)
class AdmissionResult:
    """M2_ACK / M4_ACK payload.

    Parameters
    ----------
    accepted : bool
        Whether the trajectory was admitted (or the withdrawal recorded).
    admission_seq : int | None
        Sequence number of the new commitment.
    superseded_seq : int | None
        Commitment the M4 replaced or tried to replace.
    verdict : FeasibilityVerdict
        Conflict details when not accepted.
    effective_tick : int | None
        Tick from which the QoS treatment is enforced.
    enforced : DemandTrajectory | None
        Trajectory imposed by the network when a Stage-2 answer was overdue.
    """

    accepted: bool
    admission_seq: Optional[int] = None
    superseded_seq: Optional[int] = None
    verdict: FeasibilityVerdict = ACCEPT
    effective_tick: Optional[int] = None
    enforced: Optional[DemandTrajectory] = None


@dataclass(frozen=True)
class Revision:
    """M4 payload: a revised trajectory and the commitment it replaces."""

    trajectory: DemandTrajectory
    supersedes: Optional[int] = None


@dataclass(frozen=True)
class OpaquePayload:
    """Payload of a message kind this version does not know."""

    data: Dict[str, Any] = field(default_factory=dict)


Payload = Union[
    CapabilityEnvelope,
    DemandTrajectory,
    AdmissionResult,
    CapabilityNotification,
    Revision,
    OpaquePayload,
]


@dataclass(frozen=True)
class Message:
    """One protocol message.

    ``kind`` is a :class:`MessageKind`, or the raw string of a kind unknown
    to this version (the payload is then an :class:`OpaquePayload`).
    """

    kind: Union[MessageKind, str]
    seq: int
    sender_id: str
    receiver_id: str
    payload: Payload
    answers: Optional[int] = None


# ---------------------------------------------------------------------------
# payload <-> plain data


def _iv(interval: Interval):
    return [interval.start_tick, interval.end_tick]


def _to_iv(pair) -> Interval:
    s, e = pair
    return Interval(int(s), int(e))


def trajectory_to_dict(traj: DemandTrajectory) -> dict:
    """Plain-data form of a trajectory (the M2 field set only)."""
    return {
        "workflow_id": traj.workflow_id,
        "agent_id": traj.agent_id,
        "priority": traj.priority,
        "segments": [
            {
                "phase_id": s.phase_id,
                "interval": _iv(s.interval),
                "profile_id": s.profile_id,
                "rate_kbps": s.rate_kbps,
            }
            for s in traj.segments
        ],
        "permissions": {
            "allow_downgrade": traj.permissions.allow_downgrade,
            "allow_defer": traj.permissions.allow_defer,
            "allow_replan": traj.permissions.allow_replan,
        },
        "phases": [
            {
                "phase_id": b.phase_id,
                "order_index": b.order_index,
                "duration": b.duration,
                "preferred_profile": b.preferred_profile,
                "preferred_kbps": b.preferred_kbps,
                "min_profile": b.min_profile,
                "min_kbps": b.min_kbps,
                "max_deferral": b.max_deferral,
            }
            for b in traj.phase_bounds
        ],
    }


def trajectory_from_dict(d: Mapping) -> DemandTrajectory:
    return DemandTrajectory(
        workflow_id=d["workflow_id"],
        agent_id=d["agent_id"],
        priority=int(d["priority"]),
        segments=tuple(
            SegmentAssignment(
                _to_iv(s["interval"]),
                s["phase_id"],
                s["profile_id"],
                int(s["rate_kbps"]),
            )
            for s in d["segments"]
        ),
        permissions=AdaptationPermissions(**d["permissions"]),
        phase_bounds=tuple(PhaseBounds(**b) for b in d["phases"]),
    )


def _envelope_to_dict(env: CapabilityEnvelope) -> dict:
    return {
        "scope_agent_id": env.scope_agent_id,
        "window": {"start": env.window.start, "length": env.window.length},
        "entries": [
            {
                "profile_id": e.profile_id,
                "rate_kbps": e.rate_kbps,
                "validity": [_iv(iv) for iv in e.validity],
                "headroom_kbps": e.headroom_kbps,
            }
            for e in env.entries
        ],
    }


def _envelope_from_dict(d: Mapping) -> CapabilityEnvelope:
    return CapabilityEnvelope(
        window=PlanningWindow(int(d["window"]["start"]), int(d["window"]["length"])),
        entries=tuple(
            EnvelopeEntry(
                e["profile_id"],
                int(e["rate_kbps"]),
                tuple(_to_iv(p) for p in e["validity"]),
                e["headroom_kbps"],
            )
            for e in d["entries"]
        ),
        scope_agent_id=d["scope_agent_id"],
    )


def _verdict_to_dict(v: FeasibilityVerdict) -> dict:
    return {
        "accepted": v.accepted,
        "conflicts": [
            {
                "interval": _iv(c.interval),
                "max_profile_id": c.max_profile_id,
                "max_kbps": c.max_kbps,
            }
            for c in v.conflicts
        ],
    }


def _verdict_from_dict(d: Mapping) -> FeasibilityVerdict:
    return FeasibilityVerdict(
        tuple(
            ConflictSegment(_to_iv(c["interval"]), c["max_profile_id"], c["max_kbps"])
            for c in d["conflicts"]
        )
    )


def _notification_to_dict(n: CapabilityNotification) -> dict:
    return {
        "workflow_id": n.workflow_id,
        "direction": n.direction.value,
        "admission_seq": n.admission_seq,
        "affected": [
            {
                "interval": _iv(a.interval),
                "alternatives": [
                    {"profile_id": o.profile_id, "rate_kbps": o.rate_kbps}
                    for o in a.alternatives
                ],
            }
            for a in n.affected
        ],
    }


def _notification_from_dict(d: Mapping) -> CapabilityNotification:
    return CapabilityNotification(
        workflow_id=d["workflow_id"],
        affected=tuple(
            AffectedSegment(
                _to_iv(a["interval"]),
                tuple(
                    ProfileOption(o["profile_id"], int(o["rate_kbps"]))
                    for o in a["alternatives"]
                ),
            )
            for a in d["affected"]
        ),
        direction=Direction(d["direction"]),
        admission_seq=d["admission_seq"],
    )


def _result_to_dict(r: AdmissionResult) -> dict:
    return {
        "accepted": r.accepted,
        "admission_seq": r.admission_seq,
        "superseded": r.superseded_seq,
        "verdict": _verdict_to_dict(r.verdict),
        "effective_tick": r.effective_tick,
        "enforced": None if r.enforced is None else trajectory_to_dict(r.enforced),
    }


def _result_from_dict(d: Mapping) -> AdmissionResult:
    enforced = d["enforced"]
    return AdmissionResult(
        accepted=bool(d["accepted"]),
        admission_seq=d["admission_seq"],
        superseded_seq=d["superseded"],
        verdict=_verdict_from_dict(d["verdict"]),
        effective_tick=d["effective_tick"],
        enforced=None if enforced is None else trajectory_from_dict(enforced),
    )


def _revision_to_dict(r: Revision) -> dict:
    return {"trajectory": trajectory_to_dict(r.trajectory), "supersedes": r.supersedes}


def _revision_from_dict(d: Mapping) -> Revision:
    return Revision(trajectory_from_dict(d["trajectory"]), d["supersedes"])


_CODECS: Dict[MessageKind, Tuple[Callable, Callable]] = {
    MessageKind.M1_ENVELOPE: (_envelope_to_dict, _envelope_from_dict),
    MessageKind.M2_TRAJECTORY: (trajectory_to_dict, trajectory_from_dict),
    MessageKind.M2_ACK: (_result_to_dict, _result_from_dict),
    MessageKind.M3_NOTIFICATION: (_notification_to_dict, _notification_from_dict),
    MessageKind.M4_REVISION: (_revision_to_dict, _revision_from_dict),
    MessageKind.M4_ACK: (_result_to_dict, _result_from_dict),
}


def message_to_dict(message: Message) -> dict:
    if isinstance(message.kind, MessageKind):
        kind = message.kind.value
        payload = _CODECS[message.kind][0](message.payload)
    else:
        kind = str(message.kind)
        payload = message.payload.data
    return {
        "kind": kind,
        "seq": message.seq,
        "sender_id": message.sender_id,
        "receiver_id": message.receiver_id,
        "answers": message.answers,
        "payload": payload,
    }


def encode(message: Message) -> bytes:
    """Encode a message as one canonical newline-terminated record."""
    return orjson.dumps(message_to_dict(message), option=_OPTIONS)


def decode(data: bytes) -> Message:
    """Decode one complete record produced by :func:`encode`.

    Parameters
    ----------
    data : bytes
        Exactly one line, including its terminating newline.

    Returns
    -------
    Message
        The decoded message. Unknown kinds keep their payload as an
        :class:`OpaquePayload`.

    Raises
    ------
    DecodeError
        If the record is incomplete, not valid JSON or misses fields.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    if not data.endswith(b"\n"):
        raise DecodeError("Incomplete record, missing newline", len(data))
    first_newline = data.find(b"\n")
    if first_newline != len(data) - 1:
        raise DecodeError("More than one record in input", first_newline)
    try:
        obj = orjson.loads(data)
    except orjson.JSONDecodeError as exc:
        raise DecodeError(f"Invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(obj, dict):
        raise DecodeError("Record is not an object", 0)
    try:
        kind_name = obj["kind"]
        try:
            kind = MessageKind(kind_name)
        except ValueError:
            logger.debug("preserving unknown message kind %r", kind_name)
            kind, payload = str(kind_name), OpaquePayload(obj["payload"])
        else:
            payload = _CODECS[kind][1](obj["payload"])
        return Message(
            kind=kind,
            seq=int(obj["seq"]),
            sender_id=obj["sender_id"],
            receiver_id=obj["receiver_id"],
            payload=payload,
            answers=obj.get("answers"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"Malformed {obj.get('kind')!r} record: {exc!r}", 0) from None


# ---------------------------------------------------------------------------
# endpoints and transports


class Endpoint:
    """Message factory with a strictly increasing per-sender sequence."""

    def __init__(self, agent_id: str):
        self.agent_id = agent_id
        self._seq = 0

    def make(
        self,
        kind: MessageKind,
        receiver_id: str,
        payload: Payload,
        answers: Optional[int] = None,
    ) -> Message:
        self._seq += 1
        return Message(kind, self._seq, self.agent_id, receiver_id, payload, answers)


class InProcessTransport:
    """Scheduler-backed delivery with per-pair FIFO order.

    Parameters
    ----------
    schedule : callable
        ``schedule(tick, message)`` enqueues the delivery event.
    delay_ticks : int
        One-way delay.
    pair_delays : mapping of (str, str) to int | None
        Delay overrides per (sender, receiver) pair.
    codec_check : bool
        Pass every message through :func:`encode`/:func:`decode` before
        delivery, as a byte-stream binding would.
    """

    def __init__(
        self,
        schedule: Callable[[int, Message], None],
        delay_ticks: int = 1,
        pair_delays: Optional[Mapping[Tuple[str, str], int]] = None,
        codec_check: bool = False,
    ):
        self._schedule = schedule
        self.delay_ticks = int(delay_ticks)
        self.pair_delays = dict(pair_delays or {})
        self.codec_check = codec_check
        self._last: Dict[Tuple[str, str], int] = {}
        self.sent = 0

    def send(self, message: Message, now: int) -> int:
        """Schedule delivery of ``message``; return the delivery tick."""
        pair = (message.sender_id, message.receiver_id)
        delay = self.pair_delays.get(pair, self.delay_ticks)
        tick = max(now + delay, self._last.get(pair, now))
        self._last[pair] = tick
        if self.codec_check:
            message = decode(encode(message))
        self.sent += 1
        self._schedule(tick, message)
        return tick


class StreamTransport:
    """Newline framing of encoded messages over a reliable byte stream."""

    def __init__(self, stream):
        self.stream = stream

    def send(self, message: Message):
        self.stream.write(encode(message))

    def receive(self) -> Optional[Message]:
        """Read the next message, or None at end of stream."""
        line = self.stream.readline()
        if not line:
            return None
        return decode(line)

    def __iter__(self):
        while True:
            msg = self.receive()
            if msg is None:
                return
            yield msg
