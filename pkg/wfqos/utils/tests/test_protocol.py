from io import BytesIO

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ...envelope import (
    AffectedSegment,
    CapabilityEnvelope,
    CapabilityNotification,
    ConflictSegment,
    Direction,
    EnvelopeEntry,
    FeasibilityVerdict,
    ProfileOption,
)
from ...industrial_agent import construct_trajectory
from ...model import (
    CapacitySchedule,
    DemandTrajectory,
    Interval,
    PhaseBounds,
    PlanningWindow,
    ProfileCatalog,
    SegmentAssignment,
)
from ...network_agent import NetworkAgent
from ...protocol import (
    AdmissionResult,
    DecodeError,
    Endpoint,
    InProcessTransport,
    Message,
    MessageKind,
    OpaquePayload,
    Revision,
    StreamTransport,
    decode,
    encode,
)
from .conftest import inspection_workflow


@pytest.fixture
def golden_lines():
    with open("wfqos/utils/tests/data/golden_messages.ndjson", "rb") as f:
        return f.readlines()


def test_golden_encoding(golden_lines):
    note = CapabilityNotification(
        "inspection-drone",
        (
            AffectedSegment(
                Interval(1100, 1570),
                (ProfileOption("gbr-10", 10000), ProfileOption("gbr-1", 1000)),
            ),
        ),
        Direction.DEGRADATION,
        2,
    )
    message = Message(MessageKind.M3_NOTIFICATION, 7, "network", "drone-1", note)
    assert encode(message) == golden_lines[0]

    verdict = FeasibilityVerdict(
        (ConflictSegment(Interval(550, 800), "gbr-10", 10000),)
    )
    ack = Message(
        MessageKind.M2_ACK,
        3,
        "network",
        "drone-1",
        AdmissionResult(False, verdict=verdict),
        answers=1,
    )
    assert encode(ack) == golden_lines[1]

    envelope = CapabilityEnvelope(
        PlanningWindow(0, 2000),
        (
            EnvelopeEntry("gbr-10", 10000, (Interval(0, 2000),), 10000),
            EnvelopeEntry(
                "gbr-30", 30000, (Interval(0, 550), Interval(800, 2000)), 30000
            ),
        ),
        "drone-1",
    )
    m1 = Message(MessageKind.M1_ENVELOPE, 1, "network", "drone-1", envelope)
    assert encode(m1) == golden_lines[2]

    traj = DemandTrajectory(
        "inspection-drone",
        "drone-1",
        2,
        (
            SegmentAssignment(Interval(470, 550), "inspection", "gbr-30", 30000),
            SegmentAssignment(Interval(550, 800), "inspection", "gbr-10", 10000),
        ),
        phase_bounds=(
            PhaseBounds("inspection", 2, 1100, "gbr-30", 30000, "gbr-10", 10000),
        ),
    )
    m2 = Message(MessageKind.M2_TRAJECTORY, 2, "drone-1", "network", traj)
    assert encode(m2) == golden_lines[3]

    m4 = Message(MessageKind.M4_REVISION, 5, "drone-1", "network", Revision(traj, 4))
    assert encode(m4) == golden_lines[4]

    m4_ack = Message(
        MessageKind.M4_ACK,
        8,
        "network",
        "drone-1",
        AdmissionResult(True, 5, 4, effective_tick=1120),
        answers=5,
    )
    assert encode(m4_ack) == golden_lines[5]
    assert len(golden_lines) == 6


def test_golden_lines_reencode(golden_lines):
    for line in golden_lines:
        assert encode(decode(line)) == line


def test_decode_incomplete_record(golden_lines):
    line = golden_lines[0]
    with pytest.raises(DecodeError) as exc:
        decode(line[:-1])
    assert exc.value.offset == len(line) - 1


def test_decode_rejects_garbage(golden_lines):
    with pytest.raises(DecodeError):
        decode(golden_lines[0] + golden_lines[1])
    with pytest.raises(DecodeError):
        decode(b'{"kind": \n')
    with pytest.raises(DecodeError):
        decode(b"[1, 2]\n")
    with pytest.raises(DecodeError):
        decode(b'{"kind":"M2_ACK","seq":1}\n')


def test_unknown_kind_is_preserved():
    line = (
        b'{"answers":null,"kind":"M9_PING","payload":{"nonce":4},'
        b'"receiver_id":"network","sender_id":"drone-1","seq":5}\n'
    )
    message = decode(line)
    assert message.kind == "M9_PING"
    assert message.payload == OpaquePayload({"nonce": 4})
    assert encode(message) == line


def test_endpoint_sequence_increases():
    endpoint = Endpoint("drone-1")
    first = endpoint.make(MessageKind.M4_REVISION, "network", None)
    second = endpoint.make(MessageKind.M4_REVISION, "network", None)
    assert (first.seq, second.seq) == (1, 2)
    assert second.sender_id == "drone-1"


def test_in_process_transport_keeps_pair_order():
    delivered = []
    transport = InProcessTransport(
        lambda tick, msg: delivered.append((tick, msg.seq)), delay_ticks=5
    )
    endpoint = Endpoint("network")
    assert transport.send(endpoint.make(MessageKind.M2_ACK, "a", None), 0) == 5
    transport.delay_ticks = 1
    assert transport.send(endpoint.make(MessageKind.M2_ACK, "a", None), 1) == 5
    assert transport.send(endpoint.make(MessageKind.M2_ACK, "b", None), 1) == 2
    assert delivered == [(5, 1), (5, 2), (2, 3)]


def test_codec_check_round_trips_payloads(catalog):
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog)
    envelope = net.derive_envelope("drone-1")
    traj = construct_trajectory(inspection_workflow(), envelope, 0, catalog)
    delivered = []
    transport = InProcessTransport(
        lambda tick, msg: delivered.append(msg), codec_check=True
    )
    endpoint = Endpoint("drone-1")
    sent = [
        Endpoint("network").make(MessageKind.M1_ENVELOPE, "drone-1", envelope),
        endpoint.make(MessageKind.M2_TRAJECTORY, "network", traj),
        endpoint.make(MessageKind.M4_REVISION, "network", Revision(traj, 2)),
    ]
    for msg in sent:
        transport.send(msg, 0)
    assert delivered == sent


def test_stream_transport():
    stream = BytesIO()
    sender = StreamTransport(stream)
    endpoint = Endpoint("network")
    messages = [
        endpoint.make(MessageKind.M2_ACK, "drone-1", AdmissionResult(True, 1)),
        endpoint.make(
            MessageKind.M4_ACK, "drone-1", AdmissionResult(True, 2, 1, effective_tick=9)
        ),
    ]
    for msg in messages:
        sender.send(msg)
    stream.seek(0)
    assert list(StreamTransport(stream)) == messages


_CATALOG = ProfileCatalog.from_mbps([1, 5, 10, 20, 30])
_OPTIONS = [ProfileOption(p.profile_id, p.rate_kbps) for p in _CATALOG]


@st.composite
def _notifications(draw):
    affected = []
    t = draw(st.integers(0, 100))
    for _ in range(draw(st.integers(0, 4))):
        end = t + draw(st.integers(1, 500))
        alts = draw(st.lists(st.sampled_from(_OPTIONS), unique=True, max_size=5))
        alts.sort(key=lambda o: -o.rate_kbps)
        affected.append(AffectedSegment(Interval(t, end), tuple(alts)))
        t = end + draw(st.integers(0, 50))
    return CapabilityNotification(
        draw(st.text(min_size=1, max_size=12)),
        tuple(affected),
        draw(st.sampled_from(list(Direction))),
        draw(st.one_of(st.none(), st.integers(1, 10**6))),
    )


@settings(max_examples=200, deadline=None)
@given(
    note=_notifications(),
    seq=st.integers(1, 10**9),
    answers=st.one_of(st.none(), st.integers(1, 10**9)),
)
def test_notification_codec_round_trip(note, seq, answers):
    message = Message(
        MessageKind.M3_NOTIFICATION, seq, "network", "agent-001", note, answers
    )
    line = encode(message)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert decode(line) == message
    assert encode(decode(line)) == line
