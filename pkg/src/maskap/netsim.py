"""Deterministic simulation of the user / server / RC topology.

A World owns a virtual clock and a seeded RNG, so any scenario replays
bit-identically.  Public-channel frames pass through a scriptable adversary;
registration and RC maintenance traffic ride secure channels the adversary
cannot observe.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Union

from . import protocol
from .protocol import (
    LoginRequest,
    LoginResponse,
    ProtocolError,
    RcState,
    ServerSecrets,
    SessionKey,
    SmartCard,
    TamperResistantMemory,
)

DEFAULT_START_TIME = 1_700_000_000
DEFAULT_LATENCY_S = 1


@dataclass
class SimClock:
    now: int

    def advance(self, d_s: int) -> None:
        if d_s < 0:
            raise ValueError("clock cannot move backwards")
        self.now += d_s

    def advance_to(self, t: int) -> None:
        if t > self.now:
            self.now = t


# ---------------------------------------------------------------------------
# Adversary actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Forward:
    pass


@dataclass(frozen=True)
class Delay:
    d_s: int


@dataclass(frozen=True)
class Replay:
    """Suppress the original delivery and resend the captured frame.

    Copy k arrives k latency hops after the nominal delivery time: capturing
    and re-injecting costs the adversary at least one hop.
    """

    copies: int = 1


@dataclass(frozen=True)
class ModifyBit:
    field: str
    byte_index: int
    bit_index: int


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Inject:
    frame: bytes


AdversaryAction = Union[Forward, Delay, Replay, ModifyBit, Drop, Inject]

_FIELD_SPANS = {
    # message index 0: login request
    0: {"alpha": (0, 32), "beta": (32, 64), "t1": (64, 68)},
    # message index 1: login response
    1: {"gamma": (0, 32), "sigma": (32, 64), "t2": (64, 68)},
}


def action_from_json(obj: dict) -> AdversaryAction:
    kind = obj["kind"]
    if kind == "forward":
        return Forward()
    if kind == "delay":
        return Delay(d_s=int(obj["d_s"]))
    if kind == "replay":
        return Replay(copies=int(obj.get("copies", 1)))
    if kind == "modify_bit":
        return ModifyBit(
            field=obj["field"], byte_index=int(obj["byte_index"]), bit_index=int(obj["bit_index"])
        )
    if kind == "drop":
        return Drop()
    if kind == "inject":
        return Inject(frame=bytes.fromhex(obj["frame"]))
    raise ValueError(f"unknown adversary action kind {kind!r}")


def script_from_json(doc: str | dict) -> dict[int, list[AdversaryAction]]:
    """Scenario scripts as a small JSON document: message index -> action list."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    return {int(idx): [action_from_json(a) for a in actions] for idx, actions in doc.items()}


def _action_desc(act: AdversaryAction) -> str:
    if isinstance(act, Forward):
        return "forward"
    if isinstance(act, Delay):
        return f"delay({act.d_s})"
    if isinstance(act, Replay):
        return f"replay({act.copies})"
    if isinstance(act, ModifyBit):
        return f"modify_bit({act.field},{act.byte_index},{act.bit_index})"
    if isinstance(act, Drop):
        return "drop"
    return f"inject({act.frame.hex()})"


@dataclass
class _Delivery:
    arrival: int
    frame: bytes
    pristine: bool


def _apply_actions(
    actions: list[AdversaryAction],
    frame: bytes,
    send_time: int,
    latency: int,
    msg_index: int,
) -> list[_Delivery]:
    deliveries = [_Delivery(send_time + latency, frame, True)]
    spans = _FIELD_SPANS[msg_index]
    for act in actions:
        if isinstance(act, Forward):
            continue
        if isinstance(act, Drop):
            deliveries = []
        elif isinstance(act, Delay):
            for d in deliveries:
                d.arrival += act.d_s
                d.pristine = False
        elif isinstance(act, Inject):
            for d in deliveries:
                d.frame = act.frame
                d.pristine = False
        elif isinstance(act, ModifyBit):
            lo, hi = spans[act.field]
            pos = lo + act.byte_index
            if not lo <= pos < hi or not 0 <= act.bit_index < 8:
                raise ValueError(f"modify_bit indices out of bounds for field {act.field}")
            for d in deliveries:
                mutated = bytearray(d.frame)
                mutated[pos] ^= 1 << act.bit_index
                d.frame = bytes(mutated)
                d.pristine = False
        elif isinstance(act, Replay):
            resent: list[_Delivery] = []
            for d in deliveries:
                for k in range(1, act.copies + 1):
                    resent.append(_Delivery(d.arrival + k * latency, d.frame, False))
            deliveries = resent
        else:
            raise ValueError(f"unsupported adversary action {act!r}")
        deliveries.sort(key=lambda d: d.arrival)
    return deliveries


# ---------------------------------------------------------------------------
# Outcome / world
# ---------------------------------------------------------------------------


@dataclass
class ScenarioOutcome:
    accepted: bool
    error: str | None
    transcript: list[dict]
    session_keys: tuple[SessionKey, SessionKey] | None  # (user, server)

    def to_json(self) -> str:
        doc = {
            "accepted": self.accepted,
            "error": self.error,
            "transcript": self.transcript,
            "session_keys": (
                [self.session_keys[0].sk.hex(), self.session_keys[1].sk.hex()]
                if self.session_keys
                else None
            ),
        }
        return json.dumps(doc, indent=2)


@dataclass
class SimUser:
    user_id: str
    password: str
    card: SmartCard


@dataclass
class SimServer:
    server_id: str
    location: str
    secrets: ServerSecrets
    trm: TamperResistantMemory


class World:
    """One simulated deployment: an RC, its servers and users, and a clock."""

    def __init__(
        self,
        seed: int = 0,
        start_time: int = DEFAULT_START_TIME,
        latency_s: int = DEFAULT_LATENCY_S,
        vt_duration_s: int = protocol.DEFAULT_VT_DURATION,
    ) -> None:
        self.rng = random.Random(seed)
        self.clock = SimClock(now=start_time)
        self.latency_s = latency_s
        self.vt_duration_s = vt_duration_s
        self.rc = RcState(k_rc=self.rng.randbytes(32))
        self.servers: dict[str, SimServer] = {}
        self.users: dict[str, SimUser] = {}
        self.adversary_observed: list[bytes] = []
        self.secure_log: list[dict] = []

    # -- enrollment (secure channels) --------------------------------------

    def register_server(self, server_id: str, password: str, location: str) -> SimServer:
        secrets, req = protocol.server_register_begin(server_id, password, location, self.rng)
        trm = protocol.rc_register_server(self.rc, req, srt_j=self.clock.now)
        sim = SimServer(server_id=server_id, location=location, secrets=secrets, trm=trm)
        self.servers[server_id] = sim
        self.secure_log.append(
            {"time": self.clock.now, "channel": "secure", "kind": "server_registration",
             "peer": server_id}
        )
        return sim

    def register_user(self, user_id: str, password: str) -> SimUser:
        pending, req = protocol.user_register_begin(user_id, password, self.rng)
        prov = protocol.rc_register_user(self.rc, req, self.rng)
        card = protocol.user_finalize_card(user_id, password, pending.r1, pending.r2, prov)
        sim = SimUser(user_id=user_id, password=password, card=card)
        self.users[user_id] = sim
        self.secure_log.append(
            {"time": self.clock.now, "channel": "secure", "kind": "user_registration",
             "peer": user_id}
        )
        return sim

    def advance_and_sync(self, d_s: int, delta_t: int = 5) -> None:
        """Advance the clock, then run the database-update exchange for every server."""
        self.clock.advance(d_s)
        for sim in self.servers.values():
            req = protocol.server_db_update_begin(sim.secrets, sim.trm.ssk_j, t6=self.clock.now)
            delta = protocol.rc_handle_db_update(self.rc, req, t7=self.clock.now, delta_t=delta_t)
            protocol.apply_user_list_delta(sim.trm, delta)
            self.secure_log.append(
                {"time": self.clock.now, "channel": "secure", "kind": "db_sync",
                 "peer": sim.server_id, "delta": len(delta.entries)}
            )

    # -- card maintenance (secure channel) ----------------------------------

    def update_user_card(self, user_id: str, delta_t: int = 5) -> None:
        sim = self.users[user_id]
        req, _ctx = protocol.user_update_begin(sim.user_id, sim.password, sim.card, t4=self.clock.now)
        list_bytes = protocol.rc_handle_update(self.rc, req, t5=self.clock.now, delta_t=delta_t)
        sim.card = protocol.user_apply_server_list(sim.user_id, sim.password, sim.card, list_bytes)
        self.secure_log.append(
            {"time": self.clock.now, "channel": "secure", "kind": "card_update", "peer": user_id}
        )

    # -- authentication sessions --------------------------------------------

    def run_honest_session(self, user_id: str, server_id: str, delta_t: int) -> ScenarioOutcome:
        return self.run_with_adversary(user_id, server_id, {}, delta_t)

    def run_with_adversary(
        self,
        user_id: str,
        server_id: str,
        script: dict[int, list[AdversaryAction]],
        delta_t: int,
    ) -> ScenarioOutcome:
        user = self.users[user_id]
        server = self.servers[server_id]
        transcript: list[dict] = []
        errors: list[str] = []
        tainted_accept = False
        user_key: SessionKey | None = None
        server_key: SessionKey | None = None

        def record(event: dict) -> None:
            transcript.append(event)

        t1 = self.clock.now
        try:
            login_req, ctx = protocol.user_login_begin(
                user.user_id, user.password, user.card, server_id, t1
            )
        except ProtocolError as exc:
            return ScenarioOutcome(False, exc.kind, transcript, None)

        req_actions = script.get(0, [])
        record(
            {"time": t1, "channel": "public", "direction": "user->server",
             "frame": login_req.pack().hex(),
             "actions": [_action_desc(a) for a in req_actions]}
        )

        response: LoginResponse | None = None
        response_time: int | None = None
        req_deliveries = _apply_actions(req_actions, login_req.pack(), t1, self.latency_s, 0)
        if not req_deliveries:
            errors.append("Dropped")
        for dlv in req_deliveries:
            self.clock.advance_to(dlv.arrival)
            self.adversary_observed.append(dlv.frame)
            event = {"time": dlv.arrival, "channel": "public", "direction": "deliver->server",
                     "frame": dlv.frame.hex(), "pristine": dlv.pristine}
            try:
                req = LoginRequest.unpack(dlv.frame)
                resp, key = protocol.server_handle_login(
                    server.trm, server.server_id, server.location, req,
                    t2=self.clock.now, delta_t=delta_t, vt_duration=self.vt_duration_s,
                )
                event["result"] = "accepted"
                if not dlv.pristine:
                    tainted_accept = True
                if response is None:
                    response, response_time, server_key = resp, self.clock.now, key
            except (ProtocolError, ValueError) as exc:
                kind = exc.kind if isinstance(exc, ProtocolError) else "MalformedFrame"
                event["result"] = kind
                errors.append(kind)
            record(event)

        if response is not None:
            resp_actions = script.get(1, [])
            record(
                {"time": response_time, "channel": "public", "direction": "server->user",
                 "frame": response.pack().hex(),
                 "actions": [_action_desc(a) for a in resp_actions]}
            )
            deliveries = _apply_actions(
                resp_actions, response.pack(), response_time, self.latency_s, 1
            )
            if not deliveries:
                errors.append("Dropped")
            for dlv in deliveries:
                self.clock.advance_to(dlv.arrival)
                self.adversary_observed.append(dlv.frame)
                event = {"time": dlv.arrival, "channel": "public", "direction": "deliver->user",
                         "frame": dlv.frame.hex(), "pristine": dlv.pristine}
                try:
                    resp = LoginResponse.unpack(dlv.frame)
                    key = protocol.user_handle_response(
                        ctx, resp, t3=self.clock.now, delta_t=delta_t
                    )
                    event["result"] = "accepted"
                    if not dlv.pristine:
                        tainted_accept = True
                    if user_key is None:
                        user_key = key
                except (ProtocolError, ValueError) as exc:
                    kind = exc.kind if isinstance(exc, ProtocolError) else "MalformedFrame"
                    event["result"] = kind
                    errors.append(kind)
                record(event)

        keys_agree = (
            user_key is not None and server_key is not None and user_key.sk == server_key.sk
        )
        accepted = keys_agree and not tainted_accept and not errors
        return ScenarioOutcome(
            accepted=accepted,
            error=errors[0] if errors else None,
            transcript=transcript,
            session_keys=(user_key, server_key) if user_key and server_key else None,
        )


def build_world(
    seed: int,
    n_servers: int = 1,
    n_users: int = 1,
    **kwargs,
) -> World:
    """Convenience topology: n servers registered before n users, then synced."""
    world = World(seed=seed, **kwargs)
    for j in range(n_servers):
        world.register_server(f"srv{j:02d}", f"spw{j:02d}", f"loc{j:02d}")
    for i in range(n_users):
        world.register_user(f"user{i:02d}", f"upw{i:02d}")
    world.advance_and_sync(0)
    return world
