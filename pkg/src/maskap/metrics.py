"""Cost accounting: hash counts, wire bytes, card storage, wall time.

Every number is computed from actual encodings and instrumented runs, never
from constants, so changing an encoding width changes the report.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from . import protocol
from .core import HashCounter
from .netsim import World, build_world

# The published figure for card storage counts five 32-byte values; the card
# as specified must carry a 64-byte server-list entry per server instead of a
# fifth digest, so the realizable size is 128 + 64*n.
PAPER_CARD_STORAGE_BYTES = 160


@dataclass
class CostReport:
    phase: str
    hash_count: int
    keystream_hashes: int = 0
    wire_bytes: int | None = None
    storage_bytes: int | None = None
    wall_time_ms: float | None = None
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "hash_count": self.hash_count,
            "keystream_hashes": self.keystream_hashes,
            "wire_bytes": self.wire_bytes,
            "storage_bytes": self.storage_bytes,
            "wall_time_ms": self.wall_time_ms,
            "notes": self.notes,
        }


def run_counted_auth(
    world: World, user_id: str, server_id: str, delta_t: int = 5
) -> tuple[HashCounter, int]:
    """One full authentication with hash instrumentation.

    Returns the counter and the total public wire bytes (both frame bodies).
    """
    user = world.users[user_id]
    server = world.servers[server_id]
    counter = HashCounter()
    t1 = world.clock.now
    with counter.phase("auth"):
        req, ctx = protocol.user_login_begin(user.user_id, user.password, user.card, server_id, t1)
    request_bytes = len(req.pack())
    with counter.phase("auth"):
        resp, server_key = protocol.server_handle_login(
            server.trm, server.server_id, server.location, req,
            t2=t1 + world.latency_s, delta_t=delta_t, vt_duration=world.vt_duration_s,
        )
    response_bytes = len(resp.pack())
    with counter.phase("auth"):
        user_key = protocol.user_handle_response(
            ctx, resp, t3=t1 + 2 * world.latency_s, delta_t=delta_t
        )
    assert user_key.sk == server_key.sk
    return counter, request_bytes + response_bytes


def run_counted_registration(seed: int = 0) -> tuple[HashCounter, int]:
    """Server plus user registration, instrumented.  Returns counter and card size."""
    counter = HashCounter()
    world = World(seed=seed)
    with counter.phase("registration"):
        world.register_server("srv00", "spw00", "loc00")
        user = world.register_user("user00", "upw00")
    return counter, user.card.storage_bytes


def measure_costs(
    seed: int = 0, n_servers: int = 1, runs: int = 100, delta_t: int = 5
) -> list[CostReport]:
    reports: list[CostReport] = []

    reg_counter, _ = run_counted_registration(seed)
    world = build_world(seed=seed, n_servers=n_servers, n_users=1)
    auth_counter, wire_bytes = run_counted_auth(world, "user00", "srv00", delta_t)

    timings = []
    for _ in range(max(runs, 100)):
        start = time.perf_counter()
        run_counted_auth(world, "user00", "srv00", delta_t)
        timings.append((time.perf_counter() - start) * 1000.0)

    reports.append(
        CostReport(
            phase="authentication",
            hash_count=auth_counter.count("auth"),
            keystream_hashes=auth_counter.keystream_count("auth"),
            wire_bytes=wire_bytes,
            wall_time_ms=statistics.median(timings),
            notes=f"median over {len(timings)} runs; keystream expansion reported separately",
        )
    )
    reports.append(
        CostReport(
            phase="registration",
            hash_count=reg_counter.count("registration"),
            keystream_hashes=reg_counter.keystream_count("registration"),
        )
    )
    card = world.users["user00"].card
    reports.append(
        CostReport(
            phase="card-storage",
            hash_count=0,
            storage_bytes=card.storage_bytes,
            notes=(
                f"{n_servers} server(s): 4*32 + 64*{n_servers} = {card.storage_bytes} bytes; "
                f"published figure is {PAPER_CARD_STORAGE_BYTES} bytes, which omits the "
                "per-server width of the masked server list"
            ),
        )
    )
    return reports


def card_storage_bytes(n_servers: int, seed: int = 0) -> int:
    world = build_world(seed=seed, n_servers=n_servers, n_users=1)
    return world.users["user00"].card.storage_bytes
