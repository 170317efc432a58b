"""File persistence for RC state, tamper-resistant memories, and smart cards.

JSON documents with lowercase-hex byte fields and a version tag.  Writes go
through a temp file plus atomic rename so readers always see whole snapshots.
"""
from __future__ import annotations

import json
import os
import tempfile
from typing import Any

from .core import DIGEST_LEN, FIELD_LEN
from .protocol import RcState, ServerRecord, SmartCard, TamperResistantMemory

FORMAT_VERSION = 1

RC_SUFFIX = ".rcdb.json"
CARD_SUFFIX = ".card.json"
TRM_SUFFIX = ".trm.json"


class CorruptRecord(Exception):
    """A persisted record failed width, uniqueness, or format validation."""


def _atomic_write(path: str, doc: dict) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_doc(path: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptRecord(f"{path}: top level must be an object")
    if doc.get("version") != FORMAT_VERSION:
        raise CorruptRecord(f"{path}: unsupported format version {doc.get('version')!r}")
    return doc


def _unhex(doc_path: str, name: str, value: Any, width: int | None) -> bytes:
    if not isinstance(value, str):
        raise CorruptRecord(f"{doc_path}: field {name} must be a hex string")
    try:
        raw = bytes.fromhex(value)
    except ValueError as exc:
        raise CorruptRecord(f"{doc_path}: field {name} is not valid hex") from exc
    if width is not None and len(raw) != width:
        raise CorruptRecord(f"{doc_path}: field {name} must be {width} bytes, got {len(raw)}")
    return raw


# ---------------------------------------------------------------------------
# RC database
# ---------------------------------------------------------------------------


def store_rc(rc: RcState, path: str) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "k_rc": rc.k_rc.hex(),
        "servers": [
            {
                "id": id_j.hex(),
                "ssk": rec.ssk_j.hex(),
                "q": rec.q_j.hex(),
                "loc": rec.loc_j.hex(),
                "srt": rec.srt_j,
            }
            for id_j, rec in rc.servers.items()
        ],
        "users": [{"uid": uid.hex(), "c": c.hex()} for uid, c in rc.users.items()],
        "sync_markers": {id_j.hex(): m for id_j, m in rc.sync_markers.items()},
    }
    _atomic_write(path, doc)


def load_rc(path: str) -> RcState:
    doc = _load_doc(path)
    try:
        k_rc = _unhex(path, "k_rc", doc["k_rc"], DIGEST_LEN)
        servers: dict[bytes, ServerRecord] = {}
        for row in doc["servers"]:
            id_j = _unhex(path, "servers.id", row["id"], FIELD_LEN)
            if id_j in servers:
                raise CorruptRecord(f"{path}: duplicate server id {row['id']}")
            srt = row["srt"]
            if not isinstance(srt, int) or not 0 <= srt < 2**32:
                raise CorruptRecord(f"{path}: servers.srt out of range")
            servers[id_j] = ServerRecord(
                ssk_j=_unhex(path, "servers.ssk", row["ssk"], DIGEST_LEN),
                q_j=_unhex(path, "servers.q", row["q"], DIGEST_LEN),
                loc_j=_unhex(path, "servers.loc", row["loc"], FIELD_LEN),
                srt_j=srt,
            )
        users: dict[bytes, bytes] = {}
        for row in doc["users"]:
            uid = _unhex(path, "users.uid", row["uid"], DIGEST_LEN)
            if uid in users:
                raise CorruptRecord(f"{path}: duplicate uid {row['uid']}")
            users[uid] = _unhex(path, "users.c", row["c"], DIGEST_LEN)
        markers: dict[bytes, int] = {}
        for key, value in doc["sync_markers"].items():
            id_j = _unhex(path, "sync_markers key", key, FIELD_LEN)
            if not isinstance(value, int) or value < 0 or value > len(users):
                raise CorruptRecord(f"{path}: sync marker for {key} out of range")
            if id_j not in servers:
                raise CorruptRecord(f"{path}: sync marker for unregistered server {key}")
            markers[id_j] = value
    except KeyError as exc:
        raise CorruptRecord(f"{path}: missing field {exc}") from exc
    return RcState(k_rc=k_rc, servers=servers, users=users, sync_markers=markers)


# ---------------------------------------------------------------------------
# Smart card
# ---------------------------------------------------------------------------


def store_card(card: SmartCard, path: str) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "w": card.w.hex(),
        "x": card.x.hex(),
        "y": card.y.hex(),
        "z": card.z.hex(),
        "e": card.e.hex(),
    }
    _atomic_write(path, doc)


def load_card(path: str) -> SmartCard:
    doc = _load_doc(path)
    try:
        z = _unhex(path, "z", doc["z"], None)
        if len(z) == 0 or len(z) % 64 != 0:
            raise CorruptRecord(f"{path}: z length {len(z)} not a positive multiple of 64")
        return SmartCard(
            w=_unhex(path, "w", doc["w"], DIGEST_LEN),
            x=_unhex(path, "x", doc["x"], DIGEST_LEN),
            y=_unhex(path, "y", doc["y"], DIGEST_LEN),
            z=z,
            e=_unhex(path, "e", doc["e"], DIGEST_LEN),
        )
    except KeyError as exc:
        raise CorruptRecord(f"{path}: missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Tamper-resistant memory
# ---------------------------------------------------------------------------


def store_trm(
    trm: TamperResistantMemory,
    path: str,
    server_id: str | None = None,
    server_loc: str | None = None,
) -> None:
    doc: dict[str, Any] = {
        "version": FORMAT_VERSION,
        "ssk": trm.ssk_j.hex(),
        "p": trm.p_j.hex(),
        "list_uid": sorted(uid.hex() for uid in trm.list_uid),
        "list_c": [{"uid": uid.hex(), "c": c.hex()} for uid, c in trm.list_c.items()],
    }
    # Operational metadata for the CLI/service front ends; not part of the
    # provisioned store itself.
    if server_id is not None:
        doc["server_id"] = server_id
    if server_loc is not None:
        doc["server_loc"] = server_loc
    _atomic_write(path, doc)


def load_trm(path: str) -> TamperResistantMemory:
    trm, _, _ = load_trm_with_meta(path)
    return trm


def load_trm_with_meta(path: str) -> tuple[TamperResistantMemory, str | None, str | None]:
    doc = _load_doc(path)
    try:
        list_uid = {_unhex(path, "list_uid", h, DIGEST_LEN) for h in doc["list_uid"]}
        list_c: dict[bytes, bytes] = {}
        for row in doc["list_c"]:
            uid = _unhex(path, "list_c.uid", row["uid"], DIGEST_LEN)
            if uid in list_c:
                raise CorruptRecord(f"{path}: duplicate uid in list_c")
            list_c[uid] = _unhex(path, "list_c.c", row["c"], DIGEST_LEN)
        if list_uid != set(list_c):
            raise CorruptRecord(f"{path}: list_uid and list_c key set diverge")
        trm = TamperResistantMemory(
            ssk_j=_unhex(path, "ssk", doc["ssk"], DIGEST_LEN),
            p_j=_unhex(path, "p", doc["p"], DIGEST_LEN),
            list_uid=list_uid,
            list_c=list_c,
        )
    except KeyError as exc:
        raise CorruptRecord(f"{path}: missing field {exc}") from exc
    return trm, doc.get("server_id"), doc.get("server_loc")
