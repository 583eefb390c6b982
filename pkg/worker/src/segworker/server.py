"""Single-threaded request loop speaking wire protocol v1 on stdio.

One JSON object per line. The worker emits its handshake first, answers
each request in order, never crashes on malformed input, and exits 0 on
the quit op (or on stdin EOF, which means the host went away).
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .backends import BackendError, ProceduralBackend

PROTOCOL_VERSION = 1
ROLES = ("generator", "labeller", "depth")


@dataclass
class WorkerConfig:
    role: str
    backend: str = "procedural"
    workdir: Path = Path(".")
    seed: int = 0
    corruption: float = 0.0
    corrupt_index: int | None = None
    noise: float = 0.0
    jitter: int = 8

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.backend != "procedural":
            raise ValueError(
                "only the procedural backend is runnable from the CLI; adapters "
                "are wired in code (see backends.AdapterBackend)"
            )
        self.workdir = Path(self.workdir)


def _emit(out, obj) -> None:
    out.write(json.dumps(obj) + "\n")
    out.flush()


def _handle(backend, role: str, request: dict) -> dict:
    op = request.get("op")
    if request.get("v") != PROTOCOL_VERSION:
        raise BackendError(f"unsupported protocol version {request.get('v')!r}")
    if op == "generate":
        if role != "generator":
            raise BackendError(f"op 'generate' not served by role {role!r}")
        refs = backend.generate(
            str(request["label"]),
            int(request["seed"]),
            int(request["n"]),
            str(request["out_prefix"]),
        )
        return {"images": refs}
    if op == "label":
        if role != "labeller":
            raise BackendError(f"op 'label' not served by role {role!r}")
        return {"label": backend.label(str(request["image"]), str(request["out"]))}
    if op == "depth":
        if role != "depth":
            raise BackendError(f"op 'depth' not served by role {role!r}")
        return {"depth": backend.depth(str(request["image"]), str(request["out"]))}
    raise BackendError(f"unknown op {op!r}")


def serve(config: WorkerConfig, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    backend = ProceduralBackend(
        workdir=config.workdir,
        seed=config.seed,
        corruption=config.corruption,
        corrupt_index=config.corrupt_index,
        noise=config.noise,
        jitter=config.jitter,
    )
    _emit(stdout, {"v": PROTOCOL_VERSION, "role": config.role})
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request is not an object")
        except ValueError as exc:
            _emit(stdout, {"v": PROTOCOL_VERSION, "ok": False, "error": f"malformed request: {exc}"})
            continue
        request_id = request.get("id")
        if not isinstance(request_id, int):
            _emit(stdout, {"v": PROTOCOL_VERSION, "ok": False, "error": "request without integer id"})
            continue
        if request.get("op") == "quit":
            return 0
        try:
            payload = _handle(backend, config.role, request)
        except (BackendError, KeyError, TypeError, ValueError) as exc:
            message = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            _emit(stdout, {"v": PROTOCOL_VERSION, "id": request_id, "ok": False, "error": message})
            continue
        response = {"v": PROTOCOL_VERSION, "id": request_id, "ok": True}
        response.update(payload)
        _emit(stdout, response)
    return 0
