"""Subprocess worker protocol (v1) and in-process deterministic mocks.

External generator / labeller / depth workers are separate processes
speaking line-delimited JSON over stdin/stdout. Payloads are file
references relative to a shared working directory, never inline data.
One request is in flight per handle at a time; a pipeline scales by
running several worker processes, not by pipelining one.

Wire protocol v1:

  handshake (worker's first line):  {"v":1,"role":"generator|labeller|depth"}
  -> {"v":1,"id":N,"op":"generate","label":REF,"seed":S,"n":K,"out_prefix":REF}
  <- {"v":1,"id":N,"ok":true,"images":[REF,...]}
  -> {"v":1,"id":N,"op":"label","image":REF,"out":REF}
  <- {"v":1,"id":N,"ok":true,"label":REF}
  -> {"v":1,"id":N,"op":"depth","image":REF,"out":REF}
  <- {"v":1,"id":N,"ok":true,"depth":REF}
  any error:  {"v":1,"id":N,"ok":false,"error":MSG}
  shutdown:   {"v":1,"id":N,"op":"quit"}   (no response; worker exits 0)
"""
from __future__ import annotations

import json
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path, PurePath

from .errors import ProtocolError, WorkerCrashError, WorkerError, WorkerTimeoutError
from .labelmap import encode_label_map, load_label_map
from .procedural import (
    apply_label_noise,
    candidate_seed,
    encode_gray_png,
    encode_image_png,
    decode_image_png,
    render_candidate,
    render_depth,
    sidecar_ref,
)
from .rng import derive_seed
from .taxonomy import ClassTaxonomy

PROTOCOL_VERSION = 1
ROLES = ("generator", "labeller", "depth")


@dataclass(frozen=True)
class WorkerTimeouts:
    handshake: float = 30.0
    generate: float = 600.0
    label: float = 120.0
    depth: float = 120.0
    quit: float = 10.0


def check_ref(ref: str) -> str:
    """Reject refs that could escape the shared working directory."""
    p = PurePath(ref)
    if p.is_absolute() or ".." in p.parts:
        raise ProtocolError(f"worker returned unsafe ref {ref!r}")
    return ref


class WorkerHandle:
    """One live worker process. Owned by a single pipeline lane at a time."""

    def __init__(self, role: str, command: list[str], workdir: Path, timeouts: WorkerTimeouts):
        self.role = role
        self.command = list(command)
        self.workdir = Path(workdir)
        self.timeouts = timeouts
        self._next_id = 1
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._responses: dict[int, dict] = {}
        self._handshake: dict | None = None
        self._garbage: str | None = None
        self._eof = False
        self._stderr_file = open(self.workdir / f"worker-{role}.stderr.log", "ab")
        try:
            self.proc = subprocess.Popen(
                self.command,
                cwd=self.workdir,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr_file,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            self._stderr_file.close()
            raise WorkerError(f"cannot spawn worker {self.command!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        stdout = self.proc.stdout
        for line in stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                if not isinstance(msg, dict):
                    raise ValueError("not an object")
            except ValueError:
                with self._cond:
                    self._garbage = line
                    self._cond.notify_all()
                continue
            with self._cond:
                if "id" in msg:
                    self._responses[msg["id"]] = msg
                elif self._handshake is None:
                    self._handshake = msg
                else:
                    self._garbage = line
                self._cond.notify_all()
        with self._cond:
            self._eof = True
            self._cond.notify_all()

    def _wait(self, predicate, timeout: float, what: str):
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                found = predicate()
                if found is not None:
                    return found
                if self._garbage is not None:
                    raise ProtocolError(f"worker emitted a malformed line: {self._garbage!r}")
                if self._eof:
                    code = self.proc.poll()
                    raise WorkerCrashError(f"worker died waiting for {what} (exit {code})")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise WorkerTimeoutError(f"timed out after {timeout}s waiting for {what}")
                self._cond.wait(remaining)

    def handshake(self) -> dict:
        msg = self._wait(lambda: self._handshake, self.timeouts.handshake, "handshake")
        if msg.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version in handshake: {msg!r}")
        if msg.get("role") != self.role:
            raise WorkerError(
                f"expected role {self.role!r}, worker announced {msg.get('role')!r}"
            )
        return msg

    def request(self, payload: dict, timeout: float) -> dict:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
        message = {"v": PROTOCOL_VERSION, "id": request_id}
        message.update(payload)
        try:
            self.proc.stdin.write(json.dumps(message) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise WorkerCrashError(f"worker stdin closed: {exc}") from exc
        response = self._wait(
            lambda: self._responses.pop(request_id, None), timeout, f"response {request_id}"
        )
        if response.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"bad protocol version in response: {response!r}")
        if not response.get("ok"):
            raise WorkerError(str(response.get("error", "worker error without message")))
        return response

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> int:
        """Send quit, wait for a clean exit, kill on timeout."""
        if self.alive:
            with self._lock:
                request_id = self._next_id
                self._next_id += 1
            try:
                self.proc.stdin.write(
                    json.dumps({"v": PROTOCOL_VERSION, "id": request_id, "op": "quit"}) + "\n"
                )
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                self.proc.wait(timeout=self.timeouts.quit)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._reader.join(timeout=5)
        self._stderr_file.close()
        return self.proc.returncode


def spawn_worker(
    role: str, command: list[str], workdir, timeouts: WorkerTimeouts | None = None
) -> WorkerHandle:
    """Start a worker process and complete the handshake."""
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    handle = WorkerHandle(role, command, Path(workdir), timeouts or WorkerTimeouts())
    try:
        handle.handshake()
    except Exception:
        handle.close()
        raise
    return handle


def generate(handle: WorkerHandle, label_ref: str, seed: int, n: int, out_prefix: str) -> list[str]:
    """Request n generated images for a label map; returns their refs."""
    if handle.role != "generator":
        raise WorkerError(f"generate needs a generator handle, got {handle.role!r}")
    response = handle.request(
        {"op": "generate", "label": label_ref, "seed": seed, "n": n, "out_prefix": out_prefix},
        handle.timeouts.generate,
    )
    images = response.get("images")
    if not isinstance(images, list) or len(images) != n:
        raise ProtocolError(f"expected {n} image refs, got {images!r}")
    return [check_ref(ref) for ref in images]


def label(handle: WorkerHandle, image_ref: str, out_ref: str) -> str:
    """Request a pseudo-label for a generated image; returns the label ref."""
    if handle.role != "labeller":
        raise WorkerError(f"label needs a labeller handle, got {handle.role!r}")
    response = handle.request(
        {"op": "label", "image": image_ref, "out": out_ref}, handle.timeouts.label
    )
    ref = response.get("label")
    if not isinstance(ref, str):
        raise ProtocolError(f"label response without label ref: {response!r}")
    return check_ref(ref)


def depth(handle: WorkerHandle, image_ref: str, out_ref: str) -> str:
    if handle.role != "depth":
        raise WorkerError(f"depth needs a depth handle, got {handle.role!r}")
    response = handle.request(
        {"op": "depth", "image": image_ref, "out": out_ref}, handle.timeouts.depth
    )
    ref = response.get("depth")
    if not isinstance(ref, str):
        raise ProtocolError(f"depth response without depth ref: {response!r}")
    return check_ref(ref)


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


class MockGenerator:
    """In-process generator with the procedural rendering contract.

    ``corruption`` is the per-component class-swap probability applied to
    every candidate; ``corrupt_index`` forces one candidate index per
    request to full corruption, which gives tests exactly one bad
    candidate at a known position.
    """

    role = "generator"

    def __init__(
        self,
        workdir,
        taxonomy: ClassTaxonomy,
        corruption: float = 0.0,
        corrupt_index: int | None = None,
        jitter: int | None = None,
    ):
        self.workdir = Path(workdir)
        self.taxonomy = taxonomy
        self.corruption = corruption
        self.corrupt_index = corrupt_index
        self.jitter = jitter

    def generate(self, label_ref: str, seed: int, n: int, out_prefix: str) -> list[str]:
        source = load_label_map(self.workdir / label_ref, self.taxonomy)
        refs = []
        for i in range(n):
            rate = self.corruption
            if self.corrupt_index is not None and i == self.corrupt_index:
                rate = 1.0
            kwargs = {} if self.jitter is None else {"jitter": self.jitter}
            image, effective = render_candidate(
                source, candidate_seed(seed, i), rate, self.taxonomy, **kwargs
            )
            ref = f"{out_prefix}{i:03d}.png"
            _write(self.workdir / ref, encode_image_png(image))
            _write(self.workdir / sidecar_ref(ref), encode_label_map(effective))
            refs.append(ref)
        return refs

    def close(self):
        pass


class MockLabeller:
    """In-process labeller: reads the sidecar map, optionally adds noise."""

    role = "labeller"

    def __init__(self, workdir, taxonomy: ClassTaxonomy, noise: float = 0.0, seed: int = 0):
        self.workdir = Path(workdir)
        self.taxonomy = taxonomy
        self.noise = noise
        self.seed = seed

    def label(self, image_ref: str, out_ref: str) -> str:
        sidecar = self.workdir / sidecar_ref(image_ref)
        if not sidecar.exists():
            raise WorkerError(f"missing sidecar for {image_ref!r}")
        m = load_label_map(sidecar, self.taxonomy)
        noisy = apply_label_noise(
            m, derive_seed(self.seed, "label", image_ref), self.noise, self.taxonomy
        )
        _write(self.workdir / out_ref, encode_label_map(noisy))
        return out_ref

    def close(self):
        pass


class MockDepth:
    """In-process depth worker over the procedural depth ramp."""

    role = "depth"

    def __init__(self, workdir):
        self.workdir = Path(workdir)

    def depth(self, image_ref: str, out_ref: str) -> str:
        image = decode_image_png((self.workdir / image_ref).read_bytes())
        _write(self.workdir / out_ref, encode_gray_png(render_depth(image)))
        return out_ref

    def close(self):
        pass


class SubprocessGenerator:
    """Pipeline-facing adapter running generate over a worker handle."""

    role = "generator"

    def __init__(self, command: list[str], workdir, timeouts: WorkerTimeouts | None = None):
        self.command = list(command)
        self.workdir = Path(workdir)
        self.timeouts = timeouts or WorkerTimeouts()
        self.handle = spawn_worker("generator", self.command, self.workdir, self.timeouts)

    def generate(self, label_ref: str, seed: int, n: int, out_prefix: str) -> list[str]:
        return generate(self.handle, label_ref, seed, n, out_prefix)

    def respawn(self):
        self.handle.close()
        self.handle = spawn_worker("generator", self.command, self.workdir, self.timeouts)

    def close(self):
        self.handle.close()


class SubprocessLabeller:
    role = "labeller"

    def __init__(self, command: list[str], workdir, timeouts: WorkerTimeouts | None = None):
        self.command = list(command)
        self.workdir = Path(workdir)
        self.timeouts = timeouts or WorkerTimeouts()
        self.handle = spawn_worker("labeller", self.command, self.workdir, self.timeouts)

    def label(self, image_ref: str, out_ref: str) -> str:
        return label(self.handle, image_ref, out_ref)

    def respawn(self):
        self.handle.close()
        self.handle = spawn_worker("labeller", self.command, self.workdir, self.timeouts)

    def close(self):
        self.handle.close()
