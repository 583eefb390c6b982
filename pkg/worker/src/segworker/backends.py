"""Worker backends: the shipped procedural one and the adapter template
for plugging real models."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path, PurePath

from . import contract


class BackendError(Exception):
    """Request could not be served; reported over the wire, never fatal."""


def _confine(workdir: Path, ref: str) -> Path:
    p = PurePath(ref)
    if p.is_absolute() or ".." in p.parts:
        raise BackendError(f"ref {ref!r} must be relative and stay inside the workdir")
    return workdir / p


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


@dataclass
class ProceduralBackend:
    """GPU-free deterministic backend implementing the rendering contract.

    ``corruption`` is the per-component class-swap probability;
    ``corrupt_index`` forces one candidate index per request to full
    corruption; ``noise`` is the labeller pixel-flip rate; ``seed`` keys
    the labeller noise stream.
    """

    workdir: Path
    seed: int = 0
    corruption: float = 0.0
    corrupt_index: int | None = None
    noise: float = 0.0
    jitter: int = contract.JITTER_AMPLITUDE

    def generate(self, label_ref: str, seed: int, n: int, out_prefix: str) -> list[str]:
        label_path = _confine(self.workdir, label_ref)
        try:
            grid = contract.decode_label_png(label_path.read_bytes())
        except (OSError, ValueError) as exc:
            raise BackendError(f"cannot read label {label_ref!r}: {exc}") from exc
        refs = []
        for i in range(n):
            rate = self.corruption
            if self.corrupt_index is not None and i == self.corrupt_index:
                rate = 1.0
            image, effective = contract.render_candidate(
                grid, contract.candidate_seed(seed, i), rate, self.jitter
            )
            ref = f"{out_prefix}{i:03d}.png"
            _write(_confine(self.workdir, ref), contract.encode_rgb_png(image))
            _write(
                _confine(self.workdir, contract.sidecar_ref(ref)),
                contract.encode_gray_png(effective),
            )
            refs.append(ref)
        return refs

    def label(self, image_ref: str, out_ref: str) -> str:
        sidecar = _confine(self.workdir, contract.sidecar_ref(image_ref))
        if not sidecar.exists():
            raise BackendError(f"missing sidecar for {image_ref!r}")
        grid = contract.decode_label_png(sidecar.read_bytes())
        noisy = contract.apply_label_noise(
            grid, contract.derive_seed(self.seed, "label", image_ref), self.noise
        )
        _write(_confine(self.workdir, out_ref), contract.encode_gray_png(noisy))
        return out_ref

    def depth(self, image_ref: str, out_ref: str) -> str:
        path = _confine(self.workdir, image_ref)
        try:
            image = contract.decode_rgb_png(path.read_bytes())
        except OSError as exc:
            raise BackendError(f"cannot read image {image_ref!r}: {exc}") from exc
        _write(_confine(self.workdir, out_ref), contract.encode_gray_png(contract.render_depth(image)))
        return out_ref


@dataclass
class AdapterBackend:
    """Template for wiring a real generator / segmenter / depth model.

    Subclass (or assign the three callables) and serve it with the same
    request loop. Signatures:

      generate_fn(label_path: Path, seed: int, n: int,
                  out_paths: list[Path]) -> None
          Render n images conditioned on the label map at ``label_path``
          and write them to ``out_paths`` (RGB PNG). Write a
          ``<image>.sidecar.png`` next to each image only if a
          sidecar-based labeller will consume it.

      label_fn(image_path: Path, out_path: Path) -> None
          Predict a semantic map for the image and write it to
          ``out_path`` as a single-channel PNG of canonical class ids
          (void 255).

      depth_fn(image_path: Path, out_path: Path) -> None
          Estimate depth and write it as a single-channel PNG.
    """

    workdir: Path
    generate_fn: object = None
    label_fn: object = None
    depth_fn: object = None

    def generate(self, label_ref: str, seed: int, n: int, out_prefix: str) -> list[str]:
        if self.generate_fn is None:
            raise BackendError("adapter backend has no generate_fn")
        refs = [f"{out_prefix}{i:03d}.png" for i in range(n)]
        out_paths = [_confine(self.workdir, ref) for ref in refs]
        for path in out_paths:
            path.parent.mkdir(parents=True, exist_ok=True)
        self.generate_fn(_confine(self.workdir, label_ref), seed, n, out_paths)
        missing = [ref for ref, path in zip(refs, out_paths) if not path.exists()]
        if missing:
            raise BackendError(f"adapter did not write {missing}")
        return refs

    def label(self, image_ref: str, out_ref: str) -> str:
        if self.label_fn is None:
            raise BackendError("adapter backend has no label_fn")
        out_path = _confine(self.workdir, out_ref)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self.label_fn(_confine(self.workdir, image_ref), out_path)
        if not out_path.exists():
            raise BackendError(f"adapter did not write {out_ref!r}")
        return out_ref

    def depth(self, image_ref: str, out_ref: str) -> str:
        if self.depth_fn is None:
            raise BackendError("adapter backend has no depth_fn")
        out_path = _confine(self.workdir, out_ref)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self.depth_fn(_confine(self.workdir, image_ref), out_path)
        if not out_path.exists():
            raise BackendError(f"adapter did not write {out_ref!r}")
        return out_ref
