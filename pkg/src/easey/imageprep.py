"""Dockerfile adaptation and the two-stage image build.

``transform_dockerfile`` rewrites a user Dockerfile for one target cluster:
the ``###includelocalmpi###`` marker line is replaced in place by the
profile's MPI purge-and-compile snippet, a ``RUN mkdir -p <mount>``
instruction for the data-folder mount point is appended after the user's
instructions (so user build steps cannot delete it), and the profile's
extra symlinks are rendered as RUN instructions.  All other lines pass
through byte-identical and in order, which gives the line-count law

    |out| = |in| - markers + markers * |snippet| + 1 + |symlinks|

and makes the transform idempotent (already-present additions are not
appended twice).

Building and packing go through the ``ImageBuilder`` / ``ArchivePacker``
interfaces.  The mock pair is fully deterministic (digest = SHA-256 of
the transformed file text, archive = reproducible tar of a synthetic
rootfs) so the pipeline is testable without a Docker daemon or the
Charliecloud tools; the ``docker`` / ``ch-builder2tar`` pair shells out
to the real binaries.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import os
import shutil
import subprocess
import tarfile
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .targets import LOCAL_MPI_MARKER, TargetProfile

DEFAULT_MOUNT_PATH = "/data"
ARCHIVE_SUFFIX = ".tar.gz"


class TransformError(Exception):
    """Dockerfile cannot be adapted for the target."""


class MultipleMarkers(TransformError):
    """More than one MPI marker line; injection would be ambiguous."""


class MarkerMisplaced(TransformError):
    """Marker text occurs somewhere other than its own logical line."""


class BuildFailed(Exception):
    def __init__(self, message: str, log: str = "") -> None:
        super().__init__(message)
        self.log = log


class BuilderUnavailable(Exception):
    """The requested builder backend cannot run on this host."""


class PackFailed(Exception):
    def __init__(self, message: str, log: str = "") -> None:
        super().__init__(message)
        self.log = log


class OutDirUnwritable(Exception):
    pass


class ChecksumMismatch(Exception):
    """Archive content does not match its recorded checksum."""


# --------------------------------------------------------------------------
# transformation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformedDockerfile:
    lines: tuple[str, ...]
    mount_path: str
    target: str

    @property
    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _marker_line_indices(lines: tuple[str, ...] | list[str]) -> list[int]:
    """Indices of marker lines; a marker only counts on its own logical line."""
    indices = []
    in_continuation = False
    for i, line in enumerate(lines):
        if not in_continuation and line.strip() == LOCAL_MPI_MARKER:
            indices.append(i)
        stripped = line.rstrip()
        in_continuation = stripped.endswith("\\") and not stripped.lstrip().startswith("#")
    return indices


def transform_dockerfile(src: str, profile: TargetProfile,
                         mount: str = DEFAULT_MOUNT_PATH) -> TransformedDockerfile:
    """Adapt Dockerfile text for ``profile``; see the module docstring."""
    if not src.strip():
        raise TransformError("dockerfile is empty")

    lines = src.splitlines()
    markers = _marker_line_indices(lines)
    if len(markers) > 1:
        raise MultipleMarkers(
            f"{len(markers)} marker lines found; exactly one {LOCAL_MPI_MARKER} is allowed")

    out: list[str] = []
    for i, line in enumerate(lines):
        if markers and i == markers[0]:
            out.extend(profile.mpi_snippet.lines)
        else:
            out.append(line)

    additions = [f"RUN mkdir -p {mount}"]
    additions.extend(f"RUN ln -sfn {target} {link}" for target, link in profile.extra_symlinks)
    existing = set(out)
    out.extend(line for line in additions if line not in existing)

    leftovers = [line for line in out if LOCAL_MPI_MARKER in line]
    if leftovers:
        raise MarkerMisplaced(
            f"marker text must occupy its own logical line; found inside {leftovers[0]!r}")

    return TransformedDockerfile(lines=tuple(out), mount_path=mount, target=profile.name)


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageRef:
    value: str
    image_name: str
    builder: str


class ImageBuilder(ABC):
    """Turns a transformed Dockerfile into an image reference."""

    name = "abstract"
    concurrent_safe = False

    @abstractmethod
    def build(self, df: TransformedDockerfile, image_name: str,
              context_dir: Path | None = None) -> ImageRef:
        ...


class ArchivePacker(ABC):
    """Packs a built image into a gzip tarball named <image_name>.tar.gz."""

    @abstractmethod
    def pack(self, image: ImageRef, out_dir: Path) -> Path:
        ...


class MockImageBuilder(ImageBuilder):
    """Deterministic stand-in: digest is the SHA-256 of the file text."""

    name = "mock"
    concurrent_safe = True

    def __init__(self, fail_on: str | None = None) -> None:
        self.fail_on = fail_on
        self._images: dict[str, TransformedDockerfile] = {}

    def build(self, df: TransformedDockerfile, image_name: str,
              context_dir: Path | None = None) -> ImageRef:
        log_lines = [f"step {i + 1}/{len(df.lines)}: {line}"
                     for i, line in enumerate(df.lines)]
        if self.fail_on is not None:
            for i, line in enumerate(df.lines):
                if self.fail_on in line:
                    log = "\n".join(log_lines[:i + 1] + [f"error: instruction failed: {line}"])
                    raise BuildFailed(f"mock build failed on {line!r}", log=log)
        digest = hashlib.sha256(df.text.encode("utf-8")).hexdigest()
        self._images[digest] = df
        return ImageRef(value=f"mock:{digest}", image_name=image_name, builder=self.name)

    def dockerfile_for(self, ref: ImageRef) -> TransformedDockerfile:
        digest = ref.value.removeprefix("mock:")
        if digest not in self._images:
            raise PackFailed(f"unknown mock image {ref.value}")
        return self._images[digest]


class MockArchivePacker(ArchivePacker):
    """Byte-reproducible tarball of a synthetic rootfs for a mock image."""

    def __init__(self, builder: MockImageBuilder) -> None:
        self._builder = builder

    def pack(self, image: ImageRef, out_dir: Path) -> Path:
        df = self._builder.dockerfile_for(image)
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutDirUnwritable(f"cannot create {out_dir}: {exc}") from exc
        if not os.access(out_dir, os.W_OK):
            raise OutDirUnwritable(f"output directory {out_dir} is not writable")

        root = image.image_name
        files = [
            (f"{root}/Dockerfile", df.text.encode("utf-8"), 0o644),
            (f"{root}/bin/sh", b"#!/bin/sh\nexit 0\n", 0o755),
            (f"{root}/.image-ref", (image.value + "\n").encode("utf-8"), 0o644),
        ]

        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w") as tar:
            for dirname in (root, f"{root}/bin"):
                info = tarfile.TarInfo(dirname)
                info.type = tarfile.DIRTYPE
                info.mode = 0o755
                info.mtime = 0
                tar.addfile(info)
            for name, payload, mode in files:
                info = tarfile.TarInfo(name)
                info.size = len(payload)
                info.mode = mode
                info.mtime = 0
                tar.addfile(info, io.BytesIO(payload))

        path = out_dir / f"{image.image_name}{ARCHIVE_SUFFIX}"
        try:
            with open(path, "wb") as fh:
                # mtime pinned so packing twice yields identical bytes
                with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                    gz.write(buf.getvalue())
        except OSError as exc:
            raise OutDirUnwritable(f"cannot write {path}: {exc}") from exc
        return path


class DockerCliBuilder(ImageBuilder):
    """Shells out to the local docker daemon."""

    name = "docker"
    concurrent_safe = False

    def __init__(self, runner=subprocess.run) -> None:
        self._run = runner

    def build(self, df: TransformedDockerfile, image_name: str,
              context_dir: Path | None = None) -> ImageRef:
        if shutil.which("docker") is None:
            raise BuilderUnavailable("docker binary not found on PATH")
        context = Path(context_dir) if context_dir else Path(tempfile.mkdtemp(prefix="easey-ctx-"))
        context.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("w", dir=context, suffix=".dockerfile",
                                         delete=False) as fh:
            fh.write(df.text)
            dockerfile_path = fh.name
        try:
            proc = self._run(
                ["docker", "build", "-t", image_name, "-f", dockerfile_path, str(context)],
                capture_output=True, text=True)
        finally:
            os.unlink(dockerfile_path)
        if proc.returncode != 0:
            raise BuildFailed(f"docker build exited {proc.returncode}",
                              log=proc.stdout + proc.stderr)
        return ImageRef(value=f"docker:{image_name}", image_name=image_name, builder=self.name)


class Builder2TarPacker(ArchivePacker):
    """Runs ``ch-builder2tar <image> <out_dir>`` to produce the archive."""

    def __init__(self, runner=subprocess.run) -> None:
        self._run = runner

    def pack(self, image: ImageRef, out_dir: Path) -> Path:
        if shutil.which("ch-builder2tar") is None:
            raise PackFailed("ch-builder2tar binary not found on PATH")
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutDirUnwritable(f"cannot create {out_dir}: {exc}") from exc
        if not os.access(out_dir, os.W_OK):
            raise OutDirUnwritable(f"output directory {out_dir} is not writable")
        proc = self._run(["ch-builder2tar", image.image_name, str(out_dir)],
                         capture_output=True, text=True)
        if proc.returncode != 0:
            raise PackFailed(f"ch-builder2tar exited {proc.returncode}",
                             log=proc.stdout + proc.stderr)
        path = out_dir / f"{image.image_name}{ARCHIVE_SUFFIX}"
        if not path.exists():
            raise PackFailed(f"expected archive {path} was not produced")
        return path


# --------------------------------------------------------------------------
# archive records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ContainerArchive:
    path: Path
    image_name: str
    checksum: str
    created_at: datetime

    def verify(self) -> bool:
        return file_sha256(self.path) == self.checksum


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_image(df: TransformedDockerfile, builder: ImageBuilder,
                image_name: str | None = None,
                context_dir: Path | None = None) -> ImageRef:
    if image_name is None:
        image_name = default_image_name(df.target)
    return builder.build(df, image_name, context_dir)


def default_image_name(target: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "-" for c in target.lower())


def pack_container(image: ImageRef, out_dir: Path, packer: ArchivePacker) -> ContainerArchive:
    """Pack ``image`` under ``out_dir`` and record its checksum.

    A ``<archive>.sha256`` sidecar in ``sha256sum -c`` format is written
    next to the tarball so later invocations can detect corruption.
    """
    path = packer.pack(image, Path(out_dir))
    checksum = file_sha256(path)
    sidecar = path.with_name(path.name + ".sha256")
    sidecar.write_text(f"{checksum}  {path.name}\n", encoding="utf-8")
    created = datetime.fromtimestamp(path.stat().st_mtime, tz=timezone.utc)
    return ContainerArchive(path=path, image_name=image.image_name,
                            checksum=checksum, created_at=created)


def load_archive(path: str | Path) -> ContainerArchive:
    """Recover an archive record from disk, honoring the checksum sidecar.

    Raises :class:`ChecksumMismatch` when a sidecar exists and the file
    content no longer matches it.
    """
    path = Path(path)
    if not path.name.endswith(ARCHIVE_SUFFIX):
        raise ValueError(f"archive path must end in {ARCHIVE_SUFFIX}: {path}")
    if not path.is_file():
        raise FileNotFoundError(path)
    checksum = file_sha256(path)
    sidecar = path.with_name(path.name + ".sha256")
    if sidecar.is_file():
        recorded = sidecar.read_text(encoding="utf-8").split()[0]
        if recorded != checksum:
            raise ChecksumMismatch(
                f"{path} checksum {checksum[:12]}… does not match recorded {recorded[:12]}…")
    image_name = path.name.removesuffix(ARCHIVE_SUFFIX)
    created = datetime.fromtimestamp(path.stat().st_mtime, tz=timezone.utc)
    return ContainerArchive(path=path, image_name=image_name,
                            checksum=checksum, created_at=created)
