"""Data stage-in and stage-out over https, scp, and ftp.

Stage-in plans one sequential transfer per configured input, in document
order, into the job's ``data`` folder; the folder itself is created exactly
when the configuration names at least one input or output.  Stage-out runs
after the job finished and pushes files the job left in the data folder
(referenced by the basename of each output destination) to their targets;
a missing file yields a failed result for that entry while the remaining
entries are still attempted.

Local file names are derived from the endpoint location: URL and scp-style
locations contribute their last path segment, plain relative paths keep
their structure below the data folder (so ``sub/file`` stages to
``data/sub/file`` while ``../x`` is rejected as an escape).

Failed transfers are retried (default: 3 retries after the first attempt,
sleeping 1 s / 2 s / 4 s) except for unsupported protocols and credential
rejections, which are permanent.  gridftp endpoints parse but cannot be
transferred yet.
"""

from __future__ import annotations

import ftplib
import logging
import posixpath
import shutil
import subprocess
import time
import urllib.error
import urllib.parse
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from .config import DataSpec, TransferEndpoint

logger = logging.getLogger(__name__)

DATA_DIR_NAME = "data"
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 1.0  # seconds; doubles per retry: 1, 2, 4


class PathEscape(Exception):
    """A computed local path would leave the job data folder."""


class TransferError(Exception):
    """Base for transfer failures; carries the failed :class:`TransferResult`."""

    def __init__(self, message: str, result: "TransferResult | None" = None) -> None:
        super().__init__(message)
        self.result = result


class ProtocolUnsupported(TransferError):
    pass


class AuthFailed(TransferError):
    pass


class TransferFailed(TransferError):
    pass


@dataclass(frozen=True)
class TransferTask:
    direction: str  # "in" | "out"
    endpoint: TransferEndpoint
    local_path: Path
    order_index: int


@dataclass(frozen=True)
class TransferResult:
    task: TransferTask
    bytes: int
    duration: float
    status: str  # "ok" | "failed"
    detail: str = ""


@dataclass(frozen=True)
class CredentialStore:
    """Maps config ``auth`` references to key files.

    An empty reference resolves to the default key (e.g. from EASEY_KEY);
    relative references resolve against ``base_dir`` when given.
    """

    default_key: Path | None = None
    base_dir: Path | None = None

    def resolve(self, auth_ref: str) -> Path | None:
        if not auth_ref:
            return self.default_key
        path = Path(auth_ref).expanduser()
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path


# --------------------------------------------------------------------------
# planning
# --------------------------------------------------------------------------

def _split_location(location: str) -> tuple[str, str]:
    """Return (kind, path) where kind is url | remote | path."""
    if "://" in location:
        return "url", urllib.parse.urlsplit(location).path
    if ":" in location:
        return "remote", location.split(":", 1)[1]
    return "path", location


def staged_name(location: str) -> str:
    """Local name (possibly with subdirectories) for an endpoint location."""
    kind, path = _split_location(location)
    if kind == "path" and not path.startswith("/"):
        name = posixpath.normpath(path)
    else:
        name = posixpath.basename(path)
    if not name or name == ".":
        raise ValueError(f"cannot derive a file name from location {location!r}")
    return name


def data_folder(job_workdir: str | Path) -> Path:
    return Path(job_workdir) / DATA_DIR_NAME


def plan_stage_in(data: DataSpec | None, job_workdir: str | Path) -> list[TransferTask]:
    """Create the data folder when needed and plan input transfers in order.

    No configuration data, or a data section with neither inputs nor
    outputs, yields an empty plan and no folder.
    """
    if data is None:
        return []
    folder = data_folder(job_workdir)
    if data.input or data.output:
        folder.mkdir(parents=True, exist_ok=True)
    tasks: list[TransferTask] = []
    for index, endpoint in enumerate(data.input):
        name = staged_name(endpoint.location)
        local = folder / name
        resolved = (folder / name).resolve()
        if not resolved.is_relative_to(folder.resolve()):
            raise PathEscape(
                f"input {endpoint.location!r} would stage outside the data folder")
        tasks.append(TransferTask(direction="in", endpoint=endpoint,
                                  local_path=local, order_index=index))
    return tasks


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------

class TransferBackend(ABC):
    @abstractmethod
    def fetch(self, endpoint: TransferEndpoint, dest: Path,
              creds: CredentialStore) -> int:
        """Download to ``dest``; returns bytes written."""

    @abstractmethod
    def push(self, src: Path, endpoint: TransferEndpoint,
             creds: CredentialStore) -> int:
        """Upload ``src``; returns bytes sent."""


class HttpsBackend(TransferBackend):
    """GET for stage-in, PUT for stage-out; follows the URL's scheme."""

    def __init__(self, timeout: float = 30.0) -> None:
        self.timeout = timeout

    def fetch(self, endpoint, dest, creds):
        try:
            with urllib.request.urlopen(endpoint.location, timeout=self.timeout) as resp:
                dest.parent.mkdir(parents=True, exist_ok=True)
                with open(dest, "wb") as fh:
                    shutil.copyfileobj(resp, fh)
        except urllib.error.HTTPError as exc:
            self._raise_http(exc)
        except urllib.error.URLError as exc:
            raise TransferFailed(f"request failed: {exc.reason}")
        return dest.stat().st_size

    def push(self, src, endpoint, creds):
        body = src.read_bytes()
        request = urllib.request.Request(endpoint.location, data=body, method="PUT")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                if not 200 <= resp.status < 300:
                    raise TransferFailed(f"upload rejected with status {resp.status}")
        except urllib.error.HTTPError as exc:
            self._raise_http(exc)
        except urllib.error.URLError as exc:
            raise TransferFailed(f"request failed: {exc.reason}")
        return len(body)

    @staticmethod
    def _raise_http(exc: urllib.error.HTTPError) -> None:
        if exc.code in (401, 403):
            raise AuthFailed(f"rejected with status {exc.code}")
        raise TransferFailed(f"failed with status {exc.code}")


class ScpBackend(TransferBackend):
    """Key-based scp through the local ssh tooling."""

    def __init__(self, runner: Callable = subprocess.run) -> None:
        self._run = runner

    def _remote_spec(self, endpoint: TransferEndpoint) -> str:
        location = endpoint.location
        if location.startswith("scp://"):
            parts = urllib.parse.urlsplit(location)
            location = f"{parts.netloc}:{parts.path.lstrip('/')}"
        if endpoint.user and "@" not in location.split(":", 1)[0]:
            location = f"{endpoint.user}@{location}"
        return location

    def _command(self, src: str, dst: str, key: Path | None) -> list[str]:
        cmd = ["scp", "-B", "-q", "-o", "BatchMode=yes"]
        if key is not None:
            cmd += ["-i", str(key)]
        return cmd + [src, dst]

    def _execute(self, cmd: list[str]) -> None:
        proc = self._run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            stderr = (proc.stderr or "").strip()
            lowered = stderr.lower()
            if "permission denied" in lowered or "authentication" in lowered:
                raise AuthFailed(f"scp rejected credentials: {stderr}")
            raise TransferFailed(f"scp exited {proc.returncode}: {stderr}")

    def _key(self, endpoint: TransferEndpoint, creds: CredentialStore) -> Path | None:
        key = creds.resolve(endpoint.auth)
        if endpoint.auth and key is not None and not key.is_file():
            raise AuthFailed(f"key file {key} not found")
        return key

    def fetch(self, endpoint, dest, creds):
        dest.parent.mkdir(parents=True, exist_ok=True)
        self._execute(self._command(self._remote_spec(endpoint), str(dest),
                                    self._key(endpoint, creds)))
        return dest.stat().st_size

    def push(self, src, endpoint, creds):
        self._execute(self._command(str(src), self._remote_spec(endpoint),
                                    self._key(endpoint, creds)))
        return src.stat().st_size


class FtpBackend(TransferBackend):
    def __init__(self, ftp_factory: Callable = ftplib.FTP, timeout: float = 30.0) -> None:
        self._factory = ftp_factory
        self.timeout = timeout

    @staticmethod
    def _host_and_path(location: str) -> tuple[str, str]:
        if location.startswith("ftp://"):
            parts = urllib.parse.urlsplit(location)
            return parts.netloc, parts.path.lstrip("/")
        host, _, path = location.partition("/")
        return host, path

    def _session(self, endpoint: TransferEndpoint) -> ftplib.FTP:
        host, _ = self._host_and_path(endpoint.location)
        try:
            ftp = self._factory(host, timeout=self.timeout)
            ftp.login(endpoint.user or "anonymous", "")
        except ftplib.error_perm as exc:
            raise AuthFailed(f"ftp login rejected: {exc}")
        except OSError as exc:
            raise TransferFailed(f"ftp connection failed: {exc}")
        return ftp

    def fetch(self, endpoint, dest, creds):
        _, path = self._host_and_path(endpoint.location)
        ftp = self._session(endpoint)
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            with open(dest, "wb") as fh:
                ftp.retrbinary(f"RETR {path}", fh.write)
        except ftplib.all_errors as exc:
            raise TransferFailed(f"ftp RETR failed: {exc}")
        finally:
            ftp.close()
        return dest.stat().st_size

    def push(self, src, endpoint, creds):
        _, path = self._host_and_path(endpoint.location)
        ftp = self._session(endpoint)
        try:
            with open(src, "rb") as fh:
                ftp.storbinary(f"STOR {path}", fh)
        except ftplib.all_errors as exc:
            raise TransferFailed(f"ftp STOR failed: {exc}")
        finally:
            ftp.close()
        return src.stat().st_size


class LoopbackBackend(TransferBackend):
    """Resolves scp-style locations against a local root; used by the simulator."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def _resolve(self, location: str) -> Path:
        _, path = _split_location(location)
        resolved = (self.root / path.lstrip("/")).resolve()
        if not resolved.is_relative_to(self.root.resolve()):
            raise TransferFailed(f"location {location!r} escapes the loopback root")
        return resolved

    def fetch(self, endpoint, dest, creds):
        src = self._resolve(endpoint.location)
        if not src.is_file():
            raise TransferFailed(f"no such file: {endpoint.location}")
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dest)
        return dest.stat().st_size

    def push(self, src, endpoint, creds):
        dest = self._resolve(endpoint.location)
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dest)
        return src.stat().st_size


def default_backends() -> dict[str, TransferBackend]:
    return {"https": HttpsBackend(), "scp": ScpBackend(), "ftp": FtpBackend()}


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------

@dataclass
class TransferExecutor:
    """Runs transfer tasks with retry and reports results.

    ``sleep`` is injectable so tests can observe backoff without waiting.
    """

    backends: Mapping[str, TransferBackend] = field(default_factory=default_backends)
    credentials: CredentialStore = field(default_factory=CredentialStore)
    retries: int = DEFAULT_RETRIES
    backoff: float = DEFAULT_BACKOFF
    sleep: Callable[[float], None] = time.sleep
    clock: Callable[[], float] = time.monotonic

    def execute(self, task: TransferTask) -> TransferResult:
        """Run one transfer; returns the ok result or raises a
        :class:`TransferError` carrying the failed result."""
        protocol = task.endpoint.protocol
        started = self.clock()

        def failed(detail: str) -> TransferResult:
            return TransferResult(task=task, bytes=0, duration=self.clock() - started,
                                  status="failed", detail=detail)

        backend = self.backends.get(protocol)
        if backend is None:
            detail = f"protocol {protocol!r} is not supported"
            if protocol == "gridftp":
                detail = "gridftp transfers are not implemented yet"
            raise ProtocolUnsupported(detail, result=failed(detail))

        attempt = 0
        while True:
            try:
                if task.direction == "in":
                    nbytes = backend.fetch(task.endpoint, task.local_path, self.credentials)
                else:
                    nbytes = backend.push(task.local_path, task.endpoint, self.credentials)
                return TransferResult(task=task, bytes=nbytes,
                                      duration=self.clock() - started, status="ok")
            except AuthFailed as exc:
                raise AuthFailed(str(exc), result=failed(str(exc))) from exc
            except TransferFailed as exc:
                if attempt >= self.retries:
                    detail = f"{exc} (after {attempt + 1} attempts)"
                    raise TransferFailed(detail, result=failed(detail)) from exc
                delay = self.backoff * (2 ** attempt)
                logger.debug("transfer %s attempt %d failed (%s); retrying in %.1fs",
                             task.endpoint.location, attempt + 1, exc, delay)
                self.sleep(delay)
                attempt += 1

    def stage_out(self, data: DataSpec, job_workdir: str | Path) -> list[TransferResult]:
        """Push each configured output from the data folder to its destination.

        Never raises: per-entry failures (including a missing file) are
        reported in the returned results while later entries still run.
        """
        folder = data_folder(job_workdir)
        results: list[TransferResult] = []
        for index, endpoint in enumerate(data.output):
            local = folder / staged_name(endpoint.location)
            task = TransferTask(direction="out", endpoint=endpoint,
                                local_path=local, order_index=index)
            if not local.is_file():
                results.append(TransferResult(
                    task=task, bytes=0, duration=0.0, status="failed",
                    detail="output file not found in data folder"))
                continue
            try:
                results.append(self.execute(task))
            except TransferError as exc:
                results.append(exc.result if exc.result is not None else TransferResult(
                    task=task, bytes=0, duration=0.0, status="failed", detail=str(exc)))
        return results


def execute_transfer(task: TransferTask, executor: TransferExecutor) -> TransferResult:
    return executor.execute(task)


def stage_out(data: DataSpec, job_workdir: str | Path,
              executor: TransferExecutor) -> list[TransferResult]:
    return executor.stage_out(data, job_workdir)
