"""Job lifecycle: submission workflow, status polling, stage-out, persistence.

Submission executes, strictly in order: move the container archive to
cluster storage, extract it into the job workdir (the execution
environment), create the data folder when the configuration names data,
run the input transfers sequentially, render and place the batch script,
and hand it to the scheduler.  Each completed step is timestamped and the
record persisted, so a restart at any persisted point reloads the exact
state-machine position.  Any step failure marks the record failed with the
failing step and stops; no later step runs.

States move along

    created -> staging -> submitted -> pending -> running -> finished
                                 (any pre-terminal state) -> failed

and every transition is checked; ``poll_status`` walks intermediate states
when the scheduler skipped past one between polls.

Records live as one JSON document per job in a state directory, written
with an atomic rename.  A truncated or otherwise unreadable record raises
:class:`StoreCorrupt` instead of guessing.
"""

from __future__ import annotations

import json
import logging
import os
import posixpath
import shlex
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable

from . import cluster
from .batchgen import (BatchContext, EmptyExecution, SCRIPT_NAME, UnsupportedScheduler,
                       render_batch)
from .config import (EaseyConfig, TransferEndpoint, assign_job_id, from_document,
                     to_document, validate)
from .imageprep import ContainerArchive
from .staging import (CredentialStore, PathEscape, TransferError, TransferExecutor,
                      TransferResult, TransferTask, plan_stage_in, staged_name)

logger = logging.getLogger(__name__)

LOG_TAIL_CHARS = 2000


class JobState(str, Enum):
    created = "created"
    staging = "staging"
    submitted = "submitted"
    pending = "pending"
    running = "running"
    finished = "finished"
    failed = "failed"


TERMINAL_STATES = frozenset({JobState.finished, JobState.failed})

LEGAL_TRANSITIONS: dict[JobState, frozenset[JobState]] = {
    JobState.created: frozenset({JobState.staging, JobState.failed}),
    JobState.staging: frozenset({JobState.submitted, JobState.failed}),
    JobState.submitted: frozenset({JobState.pending, JobState.failed}),
    JobState.pending: frozenset({JobState.running, JobState.failed}),
    JobState.running: frozenset({JobState.finished, JobState.failed}),
    JobState.finished: frozenset(),
    JobState.failed: frozenset(),
}

_FORWARD_PATH = (JobState.created, JobState.staging, JobState.submitted,
                 JobState.pending, JobState.running, JobState.finished)


class EngineError(Exception):
    """Submission-step failure; carries the failed record and step logs."""

    def __init__(self, message: str, record: "JobRecord | None" = None,
                 step: str = "", log: str = "") -> None:
        super().__init__(message)
        self.record = record
        self.step = step
        self.log = log


class StagingFailed(EngineError):
    pass


class ExtractFailed(EngineError):
    pass


class SubmitFailed(EngineError):
    pass


class UnknownJob(Exception):
    pass


class NotTerminal(Exception):
    pass


class StoreCorrupt(Exception):
    pass


class IllegalTransition(Exception):
    pass


@dataclass
class StepEvent:
    name: str
    at: str
    mono_ns: int


@dataclass
class JobRecord:
    id: str
    config: EaseyConfig
    target: str
    workdir: str
    state: JobState = JobState.created
    archive: ContainerArchive | None = None
    scheduler_job_id: str | None = None
    submitted_at: str | None = None
    finished_at: str | None = None
    staging_ledger: list[TransferResult] = field(default_factory=list)
    log_refs: tuple[str, str] = ("", "")
    state_history: list[tuple[str, str]] = field(default_factory=list)
    step_events: list[StepEvent] = field(default_factory=list)
    failed_step: str | None = None
    stale: bool = False

    def __post_init__(self) -> None:
        if not self.state_history:
            self.state_history.append((self.state.value, _now_iso()))

    def advance(self, new_state: JobState, at: str | None = None) -> None:
        if new_state not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.state = new_state
        self.state_history.append((new_state.value, at or _now_iso()))

    def advance_to(self, target: JobState, at: str | None = None) -> None:
        """Advance along the forward path, inserting skipped states."""
        if target == self.state:
            return
        if target == JobState.failed:
            self.advance(JobState.failed, at)
            return
        if self.state in TERMINAL_STATES:
            raise IllegalTransition(f"{self.state.value} -> {target.value}")
        current = _FORWARD_PATH.index(self.state)
        goal = _FORWARD_PATH.index(target)
        if goal <= current:
            raise IllegalTransition(f"{self.state.value} -> {target.value}")
        for state in _FORWARD_PATH[current + 1:goal + 1]:
            self.advance(state, at)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target": self.target,
            "workdir": self.workdir,
            "state": self.state.value,
            "config": to_document(self.config),
            "archive": None if self.archive is None else {
                "path": str(self.archive.path),
                "image_name": self.archive.image_name,
                "checksum": self.archive.checksum,
                "created_at": self.archive.created_at.isoformat(),
            },
            "scheduler_job_id": self.scheduler_job_id,
            "submitted_at": self.submitted_at,
            "finished_at": self.finished_at,
            "staging_ledger": [_result_to_dict(r) for r in self.staging_ledger],
            "log_refs": list(self.log_refs),
            "state_history": [list(entry) for entry in self.state_history],
            "step_events": [{"name": e.name, "at": e.at, "mono_ns": e.mono_ns}
                            for e in self.step_events],
            "failed_step": self.failed_step,
            "stale": self.stale,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "JobRecord":
        archive = None
        if payload["archive"] is not None:
            a = payload["archive"]
            archive = ContainerArchive(
                path=Path(a["path"]), image_name=a["image_name"],
                checksum=a["checksum"],
                created_at=datetime.fromisoformat(a["created_at"]))
        record = cls(
            id=payload["id"],
            config=from_document(payload["config"]),
            target=payload["target"],
            workdir=payload["workdir"],
            state=JobState(payload["state"]),
            archive=archive,
            scheduler_job_id=payload["scheduler_job_id"],
            submitted_at=payload["submitted_at"],
            finished_at=payload["finished_at"],
            staging_ledger=[_result_from_dict(r) for r in payload["staging_ledger"]],
            log_refs=tuple(payload["log_refs"]),
            state_history=[tuple(entry) for entry in payload["state_history"]],
            step_events=[StepEvent(**e) for e in payload["step_events"]],
            failed_step=payload["failed_step"],
            stale=payload["stale"],
        )
        return record


def _result_to_dict(result: TransferResult) -> dict:
    return {
        "direction": result.task.direction,
        "location": result.task.endpoint.location,
        "protocol": result.task.endpoint.protocol,
        "user": result.task.endpoint.user,
        "auth": result.task.endpoint.auth,
        "local_path": str(result.task.local_path),
        "order_index": result.task.order_index,
        "bytes": result.bytes,
        "duration": result.duration,
        "status": result.status,
        "detail": result.detail,
    }


def _result_from_dict(payload: dict) -> TransferResult:
    task = TransferTask(
        direction=payload["direction"],
        endpoint=TransferEndpoint(location=payload["location"], protocol=payload["protocol"],
                                  user=payload["user"], auth=payload["auth"]),
        local_path=Path(payload["local_path"]),
        order_index=payload["order_index"],
    )
    return TransferResult(task=task, bytes=payload["bytes"], duration=payload["duration"],
                          status=payload["status"], detail=payload["detail"])


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _tail(text: str, limit: int = LOG_TAIL_CHARS) -> str:
    return text[-limit:]


# --------------------------------------------------------------------------
# store
# --------------------------------------------------------------------------

class JobStore:
    """One JSON document per job; atomic rename on write."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @property
    def logs_dir(self) -> Path:
        return self.directory / "logs"

    def _path(self, job_id: str) -> Path:
        return self.directory / f"{job_id}.json"

    def exists(self, job_id: str) -> bool:
        return self._path(job_id).exists()

    def save(self, record: JobRecord) -> None:
        with self._lock:
            path = self._path(record.id)
            tmp = path.with_name(f".{record.id}.tmp")
            tmp.write_text(json.dumps(record.to_dict(), indent=1), encoding="utf-8")
            os.replace(tmp, path)

    def load(self, job_id: str) -> JobRecord:
        path = self._path(job_id)
        if not path.exists():
            raise UnknownJob(f"no job {job_id!r} in {self.directory}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            return JobRecord.from_dict(payload)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise StoreCorrupt(f"record {path} is unreadable: {exc}") from exc

    def load_all(self) -> list[JobRecord]:
        records = []
        for path in sorted(self.directory.glob("*.json")):
            records.append(self.load(path.stem))
        return records


# --------------------------------------------------------------------------
# engine
# --------------------------------------------------------------------------

class JobEngine:
    """Owns the persistent job set and drives the submission workflow."""

    def __init__(self, store: JobStore, credentials: CredentialStore | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], datetime] | None = None) -> None:
        self.store = store
        self.credentials = credentials or CredentialStore()
        self._sleep = sleep
        self._clock = clock or (lambda: datetime.now(timezone.utc))

    def _now_iso(self) -> str:
        return self._clock().isoformat(timespec="microseconds")

    def _executor(self, session: cluster.ClusterSession,
                  credentials: CredentialStore | None = None) -> TransferExecutor:
        return TransferExecutor(backends=session.transfer_backends(),
                                credentials=credentials or self.credentials,
                                sleep=self._sleep)

    # -- submission ----------------------------------------------------------

    def submit(self, cfg: EaseyConfig, archive: ContainerArchive,
               session: cluster.ClusterSession) -> JobRecord:
        report = validate(cfg)
        if not report.ok:
            raise SubmitFailed("configuration is not submittable: "
                               + ", ".join(sorted(report.codes())))

        profile = session.profile
        job_id = str(assign_job_id(cfg, self._now_iso()))
        if self.store.exists(job_id):
            raise SubmitFailed(f"job {job_id} already exists in the store")

        workdir = posixpath.join(profile.workdir_root, job_id)
        self.store.logs_dir.mkdir(parents=True, exist_ok=True)
        record = JobRecord(
            id=job_id, config=cfg, target=profile.name, workdir=workdir,
            archive=archive,
            log_refs=(str(self.store.logs_dir / f"{job_id}.out"),
                      str(self.store.logs_dir / f"{job_id}.err")))
        self.store.save(record)

        def complete(step: str) -> None:
            record.step_events.append(StepEvent(step, self._now_iso(),
                                                time.perf_counter_ns()))
            self.store.save(record)

        def fail(step: str, exc_cls: type[EngineError], message: str, log: str = ""):
            record.failed_step = step
            if record.state not in TERMINAL_STATES:
                record.advance(JobState.failed, self._now_iso())
            self.store.save(record)
            logger.error("job %s failed at %s: %s", job_id, step, message)
            raise exc_cls(message, record=record, step=step, log=log)

        record.advance(JobState.staging, self._now_iso())
        self.store.save(record)

        # 1. move the archive to cluster storage
        if not archive.verify():
            fail("archive_move", SubmitFailed, "archive checksum mismatch")
        archive_remote = posixpath.join(workdir, archive.path.name)
        try:
            rc, _, err = session.exec(f"mkdir -p {shlex.quote(workdir)}")
            if rc != 0:
                fail("archive_move", StagingFailed, f"mkdir failed: {err.strip()}", log=err)
            session.put(archive.path, archive_remote)
        except (cluster.SessionLost, cluster.TransportError, TransferError) as exc:
            fail("archive_move", StagingFailed, f"archive move failed: {exc}")
        complete("archive_move")

        # 2. extract into the execution environment
        rc, out, err = session.exec(
            f"tar -xzf {shlex.quote(archive_remote)} -C {shlex.quote(workdir)}")
        if rc != 0:
            fail("extract", ExtractFailed, f"archive extraction exited {rc}", log=err)
        complete("extract")

        # 3. + 4. data folder and sequential input transfers
        is_local = session.local_root is not None
        local_workdir = session.resolve(workdir) if is_local \
            else Path(tempfile.mkdtemp(prefix="easey-stagein-"))
        try:
            tasks = plan_stage_in(cfg.data, local_workdir)
        except (PathEscape, ValueError) as exc:
            fail("stage_in", StagingFailed, str(exc))
        executor = self._executor(session)
        for task in tasks:
            try:
                record.staging_ledger.append(executor.execute(task))
                self.store.save(record)
            except TransferError as exc:
                if exc.result is not None:
                    record.staging_ledger.append(exc.result)
                fail("stage_in", StagingFailed,
                     f"input transfer {task.endpoint.location!r} failed: {exc}")
        if not is_local and cfg.data is not None and (cfg.data.input or cfg.data.output):
            remote_data = posixpath.join(workdir, "data")
            rc, _, err = session.exec(f"mkdir -p {shlex.quote(remote_data)}")
            if rc != 0:
                fail("stage_in", StagingFailed, f"data folder creation failed: {err.strip()}")
            for task in tasks:
                relative = task.local_path.relative_to(local_workdir / "data")
                try:
                    session.put(task.local_path, posixpath.join(remote_data, str(relative)))
                except (cluster.SessionLost, cluster.TransportError, TransferError) as exc:
                    fail("stage_in", StagingFailed, f"upload to cluster failed: {exc}")
        complete("stage_in")

        # 5. render the batch script and place it in the workdir
        try:
            script = render_batch(cfg, profile, BatchContext(job_id=job_id, workdir=workdir))
        except (EmptyExecution, UnsupportedScheduler) as exc:
            fail("render_batch", SubmitFailed, str(exc))
        with tempfile.NamedTemporaryFile("w", suffix=".sh", delete=False) as fh:
            fh.write(script.full_text)
            local_script = Path(fh.name)
        try:
            session.put(local_script, posixpath.join(workdir, SCRIPT_NAME))
        except (cluster.SessionLost, cluster.TransportError, TransferError) as exc:
            fail("render_batch", SubmitFailed, f"could not place batch script: {exc}")
        finally:
            local_script.unlink(missing_ok=True)
        complete("render_batch")

        # 6. + 7. submit and record the scheduler id
        try:
            scheduler_job_id = session.submit_batch(script.full_text, workdir)
        except (cluster.ScriptRejected, cluster.SessionLost, cluster.TransportError,
                TransferError) as exc:
            fail("submit", SubmitFailed, f"scheduler rejected the job: {exc}")
        record.scheduler_job_id = scheduler_job_id
        record.advance(JobState.submitted, self._now_iso())
        record.advance(JobState.pending, self._now_iso())
        record.submitted_at = self._now_iso()
        complete("submit")
        logger.info("job %s submitted as scheduler job %s", job_id, scheduler_job_id)
        return record

    # -- status --------------------------------------------------------------

    def poll_status(self, job_id: str,
                    session: cluster.ClusterSession) -> tuple[JobState, str, str]:
        record = self.store.load(job_id)
        if record.state in TERMINAL_STATES:
            return record.state, self._read_log(record, 0), self._read_log(record, 1)
        if not record.scheduler_job_id:
            return record.state, "", ""
        try:
            state_str, stdout, stderr = session.poll(record.scheduler_job_id, record.workdir)
        except cluster.SessionLost:
            record.stale = True
            self.store.save(record)
            raise
        record.stale = False
        record.advance_to(JobState(state_str), self._now_iso())
        if record.state in TERMINAL_STATES and record.finished_at is None:
            record.finished_at = self._now_iso()
        self._write_log(record, 0, stdout)
        self._write_log(record, 1, stderr)
        self.store.save(record)
        return record.state, _tail(stdout), _tail(stderr)

    def _write_log(self, record: JobRecord, stream: int, text: str) -> None:
        ref = record.log_refs[stream]
        if ref:
            path = Path(ref)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")

    def _read_log(self, record: JobRecord, stream: int) -> str:
        ref = record.log_refs[stream]
        if ref and Path(ref).is_file():
            return _tail(Path(ref).read_text(encoding="utf-8"))
        return ""

    # -- completion ----------------------------------------------------------

    def finalize(self, job_id: str, session: cluster.ClusterSession,
                 credentials: CredentialStore | None = None) -> list[TransferResult]:
        record = self.store.load(job_id)
        if record.state not in TERMINAL_STATES:
            raise NotTerminal(f"job {job_id} is {record.state.value}, not terminal")
        results: list[TransferResult] = []
        data = record.config.data
        if record.state is JobState.finished and data is not None and data.output:
            if session.local_root is not None:
                local_workdir = session.resolve(record.workdir)
            else:
                local_workdir = Path(tempfile.mkdtemp(prefix="easey-stageout-"))
                folder = local_workdir / "data"
                folder.mkdir(parents=True, exist_ok=True)
                for endpoint in data.output:
                    name = staged_name(endpoint.location)
                    try:
                        session.get(posixpath.join(record.workdir, "data", name),
                                    folder / name)
                    except (cluster.TransportError, OSError):
                        pass  # absent file is reported by stage_out
            executor = self._executor(session, credentials)
            results = executor.stage_out(data, local_workdir)
        record.staging_ledger.extend(results)
        if record.finished_at is None:
            record.finished_at = self._now_iso()
        self.store.save(record)
        return results
