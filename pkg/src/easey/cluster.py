"""Cluster transport plus a deterministic in-process scheduler simulator.

A :class:`ClusterSession` gives the submission pipeline everything it needs
on the submission host: run a command, move files in and out, hand a batch
script to the scheduler, and poll a job's state.  Two implementations ship:

* :class:`SimSession` — backed by :class:`BatchSimulator`, an explicit-tick,
  clock-free scheduler that lives in a local directory.  Jobs advance one
  state per tick (pending → running → scripted terminal) and emit scripted
  output chunks, so end-to-end runs are fast and reproducible.  Simulator
  state persists to ``scheduler.json`` under the session root, which lets
  separate CLI invocations see the same jobs.
* :class:`SshClusterSession` — key-authenticated ssh/scp to a real
  submission node, submitting via ``sbatch``/``qsub`` and polling via
  ``squeue``/``qstat`` (field mapping documented in docs/schedulers.md).
"""

from __future__ import annotations

import json
import re
import shutil
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import staging
from .staging import AuthFailed
from .targets import TargetProfile, builtin_profiles

SIM_STATE_FILE = "scheduler.json"
SIM_PROFILE_NAME = "test:sim"


class SessionLost(Exception):
    """The session is closed or the transport dropped."""


class TransportError(Exception):
    """A put/get or remote filesystem operation failed."""


class ScriptRejected(Exception):
    """The scheduler refused the batch script (e.g. missing directive)."""


class UnknownScheduledJob(Exception):
    """The scheduler has no job under the given id."""


class ClusterSession(ABC):
    """One authenticated channel to a submission host."""

    capabilities = frozenset({"exec", "put", "get"})
    profile: TargetProfile
    local_root: Path | None = None

    @property
    def scheduler(self) -> str:
        return self.profile.scheduler

    @abstractmethod
    def exec(self, command: str) -> tuple[int, str, str]:
        """Run ``command`` on the submission host; returns (rc, stdout, stderr)."""

    @abstractmethod
    def put(self, local: Path, remote: str) -> None: ...

    @abstractmethod
    def get(self, remote: str, local: Path) -> None: ...

    @abstractmethod
    def submit_batch(self, script_text: str, workdir: str) -> str:
        """Submit a batch script; returns the scheduler job id."""

    @abstractmethod
    def poll(self, scheduler_job_id: str, workdir: str = "") -> tuple[str, str, str]:
        """Return (state, stdout, stderr) for a scheduler job."""

    def transfer_backends(self) -> dict[str, staging.TransferBackend]:
        return staging.default_backends()

    @abstractmethod
    def close(self) -> None: ...

    @property
    @abstractmethod
    def closed(self) -> bool: ...

    def resolve(self, path: str) -> Path:
        raise TransportError(f"{type(self).__name__} has no local filesystem view")


# --------------------------------------------------------------------------
# simulator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimOutcome:
    """What a simulated job does after it starts running.

    The first tick moves the job to running and emits the first chunk of
    each stream; the second tick emits the remaining chunks, drops ``files``
    (relative to the job's data folder) when the job finishes, and settles
    on ``final_state``.
    """

    final_state: str = "finished"
    stdout_chunks: tuple[str, ...] = ("job started\n", "job finished\n")
    stderr_chunks: tuple[str, ...] = ()
    files: tuple[tuple[str, str], ...] = ()


@dataclass
class SimJob:
    sim_id: str
    script: str
    workdir: str
    state: str = "pending"
    stdout: str = ""
    stderr: str = ""
    outcome: SimOutcome = field(default_factory=SimOutcome)
    resources: dict = field(default_factory=dict)


_SBATCH_DIRECTIVE = re.compile(r"^#SBATCH\s+--([a-z-]+)=(\S+)$")
_PBS_DIRECTIVE = re.compile(r"^#PBS\s+-(\w+)\s+(.+)$")


def _parse_slurm_resources(script: str) -> dict:
    values: dict = {}
    for line in script.splitlines():
        m = _SBATCH_DIRECTIVE.match(line.strip())
        if not m:
            continue
        key, value = m.groups()
        if key == "nodes":
            values["nodes"] = int(value)
        elif key == "ntasks-per-node":
            values["tasks_per_node"] = int(value)
        elif key == "time":
            values["time"] = value
    return values


def _parse_pbs_resources(script: str) -> dict:
    values: dict = {}
    for line in script.splitlines():
        m = _PBS_DIRECTIVE.match(line.strip())
        if not m or m.group(1) != "l":
            continue
        spec = m.group(2).strip()
        if spec.startswith("walltime="):
            values["time"] = spec.removeprefix("walltime=")
        elif spec.startswith("select="):
            chunks = spec.removeprefix("select=").split(":")
            values["nodes"] = int(chunks[0])
            for chunk in chunks[1:]:
                if chunk.startswith("ncpus="):
                    values["tasks_per_node"] = int(chunk.removeprefix("ncpus="))
    return values


class BatchSimulator:
    """Explicit-tick scheduler; deterministic for a fixed call sequence.

    All mutating calls are serialized internally, so concurrent pipelines
    may share one simulator.
    """

    def __init__(self, dialect: str = "SLURM", root: Path | None = None) -> None:
        self.dialect = dialect
        self.root = Path(root) if root is not None else None
        self.jobs: dict[str, SimJob] = {}
        self.events: list[tuple] = []
        self._next_id = 1
        self._default_outcome = SimOutcome()
        self._lock = threading.Lock()

    # -- submission ---------------------------------------------------------

    def submit(self, script_text: str, workdir: str = "",
               outcome: SimOutcome | None = None) -> str:
        with self._lock:
            parse = _parse_slurm_resources if self.dialect == "SLURM" else _parse_pbs_resources
            resources = parse(script_text)
            for required in ("time", "nodes"):
                if required not in resources:
                    raise ScriptRejected(
                        f"script is missing the mandatory {required} directive "
                        f"for {self.dialect}")
            sim_id = str(self._next_id)
            self._next_id += 1
            self.jobs[sim_id] = SimJob(
                sim_id=sim_id, script=script_text, workdir=workdir,
                outcome=outcome or self._default_outcome, resources=resources)
            self.events.append(("submit", sim_id))
            return sim_id

    def set_default_outcome(self, outcome: SimOutcome) -> None:
        self._default_outcome = outcome

    def script_outcome(self, sim_id: str, outcome: SimOutcome) -> None:
        self._job(sim_id).outcome = outcome

    def _job(self, sim_id: str) -> SimJob:
        if sim_id not in self.jobs:
            raise UnknownScheduledJob(f"no simulated job {sim_id!r}")
        return self.jobs[sim_id]

    def status(self, sim_id: str) -> SimJob:
        return self._job(sim_id)

    # -- time ---------------------------------------------------------------

    def tick(self) -> list[tuple]:
        """Advance every non-terminal job one state; returns this tick's events."""
        with self._lock:
            events: list[tuple] = []
            for sim_id in sorted(self.jobs, key=int):
                job = self.jobs[sim_id]
                if job.state == "pending":
                    job.stdout += "".join(job.outcome.stdout_chunks[:1])
                    job.stderr += "".join(job.outcome.stderr_chunks[:1])
                    self._move(job, "running", events)
                elif job.state == "running":
                    job.stdout += "".join(job.outcome.stdout_chunks[1:])
                    job.stderr += "".join(job.outcome.stderr_chunks[1:])
                    if job.outcome.final_state == "finished":
                        self._drop_files(job)
                    self._move(job, job.outcome.final_state, events)
            self.events.extend(events)
            return events

    def _move(self, job: SimJob, new_state: str, events: list[tuple]) -> None:
        events.append(("tick", job.sim_id, job.state, new_state))
        job.state = new_state

    def _drop_files(self, job: SimJob) -> None:
        if self.root is None or not job.workdir or not job.outcome.files:
            return
        folder = self.root / job.workdir.lstrip("/") / staging.DATA_DIR_NAME
        folder.mkdir(parents=True, exist_ok=True)
        for relpath, content in job.outcome.files:
            target = folder / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")

    # -- persistence --------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "dialect": self.dialect,
            "next_id": self._next_id,
            "events": [list(e) for e in self.events],
            "jobs": {
                sim_id: {
                    "sim_id": job.sim_id,
                    "script": job.script,
                    "workdir": job.workdir,
                    "state": job.state,
                    "stdout": job.stdout,
                    "stderr": job.stderr,
                    "resources": job.resources,
                    "outcome": {
                        "final_state": job.outcome.final_state,
                        "stdout_chunks": list(job.outcome.stdout_chunks),
                        "stderr_chunks": list(job.outcome.stderr_chunks),
                        "files": [list(f) for f in job.outcome.files],
                    },
                }
                for sim_id, job in self.jobs.items()
            },
        }

    @classmethod
    def from_state(cls, state: dict, root: Path | None = None) -> "BatchSimulator":
        sim = cls(dialect=state["dialect"], root=root)
        sim._next_id = state["next_id"]
        sim.events = [tuple(e) for e in state["events"]]
        for sim_id, payload in state["jobs"].items():
            outcome = SimOutcome(
                final_state=payload["outcome"]["final_state"],
                stdout_chunks=tuple(payload["outcome"]["stdout_chunks"]),
                stderr_chunks=tuple(payload["outcome"]["stderr_chunks"]),
                files=tuple((f[0], f[1]) for f in payload["outcome"]["files"]),
            )
            sim.jobs[sim_id] = SimJob(
                sim_id=payload["sim_id"], script=payload["script"],
                workdir=payload["workdir"], state=payload["state"],
                stdout=payload["stdout"], stderr=payload["stderr"],
                outcome=outcome, resources=payload["resources"])
        return sim


def sim_submit(sim: BatchSimulator, script_text: str, workdir: str = "") -> str:
    return sim.submit(script_text, workdir)


def sim_tick(sim: BatchSimulator) -> list[tuple]:
    return sim.tick()


class SimSession(ClusterSession):
    """Session over the embedded simulator, rooted at a local directory.

    Commands run with the root as working directory; put/get and relative
    paths resolve under the root.  With ``tick_on_poll`` every poll first
    reports the current state and then advances one tick, so a sequence of
    CLI status calls walks a job deterministically to its terminal state.
    """

    def __init__(self, root: str | Path, profile: TargetProfile | None = None,
                 tick_on_poll: bool | None = None) -> None:
        self.profile = profile or builtin_profiles()[SIM_PROFILE_NAME]
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.local_root = self.root
        if tick_on_poll is None:
            sim_extras = self.profile.extras.get("sim") or {}
            tick_on_poll = bool(sim_extras.get("tick-on-poll", False))
        self.tick_on_poll = tick_on_poll
        self._closed = False
        self._state_path = self.root / SIM_STATE_FILE
        if self._state_path.exists():
            state = json.loads(self._state_path.read_text(encoding="utf-8"))
            self.sim = BatchSimulator.from_state(state, root=self.root)
        else:
            self.sim = BatchSimulator(dialect=self.profile.scheduler, root=self.root)

    def _check_open(self) -> None:
        if self._closed:
            raise SessionLost("session is closed")

    def _persist(self) -> None:
        tmp = self._state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.sim.to_state(), indent=1), encoding="utf-8")
        tmp.replace(self._state_path)

    def resolve(self, path: str) -> Path:
        return self.root / str(path).lstrip("/")

    def exec(self, command: str) -> tuple[int, str, str]:
        self._check_open()
        proc = subprocess.run(["bash", "-c", command], cwd=self.root,
                              capture_output=True, text=True)
        return proc.returncode, proc.stdout, proc.stderr

    def put(self, local: Path, remote: str) -> None:
        self._check_open()
        dest = self.resolve(remote)
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(local, dest)

    def get(self, remote: str, local: Path) -> None:
        self._check_open()
        src = self.resolve(remote)
        if not src.is_file():
            raise TransportError(f"no such remote file: {remote}")
        Path(local).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, local)

    def submit_batch(self, script_text: str, workdir: str) -> str:
        self._check_open()
        sim_id = self.sim.submit(script_text, workdir)
        self._persist()
        return sim_id

    def tick(self, count: int = 1) -> list[tuple]:
        self._check_open()
        events: list[tuple] = []
        for _ in range(count):
            events.extend(self.sim.tick())
        self._persist()
        return events

    def poll(self, scheduler_job_id: str, workdir: str = "") -> tuple[str, str, str]:
        self._check_open()
        job = self.sim.status(scheduler_job_id)
        snapshot = (job.state, job.stdout, job.stderr)
        if self.tick_on_poll and job.state in ("pending", "running"):
            self.sim.tick()
            self._persist()
        return snapshot

    def transfer_backends(self) -> dict[str, staging.TransferBackend]:
        return {
            "scp": staging.LoopbackBackend(self.root),
            "https": staging.HttpsBackend(),
            "ftp": staging.FtpBackend(),
        }

    def close(self) -> None:
        self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed


# --------------------------------------------------------------------------
# real clusters over ssh
# --------------------------------------------------------------------------

_SLURM_PENDING = {"PENDING", "CONFIGURING", "REQUEUED", "SUSPENDED", "RESV_DEL_HOLD"}
_SLURM_RUNNING = {"RUNNING", "COMPLETING", "STAGE_OUT", "SIGNALING"}
_SLURM_FAILED = {"FAILED", "CANCELLED", "TIMEOUT", "NODE_FAIL", "PREEMPTED",
                 "OUT_OF_MEMORY", "BOOT_FAIL", "DEADLINE", "REVOKED"}

_PBS_PENDING = {"Q", "H", "W", "T", "M"}
_PBS_RUNNING = {"R", "S", "E"}

_SBATCH_ID_RE = re.compile(r"Submitted batch job (\d+)")
_QSTAT_STATE_RE = re.compile(r"job_state\s*=\s*(\w)")
_QSTAT_EXIT_RE = re.compile(r"Exit_status\s*=\s*(-?\d+)")


def map_slurm_state(token: str) -> str:
    """squeue %T token to a job state; empty output means the job left the
    queue, which this best-effort binding reports as finished."""
    token = token.strip().upper()
    if not token:
        return "finished"
    if token in _SLURM_PENDING:
        return "pending"
    if token in _SLURM_RUNNING:
        return "running"
    if token == "COMPLETED":
        return "finished"
    if token in _SLURM_FAILED:
        return "failed"
    return "pending"


def map_pbs_state(qstat_output: str) -> str:
    m = _QSTAT_STATE_RE.search(qstat_output)
    if not m:
        return "finished"
    token = m.group(1).upper()
    if token in _PBS_PENDING:
        return "pending"
    if token in _PBS_RUNNING:
        return "running"
    if token in {"F", "X"}:
        exit_m = _QSTAT_EXIT_RE.search(qstat_output)
        if exit_m and int(exit_m.group(1)) != 0:
            return "failed"
        return "finished"
    return "pending"


class SshClusterSession(ClusterSession):
    """ssh/scp transport with key auth; see docs/schedulers.md for the
    submit and status command bindings."""

    def __init__(self, profile: TargetProfile, user: str = "",
                 key_path: str | Path | None = None,
                 runner: Callable = subprocess.run) -> None:
        self.profile = profile
        self.user = user
        self.key_path = Path(key_path) if key_path else None
        self._run = runner
        self._closed = False

    @property
    def destination(self) -> str:
        host = self.profile.submit_host
        return f"{self.user}@{host}" if self.user else host

    def _key_args(self) -> list[str]:
        return ["-i", str(self.key_path)] if self.key_path else []

    @staticmethod
    def _auth_rejected(stderr: str) -> bool:
        lowered = stderr.lower()
        return "permission denied" in lowered or "authentication" in lowered

    def exec(self, command: str) -> tuple[int, str, str]:
        if self._closed:
            raise SessionLost("session is closed")
        cmd = ["ssh", "-o", "BatchMode=yes", *self._key_args(), self.destination, command]
        proc = self._run(cmd, capture_output=True, text=True)
        if proc.returncode == 255:
            if self._auth_rejected(proc.stderr):
                raise AuthFailed(f"ssh rejected credentials: {proc.stderr.strip()}")
            raise SessionLost(f"ssh transport failed: {proc.stderr.strip()}")
        return proc.returncode, proc.stdout, proc.stderr

    def _scp(self, src: str, dst: str) -> None:
        if self._closed:
            raise SessionLost("session is closed")
        cmd = ["scp", "-B", "-q", "-o", "BatchMode=yes", *self._key_args(), src, dst]
        proc = self._run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            if self._auth_rejected(proc.stderr or ""):
                raise AuthFailed(f"scp rejected credentials: {proc.stderr.strip()}")
            raise TransportError(f"scp exited {proc.returncode}: {proc.stderr.strip()}")

    def put(self, local: Path, remote: str) -> None:
        self._scp(str(local), f"{self.destination}:{remote}")

    def get(self, remote: str, local: Path) -> None:
        Path(local).parent.mkdir(parents=True, exist_ok=True)
        self._scp(f"{self.destination}:{remote}", str(local))

    def submit_batch(self, script_text: str, workdir: str) -> str:
        with tempfile.NamedTemporaryFile("w", suffix=".sh", delete=False) as fh:
            fh.write(script_text)
            local_script = fh.name
        remote_script = f"{workdir}/job.sh"
        self.put(Path(local_script), remote_script)
        submit_cmd = "sbatch" if self.scheduler == "SLURM" else "qsub"
        rc, out, err = self.exec(f"cd {workdir} && {submit_cmd} job.sh")
        if rc != 0:
            raise ScriptRejected(f"{submit_cmd} exited {rc}: {err.strip() or out.strip()}")
        if self.scheduler == "SLURM":
            m = _SBATCH_ID_RE.search(out)
            if not m:
                raise ScriptRejected(f"could not parse sbatch output: {out.strip()!r}")
            return m.group(1)
        job_id = out.strip().splitlines()[0].strip() if out.strip() else ""
        if not job_id:
            raise ScriptRejected(f"could not parse qsub output: {out.strip()!r}")
        return job_id

    def poll(self, scheduler_job_id: str, workdir: str = "") -> tuple[str, str, str]:
        if self.scheduler == "SLURM":
            rc, out, _ = self.exec(f"squeue -h -j {scheduler_job_id} -o %T")
            state = map_slurm_state(out if rc == 0 else "")
        else:
            rc, out, _ = self.exec(f"qstat -x -f {scheduler_job_id}")
            state = map_pbs_state(out if rc == 0 else "")
        stdout = stderr = ""
        if workdir:
            rc, out, _ = self.exec(f"tail -c 2048 {workdir}/job.out 2>/dev/null")
            stdout = out if rc == 0 else ""
            rc, out, _ = self.exec(f"tail -c 2048 {workdir}/job.err 2>/dev/null")
            stderr = out if rc == 0 else ""
        return state, stdout, stderr

    def close(self) -> None:
        self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed
