"""Job configuration parsing, validation, and canonical serialization.

A job is described by a UTF-8 JSON document with four top-level sections:

    job         mandatory; user-chosen name, optional mail address, and an
                id field that is always system-assigned (any user-supplied
                value is ignored)
    data        optional; input/output transfer endpoints plus the
                container path where the job data folder gets mounted
    deployment  mandatory; node count, optional ram, cores per task,
                tasks per node, and a HH:MM:SS wall clock limit
    execution   mandatory; ordered list of serial / mpi steps

``execution`` is an array of single-key objects, executed in array order::

    [{"serial": {"command": "echo start"}},
     {"mpi": {"command": "ch-run ... -- /built/app", "mpi-tasks": 2197}}]

Legacy documents that spell ``execution`` as an object with repeated
``serial``/``mpi`` keys are accepted by ``parse_config(..., lax=True)``,
which linearizes the entries in document order.  Everywhere else duplicate
keys are rejected.

Integers may be given as JSON numbers or as decimal strings ("46"); ``ram``
additionally accepts an M or G suffix and is normalized to megabytes.  The
canonical form produced by :func:`serialize_config` uses plain numbers,
sorts keys lexicographically, omits unset optional fields, and carries no
insignificant whitespace.  Job ids are the first 16 hex characters of
SHA-256 over the canonical serialization concatenated with the submission
timestamp, so identical (config, timestamp) pairs map to identical ids.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Union

PROTOCOLS = ("https", "scp", "ftp", "gridftp")
TRANSFERABLE_PROTOCOLS = ("https", "scp", "ftp")  # gridftp parses but cannot run

_CLOCKTIME_RE = re.compile(r"^\d{2}:[0-5]\d:[0-5]\d$")
_MAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s]+$")
_RAM_RE = re.compile(r"^(\d+)([MG])?$")
_JOB_ID_RE = re.compile(r"^[0-9a-f]{16}$")

JOB_ID_LENGTH = 16


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JobId:
    """16-char lowercase hex identifier derived from config + submission time."""

    value: str

    def __post_init__(self) -> None:
        if not _JOB_ID_RE.match(self.value):
            raise ValueError(f"job id must be 16 lowercase hex chars, got {self.value!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class JobMeta:
    name: str
    id: str = ""
    mail: str = ""


@dataclass(frozen=True)
class TransferEndpoint:
    """One input source or output destination.

    ``location`` is a URL or an scp-style/host path; ``auth`` names a key
    file (empty means the default credential).
    """

    location: str
    protocol: str
    user: str = ""
    auth: str = ""


@dataclass(frozen=True)
class DataSpec:
    input: tuple[TransferEndpoint, ...] = ()
    output: tuple[TransferEndpoint, ...] = ()
    mount: str = "/data"


@dataclass(frozen=True)
class DeploymentSpec:
    nodes: int
    cores_per_task: int
    tasks_per_node: int
    clocktime: str
    ram: int | None = None  # megabytes; None means "emit no directive"


@dataclass(frozen=True)
class SerialStep:
    command: str


@dataclass(frozen=True)
class MpiStep:
    command: str
    mpi_tasks: int


ExecutionStep = Union[SerialStep, MpiStep]


@dataclass(frozen=True)
class ExecutionSpec:
    steps: tuple[ExecutionStep, ...]


@dataclass(frozen=True)
class EaseyConfig:
    job: JobMeta
    deployment: DeploymentSpec
    execution: ExecutionSpec
    data: DataSpec | None = None


# --------------------------------------------------------------------------
# violations and errors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str
    severity: str = "error"  # "error" | "warning"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    warnings: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def warning_codes(self) -> set[str]:
        return {v.code for v in self.warnings}


class ConfigError(ValueError):
    """Base for all configuration-document errors."""

    def __init__(self, message: str, violations: tuple[Violation, ...] = ()) -> None:
        super().__init__(message)
        self.violations = violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


class ConfigSyntaxError(ConfigError):
    """The document is not well-formed JSON."""


class SchemaError(ConfigError):
    """Missing mandatory section, unknown key, bad type, or bad enum."""


class ConfigValueError(ConfigError):
    """Structurally sound document with an out-of-range or malformed value."""


# codes that raise SchemaError from parse_config
_SCHEMA_CODES = frozenset({
    "DUPLICATE_KEY",
    "SECTION_MISSING",
    "SECTION_UNKNOWN",
    "KEY_MISSING",
    "KEY_UNKNOWN",
    "TYPE_INVALID",
    "PROTOCOL_INVALID",
    "STEP_MALFORMED",
    "EXECUTION_EMPTY",
})
# codes that raise ConfigValueError from parse_config
_VALUE_CODES = frozenset({
    "NAME_EMPTY",
    "MAIL_MALFORMED",
    "MOUNT_NOT_ABSOLUTE",
    "NODES_NONPOSITIVE",
    "CORES_PER_TASK_NONPOSITIVE",
    "TASKS_PER_NODE_NONPOSITIVE",
    "MPI_TASKS_NONPOSITIVE",
    "RAM_MALFORMED",
    "CLOCKTIME_MALFORMED",
})
# reported by validate()/validate_document() but accepted by parse_config
_NONBLOCKING_CODES = frozenset({
    "PROTOCOL_UNSUPPORTED_GRIDFTP",
    "NODES_MISMATCH",
    "SYNTAX_MALFORMED",
})

BLOCKING_CODES = _SCHEMA_CODES | _VALUE_CODES


# --------------------------------------------------------------------------
# document tree with duplicate-key visibility
# --------------------------------------------------------------------------

class _Obj:
    """JSON object as an ordered pair list, so duplicates stay observable."""

    __slots__ = ("pairs",)

    def __init__(self, pairs: list[tuple[str, Any]]) -> None:
        self.pairs = pairs


def _load_tree(text: str) -> Any:
    try:
        return json.loads(text, object_pairs_hook=lambda pairs: _Obj(list(pairs)))
    except json.JSONDecodeError as exc:
        v = Violation("SYNTAX_MALFORMED", "$", f"malformed JSON: {exc}")
        raise ConfigSyntaxError(str(v.message), (v,)) from exc


def _normalize(tree: Any, lax: bool) -> tuple[Any, list[Violation]]:
    """Collapse the pair tree to plain dicts/lists, flagging duplicate keys.

    In lax mode an ``execution`` *object* at the top level is linearized
    into the array form, preserving document order of its entries.
    """
    violations: list[Violation] = []

    def convert(node: Any, path: str) -> Any:
        if isinstance(node, _Obj):
            out: dict[str, Any] = {}
            for key, value in node.pairs:
                if key in out:
                    violations.append(Violation(
                        "DUPLICATE_KEY", f"{path}.{key}", f"duplicate key {key!r}"))
                out[key] = convert(value, f"{path}.{key}")
            return out
        if isinstance(node, list):
            return [convert(item, f"{path}[{i}]") for i, item in enumerate(node)]
        return node

    if not isinstance(tree, _Obj):
        violations.append(Violation("TYPE_INVALID", "$", "document root must be an object"))
        return {}, violations

    root: dict[str, Any] = {}
    for key, value in tree.pairs:
        if key in root:
            violations.append(Violation("DUPLICATE_KEY", f"$.{key}", f"duplicate key {key!r}"))
        if key == "execution" and lax and isinstance(value, _Obj):
            steps = [{k: convert(v, f"$.execution.{k}")} for k, v in value.pairs]
            root[key] = steps
        else:
            root[key] = convert(value, f"$.{key}")
    return root, violations


# --------------------------------------------------------------------------
# schema and value checks (single source of truth)
# --------------------------------------------------------------------------

_TOP_KEYS = ("job", "data", "deployment", "execution")
_MANDATORY_SECTIONS = ("job", "deployment", "execution")


def _coerce_int(value: Any) -> int | None:
    # bools are ints in Python; reject them explicitly
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and re.fullmatch(r"\d+", value.strip()):
        return int(value.strip())
    return None


def _parse_ram(value: Any) -> int | None:
    """Normalize a ram field to megabytes; raises ValueError on bad shape."""
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        raise ValueError("ram must be an integer or an M/G-suffixed string")
    if isinstance(value, int):
        if value <= 0:
            raise ValueError("ram must be positive")
        return value
    if isinstance(value, str):
        m = _RAM_RE.match(value.strip())
        if not m:
            raise ValueError(f"bad ram value {value!r}")
        amount = int(m.group(1))
        if amount <= 0:
            raise ValueError("ram must be positive")
        return amount * 1024 if m.group(2) == "G" else amount
    raise ValueError("ram must be an integer or an M/G-suffixed string")


def _check_section_keys(section: dict, path: str, known: tuple[str, ...],
                        required: tuple[str, ...], out: list[Violation]) -> None:
    for key in section:
        if key not in known:
            out.append(Violation("KEY_UNKNOWN", f"{path}.{key}", f"unknown key {key!r}"))
    for key in required:
        if key not in section:
            out.append(Violation("KEY_MISSING", f"{path}.{key}", f"missing required key {key!r}"))


def _check_positive_int(section: dict, key: str, path: str, code: str,
                        out: list[Violation]) -> None:
    if key not in section:
        return
    value = _coerce_int(section[key])
    if value is None:
        out.append(Violation("TYPE_INVALID", f"{path}.{key}",
                             f"{key} must be an integer or a digit string"))
    elif value <= 0:
        out.append(Violation(code, f"{path}.{key}", f"{key} must be positive, got {value}"))


def _check_endpoint(entry: Any, path: str, location_key: str, out: list[Violation]) -> None:
    if not isinstance(entry, dict):
        out.append(Violation("TYPE_INVALID", path, "endpoint must be an object"))
        return
    _check_section_keys(entry, path, (location_key, "protocol", "user", "auth"),
                        (location_key, "protocol"), out)
    loc = entry.get(location_key)
    if location_key in entry and (not isinstance(loc, str) or not loc):
        out.append(Violation("TYPE_INVALID", f"{path}.{location_key}",
                             f"{location_key} must be a non-empty string"))
    proto = entry.get("protocol")
    if "protocol" in entry:
        if not isinstance(proto, str) or proto not in PROTOCOLS:
            out.append(Violation("PROTOCOL_INVALID", f"{path}.protocol",
                                 f"protocol must be one of {PROTOCOLS}, got {proto!r}"))
        elif proto == "gridftp":
            out.append(Violation("PROTOCOL_UNSUPPORTED_GRIDFTP", f"{path}.protocol",
                                 "gridftp endpoints are accepted but cannot be transferred yet"))
    for key in ("user", "auth"):
        if key in entry and not isinstance(entry[key], str):
            out.append(Violation("TYPE_INVALID", f"{path}.{key}", f"{key} must be a string"))


def _extract_mount(value: Any) -> str | None:
    """Mount is a path string or an object {"container-path": path}."""
    if isinstance(value, str):
        return value
    if isinstance(value, dict) and set(value) == {"container-path"} \
            and isinstance(value.get("container-path"), str):
        return value["container-path"]
    return None


def _check_document(doc: Any) -> list[Violation]:
    out: list[Violation] = []
    if not isinstance(doc, dict):
        return [Violation("TYPE_INVALID", "$", "document root must be an object")]

    for key in doc:
        if key not in _TOP_KEYS:
            out.append(Violation("SECTION_UNKNOWN", f"$.{key}", f"unknown section {key!r}"))
    for key in _MANDATORY_SECTIONS:
        if key not in doc:
            out.append(Violation("SECTION_MISSING", f"$.{key}", f"missing section {key!r}"))

    # --- job ---
    job = doc.get("job")
    if job is not None:
        if not isinstance(job, dict):
            out.append(Violation("TYPE_INVALID", "$.job", "job must be an object"))
        else:
            _check_section_keys(job, "$.job", ("name", "id", "mail"), ("name",), out)
            name = job.get("name")
            if "name" in job:
                if not isinstance(name, str):
                    out.append(Violation("TYPE_INVALID", "$.job.name", "name must be a string"))
                elif not name.strip():
                    out.append(Violation("NAME_EMPTY", "$.job.name", "name must be non-empty"))
            if "id" in job and not isinstance(job["id"], str):
                out.append(Violation("TYPE_INVALID", "$.job.id", "id must be a string"))
            mail = job.get("mail")
            if "mail" in job:
                if not isinstance(mail, str):
                    out.append(Violation("TYPE_INVALID", "$.job.mail", "mail must be a string"))
                elif mail and not _MAIL_RE.match(mail):
                    out.append(Violation("MAIL_MALFORMED", "$.job.mail",
                                         f"mail must look like an address, got {mail!r}"))

    # --- data ---
    data = doc.get("data")
    if data is not None:
        if not isinstance(data, dict):
            out.append(Violation("TYPE_INVALID", "$.data", "data must be an object"))
        else:
            _check_section_keys(data, "$.data", ("input", "output", "mount"), ("mount",), out)
            for direction, location_key in (("input", "source"), ("output", "destination")):
                entries = data.get(direction)
                if direction not in data:
                    continue
                if not isinstance(entries, list):
                    out.append(Violation("TYPE_INVALID", f"$.data.{direction}",
                                         f"{direction} must be an array"))
                    continue
                for i, entry in enumerate(entries):
                    _check_endpoint(entry, f"$.data.{direction}[{i}]", location_key, out)
            if "mount" in data:
                mount = _extract_mount(data["mount"])
                if mount is None:
                    out.append(Violation("TYPE_INVALID", "$.data.mount",
                                         'mount must be a path or {"container-path": path}'))
                elif not mount.startswith("/"):
                    out.append(Violation("MOUNT_NOT_ABSOLUTE", "$.data.mount",
                                         f"mount path must be absolute, got {mount!r}"))

    # --- deployment ---
    dep = doc.get("deployment")
    if dep is not None:
        if not isinstance(dep, dict):
            out.append(Violation("TYPE_INVALID", "$.deployment", "deployment must be an object"))
        else:
            _check_section_keys(
                dep, "$.deployment",
                ("nodes", "ram", "cores-per-task", "tasks-per-node", "clocktime"),
                ("nodes", "cores-per-task", "tasks-per-node", "clocktime"), out)
            _check_positive_int(dep, "nodes", "$.deployment", "NODES_NONPOSITIVE", out)
            _check_positive_int(dep, "cores-per-task", "$.deployment",
                                "CORES_PER_TASK_NONPOSITIVE", out)
            _check_positive_int(dep, "tasks-per-node", "$.deployment",
                                "TASKS_PER_NODE_NONPOSITIVE", out)
            if "ram" in dep:
                try:
                    _parse_ram(dep["ram"])
                except ValueError as exc:
                    out.append(Violation("RAM_MALFORMED", "$.deployment.ram", str(exc)))
            clocktime = dep.get("clocktime")
            if "clocktime" in dep:
                if not isinstance(clocktime, str) or not _CLOCKTIME_RE.match(clocktime):
                    out.append(Violation("CLOCKTIME_MALFORMED", "$.deployment.clocktime",
                                         f"clocktime must match HH:MM:SS, got {clocktime!r}"))

    # --- execution ---
    execution = doc.get("execution")
    if execution is not None:
        if not isinstance(execution, list):
            out.append(Violation("TYPE_INVALID", "$.execution",
                                 "execution must be an array of step objects"))
        elif not execution:
            out.append(Violation("EXECUTION_EMPTY", "$.execution",
                                 "execution must contain at least one step"))
        else:
            for i, step in enumerate(execution):
                path = f"$.execution[{i}]"
                if not isinstance(step, dict) or len(step) != 1 \
                        or next(iter(step)) not in ("serial", "mpi"):
                    out.append(Violation("STEP_MALFORMED", path,
                                         'step must have exactly one of "serial" or "mpi"'))
                    continue
                kind, payload = next(iter(step.items()))
                if not isinstance(payload, dict):
                    out.append(Violation("TYPE_INVALID", f"{path}.{kind}",
                                         f"{kind} step must be an object"))
                    continue
                known = ("command",) if kind == "serial" else ("command", "mpi-tasks")
                _check_section_keys(payload, f"{path}.{kind}", known, known, out)
                command = payload.get("command")
                if "command" in payload and (not isinstance(command, str) or not command):
                    out.append(Violation("TYPE_INVALID", f"{path}.{kind}.command",
                                         "command must be a non-empty string"))
                if kind == "mpi":
                    _check_positive_int(payload, "mpi-tasks", f"{path}.mpi",
                                        "MPI_TASKS_NONPOSITIVE", out)
    return out


# --------------------------------------------------------------------------
# building typed configs
# --------------------------------------------------------------------------

def _build_endpoints(entries: list, location_key: str) -> tuple[TransferEndpoint, ...]:
    return tuple(
        TransferEndpoint(
            location=e[location_key],
            protocol=e["protocol"],
            user=e.get("user", ""),
            auth=e.get("auth", ""),
        )
        for e in entries
    )


def _build(doc: dict) -> EaseyConfig:
    job = doc["job"]
    meta = JobMeta(name=job["name"], id="", mail=job.get("mail", ""))

    data = None
    if "data" in doc:
        section = doc["data"]
        data = DataSpec(
            input=_build_endpoints(section.get("input", []), "source"),
            output=_build_endpoints(section.get("output", []), "destination"),
            mount=_extract_mount(section["mount"]),
        )

    dep = doc["deployment"]
    deployment = DeploymentSpec(
        nodes=_coerce_int(dep["nodes"]),
        cores_per_task=_coerce_int(dep["cores-per-task"]),
        tasks_per_node=_coerce_int(dep["tasks-per-node"]),
        clocktime=dep["clocktime"],
        ram=_parse_ram(dep.get("ram")),
    )

    steps: list[ExecutionStep] = []
    for step in doc["execution"]:
        kind, payload = next(iter(step.items()))
        if kind == "serial":
            steps.append(SerialStep(command=payload["command"]))
        else:
            steps.append(MpiStep(command=payload["command"],
                                 mpi_tasks=_coerce_int(payload["mpi-tasks"])))

    return EaseyConfig(job=meta, deployment=deployment,
                       execution=ExecutionSpec(steps=tuple(steps)), data=data)


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------

def parse_config(text: str, lax: bool = False) -> EaseyConfig:
    """Parse a configuration document into a typed :class:`EaseyConfig`.

    Raises :class:`ConfigSyntaxError` for malformed JSON, :class:`SchemaError`
    for structural problems, and :class:`ConfigValueError` for out-of-range
    values; the exception carries every blocking :class:`Violation` found.
    """
    tree = _load_tree(text)
    doc, violations = _normalize(tree, lax=lax)
    violations.extend(_check_document(doc))
    blocking = tuple(v for v in violations if v.code in BLOCKING_CODES)
    if blocking:
        summary = "; ".join(f"{v.code} at {v.path}" for v in blocking)
        if any(v.code in _SCHEMA_CODES for v in blocking):
            raise SchemaError(summary, blocking)
        raise ConfigValueError(summary, blocking)
    return _build(doc)


def from_document(doc: dict) -> EaseyConfig:
    """Build a typed config from an already-decoded document."""
    blocking = tuple(v for v in _check_document(doc) if v.code in BLOCKING_CODES)
    if blocking:
        summary = "; ".join(f"{v.code} at {v.path}" for v in blocking)
        if any(v.code in _SCHEMA_CODES for v in blocking):
            raise SchemaError(summary, blocking)
        raise ConfigValueError(summary, blocking)
    return _build(doc)


def to_document(cfg: EaseyConfig) -> dict:
    """Emit the document form of a typed config.

    Unset optional fields (ram, mail, user, auth, absent data) are omitted,
    never serialized as zero or empty; the id field is system-assigned and
    never serialized.
    """
    job: dict[str, Any] = {"name": cfg.job.name}
    if cfg.job.mail:
        job["mail"] = cfg.job.mail
    doc: dict[str, Any] = {"job": job}

    if cfg.data is not None:
        data: dict[str, Any] = {}
        for direction, location_key, endpoints in (
                ("input", "source", cfg.data.input),
                ("output", "destination", cfg.data.output)):
            if endpoints:
                entries = []
                for ep in endpoints:
                    entry: dict[str, Any] = {location_key: ep.location, "protocol": ep.protocol}
                    if ep.user:
                        entry["user"] = ep.user
                    if ep.auth:
                        entry["auth"] = ep.auth
                    entries.append(entry)
                data[direction] = entries
        data["mount"] = {"container-path": cfg.data.mount}
        doc["data"] = data

    deployment: dict[str, Any] = {
        "nodes": cfg.deployment.nodes,
        "cores-per-task": cfg.deployment.cores_per_task,
        "tasks-per-node": cfg.deployment.tasks_per_node,
        "clocktime": cfg.deployment.clocktime,
    }
    if cfg.deployment.ram is not None:
        deployment["ram"] = cfg.deployment.ram
    doc["deployment"] = deployment

    steps: list[dict[str, Any]] = []
    for step in cfg.execution.steps:
        if isinstance(step, SerialStep):
            steps.append({"serial": {"command": step.command}})
        else:
            steps.append({"mpi": {"command": step.command, "mpi-tasks": step.mpi_tasks}})
    doc["execution"] = steps
    return doc


def serialize_config(cfg: EaseyConfig) -> str:
    """Canonical text form: sorted keys, compact separators, UTF-8 safe."""
    return json.dumps(to_document(cfg), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)


def canonical_bytes(cfg: EaseyConfig) -> bytes:
    return serialize_config(cfg).encode("utf-8")


def validate(cfg: EaseyConfig) -> ValidationReport:
    """Check submittability of a typed config.

    An empty ``violations`` tuple means the config can be submitted;
    ``warnings`` carry advisory findings such as a node count that differs
    from what the largest mpi step implies.
    """
    entries = _check_document(to_document(cfg))
    entries.extend(_cross_checks(cfg))
    return ValidationReport(
        violations=tuple(v for v in entries if v.severity == "error"),
        warnings=tuple(v for v in entries if v.severity == "warning"),
    )


def validate_document(text: str, lax: bool = False) -> ValidationReport:
    """Relaxed entry point: report every problem as a violation, never raise.

    Each error :func:`parse_config` can raise corresponds to a violation
    code in this report, so tooling can show all findings at once.
    """
    try:
        tree = _load_tree(text)
    except ConfigSyntaxError as exc:
        return ValidationReport(violations=exc.violations)
    doc, violations = _normalize(tree, lax=lax)
    violations.extend(_check_document(doc))
    return ValidationReport(
        violations=tuple(v for v in violations if v.severity == "error"),
        warnings=tuple(v for v in violations if v.severity == "warning"),
    )


def _cross_checks(cfg: EaseyConfig) -> list[Violation]:
    from .batchgen import derive_nodes  # local import, batchgen depends on this module

    out: list[Violation] = []
    mpi_tasks = [s.mpi_tasks for s in cfg.execution.steps
                 if isinstance(s, MpiStep) and s.mpi_tasks > 0]
    if mpi_tasks and cfg.deployment.tasks_per_node > 0:
        needed = derive_nodes(max(mpi_tasks), cfg.deployment.tasks_per_node)
        if needed != cfg.deployment.nodes:
            out.append(Violation(
                "NODES_MISMATCH", "$.deployment.nodes",
                f"nodes={cfg.deployment.nodes} but the largest mpi step implies {needed}",
                severity="warning"))
    return out


def assign_job_id(cfg: EaseyConfig, timestamp: str | datetime) -> JobId:
    """Derive the job id from the canonical config and the submission instant.

    The digest input is ``canonical_bytes(cfg)`` immediately followed by the
    UTF-8 bytes of the ISO-8601 timestamp string; the id is the first 16 hex
    characters of the SHA-256 digest.
    """
    if isinstance(timestamp, datetime):
        timestamp = timestamp.isoformat()
    digest = hashlib.sha256(canonical_bytes(cfg) + timestamp.encode("utf-8")).hexdigest()
    return JobId(digest[:JOB_ID_LENGTH])
