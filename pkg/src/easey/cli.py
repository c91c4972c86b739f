"""Command line interface: build, submit, status, fetch, report.

Environment:
    EASEY_HOME  state directory (default ~/.easey); holds job records,
                fetched logs, target profiles, and the simulator root
    EASEY_KEY   default credential key file for transfers and sessions

Exit codes (stable for scripting):
    0  success
    1  unexpected internal error
    2  unknown target (argparse usage errors also exit 2)
    3  image build failed (including Dockerfile transform errors)
    4  archive packing failed
    5  submission failed (bad archive checksum, extraction, scheduler reject)
    6  data staging failed
    7  unknown job id
    8  job is not in a terminal state
    9  FOM table parse error
   10  invalid configuration document
   11  session to the cluster lost

Every command accepts ``--json`` for machine-readable output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .cluster import ClusterSession, ScriptRejected, SessionLost, SimSession, SshClusterSession
from .config import ConfigError, EaseyConfig, parse_config, validate
from .engine import (ExtractFailed, JobEngine, JobStore, NotTerminal, StagingFailed,
                     StoreCorrupt, SubmitFailed, UnknownJob)
from .imageprep import (BuildFailed, BuilderUnavailable, Builder2TarPacker, ChecksumMismatch,
                        DEFAULT_MOUNT_PATH, DockerCliBuilder, MockArchivePacker,
                        MockImageBuilder, OutDirUnwritable, PackFailed, TransformError,
                        build_image, default_image_name, load_archive, pack_container,
                        transform_dockerfile)
from .metrics import ParseError, default_table_path, fom_delta, fom_per_core, load_fom_table
from .staging import CredentialStore
from .targets import TargetProfile, TargetRegistry, UnknownTarget, load_registry

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_UNKNOWN_TARGET = 2
EXIT_BUILD_FAILED = 3
EXIT_PACK_FAILED = 4
EXIT_SUBMIT_FAILED = 5
EXIT_STAGING_FAILED = 6
EXIT_UNKNOWN_JOB = 7
EXIT_NOT_TERMINAL = 8
EXIT_REPORT_PARSE = 9
EXIT_CONFIG_INVALID = 10
EXIT_SESSION_LOST = 11

EXIT_CODES = {
    "UnknownTarget": EXIT_UNKNOWN_TARGET,
    "TransformError": EXIT_BUILD_FAILED,
    "MultipleMarkers": EXIT_BUILD_FAILED,
    "MarkerMisplaced": EXIT_BUILD_FAILED,
    "BuildFailed": EXIT_BUILD_FAILED,
    "BuilderUnavailable": EXIT_BUILD_FAILED,
    "PackFailed": EXIT_PACK_FAILED,
    "OutDirUnwritable": EXIT_PACK_FAILED,
    "SubmitFailed": EXIT_SUBMIT_FAILED,
    "ExtractFailed": EXIT_SUBMIT_FAILED,
    "ScriptRejected": EXIT_SUBMIT_FAILED,
    "ChecksumMismatch": EXIT_SUBMIT_FAILED,
    "StagingFailed": EXIT_STAGING_FAILED,
    "UnknownJob": EXIT_UNKNOWN_JOB,
    "NotTerminal": EXIT_NOT_TERMINAL,
    "ParseError": EXIT_REPORT_PARSE,
    "ConfigError": EXIT_CONFIG_INVALID,
    "SessionLost": EXIT_SESSION_LOST,
}


def _home(args: argparse.Namespace) -> Path:
    return Path(args.home or os.environ.get("EASEY_HOME", "~/.easey")).expanduser()


def _error(exc: Exception) -> None:
    print(f"easey: error: {type(exc).__name__}: {exc}", file=sys.stderr)


def _credentials() -> CredentialStore:
    key = os.environ.get("EASEY_KEY")
    return CredentialStore(default_key=Path(key).expanduser() if key else None)


def _registry(args: argparse.Namespace) -> TargetRegistry:
    profiles_dir = _home(args) / "profiles"
    return load_registry(profiles_dir if profiles_dir.is_dir() else None)


def _session(profile: TargetProfile, args: argparse.Namespace) -> ClusterSession:
    if profile.is_simulator:
        return SimSession(_home(args) / "sim", profile=profile)
    key = os.environ.get("EASEY_KEY")
    return SshClusterSession(profile, key_path=key)


def _engine(args: argparse.Namespace) -> JobEngine:
    return JobEngine(JobStore(_home(args) / "jobs"), credentials=_credentials())


def _load_config(args: argparse.Namespace) -> EaseyConfig:
    text = Path(args.config).read_text(encoding="utf-8")
    return parse_config(text, lax=getattr(args, "lax", False))


def _emit(args: argparse.Namespace, payload: dict, human_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=1))
    else:
        for line in human_lines:
            print(line)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_build(args: argparse.Namespace) -> int:
    try:
        registry = _registry(args)
        profile = registry.lookup(args.target)
        mount = DEFAULT_MOUNT_PATH
        image_name = args.name
        if args.config:
            cfg = _load_config(args)
            if cfg.data is not None:
                mount = cfg.data.mount
            if image_name is None:
                image_name = default_image_name(cfg.job.name)
        if image_name is None:
            image_name = default_image_name(Path(args.dockerfile).resolve().parent.name)

        dockerfile = Path(args.dockerfile)
        transformed = transform_dockerfile(
            dockerfile.read_text(encoding="utf-8"), profile, mount)

        if args.builder == "docker" or (args.builder == "auto" and _docker_available()):
            builder = DockerCliBuilder()
            packer = Builder2TarPacker()
        else:
            builder = MockImageBuilder()
            packer = MockArchivePacker(builder)

        image = build_image(transformed, builder, image_name,
                            context_dir=dockerfile.resolve().parent)
        archive = pack_container(image, Path(args.out), packer)
    except (UnknownTarget, TransformError, BuildFailed, BuilderUnavailable,
            PackFailed, OutDirUnwritable, ConfigError, OSError) as exc:
        _error(exc)
        return _exit_code_for(exc)
    _emit(args, {"archive": str(archive.path), "checksum": archive.checksum,
                 "image": image.value},
          [str(archive.path), f"sha256 {archive.checksum}"])
    return EXIT_OK


def _docker_available() -> bool:
    import shutil

    return shutil.which("docker") is not None and shutil.which("ch-builder2tar") is not None


def cmd_submit(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
        report = validate(cfg)
        if not report.ok:
            for violation in report.violations:
                print(f"easey: invalid configuration: {violation.code} at {violation.path}: "
                      f"{violation.message}", file=sys.stderr)
            return EXIT_CONFIG_INVALID
        for warning in report.warnings:
            print(f"easey: warning: {warning.code}: {warning.message}", file=sys.stderr)
        registry = _registry(args)
        profile = registry.lookup(args.target)
        archive = load_archive(args.archive)
        session = _session(profile, args)
        record = _engine(args).submit(cfg, archive, session)
    except (ConfigError, UnknownTarget, ChecksumMismatch, StagingFailed, SubmitFailed,
            ExtractFailed, ScriptRejected, SessionLost, OSError) as exc:
        _error(exc)
        return _exit_code_for(exc)
    _emit(args, {"id": record.id, "scheduler_job_id": record.scheduler_job_id,
                 "state": record.state.value},
          [record.id])
    return EXIT_OK


def cmd_status(args: argparse.Namespace) -> int:
    import time as _time

    from .engine import TERMINAL_STATES

    try:
        engine = _engine(args)
        record = engine.store.load(args.job_id)
        profile = _registry(args).lookup(record.target)
        session = _session(profile, args)
        lines: list[str] = []
        while True:
            state, stdout, stderr = engine.poll_status(args.job_id, session)
            if not lines or lines[-1] != state.value:
                lines.append(state.value)
                if args.watch and not args.json:
                    print(state.value)
            if not args.watch or state in TERMINAL_STATES:
                break
            if engine.store.load(args.job_id).scheduler_job_id is None:
                break  # never reached the scheduler; nothing to watch
            _time.sleep(args.interval)
    except (UnknownJob, UnknownTarget, SessionLost, StoreCorrupt, OSError) as exc:
        _error(exc)
        return _exit_code_for(exc)
    out_lines = [] if args.watch else [state.value]
    if args.logs:
        out_lines += ["--- stdout ---", stdout.rstrip("\n"),
                      "--- stderr ---", stderr.rstrip("\n")]
    _emit(args, {"id": args.job_id, "state": state.value,
                 "stdout": stdout, "stderr": stderr},
          out_lines)
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    try:
        engine = _engine(args)
        record = engine.store.load(args.job_id)
        profile = _registry(args).lookup(record.target)
        session = _session(profile, args)
        results = engine.finalize(args.job_id, session, _credentials())
    except (UnknownJob, UnknownTarget, NotTerminal, SessionLost, StoreCorrupt,
            OSError) as exc:
        _error(exc)
        return _exit_code_for(exc)
    if not results:
        _emit(args, {"id": args.job_id, "results": []}, ["nothing to fetch"])
        return EXIT_OK
    lines = []
    payload = []
    for result in results:
        name = result.task.local_path.name
        payload.append({"file": name, "status": result.status, "bytes": result.bytes,
                        "detail": result.detail})
        if result.status == "ok":
            lines.append(f"ok {name}")
        else:
            lines.append(f"failed {name}: {result.detail}")
    _emit(args, {"id": args.job_id, "results": payload}, lines)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = args.fom_table or default_table_path()
    try:
        samples = load_fom_table(path)
    except ParseError as exc:
        _error(exc)
        return EXIT_REPORT_PARSE
    rows = []
    lines = [f"{'p':>4} {'cores':>7} {'nodes':>6} {'delta%':>8} {'fom/core':>10}"]
    for sample in samples:
        delta = fom_delta(sample.fom_easey, sample.fom_native)
        per_core = fom_per_core(sample.fom_easey, sample.cores)
        rows.append({"p": sample.p, "cores": sample.cores, "nodes": sample.nodes,
                     "delta": delta, "fom_per_core": per_core})
        lines.append(f"{sample.p:>4} {sample.cores:>7} {sample.nodes:>6} "
                     f"{delta:>+8.2f} {per_core:>10.2f}")
    _emit(args, {"rows": rows}, lines)
    return EXIT_OK


def _exit_code_for(exc: Exception) -> int:
    for klass in type(exc).__mro__:
        if klass.__name__ in EXIT_CODES:
            return EXIT_CODES[klass.__name__]
    if isinstance(exc, OSError):
        return EXIT_INTERNAL
    return EXIT_INTERNAL


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="easey",
        description="Adapt a Dockerfile for a cluster, pack it, and run it as a batch job.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--home", default=None,
                        help="state directory (default: $EASEY_HOME or ~/.easey)")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    sub = parser.add_subparsers(dest="verb", required=True)

    p_build = sub.add_parser("build", parents=[common],
                             help="transform a Dockerfile and pack the container archive")
    p_build.add_argument("dockerfile")
    p_build.add_argument("--target", required=True, help='target name, e.g. "test:sim"')
    p_build.add_argument("--config", default=None, help="job configuration (for mount/name)")
    p_build.add_argument("--out", default=".", help="output directory for the archive")
    p_build.add_argument("--name", default=None, help="image name override")
    p_build.add_argument("--builder", choices=("auto", "mock", "docker"), default="auto")
    p_build.add_argument("--lax", action="store_true",
                         help="accept legacy execution-object configs")
    p_build.set_defaults(func=cmd_build)

    p_submit = sub.add_parser("submit", parents=[common],
                              help="stage data and submit the job to the target scheduler")
    p_submit.add_argument("--config", required=True)
    p_submit.add_argument("--archive", required=True)
    p_submit.add_argument("--target", required=True)
    p_submit.add_argument("--lax", action="store_true",
                          help="accept legacy execution-object configs")
    p_submit.set_defaults(func=cmd_submit)

    p_status = sub.add_parser("status", parents=[common], help="poll one job's state")
    p_status.add_argument("job_id")
    p_status.add_argument("--logs", action="store_true", help="include log excerpts")
    p_status.add_argument("--watch", action="store_true",
                          help="keep polling until the job reaches a terminal state")
    p_status.add_argument("--interval", type=float, default=10.0,
                          help="seconds between polls with --watch (default: 10)")
    p_status.set_defaults(func=cmd_status)

    p_fetch = sub.add_parser("fetch", parents=[common],
                             help="stage out the outputs of a terminal job")
    p_fetch.add_argument("job_id")
    p_fetch.set_defaults(func=cmd_fetch)

    p_report = sub.add_parser("report", parents=[common],
                              help="print the FOM comparison table")
    p_report.add_argument("--fom-table", default=None,
                          help="CSV fixture (default: shipped reference table)")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # last resort; specific handlers live in the commands
        _error(exc)
        return _exit_code_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
