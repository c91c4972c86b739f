"""Batch script rendering for SLURM and PBS.

Deployment fields map to directives as follows (emitted in this order,
after a ``#!/bin/bash`` shebang and the job name):

    field            SLURM                     PBS
    nodes            --nodes=N                 -l select=N:ncpus=T:mpiprocs=C
    tasks-per-node   --ntasks-per-node=T       (ncpus, fused into select)
    cores-per-task   --cpus-per-task=C         (mpiprocs, fused into select)
    clocktime        --time=HH:MM:SS           -l walltime=HH:MM:SS
    ram (optional)   --mem=<MB>M               -l mem=<MB>mb
    mail (optional)  --mail-user=ADDR          -M ADDR

stdout/stderr directives point into the job workdir.  Unset optional
fields emit no directive at all.  Execution steps render in configuration
order: serial commands verbatim, mpi commands prefixed with the dialect's
launcher (``srun -n``/``mpiexec -n`` unless the target profile overrides
it) and the step's task count.  Rendering is pure and deterministic:
identical inputs produce byte-identical text.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .config import EaseyConfig, MpiStep, SerialStep
from .targets import TargetProfile

SLURM_PREFIX = "#SBATCH"
PBS_PREFIX = "#PBS"
DEFAULT_LAUNCHERS = {"SLURM": "srun -n", "PBS": "mpiexec -n"}

STDOUT_NAME = "job.out"
STDERR_NAME = "job.err"
SCRIPT_NAME = "job.sh"

_NAME_SAFE_RE = re.compile(r"[^A-Za-z0-9_:.\-]")


class UnsupportedScheduler(Exception):
    """Only SLURM and PBS dialects can be rendered."""


class EmptyExecution(Exception):
    """The configuration contains no execution steps."""


@dataclass(frozen=True)
class BatchContext:
    """Per-job values the script depends on."""

    job_id: str
    workdir: str

    @property
    def stdout_path(self) -> str:
        return f"{self.workdir}/{STDOUT_NAME}"

    @property
    def stderr_path(self) -> str:
        return f"{self.workdir}/{STDERR_NAME}"


@dataclass(frozen=True)
class BatchScript:
    scheduler: str
    directive_lines: tuple[str, ...]
    prolog_lines: tuple[str, ...]
    command_lines: tuple[str, ...]
    full_text: str


def sanitize_job_name(name: str) -> str:
    return _NAME_SAFE_RE.sub("_", name)


def derive_nodes(mpi_tasks: int, tasks_per_node: int) -> int:
    """Smallest node count that fits ``mpi_tasks`` ranks."""
    if mpi_tasks < 1 or tasks_per_node < 1:
        raise ValueError("mpi_tasks and tasks_per_node must be >= 1")
    return math.ceil(mpi_tasks / tasks_per_node)


def _slurm_directives(cfg: EaseyConfig, ctx: BatchContext) -> list[str]:
    d = cfg.deployment
    lines = [
        f"--job-name={sanitize_job_name(cfg.job.name)}",
        f"--nodes={d.nodes}",
        f"--ntasks-per-node={d.tasks_per_node}",
        f"--cpus-per-task={d.cores_per_task}",
        f"--time={d.clocktime}",
    ]
    if d.ram is not None:
        lines.append(f"--mem={d.ram}M")
    if cfg.job.mail:
        lines.append(f"--mail-user={cfg.job.mail}")
    lines.append(f"--output={ctx.stdout_path}")
    lines.append(f"--error={ctx.stderr_path}")
    return [f"{SLURM_PREFIX} {line}" for line in lines]


def _pbs_directives(cfg: EaseyConfig, ctx: BatchContext) -> list[str]:
    d = cfg.deployment
    lines = [
        f"-N {sanitize_job_name(cfg.job.name)}",
        f"-l select={d.nodes}:ncpus={d.tasks_per_node}:mpiprocs={d.cores_per_task}",
        f"-l walltime={d.clocktime}",
    ]
    if d.ram is not None:
        lines.append(f"-l mem={d.ram}mb")
    if cfg.job.mail:
        lines.append(f"-M {cfg.job.mail}")
    lines.append(f"-o {ctx.stdout_path}")
    lines.append(f"-e {ctx.stderr_path}")
    return [f"{PBS_PREFIX} {line}" for line in lines]


def render_batch(cfg: EaseyConfig, profile: TargetProfile, ctx: BatchContext) -> BatchScript:
    """Render the scheduler script for ``cfg`` on ``profile``'s dialect."""
    if not cfg.execution.steps:
        raise EmptyExecution("configuration contains no execution steps")
    scheduler = profile.scheduler
    if scheduler == "SLURM":
        directives = _slurm_directives(cfg, ctx)
    elif scheduler == "PBS":
        directives = _pbs_directives(cfg, ctx)
    else:
        raise UnsupportedScheduler(f"scheduler {scheduler!r} is not supported")

    prolog = ["set -e", f"cd {ctx.workdir}"]

    launcher = profile.mpi_launcher or DEFAULT_LAUNCHERS[scheduler]
    commands: list[str] = []
    for step in cfg.execution.steps:
        if isinstance(step, SerialStep):
            commands.append(step.command)
        elif isinstance(step, MpiStep):
            commands.append(f"{launcher} {step.mpi_tasks} {step.command}")
        else:  # pragma: no cover - step types are closed
            raise TypeError(f"unknown step type {type(step).__name__}")

    full_text = "\n".join(["#!/bin/bash", *directives, "", *prolog, "", *commands]) + "\n"
    return BatchScript(
        scheduler=scheduler,
        directive_lines=tuple(directives),
        prolog_lines=tuple(prolog),
        command_lines=tuple(commands),
        full_text=full_text,
    )
