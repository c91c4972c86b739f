"""Container-based batch jobs for HPC clusters, end to end.

The pipeline: parse a four-part job configuration, adapt the user's
Dockerfile to the target cluster, pack the image into a container archive,
stage input data, render a SLURM/PBS batch script, submit it, poll status,
and stage outputs back out.  A deterministic in-process scheduler simulator
(target ``test:sim``) runs the whole flow without any cluster access.
"""

from .batchgen import BatchContext, BatchScript, derive_nodes, render_batch
from .cluster import BatchSimulator, SimOutcome, SimSession, SshClusterSession
from .config import (EaseyConfig, ValidationReport, assign_job_id, parse_config,
                     serialize_config, validate, validate_document)
from .engine import JobEngine, JobRecord, JobState, JobStore
from .imageprep import (ContainerArchive, MockArchivePacker, MockImageBuilder,
                        build_image, load_archive, pack_container, transform_dockerfile)
from .metrics import FomSample, fom_delta, fom_per_core, load_fom_table
from .staging import CredentialStore, TransferExecutor, plan_stage_in
from .targets import TargetProfile, TargetRegistry, load_registry, lookup_target

__version__ = "0.1.0"

__all__ = [
    "BatchContext", "BatchScript", "BatchSimulator", "ContainerArchive",
    "CredentialStore", "EaseyConfig", "FomSample", "JobEngine", "JobRecord",
    "JobState", "JobStore", "MockArchivePacker", "MockImageBuilder", "SimOutcome",
    "SimSession", "SshClusterSession", "TargetProfile", "TargetRegistry",
    "TransferExecutor", "ValidationReport", "assign_job_id", "build_image",
    "derive_nodes", "fom_delta", "fom_per_core", "load_archive", "load_fom_table",
    "load_registry", "lookup_target", "pack_container", "parse_config",
    "plan_stage_in", "render_batch", "serialize_config", "transform_dockerfile",
    "validate", "validate_document",
    "__version__",
]
