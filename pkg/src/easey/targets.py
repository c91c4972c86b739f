"""Registry of per-cluster adaptation profiles.

A target profile tells the build and submission pipeline everything that is
cluster-specific: which scheduler dialect to speak (SLURM or PBS), the
Dockerfile fragment that purges foreign MPI installations and compiles the
site MPI, expected bind mounts, extra symlinks to materialize inside the
image, the submission host, and where job workdirs live.

Profiles are JSON files, one per target, named by a "site:cluster" string
(see docs/profiles.md for the schema).  Two profiles ship built in:
``test:sim`` (backed by the embedded scheduler simulator, so the whole
pipeline runs with zero site setup) and ``lrz:supermuc-ng``.  Unknown
profile keys are preserved in ``extras`` so sites can attach their own
settings without schema changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

LOCAL_MPI_MARKER = "###includelocalmpi###"

SCHEDULERS = ("SLURM", "PBS")

_PROFILE_KEYS = (
    "name", "scheduler", "mpi-snippet", "site-mounts", "extra-symlinks",
    "submit-host", "workdir-root", "mpi-launcher",
)
_REQUIRED_KEYS = ("name", "scheduler", "mpi-snippet", "submit-host", "workdir-root")


class UnknownTarget(Exception):
    """No profile registered under the requested name."""


class DuplicateTarget(Exception):
    """Two profiles (or a profile and a built-in) share a name."""


class ProfileParseError(Exception):
    """A profile file is unreadable or violates the profile schema."""


@dataclass(frozen=True)
class DockerfileFragment:
    """Ordered Dockerfile instructions; must not contain the MPI marker."""

    lines: tuple[str, ...]


@dataclass(frozen=True)
class TargetProfile:
    name: str
    scheduler: str
    mpi_snippet: DockerfileFragment
    submit_host: str
    workdir_root: str
    site_mounts: tuple[tuple[str, str], ...] = ()
    extra_symlinks: tuple[tuple[str, str], ...] = ()
    mpi_launcher: str | None = None
    extras: Mapping[str, Any] = field(default_factory=dict)

    @property
    def is_simulator(self) -> bool:
        return self.submit_host == "sim" or "sim" in self.extras


def _pairs(value: Any, key: str, source: str) -> tuple[tuple[str, str], ...]:
    if not isinstance(value, list):
        raise ProfileParseError(f"{source}: {key} must be a list of [a, b] pairs")
    pairs = []
    for item in value:
        if (not isinstance(item, list) or len(item) != 2
                or not all(isinstance(p, str) and p for p in item)):
            raise ProfileParseError(f"{source}: {key} entries must be [path, path] pairs")
        pairs.append((item[0], item[1]))
    return tuple(pairs)


def parse_profile(text: str, source: str = "<profile>") -> TargetProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileParseError(f"{source}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProfileParseError(f"{source}: profile must be a JSON object")

    for key in _REQUIRED_KEYS:
        if key not in doc:
            raise ProfileParseError(f"{source}: missing required key {key!r}")
        if not isinstance(doc[key], str if key != "mpi-snippet" else list):
            raise ProfileParseError(f"{source}: bad type for key {key!r}")

    scheduler = doc["scheduler"]
    if scheduler not in SCHEDULERS:
        raise ProfileParseError(
            f"{source}: scheduler must be one of {SCHEDULERS}, got {scheduler!r}")

    snippet_lines = doc["mpi-snippet"]
    if not snippet_lines or not all(isinstance(l, str) and l for l in snippet_lines):
        raise ProfileParseError(f"{source}: mpi-snippet must be a non-empty list of instructions")
    if any(LOCAL_MPI_MARKER in l for l in snippet_lines):
        raise ProfileParseError(f"{source}: mpi-snippet must not contain {LOCAL_MPI_MARKER}")

    launcher = doc.get("mpi-launcher")
    if launcher is not None and (not isinstance(launcher, str) or not launcher):
        raise ProfileParseError(f"{source}: mpi-launcher must be a non-empty string")

    extras = {k: v for k, v in doc.items() if k not in _PROFILE_KEYS}

    return TargetProfile(
        name=doc["name"],
        scheduler=scheduler,
        mpi_snippet=DockerfileFragment(tuple(snippet_lines)),
        submit_host=doc["submit-host"],
        workdir_root=doc["workdir-root"],
        site_mounts=_pairs(doc.get("site-mounts", []), "site-mounts", source),
        extra_symlinks=_pairs(doc.get("extra-symlinks", []), "extra-symlinks", source),
        mpi_launcher=launcher,
        extras=extras,
    )


_builtin_cache: dict[str, TargetProfile] | None = None


def builtin_profiles() -> dict[str, TargetProfile]:
    """Profiles shipped with the package (``test:sim`` and friends)."""
    global _builtin_cache
    if _builtin_cache is None:
        profiles: dict[str, TargetProfile] = {}
        root = resources.files("easey").joinpath("data/profiles")
        for entry in sorted(root.iterdir(), key=lambda e: e.name):
            if entry.name.endswith(".json"):
                profile = parse_profile(entry.read_text(encoding="utf-8"), entry.name)
                profiles[profile.name] = profile
        _builtin_cache = profiles
    return dict(_builtin_cache)


class TargetRegistry:
    """Immutable after load; directory profiles plus the built-ins.

    ``len()`` counts directory-loaded profiles only; lookups span both.
    """

    def __init__(self, profiles: dict[str, TargetProfile] | None = None) -> None:
        self._profiles = dict(profiles or {})
        self._builtins = builtin_profiles()

    def __len__(self) -> int:
        return len(self._profiles)

    def names(self) -> list[str]:
        return sorted(set(self._profiles) | set(self._builtins))

    def lookup(self, name: str) -> TargetProfile:
        if name in self._profiles:
            return self._profiles[name]
        if name in self._builtins:
            return self._builtins[name]
        raise UnknownTarget(f"unknown target {name!r}; known: {', '.join(self.names())}")


def load_registry(path: str | Path | None = None) -> TargetRegistry:
    """Load one profile per ``*.json`` file in ``path``; duplicates rejected.

    ``None`` (or an empty directory) yields a registry that resolves only
    the built-in profiles.
    """
    profiles: dict[str, TargetProfile] = {}
    if path is not None:
        directory = Path(path)
        builtins = builtin_profiles()
        for file in sorted(directory.glob("*.json")):
            profile = parse_profile(file.read_text(encoding="utf-8"), str(file))
            if profile.name in profiles or profile.name in builtins:
                raise DuplicateTarget(f"target {profile.name!r} defined more than once")
            profiles[profile.name] = profile
    return TargetRegistry(profiles)


def lookup_target(name: str, registry: TargetRegistry | None = None) -> TargetProfile:
    return (registry or TargetRegistry()).lookup(name)
