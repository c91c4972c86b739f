import json
from importlib import resources
from pathlib import Path

import pytest

from easey.cluster import SimSession
from easey.engine import JobEngine, JobStore
from easey.imageprep import (MockArchivePacker, MockImageBuilder, build_image,
                             pack_container, transform_dockerfile)
from easey.config import parse_config
from easey.targets import builtin_profiles

GOLDEN_DIR = Path(__file__).parent / "golden"
FIXTURES_DIR = Path(__file__).parent / "fixtures"

# job id of the reference config for the fixed timestamp below, frozen from
# an independent sha256sum run over the documented canonical bytes
LISTING5_JOB_ID = "c21d793ed9fbef23"
LISTING5_TIMESTAMP = "2024-05-02T12:00:00Z"


@pytest.fixture
def listing5_text() -> str:
    return resources.files("easey").joinpath("data/configs/lulesh-dash.json") \
        .read_text(encoding="utf-8")


@pytest.fixture
def listing5_cfg(listing5_text):
    return parse_config(listing5_text)


@pytest.fixture
def sim_profile():
    return builtin_profiles()["test:sim"]


@pytest.fixture
def lrz_profile():
    return builtin_profiles()["lrz:supermuc-ng"]


@pytest.fixture
def make_sim(tmp_path):
    def make(subdir="sim", tick_on_poll=False, profile=None):
        return SimSession(tmp_path / subdir, profile=profile, tick_on_poll=tick_on_poll)

    return make


@pytest.fixture
def make_archive(tmp_path):
    def make(image_name="test-image", df_text="FROM base\nRUN true\n", mount="/data"):
        profile = builtin_profiles()["test:sim"]
        df = transform_dockerfile(df_text, profile, mount)
        builder = MockImageBuilder()
        image = build_image(df, builder, image_name)
        return pack_container(image, tmp_path / "archives", MockArchivePacker(builder))

    return make


@pytest.fixture
def engine(tmp_path):
    return JobEngine(JobStore(tmp_path / "state"), sleep=lambda _s: None)


def make_doc(*, name="job", data=None, nodes=1, cores_per_task=1, tasks_per_node=4,
             clocktime="00:10:00", ram=None, mail=None, steps=None) -> dict:
    doc = {
        "job": {"name": name},
        "deployment": {
            "nodes": nodes,
            "cores-per-task": cores_per_task,
            "tasks-per-node": tasks_per_node,
            "clocktime": clocktime,
        },
        "execution": steps if steps is not None
        else [{"serial": {"command": "echo hi"}},
              {"mpi": {"command": "run-app", "mpi-tasks": 4}}],
    }
    if mail is not None:
        doc["job"]["mail"] = mail
    if ram is not None:
        doc["deployment"]["ram"] = ram
    if data is not None:
        doc["data"] = data
    return doc


def make_text(**kwargs) -> str:
    return json.dumps(make_doc(**kwargs))


def sim_data_section(inputs=("src/in1.txt",), outputs=("outbox/result.txt",)) -> dict:
    section = {"mount": {"container-path": "/data"}}
    if inputs:
        section["input"] = [{"source": f"sim:{p}", "protocol": "scp"} for p in inputs]
    if outputs:
        section["output"] = [{"destination": f"sim:{p}", "protocol": "scp"} for p in outputs]
    return section
