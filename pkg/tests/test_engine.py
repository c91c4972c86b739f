import json
from datetime import datetime, timezone

import pytest

from easey.cluster import SessionLost, SimOutcome
from easey.config import parse_config
from easey.engine import (IllegalTransition, JobEngine, JobRecord, JobState, JobStore,
                          NotTerminal, StagingFailed, StoreCorrupt, SubmitFailed,
                          UnknownJob)

from conftest import make_text, sim_data_section


@pytest.fixture
def data_job_setup(tmp_path, engine, make_sim, make_archive):
    """Simulator with two staged inputs, a data job config, and an archive."""
    session = make_sim()
    (session.root / "src").mkdir(parents=True, exist_ok=True)
    (session.root / "src/in1.txt").write_text("alpha")
    (session.root / "src/in2.txt").write_text("beta")
    cfg = parse_config(make_text(
        name="data-job",
        data=sim_data_section(inputs=("src/in1.txt", "src/in2.txt"))))
    return engine, session, cfg, make_archive()


def test_submit_walks_to_pending(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    assert record.state is JobState.pending
    assert record.scheduler_job_id == "1"
    assert [e.name for e in record.step_events] == [
        "archive_move", "extract", "stage_in", "render_batch", "submit"]
    assert [s for s, _ in record.state_history] == ["created", "staging",
                                                    "submitted", "pending"]


def test_submit_places_artifacts_in_workdir(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    workdir = session.resolve(record.workdir)
    assert (workdir / archive.path.name).is_file()
    assert (workdir / "test-image").is_dir()  # extracted execution environment
    assert (workdir / "job.sh").is_file()
    assert sorted(p.name for p in (workdir / "data").iterdir()) == ["in1.txt", "in2.txt"]


def test_submit_stage_in_order_and_ledger(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    ins = [r for r in record.staging_ledger if r.task.direction == "in"]
    assert [r.task.order_index for r in ins] == [0, 1]
    assert all(r.status == "ok" for r in ins)
    assert ins[0].bytes == len("alpha")


def test_submit_without_data_creates_no_folder(engine, make_sim, make_archive):
    session = make_sim()
    cfg = parse_config(make_text(name="nodata"))
    record = engine.submit(cfg, make_archive(), session)
    assert not (session.resolve(record.workdir) / "data").exists()


def test_failing_input_fails_fast(engine, make_sim, make_archive):
    session = make_sim()
    cfg = parse_config(make_text(
        name="broken", data=sim_data_section(inputs=("src/missing.txt",))))
    with pytest.raises(StagingFailed) as err:
        engine.submit(cfg, make_archive(), session)
    record = engine.store.load(err.value.record.id)
    assert record.state is JobState.failed
    assert record.failed_step == "stage_in"
    assert [r.status for r in record.staging_ledger] == ["failed"]
    # fail-fast: the batch script was never rendered or placed
    assert not (session.resolve(record.workdir) / "job.sh").exists()
    assert record.scheduler_job_id is None


def test_corrupt_archive_rejected(engine, make_sim, make_archive):
    archive = make_archive()
    with open(archive.path, "ab") as fh:
        fh.write(b"corruption")
    with pytest.raises(SubmitFailed) as err:
        engine.submit(parse_config(make_text()), archive, make_sim())
    assert "checksum" in str(err.value)
    assert err.value.record.failed_step == "archive_move"


def test_unsubmittable_config_rejected(engine, make_sim, make_archive):
    cfg = parse_config(make_text(
        data={"input": [{"source": "gsiftp://h/x", "protocol": "gridftp"}],
              "mount": "/data"}))
    with pytest.raises(SubmitFailed) as err:
        engine.submit(cfg, make_archive(), make_sim())
    assert "PROTOCOL_UNSUPPORTED_GRIDFTP" in str(err.value)


def test_duplicate_submission_same_instant_rejected(tmp_path, make_sim, make_archive):
    fixed = datetime(2030, 1, 1, tzinfo=timezone.utc)
    engine = JobEngine(JobStore(tmp_path / "state"), sleep=lambda _s: None,
                       clock=lambda: fixed)
    cfg = parse_config(make_text())
    archive = make_archive()
    session = make_sim()
    engine.submit(cfg, archive, session)
    with pytest.raises(SubmitFailed):
        engine.submit(cfg, archive, session)


def test_step_timestamps_strictly_increase(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    stamps = [e.mono_ns for e in record.step_events]
    assert stamps == sorted(stamps)
    assert len(set(stamps)) == len(stamps)


# --------------------------------------------------------------------------
# polling
# --------------------------------------------------------------------------

def test_poll_fresh_job_is_pending(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    assert engine.poll_status(record.id, session) == (JobState.pending, "", "")


def test_poll_running_returns_partial_output(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    session.tick()
    state, stdout, stderr = engine.poll_status(record.id, session)
    assert state is JobState.running
    assert stdout == "job started\n"
    assert stderr == ""


def test_poll_walks_skipped_states(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    session.tick(2)  # sim sprints past running between polls
    state, _, _ = engine.poll_status(record.id, session)
    assert state is JobState.finished
    history = [s for s, _ in engine.store.load(record.id).state_history]
    assert history == ["created", "staging", "submitted", "pending",
                       "running", "finished"]


def test_poll_persists_log_files(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    session.tick(2)
    engine.poll_status(record.id, session)
    reloaded = engine.store.load(record.id)
    assert "job finished" in open(reloaded.log_refs[0]).read()
    assert reloaded.finished_at is not None


def test_poll_unknown_job(engine, make_sim):
    with pytest.raises(UnknownJob):
        engine.poll_status("feedfacefeedface", make_sim())


def test_poll_after_session_lost_marks_stale(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    session.close()
    with pytest.raises(SessionLost):
        engine.poll_status(record.id, session)
    reloaded = engine.store.load(record.id)
    assert reloaded.stale is True
    assert reloaded.state is JobState.pending  # state kept


def test_poll_before_submission_returns_stored_state(engine, make_sim, make_archive):
    session = make_sim()
    cfg = parse_config(make_text(
        name="broken", data=sim_data_section(inputs=("src/missing.txt",))))
    with pytest.raises(StagingFailed) as err:
        engine.submit(cfg, make_archive(), session)
    state, out, errlog = engine.poll_status(err.value.record.id, session)
    assert state is JobState.failed
    assert (out, errlog) == ("", "")


# --------------------------------------------------------------------------
# finalize
# --------------------------------------------------------------------------

def finished_data_job(engine, session, cfg, archive, files=(("result.txt", "out"),)):
    record = engine.submit(cfg, archive, session)
    session.sim.script_outcome(record.scheduler_job_id, SimOutcome(files=tuple(files)))
    session._persist()
    session.tick(2)
    engine.poll_status(record.id, session)
    return record


def test_finalize_stages_out(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = finished_data_job(engine, session, cfg, archive)
    results = engine.finalize(record.id, session)
    assert [r.status for r in results] == ["ok"]
    assert (session.root / "outbox/result.txt").read_text() == "out"
    assert engine.store.load(record.id).staging_ledger[-1].status == "ok"


def test_finalize_running_job_rejected(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    session.tick()
    engine.poll_status(record.id, session)
    with pytest.raises(NotTerminal):
        engine.finalize(record.id, session)


def test_finalize_failed_job_transfers_nothing(engine, make_sim, make_archive):
    session = make_sim()
    (session.root / "src").mkdir(parents=True)
    (session.root / "src/in1.txt").write_text("alpha")
    cfg = parse_config(make_text(name="willfail", data=sim_data_section(
        inputs=("src/in1.txt",))))
    record = engine.submit(cfg, make_archive(), session)
    session.sim.script_outcome(record.scheduler_job_id,
                               SimOutcome(final_state="failed",
                                          stderr_chunks=("boom\n",)))
    session._persist()
    session.tick(2)
    state, _, stderr = engine.poll_status(record.id, session)
    assert state is JobState.failed
    assert stderr == "boom\n"  # logs stay retrievable
    assert engine.finalize(record.id, session) == []


def test_finalize_without_outputs(engine, make_sim, make_archive):
    session = make_sim()
    cfg = parse_config(make_text(name="no-outputs"))
    record = engine.submit(cfg, make_archive(), session)
    session.tick(2)
    engine.poll_status(record.id, session)
    assert engine.finalize(record.id, session) == []


def test_finalize_missing_output_file(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = finished_data_job(engine, session, cfg, archive, files=())
    results = engine.finalize(record.id, session)
    assert [r.status for r in results] == ["failed"]
    assert results[0].detail == "output file not found in data folder"


# --------------------------------------------------------------------------
# record store
# --------------------------------------------------------------------------

def test_store_survives_restart(tmp_path, make_sim, make_archive):
    store = JobStore(tmp_path / "state")
    engine = JobEngine(store, sleep=lambda _s: None)
    session = make_sim()
    archive = make_archive()
    ids = []
    for i in range(3):
        cfg = parse_config(make_text(name=f"job-{i}"))
        ids.append(engine.submit(cfg, archive, session).id)
    reopened = JobStore(tmp_path / "state")
    records = reopened.load_all()
    assert sorted(r.id for r in records) == sorted(ids)
    assert all(r.state is JobState.pending for r in records)


def test_truncated_record_is_store_corrupt(tmp_path):
    store = JobStore(tmp_path)
    (tmp_path / "0123456789abcdef.json").write_text('{"id": "0123456789abc')
    with pytest.raises(StoreCorrupt):
        store.load("0123456789abcdef")


def test_wrong_shape_record_is_store_corrupt(tmp_path):
    store = JobStore(tmp_path)
    (tmp_path / "0123456789abcdef.json").write_text(json.dumps({"id": "x"}))
    with pytest.raises(StoreCorrupt):
        store.load("0123456789abcdef")


def test_empty_store(tmp_path):
    assert JobStore(tmp_path / "fresh").load_all() == []


def test_missing_record_is_unknown_job(tmp_path):
    with pytest.raises(UnknownJob):
        JobStore(tmp_path).load("feedfacefeedface")


def test_round_trip_preserves_machine_position(data_job_setup):
    engine, session, cfg, archive = data_job_setup
    record = engine.submit(cfg, archive, session)
    loaded = engine.store.load(record.id)
    assert loaded.state is record.state
    assert loaded.config == record.config
    assert [e.name for e in loaded.step_events] == [e.name for e in record.step_events]
    assert loaded.state_history == record.state_history
    assert loaded.archive.checksum == archive.checksum


# --------------------------------------------------------------------------
# state machine rules
# --------------------------------------------------------------------------

def make_record(state=JobState.created):
    cfg = parse_config(make_text())
    record = JobRecord(id="0123456789abcdef", config=cfg, target="test:sim",
                       workdir="work/x")
    if state is not JobState.created:
        record.advance_to(state) if state is not JobState.failed \
            else record.advance(JobState.failed)
    return record


@pytest.mark.parametrize("start,good", [
    (JobState.created, JobState.staging),
    (JobState.staging, JobState.submitted),
    (JobState.submitted, JobState.pending),
    (JobState.pending, JobState.running),
    (JobState.running, JobState.finished),
])
def test_forward_transitions_legal(start, good):
    record = make_record(start)
    record.advance(good)
    assert record.state is good


@pytest.mark.parametrize("start", [JobState.created, JobState.staging,
                                   JobState.submitted, JobState.pending,
                                   JobState.running])
def test_any_preterminal_can_fail(start):
    record = make_record(start)
    record.advance(JobState.failed)
    assert record.state is JobState.failed


@pytest.mark.parametrize("start,bad", [
    (JobState.created, JobState.pending),
    (JobState.pending, JobState.staging),
    (JobState.running, JobState.pending),
    (JobState.finished, JobState.running),
    (JobState.failed, JobState.pending),
    (JobState.finished, JobState.failed),
])
def test_illegal_transitions_rejected(start, bad):
    record = make_record(start)
    with pytest.raises(IllegalTransition):
        record.advance(bad)


def test_advance_to_walks_the_path():
    record = make_record(JobState.pending)
    record.advance_to(JobState.finished)
    assert [s for s, _ in record.state_history] == [
        "created", "staging", "submitted", "pending", "running", "finished"]


def test_advance_to_rejects_backward():
    record = make_record(JobState.running)
    with pytest.raises(IllegalTransition):
        record.advance_to(JobState.pending)


def test_traversal_input_fails_staging(engine, make_sim, make_archive):
    session = make_sim()
    cfg = parse_config(make_text(
        name="escape",
        data={"input": [{"source": "../x", "protocol": "scp"}],
              "mount": {"container-path": "/data"}}))
    with pytest.raises(StagingFailed) as err:
        engine.submit(cfg, make_archive(), session)
    assert err.value.record.failed_step == "stage_in"
