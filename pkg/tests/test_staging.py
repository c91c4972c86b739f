import hashlib
import http.server
import threading

import pytest

from easey.config import DataSpec, TransferEndpoint
from easey.staging import (AuthFailed, CredentialStore, FtpBackend, HttpsBackend,
                           LoopbackBackend, PathEscape, ProtocolUnsupported, ScpBackend,
                           TransferExecutor, TransferFailed, TransferTask, data_folder,
                           plan_stage_in, staged_name)


def endpoint(location, protocol="scp", **kw):
    return TransferEndpoint(location=location, protocol=protocol, **kw)


def data_spec(inputs=(), outputs=(), mount="/data"):
    return DataSpec(
        input=tuple(endpoint(loc) for loc in inputs),
        output=tuple(endpoint(loc) for loc in outputs),
        mount=mount)


def make_executor(backends, **kwargs):
    kwargs.setdefault("sleep", lambda _s: None)
    return TransferExecutor(backends=backends, **kwargs)


# --------------------------------------------------------------------------
# planning
# --------------------------------------------------------------------------

def test_plan_orders_inputs_and_creates_folder(tmp_path):
    tasks = plan_stage_in(data_spec(inputs=("sim:a.txt", "sim:b.txt")), tmp_path)
    assert [t.order_index for t in tasks] == [0, 1]
    assert [t.local_path.name for t in tasks] == ["a.txt", "b.txt"]
    assert all(t.direction == "in" for t in tasks)
    assert data_folder(tmp_path).is_dir()


def test_absent_data_plans_nothing(tmp_path):
    assert plan_stage_in(None, tmp_path) == []
    assert not data_folder(tmp_path).exists()


def test_outputs_alone_create_folder(tmp_path):
    assert plan_stage_in(data_spec(outputs=("sim:out.txt",)), tmp_path) == []
    assert data_folder(tmp_path).is_dir()


def test_empty_data_section_creates_no_folder(tmp_path):
    assert plan_stage_in(data_spec(), tmp_path) == []
    assert not data_folder(tmp_path).exists()


def test_traversal_is_rejected(tmp_path):
    with pytest.raises(PathEscape):
        plan_stage_in(data_spec(inputs=("../x",)), tmp_path)


@pytest.mark.parametrize("location,name", [
    ("https://host/dir/file.tar?sig=abc", "file.tar"),
    ("scp://host/dir/file.bin", "file.bin"),
    ("user@host:path/to/input.dat", "input.dat"),
    ("/abs/path/file.txt", "file.txt"),
    ("sub/file.txt", "sub/file.txt"),  # relative paths keep their structure
])
def test_staged_name_rules(location, name):
    assert staged_name(location) == name


def test_staged_name_needs_a_name():
    with pytest.raises(ValueError):
        staged_name("https://host/dir/")


# --------------------------------------------------------------------------
# loopback + executor behavior
# --------------------------------------------------------------------------

@pytest.fixture
def loop_root(tmp_path):
    root = tmp_path / "root"
    (root / "src").mkdir(parents=True)
    (root / "src/in.dat").write_bytes(b"x" * 1234)
    return root


def test_loopback_fetch_ok(loop_root, tmp_path):
    tasks = plan_stage_in(data_spec(inputs=("sim:src/in.dat",)), tmp_path / "job")
    executor = make_executor({"scp": LoopbackBackend(loop_root)})
    result = executor.execute(tasks[0])
    assert result.status == "ok"
    assert result.bytes == 1234
    assert result.task.local_path.read_bytes() == (loop_root / "src/in.dat").read_bytes()


def test_loopback_preserves_content_checksum(loop_root, tmp_path):
    tasks = plan_stage_in(data_spec(inputs=("sim:src/in.dat",)), tmp_path / "job")
    make_executor({"scp": LoopbackBackend(loop_root)}).execute(tasks[0])
    src = hashlib.sha256((loop_root / "src/in.dat").read_bytes()).hexdigest()
    dst = hashlib.sha256(tasks[0].local_path.read_bytes()).hexdigest()
    assert src == dst


def test_gridftp_unsupported(tmp_path):
    task = TransferTask(direction="in",
                        endpoint=endpoint("gsiftp://h/x", protocol="gridftp"),
                        local_path=tmp_path / "x", order_index=0)
    with pytest.raises(ProtocolUnsupported) as err:
        make_executor({"scp": LoopbackBackend(tmp_path)}).execute(task)
    assert err.value.result.status == "failed"


def test_retries_with_exponential_backoff(loop_root, tmp_path):
    sleeps = []
    tasks = plan_stage_in(data_spec(inputs=("sim:src/missing.dat",)), tmp_path / "job")
    executor = TransferExecutor(backends={"scp": LoopbackBackend(loop_root)},
                                sleep=sleeps.append)
    with pytest.raises(TransferFailed) as err:
        executor.execute(tasks[0])
    assert sleeps == [1.0, 2.0, 4.0]
    assert "after 4 attempts" in str(err.value)
    assert err.value.result.status == "failed"


class FlakyBackend:
    def __init__(self, fail_times):
        self.remaining = fail_times

    def fetch(self, endpoint, dest, creds):
        if self.remaining > 0:
            self.remaining -= 1
            raise TransferFailed("transient")
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(b"ok")
        return 2

    def push(self, src, endpoint, creds):
        raise AssertionError("unused")


def test_retry_recovers_after_transient_failures(tmp_path):
    sleeps = []
    task = TransferTask(direction="in", endpoint=endpoint("h:x"),
                        local_path=tmp_path / "x", order_index=0)
    executor = TransferExecutor(backends={"scp": FlakyBackend(fail_times=2)},
                                sleep=sleeps.append)
    result = executor.execute(task)
    assert result.status == "ok"
    assert sleeps == [1.0, 2.0]


class RejectingBackend:
    def fetch(self, endpoint, dest, creds):
        raise AuthFailed("bad key")

    def push(self, src, endpoint, creds):
        raise AuthFailed("bad key")


def test_auth_failures_are_not_retried(tmp_path):
    sleeps = []
    task = TransferTask(direction="in", endpoint=endpoint("h:x"),
                        local_path=tmp_path / "x", order_index=0)
    executor = TransferExecutor(backends={"scp": RejectingBackend()}, sleep=sleeps.append)
    with pytest.raises(AuthFailed):
        executor.execute(task)
    assert sleeps == []


# --------------------------------------------------------------------------
# stage-out
# --------------------------------------------------------------------------

def test_stage_out_pushes_present_files(loop_root, tmp_path):
    job = tmp_path / "job"
    spec = data_spec(outputs=("sim:outbox/result.dat",))
    plan_stage_in(spec, job)
    (data_folder(job) / "result.dat").write_bytes(b"payload")
    results = make_executor({"scp": LoopbackBackend(loop_root)}).stage_out(spec, job)
    assert [r.status for r in results] == ["ok"]
    assert (loop_root / "outbox/result.dat").read_bytes() == b"payload"


def test_stage_out_reports_missing_file_and_continues(loop_root, tmp_path):
    job = tmp_path / "job"
    spec = data_spec(outputs=("sim:outbox/absent.dat", "sim:outbox/present.dat"))
    plan_stage_in(spec, job)
    (data_folder(job) / "present.dat").write_bytes(b"here")
    results = make_executor({"scp": LoopbackBackend(loop_root)}).stage_out(spec, job)
    assert [r.status for r in results] == ["failed", "ok"]
    assert results[0].detail == "output file not found in data folder"
    assert (loop_root / "outbox/present.dat").exists()


def test_stage_out_no_outputs(tmp_path):
    assert make_executor({}).stage_out(data_spec(), tmp_path) == []


def test_stage_out_transfer_failure_reported(tmp_path):
    job = tmp_path / "job"
    spec = data_spec(outputs=("sim:outbox/x.dat",))
    plan_stage_in(spec, job)
    (data_folder(job) / "x.dat").write_bytes(b"x")
    results = make_executor({"scp": RejectingBackend()}).stage_out(spec, job)
    assert [r.status for r in results] == ["failed"]
    assert "bad key" in results[0].detail


# --------------------------------------------------------------------------
# https backend against a local server
# --------------------------------------------------------------------------

class Handler(http.server.BaseHTTPRequestHandler):
    store: dict[str, bytes] = {}

    def do_GET(self):
        if self.path in self.store:
            body = self.store[self.path]
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        elif self.path == "/forbidden":
            self.send_error(403)
        else:
            self.send_error(404)

    def do_PUT(self):
        length = int(self.headers.get("Content-Length", 0))
        self.store[self.path] = self.rfile.read(length)
        self.send_response(201)
        self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def http_url():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    Handler.store = {"/files/in.bin": b"remote-bytes"}
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_https_fetch_ok(http_url, tmp_path):
    task = TransferTask(direction="in",
                        endpoint=endpoint(f"{http_url}/files/in.bin", protocol="https"),
                        local_path=tmp_path / "in.bin", order_index=0)
    result = make_executor({"https": HttpsBackend()}).execute(task)
    assert result.status == "ok"
    assert (tmp_path / "in.bin").read_bytes() == b"remote-bytes"


def test_https_404_reports_status(http_url, tmp_path):
    task = TransferTask(direction="in",
                        endpoint=endpoint(f"{http_url}/nope", protocol="https"),
                        local_path=tmp_path / "x", order_index=0)
    with pytest.raises(TransferFailed) as err:
        make_executor({"https": HttpsBackend()}).execute(task)
    assert "404" in str(err.value)
    assert "404" in err.value.result.detail


def test_https_403_is_auth_failure(http_url, tmp_path):
    task = TransferTask(direction="in",
                        endpoint=endpoint(f"{http_url}/forbidden", protocol="https"),
                        local_path=tmp_path / "x", order_index=0)
    with pytest.raises(AuthFailed):
        make_executor({"https": HttpsBackend()}).execute(task)


def test_https_put(http_url, tmp_path):
    src = tmp_path / "up.bin"
    src.write_bytes(b"uploaded")
    task = TransferTask(direction="out",
                        endpoint=endpoint(f"{http_url}/files/up.bin", protocol="https"),
                        local_path=src, order_index=0)
    result = make_executor({"https": HttpsBackend()}).execute(task)
    assert result.status == "ok"
    assert Handler.store["/files/up.bin"] == b"uploaded"


# --------------------------------------------------------------------------
# scp backend (command construction with a fake runner)
# --------------------------------------------------------------------------

class FakeProc:
    def __init__(self, returncode=0, stdout="", stderr=""):
        self.returncode = returncode
        self.stdout = stdout
        self.stderr = stderr


def test_scp_command_includes_key_and_batch_mode(tmp_path):
    key = tmp_path / "id_ed25519"
    key.write_text("key")
    calls = []

    def runner(cmd, **kwargs):
        calls.append(cmd)
        dest = cmd[-1]
        tmp_path.joinpath("in.dat").write_bytes(b"ab")
        return FakeProc()

    backend = ScpBackend(runner=runner)
    ep = endpoint("user@host:path/in.dat", auth=str(key))
    backend.fetch(ep, tmp_path / "in.dat", CredentialStore())
    cmd = calls[0]
    assert cmd[:5] == ["scp", "-B", "-q", "-o", "BatchMode=yes"]
    assert ["-i", str(key)] == cmd[5:7]
    assert cmd[7] == "user@host:path/in.dat"


def test_scp_user_field_prefixes_location(tmp_path):
    calls = []

    def runner(cmd, **kwargs):
        calls.append(cmd)
        tmp_path.joinpath("x").write_bytes(b"")
        return FakeProc()

    ScpBackend(runner=runner).fetch(endpoint("host:x", user="alice"),
                                    tmp_path / "x", CredentialStore())
    assert calls[0][-2] == "alice@host:x"


def test_scp_missing_key_file_is_auth_failure(tmp_path):
    ep = endpoint("host:x", auth=str(tmp_path / "no-such-key"))
    with pytest.raises(AuthFailed):
        ScpBackend(runner=lambda *a, **k: FakeProc()).fetch(ep, tmp_path / "x",
                                                            CredentialStore())


def test_scp_permission_denied_is_auth_failure(tmp_path):
    runner = lambda *a, **k: FakeProc(returncode=255, stderr="Permission denied (publickey)")
    with pytest.raises(AuthFailed):
        ScpBackend(runner=runner).fetch(endpoint("host:x"), tmp_path / "x",
                                        CredentialStore())


def test_scp_other_failures_are_transfer_failures(tmp_path):
    runner = lambda *a, **k: FakeProc(returncode=1, stderr="No such file or directory")
    with pytest.raises(TransferFailed):
        ScpBackend(runner=runner).fetch(endpoint("host:x"), tmp_path / "x",
                                        CredentialStore())


# --------------------------------------------------------------------------
# ftp backend (stubbed client)
# --------------------------------------------------------------------------

class FakeFtp:
    files = {"pub/data.bin": b"ftp-bytes"}
    logins: list[tuple[str, str]] = []

    def __init__(self, host, timeout=None):
        self.host = host

    def login(self, user, passwd):
        FakeFtp.logins.append((user, passwd))

    def retrbinary(self, cmd, callback):
        path = cmd.removeprefix("RETR ")
        callback(self.files[path])

    def storbinary(self, cmd, fh):
        self.files[cmd.removeprefix("STOR ")] = fh.read()

    def close(self):
        pass


def test_ftp_fetch(tmp_path):
    FakeFtp.logins = []
    backend = FtpBackend(ftp_factory=FakeFtp)
    nbytes = backend.fetch(endpoint("ftp://host/pub/data.bin", protocol="ftp"),
                           tmp_path / "data.bin", CredentialStore())
    assert nbytes == len(b"ftp-bytes")
    assert FakeFtp.logins == [("anonymous", "")]
    assert (tmp_path / "data.bin").read_bytes() == b"ftp-bytes"


def test_ftp_push(tmp_path):
    src = tmp_path / "up.bin"
    src.write_bytes(b"up")
    FtpBackend(ftp_factory=FakeFtp).push(src, endpoint("ftp://host/pub/up.bin",
                                                       protocol="ftp"),
                                         CredentialStore())
    assert FakeFtp.files["pub/up.bin"] == b"up"


def test_ftp_login_rejection_is_auth_failure(tmp_path):
    import ftplib

    class RejectingFtp(FakeFtp):
        def login(self, user, passwd):
            raise ftplib.error_perm("530 Login incorrect")

    with pytest.raises(AuthFailed):
        FtpBackend(ftp_factory=RejectingFtp).fetch(
            endpoint("ftp://host/x", protocol="ftp"), tmp_path / "x", CredentialStore())


# --------------------------------------------------------------------------
# credentials
# --------------------------------------------------------------------------

def test_credentials_default_key(tmp_path):
    store = CredentialStore(default_key=tmp_path / "default.pem")
    assert store.resolve("") == tmp_path / "default.pem"


def test_credentials_relative_resolution(tmp_path):
    store = CredentialStore(base_dir=tmp_path)
    assert store.resolve("keys/a.pem") == tmp_path / "keys/a.pem"
    assert store.resolve("/abs/key.pem").is_absolute()
