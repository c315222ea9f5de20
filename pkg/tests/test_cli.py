import json
import subprocess
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from privsplit import io
from privsplit.cli import _parse_input, main
from privsplit.service import serve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["run", "--config", str(CONFIGS / "minimal.json"), "--output", str(out)]) == 0
    return out


def test_plot_writes_svg(run_dir, tmp_path):
    svg = tmp_path / "c.svg"
    assert main(["plot", str(run_dir / "curve.csv"), "-o", str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<?xml") and "<svg" in svg.read_text()


def test_compare_exit_code_reflects_verdicts(run_dir, capsys):
    code = main(["compare", str(run_dir)])
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert code == (0 if all(l.startswith("PASS") for l in lines) else 1)


def test_errors_exit_2(tmp_path, capsys):
    assert main(["compare", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_parse_input(tmp_path):
    np.testing.assert_array_equal(_parse_input("1,2.5,-3"), [[1, 2.5, -3]])
    p = tmp_path / "x.csv"
    p.write_text("f0,f1,ct1,ct2\n1,2,0,0\n3,4,1,1\n")
    np.testing.assert_array_equal(_parse_input(str(p)), [[1, 2], [3, 4]])


def test_infer_against_running_server(run_dir, capsys):
    srv = serve(io.load_bundle(run_dir / "server_split4.psv"), "127.0.0.1:0")
    try:
        code = main(["infer", "--bundle", str(run_dir / "client_split4.psv"), "--server", srv.address,
                     "--input", str(run_dir / "test.csv"), "--seed", "3"])
    finally:
        srv.stop()
    assert code == 0
    out = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert len(out) == len((run_dir / "test.csv").read_text().splitlines()) - 1
    assert all(o["predicted_class"] in (0, 1) for o in out)


def test_infer_unreachable_server(run_dir, capsys):
    import socket
    s = socket.socket(); s.bind(("127.0.0.1", 0)); port = s.getsockname()[1]; s.close()
    code = main(["infer", "--bundle", str(run_dir / "client_split4.psv"),
                 "--server", f"127.0.0.1:{port}", "--input", "0,0,0,0", "--timeout", "1"])
    assert code == 2


def test_serve_subprocess(run_dir):
    proc = subprocess.Popen([sys.executable, "-m", "privsplit", "serve", "--bundle",
                             str(run_dir / "server_split2.psv"), "--listen", "127.0.0.1:0"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        addr = line.split(" on ")[1].split(" ")[0]
        res = subprocess.run([sys.executable, "-m", "privsplit", "infer", "--bundle",
                              str(run_dir / "client_split2.psv"), "--server", addr,
                              "--input", "0.1,0.2,0.3,0.4"], capture_output=True, text=True, timeout=30)
        assert res.returncode == 0, res.stderr
        assert "predicted_class" in res.stdout
    finally:
        proc.terminate()
        proc.wait(timeout=10)
