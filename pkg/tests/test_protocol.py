import json
import sys
import threading

import numpy as np
import pytest

from poseadv.errors import ConfigError, ProtocolError
from poseadv.protocol import (
    ExternalDetector, decode_request, encode_request, parse_response, serve_tcp, stub_reply,
)

STUB = f"stdio:{sys.executable} -m poseadv stub-detector"


def test_request_round_trip():
    img = np.random.default_rng(0).random((3, 4, 3))
    req_id, back = decode_request(encode_request(17, img))
    assert req_id == 17 and back.shape == (3, 4, 3)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


@pytest.mark.parametrize("line", [b"nope", b'{"id": 1}', b'{"id": 1, "width": 2, "height": 1, "pixels": "AAAA"}'])
def test_bad_requests(line):
    with pytest.raises(ProtocolError):
        decode_request(line)


def test_parse_response_checks():
    ok = b'{"id": 3, "detections": [{"x1": 0, "y1": 0, "x2": 2, "y2": 3, "conf": 0.4, "label": "person"}]}'
    (d,) = parse_response(ok, 3)
    assert d.conf == 0.4 and d.bbox.y2 == 3
    for line, expect in [(ok, 4), (b"{", 3), (b'{"id": 3}', 3), (b'{"id": 3, "detections": {}}', 3),
                         (b'{"id": 3, "detections": [{"x1": 0}]}', 3),
                         (b'{"id": 3, "detections": [{"x1": 2, "y1": 0, "x2": 1, "y2": 1, "conf": 0.1, '
                          b'"label": "person"}]}', 3)]:
        with pytest.raises(ProtocolError):
            parse_response(line, expect)


def test_stub_modes():
    line = encode_request(5, np.full((2, 2, 3), 0.2))
    assert json.loads(stub_reply(line, "constant", 0.3))["detections"][0]["conf"] == 0.3
    echo = json.loads(stub_reply(line, "echo"))["detections"][0]["conf"]
    assert echo == pytest.approx(51 / 255)
    assert json.loads(stub_reply(line, "wrong-id"))["id"] == 6
    assert stub_reply(line, "silent") is None
    assert json.loads(stub_reply(line, "toy"))["detections"] == []
    with pytest.raises(ConfigError):
        stub_reply(line, "bogus")


def test_stdio_round_trip_ids_and_content():
    rng = np.random.default_rng(1)
    with ExternalDetector(STUB.replace("stub-detector", "stub-detector --mode echo"), timeout=20) as det:
        for _ in range(30):
            img = rng.random((rng.integers(1, 9), rng.integers(1, 9), 3))
            (d,) = det.detect(img)
            assert d.conf == pytest.approx(np.round(img * 255).mean() / 255)
            assert (d.bbox.x2, d.bbox.y2) == (img.shape[1], img.shape[0])


@pytest.mark.parametrize("mode", ["malformed", "wrong-id"])
def test_stdio_bad_server(mode):
    with ExternalDetector(f"{STUB} --mode {mode}", timeout=20) as det:
        with pytest.raises(ProtocolError):
            det.detect(np.zeros((2, 2, 3)))


def test_timeout():
    with ExternalDetector(f"{STUB} --mode silent", timeout=0.5) as det:
        with pytest.raises(ProtocolError, match="timed out"):
            det.detect(np.zeros((2, 2, 3)))


def test_tcp_round_trip():
    box = {}
    ready = threading.Event()

    def on_ready(addr):
        box["addr"] = addr
        ready.set()

    threading.Thread(target=serve_tcp, kwargs=dict(port=0, mode="constant", conf=0.6, ready=on_ready),
                     daemon=True).start()
    assert ready.wait(10)
    host, port = box["addr"]
    with ExternalDetector(f"tcp://{host}:{port}", timeout=10) as det:
        for _ in range(5):
            assert det.detect(np.zeros((4, 3, 3)))[0].conf == 0.6


def test_bad_endpoints():
    with pytest.raises(ConfigError):
        ExternalDetector("http://x")
    with pytest.raises(ProtocolError):
        ExternalDetector("tcp://127.0.0.1:1", timeout=1)
    with pytest.raises(ProtocolError):
        ExternalDetector("stdio:/nonexistent/binary")
