"""End-to-end checks against a real server on loopback: the documented
surface the browser console consumes (real-time pacing, WebSocket stream,
command injection). Runs a uvicorn instance on an ephemeral port."""

import asyncio
import json
import socket
import threading
import time

import pytest
import uvicorn

from bcigrasp.harness import default_config
from bcigrasp.service import create_app


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def server():
    port = free_port()
    app = create_app(default_config(3, seed=8), realtime=True)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    srv = uvicorn.Server(config)
    thread = threading.Thread(target=srv.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    import httpx

    while time.time() < deadline:
        try:
            httpx.get(f"http://127.0.0.1:{port}/state", timeout=1.0)
            break
        except Exception:
            time.sleep(0.05)
    else:
        raise RuntimeError("server did not start")
    yield f"127.0.0.1:{port}"
    srv.should_exit = True
    thread.join(timeout=5)


async def ws_session(base, coro):
    import websockets

    async with websockets.connect(f"ws://{base}/stream", open_timeout=5) as ws:
        return await coro(ws)


def run(awaitable):
    return asyncio.new_event_loop().run_until_complete(awaitable)


def test_snapshots_stream_in_real_time(server):
    async def scenario(ws):
        t0 = time.perf_counter()
        count = 0
        while time.perf_counter() - t0 < 1.5:
            msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=2.0))
            if "tick" in msg:
                count += 1
        return count

    count = run(ws_session(server, scenario))
    # 20 Hz nominal; generous floor per the rendering contract (>= 18/s)
    assert count >= 18


def test_command_round_trip_under_100ms(server):
    import httpx

    httpx.post(f"http://{server}/session",
               json={"experiment": 3, "seed": 8, "condition": "neurofeedback"})

    async def scenario(ws):
        # let the prepare phase elapse on the wall clock
        while True:
            msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=3.0))
            if msg.get("phase") == "decide":
                break
        latencies = []
        for cmd, expect in (("mi_right", lambda m: m["s_t"] > 0.5),
                            ("mi_release", lambda m: m["s_t"] == 0.0)):
            sent = time.perf_counter()
            await ws.send(json.dumps({"cmd": cmd}))
            while True:
                msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=3.0))
                if expect(msg):
                    latencies.append(time.perf_counter() - sent)
                    break
        return latencies

    latencies = run(ws_session(server, scenario))
    assert all(lat < 0.100 for lat in latencies), latencies


def test_lift_hold_confirms_and_arm_descends(server):
    import httpx

    httpx.post(f"http://{server}/session",
               json={"experiment": 3, "seed": 8, "condition": "neurofeedback"})

    async def scenario(ws):
        while True:
            msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=3.0))
            if msg.get("phase") == "decide":
                break
        await ws.send(json.dumps({"cmd": "mi_lift"}))
        phases = set()
        joint_tracks = []
        deadline = time.time() + 12
        while time.time() < deadline:
            msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=3.0))
            if "phase" not in msg:
                continue
            phases.add(msg["phase"])
            if msg["phase"] == "execute":
                joint_tracks.append(msg["joints"])
                if msg.get("gripper") == "closed":
                    break
        return phases, joint_tracks

    phases, tracks = run(ws_session(server, scenario))
    assert "confirm" in phases
    assert "execute" in phases
    assert len(tracks) >= 3
    moved = max(
        max(abs(a - b) for a, b in zip(tracks[0], tr)) for tr in tracks[1:]
    )
    assert moved > 0.1  # the arm visibly traverses the grasp waypoints
