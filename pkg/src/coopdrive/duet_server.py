"""Real-time duet sessions: a human drives one vehicle against the solved policy.

One fixed-step tick loop per session owns all session state; network reads
only deposit the latest input command. Wall-clock jitter affects pacing, never
physics: simulation time advances by exactly one tick quantum per tick, and a
session replayed offline through the batch simulator from its log reproduces
the trace bit-exactly.

Transport: newline-delimited JSON over plain TCP. The same port also answers
HTTP: a WebSocket upgrade speaks the identical message schema (one JSON text
per frame) for browsers, and plain GETs serve the cockpit's static files.

Message schema (all JSON objects, one per line/frame):
  client -> server:
    {"type": "hello", "role": "LKV"|"LCV", "scenario": "default", "seq": 0}
    {"type": "input", "ax": float, "ay": float, "seq": int}   # m/s^2
    {"type": "reset", "seq": int}
  server -> client:
    {"type": "hello_ack", "session_id": str, "tick_rate": float, "human_role": str,
     "machine_role": str, "duration": float, "lane_width": float,
     "veh_length": float, "veh_width": float, "ax_range": [lo, hi],
     "ay_range": [lo, hi]}
    {"type": "refused", "reason": str}
    {"type": "state", "tick": int, "t": float,
     "lkv": {"x":, "y":, "vx":, "vy":}, "lcv": {...},
     "machine": {"ax":, "ay":}, "human": {"ax":, "ay":},
     "collision": bool, "status": "running"|"finished"}
    {"type": "session_end", "reason": "collision"|"duration"|"reset"|"disconnect",
     "metrics": {"duration":, "min_distance":, "jerk_min":, "jerk_max":}}

Stale inputs (seq <= last seen) are ignored; a command older than 1 s decays
to zero. Human lateral input is forced to 0 when the human drives the LKV.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import time
import uuid
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import Role
from .interaction import ActionPair, RelativeState, VehicleState, relative_state, step_world
from .sdp import Policy
from .sim import ChannelController, Scenario, SimTrace, detect_collision, AgentConfig, \
    SdpController, run_episode

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
INPUT_STALE_AFTER = 1.0  # s

CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}


@dataclass
class ServerConfig:
    policy: Policy
    human_role: Role
    scenario: Scenario
    port: int = 8707
    host: str = "127.0.0.1"
    tick_rate: float = 20.0
    log_dir: str | None = None
    web_root: str | None = None

    def __post_init__(self):
        if self.policy.role is self.human_role:
            raise ValueError(
                f"policy drives the {self.policy.role.value}; the human role must be the "
                f"other vehicle"
            )


class _Transport:
    """NDJSON over a stream, or the same JSON text per WebSocket frame."""

    def __init__(self, reader, writer, websocket=False):
        self.reader = reader
        self.writer = writer
        self.websocket = websocket

    async def recv(self) -> dict | None:
        if self.websocket:
            while True:
                frame = await _ws_read_frame(self.reader)
                if frame is None:
                    return None
                op, payload = frame
                if op == 0x1:
                    return json.loads(payload.decode())
                if op == 0x9:  # ping -> pong
                    self.writer.write(_ws_frame(payload, opcode=0xA))
                    await self.writer.drain()
                elif op == 0x8:
                    return None
        line = await self.reader.readline()
        if not line:
            return None
        return json.loads(line.decode())

    def send(self, msg: dict) -> None:
        data = json.dumps(msg, separators=(",", ":")).encode()
        if self.websocket:
            self.writer.write(_ws_frame(data))
        else:
            self.writer.write(data + b"\n")


def _ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    header = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < (1 << 16):
        header.append(126)
        header += n.to_bytes(2, "big")
    else:
        header.append(127)
        header += n.to_bytes(8, "big")
    return bytes(header) + payload


async def _ws_read_frame(reader):
    try:
        head = await reader.readexactly(2)
    except asyncio.IncompleteReadError:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    n = head[1] & 0x7F
    if n == 126:
        n = int.from_bytes(await reader.readexactly(2), "big")
    elif n == 127:
        n = int.from_bytes(await reader.readexactly(8), "big")
    mask = await reader.readexactly(4) if masked else b"\x00" * 4
    payload = bytearray(await reader.readexactly(n))
    if masked:
        for i in range(n):
            payload[i] ^= mask[i % 4]
    return opcode, bytes(payload)


class Session:
    """One human + one policy; the tick loop is the single owner of its state."""

    def __init__(self, cfg: ServerConfig, transport: _Transport, log_fh=None):
        self.cfg = cfg
        self.transport = transport
        self.log_fh = log_fh
        self.session_id = uuid.uuid4().hex[:12]
        self.status = "lobby"
        self.tick = 0
        self.last_seq = -1
        self.human_cmd = (0.0, 0.0)
        self.human_cmd_time = -float("inf")
        self.applied_human = (0.0, 0.0)
        self.machine_cmd = (0.0, 0.0)
        sc = cfg.scenario
        self.lkv = sc.lkv_init
        self.lcv = sc.lcv_init
        self.v0_lkv = sc.lkv_init.vx
        self.v0_lcv = sc.lcv_init.vx
        self.collided = False
        self.history = []  # (t, dist, human_ax) for end-of-session metrics

    # -- message plumbing ----------------------------------------------------

    def _log(self, direction: str, msg: dict) -> None:
        if self.log_fh:
            rec = {"dir": direction, "ts": time.time(), "msg": msg}
            self.log_fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            self.log_fh.flush()

    def send(self, msg: dict) -> None:
        self._log("tx", msg)
        self.transport.send(msg)

    def handle_message(self, msg: dict, now: float) -> None:
        kind = msg.get("type")
        self._log("rx", msg)
        seq = int(msg.get("seq", -1))
        if kind == "hello":
            if self.status != "lobby":
                self.send({"type": "refused", "reason": "session already has a driver"})
                return
            role = msg.get("role")
            if role != self.cfg.human_role.value:
                self.send({"type": "refused",
                           "reason": f"this server hosts a human {self.cfg.human_role.value}"})
                return
            self.status = "running"
            acts = self.cfg.policy.actions
            self.send({
                "type": "hello_ack",
                "session_id": self.session_id,
                "tick_rate": self.cfg.tick_rate,
                "human_role": self.cfg.human_role.value,
                "machine_role": self.cfg.policy.role.value,
                "duration": self.cfg.scenario.duration,
                "lane_width": self.cfg.scenario.lane_width,
                "veh_length": self.cfg.scenario.veh_length,
                "veh_width": self.cfg.scenario.veh_width,
                "ax_range": [acts.ax_values[0], acts.ax_values[-1]],
                "ay_range": [acts.ay_values[0], acts.ay_values[-1]]
                if self.cfg.human_role is Role.LCV and acts.ay_values else [0.0, 0.0],
            })
        elif kind == "input":
            if seq <= self.last_seq:
                return  # stale
            self.last_seq = seq
            self.human_cmd = (float(msg.get("ax", 0.0)), float(msg.get("ay", 0.0)))
            self.human_cmd_time = now
        elif kind == "reset":
            if seq <= self.last_seq:
                return
            self.last_seq = seq
            if self.status == "running":
                self.end("reset")
            self.restart()

    def restart(self) -> None:
        sc = self.cfg.scenario
        self.tick = 0
        self.lkv, self.lcv = sc.lkv_init, sc.lcv_init
        self.collided = False
        self.history.clear()
        self.human_cmd = (0.0, 0.0)
        self.human_cmd_time = -float("inf")
        self.status = "running"

    # -- physics -------------------------------------------------------------

    def _clamped_human(self, now: float) -> tuple[float, float]:
        if now - self.human_cmd_time > INPUT_STALE_AFTER:
            return (0.0, 0.0)
        acts = self.cfg.policy.actions
        ax = min(max(self.human_cmd[0], acts.ax_values[0]), acts.ax_values[-1])
        if self.cfg.human_role is Role.LKV or not acts.ay_values:
            ay = 0.0
        else:
            ay = min(max(self.human_cmd[1], acts.ay_values[0]), acts.ay_values[-1])
        return (ax, ay)

    def step(self, now: float) -> None:
        """Advance exactly one tick quantum and broadcast the resulting state."""
        if self.status != "running":
            return
        dt = 1.0 / self.cfg.tick_rate
        sc = self.cfg.scenario
        if not self.collided and detect_collision(self.lkv, self.lcv, sc.veh_length, sc.veh_width):
            self.collided = True
        if not self.collided:
            human = self._clamped_human(now)
            policy = self.cfg.policy
            if policy.role is Role.LKV:
                obs = relative_state(self.lkv, self.lcv, self.lkv.vx, self.v0_lkv)
                machine = policy.lookup(obs)
                pair = ActionPair(a_lkv_x=machine[0], a_lcv_x=human[0], a_lcv_y=human[1])
            else:
                obs = relative_state(self.lkv, self.lcv, self.lcv.vx, self.v0_lcv)
                machine = policy.lookup(obs)
                pair = ActionPair(a_lkv_x=human[0], a_lcv_x=machine[0], a_lcv_y=machine[1])
            self.machine_cmd = machine
            self.applied_human = human
            self.lkv, self.lcv = step_world(self.lkv, self.lcv, pair, dt)
            if detect_collision(self.lkv, self.lcv, sc.veh_length, sc.veh_width):
                self.collided = True
        else:
            self.applied_human = (0.0, 0.0)
            self.machine_cmd = (0.0, 0.0)
        self.tick += 1
        t = self.tick * dt
        self.history.append((
            t,
            float(np.hypot(self.lcv.x - self.lkv.x, self.lcv.y - self.lkv.y)),
            self.applied_human[0] if self.cfg.human_role is Role.LKV else self.machine_cmd[0],
            self.machine_cmd[0] if self.cfg.human_role is Role.LKV else self.applied_human[0],
        ))
        self.send({
            "type": "state",
            "tick": self.tick,
            "t": t,
            "lkv": {"x": self.lkv.x, "y": self.lkv.y, "vx": self.lkv.vx, "vy": self.lkv.vy},
            "lcv": {"x": self.lcv.x, "y": self.lcv.y, "vx": self.lcv.vx, "vy": self.lcv.vy},
            "machine": {"ax": self.machine_cmd[0], "ay": self.machine_cmd[1]},
            "human": {"ax": self.applied_human[0], "ay": self.applied_human[1]},
            "collision": self.collided,
            "status": self.status,
        })
        if self.collided:
            self.end("collision")
        elif t >= sc.duration - 1e-9:
            self.end("duration")

    def end(self, reason: str) -> None:
        if self.status == "finished":
            return
        self.status = "finished"
        dt = 1.0 / self.cfg.tick_rate
        dists = [h[1] for h in self.history] or [0.0]
        jerks = []
        for col in (2, 3):
            a = [h[col] for h in self.history]
            jerks += [(b - c) / dt for b, c in zip(a[1:], a[:-1])]
        self.send({
            "type": "session_end",
            "reason": reason,
            "metrics": {
                "duration": self.tick * dt,
                "min_distance": min(dists),
                "jerk_min": min(jerks) if jerks else 0.0,
                "jerk_max": max(jerks) if jerks else 0.0,
            },
        })


class DuetServer:
    def __init__(self, cfg: ServerConfig):
        self.cfg = cfg
        self._server = None
        self.port = cfg.port

    async def start(self) -> int:
        self._server = await asyncio.start_server(self._handle, self.cfg.host, self.cfg.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self.port

    async def stop(self) -> None:
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    def run_forever(self) -> None:
        async def _main():
            await self.start()
            await asyncio.Event().wait()

        try:
            asyncio.run(_main())
        except KeyboardInterrupt:
            pass

    async def _handle(self, reader, writer) -> None:
        try:
            first = await reader.readline()
            if not first:
                return
            if first.split(b" ", 1)[0] in (b"GET", b"POST", b"HEAD", b"OPTIONS"):
                await self._handle_http(first, reader, writer)
            else:
                msg = json.loads(first.decode())
                await self._run_session(_Transport(reader, writer), first_msg=msg)
        except (ConnectionError, json.JSONDecodeError, asyncio.IncompleteReadError):
            pass
        finally:
            try:
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _handle_http(self, request_line: bytes, reader, writer) -> None:
        headers = {}
        while True:
            line = await reader.readline()
            if line in (b"\r\n", b"\n", b""):
                break
            k, _, v = line.decode().partition(":")
            headers[k.strip().lower()] = v.strip()
        method, path, _ = request_line.decode().split(" ", 2)
        if headers.get("upgrade", "").lower() == "websocket":
            key = headers.get("sec-websocket-key", "")
            accept = base64.b64encode(hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
            writer.write(
                b"HTTP/1.1 101 Switching Protocols\r\n"
                b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                + f"Sec-WebSocket-Accept: {accept}\r\n\r\n".encode()
            )
            await writer.drain()
            await self._run_session(_Transport(reader, writer, websocket=True))
            return
        await self._serve_static(method, path, writer)

    async def _serve_static(self, method: str, path: str, writer) -> None:
        status, body, ctype = 404, b"not found", "text/plain"
        if self.cfg.web_root:
            root = Path(self.cfg.web_root).resolve()
            rel = path.split("?", 1)[0].lstrip("/") or "index.html"
            target = (root / rel).resolve()
            if target.is_relative_to(root) and target.is_file():
                status, body = 200, target.read_bytes()
                ctype = CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        elif path.rstrip("/") in ("", "/index.html"):
            status, ctype = 200, "text/plain"
            body = b"coopdrive duet server: connect a cockpit over WebSocket or TCP\n"
        reason = {200: "OK", 404: "Not Found"}[status]
        head = (f"HTTP/1.1 {status} {reason}\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
        writer.write(head.encode() + (b"" if method == "HEAD" else body))
        await writer.drain()

    async def _run_session(self, transport: _Transport, first_msg: dict | None = None) -> None:
        log_fh = None
        if self.cfg.log_dir:
            logdir = Path(self.cfg.log_dir)
            logdir.mkdir(parents=True, exist_ok=True)
        session = Session(self.cfg, transport)
        if self.cfg.log_dir:
            log_fh = open(Path(self.cfg.log_dir) / f"session-{session.session_id}.jsonl",
                          "w", encoding="utf-8")
            session.log_fh = log_fh
        loop = asyncio.get_running_loop()
        try:
            if first_msg is not None:
                session.handle_message(first_msg, loop.time())

            async def read_loop():
                while True:
                    msg = await transport.recv()
                    if msg is None:
                        return
                    session.handle_message(msg, loop.time())

            reader_task = asyncio.create_task(read_loop())
            period = 1.0 / self.cfg.tick_rate
            next_tick = loop.time() + period
            while not reader_task.done():
                delay = next_tick - loop.time()
                if delay > 0:
                    try:
                        await asyncio.wait_for(asyncio.shield(reader_task), timeout=delay)
                        break  # client left
                    except asyncio.TimeoutError:
                        pass
                next_tick += period
                if session.status == "running":
                    session.step(loop.time())
                    await transport.writer.drain()
            reader_task.cancel()
        finally:
            if session.status == "running":
                session.end("disconnect")
            if log_fh:
                log_fh.close()


# ---------------------------------------------------------------------------
# offline replay


class _ReplayChannel:
    """Feeds logged per-tick human commands into the batch simulator."""

    def __init__(self, commands: list[tuple[float, float]], dt: float):
        self.commands = commands
        self.dt = dt

    def command(self, t: float) -> tuple[float, float]:
        idx = int(round(t / self.dt))
        if 0 <= idx < len(self.commands):
            return self.commands[idx]
        return (0.0, 0.0)


def load_session_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_session(log_records, cfg: ServerConfig) -> SimTrace:
    """Re-run a logged session offline through run_episode, bit-exactly.

    Uses the applied human command of each broadcast state (the server is the
    clamping authority, so the log already reflects staleness and clamping).
    """
    states = [r["msg"] for r in log_records
              if r["dir"] == "tx" and r["msg"].get("type") == "state"]
    commands = [(s["human"]["ax"], s["human"]["ay"]) for s in states]
    dt = 1.0 / cfg.tick_rate
    scenario = replace(cfg.scenario, dt_sim=dt, dt_plan=dt, noise=None)
    human = ChannelController(_ReplayChannel(commands, dt))
    machine = SdpController(cfg.policy)
    if cfg.human_role is Role.LKV:
        lkv = AgentConfig(role=Role.LKV, controller=human)
        lcv = AgentConfig(role=Role.LCV, controller=machine)
    else:
        lkv = AgentConfig(role=Role.LKV, controller=machine)
        lcv = AgentConfig(role=Role.LCV, controller=human)
    return run_episode(lkv, lcv, scenario)
