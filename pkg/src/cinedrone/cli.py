"""Headless host CLI.

Subcommands:
  run       tick a scenario, optionally serving the wire protocol
  replay    re-run a scenario against a recorded command trace
  bench     time planning and smoothing queries on a scenario's roadmap
  validate  lint a scenario file

A command trace is JSON lines, each row ``{"tick": n, "command": {...}}``;
a row's command is queued when the run reaches that tick and takes effect
on the following tick, exactly as if an operator had sent it then.
"""

from __future__ import annotations

import argparse
import json
import selectors
import socket
import statistics
import sys
import time

import numpy as np

from .planner import PlanParams, plan_framing_path, plan_sketch_path
from .protocol import (
    MAX_FRAME,
    MessageReader,
    ProtocolError,
    ack_message,
    delta_message,
    encode_message,
    error_message,
    hello_message,
    snapshot_message,
)
from .scenario import ScenarioError, load_scenario
from .simulation import (
    Simulation,
    _resample_polyline,
    export_metrics,
)
from .smoother import PortalConstraint, optimize_spline

SNAPSHOT_EVERY = 5          # ticks between full snapshots (10 Hz at 50 Hz)
MAX_OUTBUF = 2 * MAX_FRAME  # slow clients get dropped past this backlog


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cinedrone")
    sub = parser.add_subparsers(required=True)

    run = sub.add_parser("run", help="tick a scenario")
    _common_flags(run)
    run.add_argument("--serve", type=int, metavar="PORT",
                     help="accept wire-protocol clients on this port")
    run.add_argument("--fast", action="store_true",
                     help="tick as fast as possible instead of real time "
                          "(only matters with --serve)")
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="re-run a recorded command trace")
    replay.add_argument("trace", help="JSON-lines command trace file")
    _common_flags(replay)
    replay.set_defaults(func=cmd_replay)

    bench = sub.add_parser("bench", help="time planning queries")
    bench.add_argument("--scenario", required=True)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--queries", type=int, default=50)
    bench.set_defaults(func=cmd_bench)

    validate = sub.add_parser("validate", help="lint a scenario file")
    validate.add_argument("--scenario", required=True)
    validate.set_defaults(func=cmd_validate)
    return parser


def _common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--scenario", required=True)
    sub.add_argument("--seed", type=int, default=None,
                     help="override the scenario's seed")
    sub.add_argument("--ticks", type=int, default=None,
                     help="tick count (default 500, unlimited with --serve)")
    sub.add_argument("--record", metavar="FILE",
                     help="write the telemetry stream here")
    sub.add_argument("--metrics-out", metavar="FILE",
                     help="write the metrics table here")


def _load(args) -> Simulation:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.params.seed = args.seed
    return Simulation(scenario)


def _write_outputs(sim: Simulation, args):
    if args.record:
        with open(args.record, "w") as fh:
            fh.write(sim.telemetry_text())
    if getattr(args, "metrics_out", None):
        with open(args.metrics_out, "w") as fh:
            fh.write(export_metrics(sim))


def cmd_run(args) -> int:
    sim = _load(args)
    if args.serve is not None:
        server = Server(sim, args.serve, fast=args.fast)
        try:
            server.loop(args.ticks)
        finally:
            server.close()
            _write_outputs(sim, args)
        return 0
    sim.run(args.ticks if args.ticks is not None else 500)
    _write_outputs(sim, args)
    print(f"ran {sim.tick_index} ticks, {len(sim.events)} events")
    return 0


def cmd_replay(args) -> int:
    sim = _load(args)
    by_tick: dict[int, list] = {}
    with open(args.trace) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if not isinstance(row.get("tick"), int) \
                    or not isinstance(row.get("command"), dict):
                print(f"{args.trace}:{i + 1}: rows need an integer tick "
                      "and a command object", file=sys.stderr)
                return 2
            by_tick.setdefault(row["tick"], []).append(row["command"])
    last = max(by_tick, default=0)
    ticks = args.ticks if args.ticks is not None else last + 250
    rejected = 0
    while sim.tick_index < ticks:
        for cmd in by_tick.get(sim.tick_index, ()):
            ok, msg = sim.submit(cmd)
            if not ok:
                rejected += 1
                print(f"tick {sim.tick_index}: rejected {cmd.get('type')}: "
                      f"{msg}", file=sys.stderr)
        sim.tick()
    _write_outputs(sim, args)
    print(f"replayed {sim.tick_index} ticks, "
          f"{sum(len(v) for v in by_tick.values()) - rejected} commands, "
          f"{len(sim.events)} events")
    return 0


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)  # raises ScenarioError
    print(f"ok: {scenario.name!r}, {len(scenario.drones)} drones, "
          f"{len(scenario.targets)} targets, "
          f"{len(scenario.obstacles)} obstacles")
    return 0


# -- bench ----------------------------------------------------------------


def _percentiles(samples: list) -> tuple[float, float]:
    return (statistics.median(samples),
            float(np.percentile(samples, 90)))


def cmd_bench(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.params.seed = args.seed
    sim = Simulation(scenario)
    roadmap = sim.roadmap
    params = sim.plan_params
    rng = np.random.default_rng(scenario.params.seed + 1)
    centers = roadmap.sphere_centers
    n_queries = args.queries

    framing_ms, spline_ms, plans = [], [], []
    while len(framing_ms) < n_queries:
        a, b = rng.integers(0, len(centers), size=2)
        if a == b:
            continue
        t0 = time.perf_counter()
        try:
            result = plan_framing_path(centers[a], centers[b], sim.targets,
                                       roadmap, params)
        except ValueError:
            continue
        if result is None:
            continue
        framing_ms.append((time.perf_counter() - t0) * 1e3)
        if len(result.positions) >= 2:
            plans.append(result)

    for result in plans[:n_queries]:
        cons = []
        for node in result.node_ids:
            if node < 0:
                cons.append(None)
            else:
                cons.append(PortalConstraint(roadmap.portal_centers[node],
                                             roadmap.portal_normals[node],
                                             float(roadmap.portal_radii[node])))
        t0 = time.perf_counter()
        optimize_spline(np.asarray(result.positions, dtype=float), cons)
        spline_ms.append((time.perf_counter() - t0) * 1e3)

    lo, hi = scenario.bounds.lo, scenario.bounds.hi
    sketch_ms = []
    while len(sketch_ms) < n_queries:
        k = int(rng.integers(3, 7))
        pts = rng.uniform(lo, hi, size=(k, 3))
        pts[:, 2] = np.clip(pts[:, 2], params.z_min + 0.2, params.z_max - 0.2)
        sketch = _resample_polyline(pts)
        start = int(rng.integers(0, len(roadmap.portal_centers)))
        t0 = time.perf_counter()
        try:
            result = plan_sketch_path(sketch, start, roadmap, params)
        except ValueError:
            continue
        if result is None:
            continue
        sketch_ms.append((time.perf_counter() - t0) * 1e3)

    print(f"roadmap: {len(centers)} spheres, "
          f"{len(roadmap.portal_centers)} portals, "
          f"{len(roadmap.arcs)} arcs")
    print(f"{'query':<16}{'median ms':>12}{'p90 ms':>12}{'n':>6}")
    for label, samples in (("framing plan", framing_ms),
                           ("sketch plan", sketch_ms),
                           ("spline fit", spline_ms)):
        med, p90 = _percentiles(samples)
        print(f"{label:<16}{med:>12.2f}{p90:>12.2f}{len(samples):>6}")
    return 0


# -- the serve loop --------------------------------------------------------


class _Conn:
    def __init__(self, sock: socket.socket):
        sock.setblocking(False)
        self.sock = sock
        self.reader = MessageReader()
        self.out = bytearray()

    def queue(self, msg: dict):
        self.out.extend(encode_message(msg))


class Server:
    """Single-threaded host: one authoritative tick loop, sockets polled
    between ticks. Commands are queued per connection in arrival order
    and take effect at the next tick boundary; every client gets a hello
    plus snapshot on connect, a delta per tick, and a fresh snapshot
    every SNAPSHOT_EVERY ticks."""

    def __init__(self, sim: Simulation, port: int, fast: bool = False):
        self.sim = sim
        self.fast = fast
        self.listener = socket.create_server(("127.0.0.1", port))
        self.listener.setblocking(False)
        self.sel = selectors.DefaultSelector()
        self.sel.register(self.listener, selectors.EVENT_READ, None)
        self.conns: dict[socket.socket, _Conn] = {}
        self.event_cursor = len(sim.events)
        print(f"serving on 127.0.0.1:{self.listener.getsockname()[1]}",
              flush=True)

    @property
    def port(self) -> int:
        return self.listener.getsockname()[1]

    def loop(self, ticks: int | None):
        dt = self.sim.dt
        next_tick = time.monotonic()
        while ticks is None or self.sim.tick_index < ticks:
            timeout = 0.0 if self.fast \
                else max(0.0, next_tick - time.monotonic())
            self._poll(timeout)
            ran = self.sim.advance()
            if ran:
                self._broadcast()
            next_tick += dt
            if next_tick < time.monotonic() - 1.0:
                next_tick = time.monotonic()  # fell behind; don't sprint

    def _poll(self, timeout: float):
        for key, _ in self.sel.select(timeout):
            if key.data is None:
                self._accept()
            else:
                self._read(key.data)
        self._flush()

    def _accept(self):
        try:
            sock, _ = self.listener.accept()
        except OSError:
            return
        conn = _Conn(sock)
        self.conns[sock] = conn
        self.sel.register(sock, selectors.EVENT_READ, conn)
        conn.queue(hello_message(self.sim))
        conn.queue(snapshot_message(self.sim))

    def _read(self, conn: _Conn):
        try:
            data = conn.sock.recv(65536)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop(conn)
            return
        if not data:
            self._drop(conn)
            return
        try:
            messages = conn.reader.feed(data)
        except ProtocolError as exc:
            conn.queue(error_message(str(exc)))
            self._flush_one(conn)
            self._drop(conn)
            return
        for msg in messages:
            if msg["type"] != "command":
                conn.queue(error_message(
                    f"clients send command messages, not {msg['type']}"))
                continue
            ok, detail = self.sim.submit(msg["command"])
            conn.queue(ack_message(msg["seq"], ok, detail))

    def _broadcast(self):
        events = self.sim.events[self.event_cursor:]
        self.event_cursor = len(self.sim.events)
        if not self.conns:
            return
        delta = delta_message(self.sim, events)
        send_snapshot = self.sim.tick_index % SNAPSHOT_EVERY == 0
        snapshot = snapshot_message(self.sim) if send_snapshot else None
        for conn in list(self.conns.values()):
            conn.queue(delta)
            if snapshot is not None:
                conn.queue(snapshot)
        self._flush()

    def _flush(self):
        for conn in list(self.conns.values()):
            self._flush_one(conn)

    def _flush_one(self, conn: _Conn):
        if not conn.out:
            return
        try:
            sent = conn.sock.send(conn.out)
            del conn.out[:sent]
        except (BlockingIOError, InterruptedError):
            pass
        except OSError:
            self._drop(conn)
            return
        if len(conn.out) > MAX_OUTBUF:
            self._drop(conn)

    def _drop(self, conn: _Conn):
        self.conns.pop(conn.sock, None)
        try:
            self.sel.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        conn.sock.close()

    def close(self):
        for conn in list(self.conns.values()):
            self._drop(conn)
        self.sel.unregister(self.listener)
        self.listener.close()
        self.sel.close()


if __name__ == "__main__":
    sys.exit(main())
