"""Local HTTP facade for interactive steering.

Endpoints (JSON unless noted):

    POST /sessions                     body = OBJ bytes -> {id, nv, nf, bbox, validation}
    POST /sessions/{id}/job            {lambda, m?, controls?, constraints?, restart?}
                                       -> {job_id, warm}
    GET  /sessions/{id}/progress?since=K[&timeout=S]
                                       -> {status, records: [...]}  (long-poll <= 10 s)
    GET  /sessions/{id}/result?format=obj|positions
                                       -> OBJ bytes, or "CPOS" + u32 count + f32 xyz LE

A session owns one worker thread; parameter edits preempt the running solve
at the next outer-iteration boundary and warm-start from the captured ADMM
state unless the request is structural (m, constraints, B shape) or asks for
a restart.  Binds 127.0.0.1 by default: this is a local companion, not a
deployment service.
"""
from __future__ import annotations

import argparse
import json
import queue
import struct
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .mesh import MeshError, TriangleMesh, cubeness_score, load_obj, save_obj, validate
from .progressive import decimate, map_constraints_to_coarse, reinflate
from .solver import AdmmState, Constraints, CubicStylizer, SolverContext, StylizeParams
from .style import StyleControls

LONG_POLL_CAP = 10.0


class ServiceError(Exception):
    def __init__(self, status: int, message: str, extra: dict | None = None):
        super().__init__(message)
        self.status = status
        self.payload = {"error": message}
        if extra:
            self.payload.update(extra)


class Session:
    """One uploaded mesh plus its solver worker and progress history."""

    def __init__(self, session_id: str, mesh: TriangleMesh, report):
        self.id = session_id
        self.mesh = mesh
        self.report = report
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.commands: queue.Queue = queue.Queue()
        self.records: list[dict] = []
        self.status = "idle"
        self.iteration = 0
        self.job_counter = 0
        self.current_m: int | None = None
        self.decimations: dict[int, object] = {}
        self.contexts: dict[tuple, SolverContext] = {}
        self.state: AdmmState | None = None
        self.positions: np.ndarray | None = None   # coarse-side positions
        self.structure: tuple | None = None
        self.preempt_snapshot = None
        self.worker = threading.Thread(target=self._worker, daemon=True,
                                       name=f"cubify-session-{session_id[:8]}")
        self.worker.start()

    # -- submission -----------------------------------------------------------

    def submit(self, body: dict) -> dict:
        lam = body.get("lambda", 0.2)
        if not isinstance(lam, (int, float)) or lam < 0:
            raise ServiceError(422, f"lambda must be a nonnegative number, got {lam!r}")
        m = body.get("m")
        if m is not None:
            if not isinstance(m, int) or not (0 < m < self.mesh.n_faces):
                raise ServiceError(
                    422, f"m must be an integer in (0, {self.mesh.n_faces}), got {m!r}")
        try:
            controls = StyleControls.from_dict(body["controls"]) if body.get("controls") else None
            constraints = Constraints.from_dict(body["constraints"]) if body.get("constraints") else None
        except (ValueError, KeyError, TypeError) as e:
            raise ServiceError(422, f"invalid parameters: {e}")
        restart = bool(body.get("restart", False))

        b_shape = None
        if controls is not None and controls.b_matrix is not None:
            b_shape = controls.b_matrix.shape
        structure = (
            m,
            constraints.signature() if constraints else None,
            b_shape,
        )
        params = StylizeParams(lam=float(lam))
        with self.lock:
            warm = (not restart and self.state is not None
                    and structure == self.structure)
            self.job_counter += 1
            job_id = self.job_counter
            self.status = "running"
        self.commands.put({
            "job_id": job_id, "params": params, "m": m,
            "controls": controls, "constraints": constraints,
            "structure": structure, "warm": warm,
        })
        return {"job_id": job_id, "warm": warm}

    # -- worker ---------------------------------------------------------------

    def _solver_inputs(self, cmd):
        m = cmd["m"]
        constraints = cmd["constraints"]
        if m is None:
            mesh = self.mesh
            log = None
        else:
            log = self.decimations.get(m)
            if log is None:
                _, log = decimate(self.mesh, m, floor=4)
                self.decimations[m] = log
            mesh = log.coarse_mesh
            constraints = map_constraints_to_coarse(constraints, log)
        key = (m, constraints.signature() if constraints else None)
        context = self.contexts.get(key)
        if context is None:
            context = SolverContext(mesh, constraints, check=False)
            self.contexts[key] = context
        return mesh, log, context

    def _worker(self):
        while True:
            cmd = self.commands.get()
            if cmd is None:
                return
            try:
                self._run_job(cmd)
            except Exception as e:  # pragma: no cover - defensive
                with self.lock:
                    self.status = "error"
                    self.records.append({
                        "iter": self.iteration, "error": str(e),
                        "rel_displacement": None, "energy": None,
                        "cubeness": None, "millis": 0.0,
                    })
                    self.cond.notify_all()

    def _run_job(self, cmd):
        mesh, log, context = self._solver_inputs(cmd)
        with self.lock:
            if cmd["warm"] and self.state is not None:
                warm_state = self.state.copy()
                init_positions = None if self.positions is None else self.positions.copy()
            else:
                warm_state = None
                init_positions = None
            self.current_m = cmd["m"]
            self.log = log
            self.structure = cmd["structure"]
            self.status = "running"
        engine = CubicStylizer(
            mesh, cmd["params"], controls=cmd["controls"], context=context,
            warm_state=warm_state, initial_positions=init_positions,
        )
        params = cmd["params"]
        while True:
            record = engine.step()
            with self.lock:
                self.iteration += 1
                self.state = engine.state.copy()
                self.positions = engine.positions.copy()
                self.records.append({
                    "iter": self.iteration,
                    "rel_displacement": record["rel_displacement"],
                    "energy": record["energy"],
                    "cubeness": record["cubeness"],
                    "millis": record["millis"],
                    "job_id": cmd["job_id"],
                })
                done = (record["rel_displacement"] < params.stop_tol
                        and record["primal_residual"] < params.stall_tol)
                capped = engine.iteration >= params.max_outer
                preempted = not self.commands.empty()
                if done:
                    self.status = "converged"
                elif preempted:
                    self.status = "stopped"
                    self.preempt_snapshot = (engine.state.copy(), engine.positions.copy())
                elif capped:
                    self.status = "stopped"
                self.cond.notify_all()
            if done or capped or preempted:
                return

    # -- queries --------------------------------------------------------------

    def progress(self, since: int, timeout: float) -> dict:
        deadline = time.monotonic() + min(timeout, LONG_POLL_CAP)
        with self.lock:
            while True:
                fresh = [r for r in self.records if r["iter"] > since]
                if fresh:
                    return {"status": self.status, "records": fresh}
                if self.status in ("idle", "converged", "stopped", "error"):
                    return {"status": self.status, "records": []}
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return {"status": self.status, "records": []}
                self.cond.wait(remaining)

    def full_positions(self) -> np.ndarray:
        with self.lock:
            if not self.records or self.positions is None:
                raise ServiceError(409, "no iterations completed yet")
            positions = self.positions.copy()
            m = self.current_m
            log = self.decimations.get(m) if m is not None else None
        if log is not None:
            return reinflate(positions, log)
        return positions

    def close(self):
        self.commands.put(None)


class SessionManager:
    def __init__(self, max_upload: int = 256 * 1024 * 1024):
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()
        self.max_upload = max_upload

    def create(self, body: bytes) -> dict:
        if len(body) > self.max_upload:
            raise ServiceError(413, f"upload exceeds {self.max_upload} bytes")
        try:
            mesh = load_obj(body)
        except MeshError as e:
            raise ServiceError(400, f"bad OBJ: {e}")
        report = validate(mesh)
        if not report.ok:
            raise ServiceError(400, "mesh failed validation",
                               {"validation": report.to_dict()})
        session = Session(uuid.uuid4().hex, mesh, report)
        with self.lock:
            self.sessions[session.id] = session
        lo, hi = mesh.bbox
        return {
            "id": session.id,
            "nv": mesh.n_vertices,
            "nf": mesh.n_faces,
            "bbox": {"min": list(lo), "max": list(hi)},
            "cubeness": cubeness_score(mesh),
            "validation": report.to_dict(),
        }

    def get(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError(404, f"no session {session_id}")
        return session

    def close_all(self):
        with self.lock:
            sessions = list(self.sessions.values())
        for s in sessions:
            s.close()


MIME = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
        ".map": "application/json", ".png": "image/png", ".svg": "image/svg+xml"}


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "cubify-serve"

    def log_message(self, fmt, *args):  # quiet by default
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    @property
    def manager(self) -> SessionManager:
        return self.server.manager

    def _send(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload: dict):
        self._send(status, json.dumps(payload).encode(), "application/json")

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        if length > self.manager.max_upload:
            raise ServiceError(413, f"upload exceeds {self.manager.max_upload} bytes")
        return self.rfile.read(length)

    def do_POST(self):
        try:
            parts = [p for p in urlparse(self.path).path.split("/") if p]
            if parts == ["sessions"]:
                self._send_json(201, self.manager.create(self._body()))
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "job":
                session = self.manager.get(parts[1])
                try:
                    body = json.loads(self._body() or b"{}")
                except json.JSONDecodeError as e:
                    raise ServiceError(422, f"bad JSON: {e}")
                self._send_json(200, session.submit(body))
            else:
                raise ServiceError(404, f"unknown route {self.path}")
        except ServiceError as e:
            self._send_json(e.status, e.payload)

    def do_GET(self):
        try:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            query = {k: v[-1] for k, v in parse_qs(url.query).items()}
            if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "progress":
                session = self.manager.get(parts[1])
                since = int(query.get("since", "0"))
                timeout = float(query.get("timeout", str(LONG_POLL_CAP)))
                self._send_json(200, session.progress(since, timeout))
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "result":
                session = self.manager.get(parts[1])
                fmt = query.get("format", "obj")
                positions = session.full_positions()
                if fmt == "positions":
                    blob = b"CPOS" + struct.pack("<I", len(positions))
                    blob += positions.astype("<f4").tobytes()
                    self._send(200, blob, "application/octet-stream")
                elif fmt == "obj":
                    self._send(200, save_obj(session.mesh, positions_override=positions),
                               "model/obj")
                else:
                    raise ServiceError(422, f"unknown format {fmt!r}")
            elif getattr(self.server, "frontend_dir", None):
                self._serve_static(url.path)
            else:
                raise ServiceError(404, f"unknown route {self.path}")
        except ServiceError as e:
            self._send_json(e.status, e.payload)

    def _serve_static(self, path: str):
        root = Path(self.server.frontend_dir).resolve()
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            raise ServiceError(404, f"not found: {path}")
        self._send(200, target.read_bytes(),
                   MIME.get(target.suffix, "application/octet-stream"))


def create_server(host: str = "127.0.0.1", port: int = 0,
                  frontend_dir: str | None = None,
                  max_upload: int = 256 * 1024 * 1024,
                  verbose: bool = False) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), Handler)
    server.manager = SessionManager(max_upload=max_upload)
    server.frontend_dir = frontend_dir
    server.verbose = verbose
    return server


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cubify-serve",
                                     description="Local stylization service + UI host.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--frontend", default=None,
                        help="directory of built UI files to serve at /")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    frontend = args.frontend
    if frontend is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend"
        if (bundled / "index.html").exists():
            frontend = str(bundled)
    server = create_server(args.host, args.port, frontend, verbose=args.verbose)
    print(f"cubify-serve listening on http://{args.host}:{server.server_address[1]}/"
          + (f" (ui from {frontend})" if frontend else ""))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.manager.close_all()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
