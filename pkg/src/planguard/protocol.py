"""Length-prefixed JSON wire protocol for external planners and detectors.

Framing: a 4-byte big-endian byte length followed by that many bytes of
UTF-8 JSON.  One request/response exchange per connection.

Planner exchange::

    -> {"instruction": str, "history": [{"step": str, "annotation": str}],
        "feedback": str | null}
    <- {"step": str, "constraints": [str], "rationale": str}

Detector exchange::

    -> {"questions": [str]}
    <- {"answers": ["Yes" | "No", ...]}

Skills and constraints travel as canonical grammar strings.  A malformed
reply raises ProtocolError with the raw payload logged.  The in-repo mock
server answers planner requests from the scripted planner (when given a
task) or from canned replies, and detector requests with a fixed answer or
a canned list; it exists so protocol tests and external integrations have a
reference peer.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading

from .config import SimConfig
from .constraints import parse as parse_constraint
from .errors import PlannerError, ProtocolError
from .planner import (
    HistoryEntry,
    PlanDecision,
    PromptState,
    ScriptedPlanner,
    parse_step,
)
from .world import TaskSpec

log = logging.getLogger(__name__)

_HEADER = struct.Struct(">I")
_MAX_DOC = 16 * 1024 * 1024


def send_doc(sock: socket.socket, doc: dict) -> None:
    payload = json.dumps(doc).encode("utf-8")
    sock.sendall(_HEADER.pack(len(payload)) + payload)


def recv_doc(sock: socket.socket) -> dict:
    header = _recv_exact(sock, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > _MAX_DOC:
        raise ProtocolError(f"frame of {length} bytes exceeds the document limit")
    payload = _recv_exact(sock, length)
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        log.error("malformed protocol document: %r", payload[:200])
        raise ProtocolError(f"malformed document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("protocol document must be a JSON object")
    return doc


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return buf


def _exchange(address: tuple[str, int], doc: dict, timeout_s: float) -> dict:
    try:
        with socket.create_connection(address, timeout=timeout_s) as sock:
            sock.settimeout(timeout_s)
            send_doc(sock, doc)
            return recv_doc(sock)
    except socket.timeout as exc:
        raise ProtocolError(f"no reply from {address} within {timeout_s}s") from exc
    except OSError as exc:
        raise ProtocolError(f"cannot reach {address}: {exc}") from exc


def prompt_to_wire(prompt: PromptState) -> dict:
    return {
        "instruction": prompt.instruction,
        "history": [
            {"step": e.step_text, "annotation": e.annotation} for e in prompt.history
        ],
        "feedback": prompt.feedback.text() if prompt.feedback else None,
    }


class ExternalPlanner:
    """plan_next over the wire; drop-in for ScriptedPlanner."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self.address = (host, port)
        self.timeout_s = timeout_s

    def plan_next(self, prompt: PromptState, task: TaskSpec) -> PlanDecision:
        reply = _exchange(self.address, prompt_to_wire(prompt), self.timeout_s)
        for key in ("step", "constraints", "rationale"):
            if key not in reply:
                log.error("planner reply missing %r: %r", key, reply)
                raise ProtocolError(f"planner reply missing field {key!r}")
        try:
            skill = parse_step(reply["step"])
        except PlannerError as exc:
            raise ProtocolError(str(exc)) from exc
        try:
            constraints = tuple(parse_constraint(t) for t in reply["constraints"])
        except Exception as exc:
            log.error("unparseable constraint in reply: %r", reply)
            raise ProtocolError(f"unparseable constraint: {exc}") from exc
        return PlanDecision(
            step=skill,
            step_text=reply["step"],
            constraints=constraints,
            rationale=str(reply["rationale"]),
        )


class ExternalDetector:
    """Batch yes/no queries over the wire (order-preserving)."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self.address = (host, port)
        self.timeout_s = timeout_s

    def check(self, questions: list[str]) -> list[bool]:
        reply = _exchange(self.address, {"questions": list(questions)}, self.timeout_s)
        answers = reply.get("answers")
        if not isinstance(answers, list) or len(answers) != len(questions):
            log.error("detector reply shape mismatch: %r", reply)
            raise ProtocolError("detector reply must list one answer per question")
        out: list[bool] = []
        for ans in answers:
            if ans == "Yes":
                out.append(True)
            elif ans == "No":
                out.append(False)
            else:
                log.error("non-binary detector answer: %r", reply)
                raise ProtocolError(f"detector answer must be Yes or No, got {ans!r}")
        return out


class MockServer:
    """Reference peer for both protocol roles.

    Planner requests are answered by the scripted planner when a task is
    configured, otherwise from the ``replies`` list (consumed in order).
    Detector requests get ``detector_answer`` for every question unless
    ``detector_replies`` is set.
    """

    def __init__(
        self,
        task: TaskSpec | None = None,
        config: SimConfig | None = None,
        replies: list[dict] | None = None,
        detector_answer: str = "Yes",
        detector_replies: list[list[str]] | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.task = task
        self.planner = ScriptedPlanner(config or SimConfig()) if task else None
        self.replies = list(replies or [])
        self.detector_answer = detector_answer
        self.detector_replies = list(detector_replies or [])
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    doc = recv_doc(self.request)
                    send_doc(self.request, outer._respond(doc))
                except ProtocolError as exc:
                    log.warning("mock server dropping bad request: %s", exc)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread: threading.Thread | None = None

    def _respond(self, doc: dict) -> dict:
        if "questions" in doc:
            questions = doc["questions"]
            if self.detector_replies:
                return {"answers": self.detector_replies.pop(0)}
            return {"answers": [self.detector_answer for _ in questions]}
        if self.replies:
            return self.replies.pop(0)
        if self.planner is None or self.task is None:
            return {"step": "Done", "constraints": [], "rationale": "no replies left"}
        prompt = PromptState(
            instruction=doc.get("instruction", self.task.instruction),
            history=[
                HistoryEntry(h["step"], (), h["annotation"])
                for h in doc.get("history", [])
            ],
        )
        decision = self.planner.plan_next(prompt, self.task)
        from .constraints import render

        return {
            "step": decision.step_text,
            "constraints": [render(c) for c in decision.constraints],
            "rationale": decision.rationale,
        }

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self._server.serve_forever()
