"""Client side of the generator bridge protocol.

Newline-delimited JSON over a child process's stdin/stdout. Requests carry
monotonically increasing ids; the server must answer in order. One client
owns one connection; pool clients for concurrency.

Frames:
  -> {"type":"spec"}
  <- {"type":"spec","latent_dim":n,"num_classes":k,"obs_shape":[...],"value_range":[lo,hi]}
  -> {"type":"generate","z":[...],"c":int,"id":int}
  <- {"type":"obs","id":int,"data":[...]}      (row-major floats)
  -> {"type":"ping"}   <- {"type":"pong"}
  <- {"type":"error","id":int,"message":str}   on failure
"""

from __future__ import annotations

import json
import selectors
import subprocess

import numpy as np

from .generator import GeneratorBase, GeneratorSpec


class BridgeError(Exception):
    """Base for transport failures; callers may retry idempotently."""


class BridgeSpawnError(BridgeError):
    pass


class BridgeTimeout(BridgeError):
    pass


class MalformedFrame(BridgeError):
    pass


class ServerError(BridgeError):
    pass


class BridgeClient(GeneratorBase):
    """Spawns and talks to one generator server over stdio."""

    def __init__(self, command, timeout=10.0):
        self.timeout = timeout
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise BridgeSpawnError(f"bridge spawn failed: {command!r}: {e}") from e
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)
        self._buf = ""
        self._spec = None

    # framing -----------------------------------------------------------------
    def _send(self, obj):
        if self._proc.poll() is not None:
            raise MalformedFrame("server process exited")
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise MalformedFrame(f"write failed: {e}") from e

    def _recv(self):
        while "\n" not in self._buf:
            if not self._sel.select(self.timeout):
                raise BridgeTimeout(f"no reply within {self.timeout}s")
            chunk = self._proc.stdout.readline()
            if chunk == "":
                raise MalformedFrame("server closed the stream")
            self._buf += chunk
        line, self._buf = self._buf.split("\n", 1)
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedFrame(f"undecodable frame: {line[:120]!r}") from e
        if not isinstance(frame, dict) or "type" not in frame:
            raise MalformedFrame(f"frame without type: {line[:120]!r}")
        if frame["type"] == "error":
            raise ServerError(str(frame.get("message", "unspecified server error")))
        return frame

    # protocol ------------------------------------------------------------------
    def handshake(self):
        self._send({"type": "spec"})
        frame = self._recv()
        if frame["type"] != "spec":
            raise MalformedFrame(f"expected spec reply, got {frame['type']!r}")
        try:
            self._spec = GeneratorSpec(
                int(frame["latent_dim"]),
                int(frame["num_classes"]),
                tuple(frame["obs_shape"]),
                tuple(frame["value_range"]),
            )
        except (KeyError, TypeError) as e:
            raise MalformedFrame(f"bad spec payload: {e}") from e
        return self._spec

    def ping(self):
        self._send({"type": "ping"})
        frame = self._recv()
        if frame["type"] != "pong":
            raise MalformedFrame(f"expected pong, got {frame['type']!r}")
        return True

    def spec(self):
        if self._spec is None:
            self.handshake()
        return self._spec

    def generate_batch(self, zs, cs):
        spec = self.spec()
        out = np.empty((len(zs),) + spec.obs_shape, dtype=np.float32)
        for i, (z, c) in enumerate(zip(zs, cs)):
            req_id = self._next_id
            self._next_id += 1
            self._send(
                {"type": "generate", "z": [float(v) for v in z], "c": int(c), "id": req_id}
            )
            frame = self._recv()
            if frame["type"] != "obs":
                raise MalformedFrame(f"expected obs, got {frame['type']!r}")
            if frame.get("id") != req_id:
                raise MalformedFrame(f"response id {frame.get('id')} != request id {req_id}")
            data = np.asarray(frame["data"], dtype=np.float32)
            if data.size != int(np.prod(spec.obs_shape)):
                raise MalformedFrame(
                    f"obs payload size {data.size} != {int(np.prod(spec.obs_shape))}"
                )
            out[i] = data.reshape(spec.obs_shape)
        return out

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._sel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def bridge_generate(client, z, c):
    """Single round-trip with the generate() contract of built-in decoders."""
    return client.generate(z, c)
