"""Line-delimited JSON generator server over stdio.

One request per line on stdin, one reply per line on stdout, strictly in
request order. Protocol:

  {"type":"spec"}                          -> spec reply
  {"type":"generate","z":[...],"c":i,"id":n} -> {"type":"obs","id":n,"data":[...]}
  {"type":"ping"}                          -> {"type":"pong"}
  anything invalid                         -> {"type":"error","id":n|null,"message":...}

Observations are emitted as float32 lists; image-model wrappers must scale
to the declared value range before emitting.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .decoders import build_decoder


def spec_reply(dec):
    return {
        "type": "spec",
        "latent_dim": dec.latent_dim,
        "num_classes": dec.num_classes,
        "obs_shape": list(dec.obs_shape),
        "value_range": list(dec.value_range),
    }


def handle(dec, req, batch_cap):
    t = req.get("type")
    if t == "spec":
        return spec_reply(dec)
    if t == "ping":
        return {"type": "pong"}
    if t == "generate":
        req_id = req.get("id")
        try:
            z = np.asarray(req["z"], dtype=np.float32)
            c = int(req["c"])
        except (KeyError, TypeError, ValueError) as e:
            return {"type": "error", "id": req_id, "message": f"bad generate request: {e}"}
        if z.shape != (dec.latent_dim,):
            return {"type": "error", "id": req_id,
                    "message": f"latent shape {list(z.shape)} != [{dec.latent_dim}]"}
        if not 0 <= c < dec.num_classes:
            return {"type": "error", "id": req_id,
                    "message": f"class {c} outside [0, {dec.num_classes})"}
        obs = dec.generate(z, c)
        return {"type": "obs", "id": req_id,
                "data": [float(v) for v in np.asarray(obs, dtype=np.float32).ravel()]}
    return {"type": "error", "id": req.get("id"), "message": f"unknown request type {t!r}"}


def serve(dec, stdin=None, stdout=None, batch_cap=64):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            reply = {"type": "error", "id": None, "message": f"undecodable frame: {e}"}
        else:
            reply = handle(dec, req, batch_cap)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser(prog="genserver", description=__doc__)
    ap.add_argument("--model", default="identity",
                    help="'identity' or path to an .npz MLP decoder")
    ap.add_argument("--latent-dim", type=int, default=None)
    ap.add_argument("--num-classes", type=int, default=None)
    ap.add_argument("--batch-cap", type=int, default=64)
    ap.add_argument("--device", default="cpu", help="accepted and ignored (CPU only)")
    args = ap.parse_args(argv)
    try:
        dec = build_decoder(args.model, args.latent_dim, args.num_classes)
    except (OSError, ValueError) as e:
        sys.stdout.write(json.dumps({"type": "error", "id": None,
                                     "message": f"model load failed: {e}"}) + "\n")
        sys.stdout.flush()
        return 2
    serve(dec, batch_cap=args.batch_cap)
    return 0


if __name__ == "__main__":
    sys.exit(main())
