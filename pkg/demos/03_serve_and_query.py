"""Spin up the slice service and query it like the browser viewer would.

Saves a quick checkpoint, starts the HTTP server on an ephemeral port in a
background thread, and fetches /info plus a couple of slices.
Run:  python3 demos/03_serve_and_query.py
"""

import json
import tempfile
import threading
import urllib.request
from pathlib import Path

import numpy as np

from echosplat.server import make_server
from echosplat.trainer import save_checkpoint
from echosplat.volume import blobs_cloud, evaluate_cloud_on_grid, Volume, save_volume

tmp = Path(tempfile.mkdtemp())
cloud = blobs_cloud((32, 32, 32), spacing=1.0, seed=7)
save_checkpoint(cloud, tmp / "model.bin")
save_volume(Volume(evaluate_cloud_on_grid(cloud, (32, 32, 32), 1.0)
                   .astype(np.float32), 1.0), tmp / "gt")

server = make_server(tmp / "model.bin", tmp / "gt", port=0)
base = f"http://127.0.0.1:{server.server_address[1]}"
threading.Thread(target=server.serve_forever, daemon=True).start()
print("serving at", base)

info = json.load(urllib.request.urlopen(base + "/info"))
print("info:", json.dumps(info, indent=2))

for q in ("/slice?w=64&h=64&spacing=0.5&fmt=f32",
          "/slice?rx=30&tz=4&w=64&h=64&spacing=0.5&fmt=f32",
          "/gt_slice?w=64&h=64&spacing=0.5&fmt=f32"):
    body = urllib.request.urlopen(base + q).read()
    pixels = np.frombuffer(body, "<f4").reshape(64, 64)
    print(f"{q:48s} -> mean {pixels.mean():.3f}  max {pixels.max():.3f}")

server.shutdown()
print("done")
