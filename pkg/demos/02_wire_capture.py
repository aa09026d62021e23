"""
The wire format, and what a passive eavesdropper collects
=========================================================

Activations cross the device/server boundary as length-prefixed binary
frames. A man-in-the-middle tap sitting on that channel can log every
frame without disturbing traffic; the log replays into an attacker-side
dataset with no labels and no model knowledge attached.
"""

from pathlib import Path

import numpy as np

from splitlab import channel, datasets, models

out_dir = Path("demo_out/02_wire_capture")
out_dir.mkdir(parents=True, exist_ok=True)

# frame layout: magic | version | dtype | ndim | shape ... | payload
h = models.ActivationTensor(np.arange(6, dtype=np.float32).reshape(2, 3, 1))
frame = channel.serialize(h)
print(f"a (2, 3, 1) float32 tensor occupies {len(frame)} bytes on the wire")
print("header bytes:", frame[:19].hex(" "))

# the round trip is bitwise: no precision loss, no reordering
back = channel.deserialize(frame)
assert back.values.tobytes() == h.values.tobytes()
print("round trip is bitwise identical\n")

# set up a split pipeline and bolt a passive tap onto the channel
data = datasets.make_synthetic(600, seed=3)
model = models.build_model("tinynet", seed=1)
model = models.train_model(model, data, epochs=1, seed=2)
part = models.partition(model, 9)

tap = channel.ChannelTap(mode="passive")
for x in data.images[:200]:
    h = models.forward_head(part, x)
    h_out = channel.transmit(tap, h)          # the tap copies, never edits
    result = models.forward_tail(part, h_out)  # server is none the wiser

print(f"tap logged {tap.log_size()} frames while inference ran normally")

# the eavesdropped dataset knows shapes and values, nothing else
eavesdropped = channel.collect(tap, 200)
print(f"attacker dataset: {eavesdropped.count} tensors shaped "
      f"{eavesdropped.shape}, provenance {eavesdropped.provenance}")

# capture files are just concatenated frames
capture_path = channel.write_capture(eavesdropped.samples,
                                     out_dir / "demo.advr")
reloaded = channel.read_capture(capture_path)
print(f"wrote {capture_path} ({capture_path.stat().st_size} bytes), "
      f"reloaded {reloaded.count} frames")
