"""
Integer export
==============

A trained 4-bit model is written as an LGQ1 file: int8 codes plus float32
scales for quantized weights, floats for everything else. The file is read
back, inspected, and run with integer weight arithmetic.
"""

# %%
import os
import tempfile

import numpy as np
from _data import mnist_root

from lglsq import tensor as T
from lglsq.data import load_dataset
from lglsq.export import export_int, load_int, restore_model, verify_int
from lglsq.train import RunConfig, load_checkpoint, train

root = mnist_root()
out = tempfile.mkdtemp()
cfg = RunConfig(data_root=root, epochs=4, out_dir=out)
train(cfg)

# %%
model, cfg = load_checkpoint(os.path.join(out, "checkpoint.npz"))
path = os.path.join(out, "model.lgq")
export_int(model, cfg, path)
print(f"{path}: {os.path.getsize(path)} bytes")

qm = load_int(path)
for rec in qm.records:
    kind = "codes" if rec.codes is not None else ("scale" if rec.values is None else "float")
    extra = f" alpha={rec.alpha[:2]}" if rec.alpha is not None else ""
    print(f"  {rec.name:<24} {kind:<5} bits={rec.bits:<2} shape={rec.shape}{extra}")

# %%
# Reloading gives the same logits, bit for bit.
test = load_dataset("mnist", root, "test")
back, _ = restore_model(qm)
with T.no_grad():
    same = np.array_equal(model(test.images).data, back(test.images).data)
print("round-trip logits identical:", same)

# %%
# Integer inference against fake-quant inference.
print(verify_int(qm, test.images))
