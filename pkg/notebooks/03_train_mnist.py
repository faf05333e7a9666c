"""
Quantization-aware training on MNIST
====================================

Trains the 784-256-256-256-10 MLP in float and at 4-bit weights and
activations from the same seed, then reads the metrics CSV back.
Runs on the local MNIST split (see ``_data.py``) in well under a minute.
"""

# %%
import tempfile

from _data import mnist_root

from lglsq.train import RunConfig, evaluate, read_metrics, train

root = mnist_root()
out = tempfile.mkdtemp()

# %%
results = {}
for bits in (32, 4):
    cfg = RunConfig(data_root=root, bits_w=bits, bits_a=bits, epochs=8, out_dir=f"{out}/w{bits}")
    results[bits] = train(cfg)
    print(f"W{bits}/A{bits}: final test accuracy {results[bits]['rows'][-1]['test_acc']:.4f}")

# %%
# Every epoch writes one CSV row; per-quantizer scale and search amplitude
# columns follow the fixed leading columns.
rows = read_metrics(results[4]["metrics"])
print(list(rows[0]))
for r in rows:
    print(f"epoch {r['epoch']}: loss {r['train_loss']:.3f} test {r['test_acc']:.3f} "
          f"lambda {r['mean_lambda']:.0f} lr {r['lr']:.4f} "
          f"alpha(fc1.wq) {r['alpha_mean:fc1.wq']:.4f} z(fc1.wq) {r['z_mean:fc1.wq']:.4f}")

# %%
# Evaluating the checkpoint reproduces the last CSV row exactly.
print("checkpoint accuracy:", evaluate(results[4]["checkpoint"]))
