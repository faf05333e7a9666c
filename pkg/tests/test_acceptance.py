"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (or execute this file).
The summary block is written to the terminal when the module finishes.
The full-CIFAR run is opt-in through ``LGLSQ_EXTENDED=1``; CIFAR criteria
skip when the CIFAR-10 binaries are not under ``$LGLSQ_DATA``.
"""

import dataclasses
import os

import numpy as np
import pytest

from lglsq.ablate import ablate
from lglsq.data import DATA_ENV
from lglsq.errors import FormatError
from lglsq.estimators import EstimatorConfig, asr_backward, asr_forward, mde_adjust
from lglsq.export import dumps, loads, quantized_model_from, restore_model, verify_int
from lglsq.quantizer import QuantizerState, dequantize, init_scale, quantize_codes
from lglsq.ssg import LEFT, MIDDLE, RIGHT, SsgState, scale_step, ssg_observe_and_adapt
from lglsq import tensor as T
from lglsq.train import RunConfig, train

RESULTS = {}


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    write = tr.write_line if tr else print
    write("")
    write("acceptance summary")
    for n in sorted(RESULTS, key=lambda k: (int(k.rstrip("ab")), k)):
        status, detail = RESULTS[n]
        write(f"  [{status}] criterion {n:>2}: {detail}")


def record(n, ok, detail):
    n = str(n)
    RESULTS[n] = ("PASS" if ok else "FAIL", detail)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    assert ok, detail


def skip(n, reason):
    RESULTS[str(n)] = ("SKIP", reason)
    pytest.skip(reason)


def cifar_root():
    root = os.environ.get(DATA_ENV)
    if not root:
        return None
    for cand in (root, os.path.join(root, "cifar-10-batches-bin")):
        if os.path.exists(os.path.join(cand, "test_batch.bin")):
            return root
    return None


# ----------------------------------------------------------------------
# estimator math


def test_c01_asr_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.uniform(-5, 5, 4000)
    x = x[np.abs(x - np.round(x)) >= 1e-3][:1000]
    h = 1e-4
    worst = 0.0
    for lam in (1.0, 5.0, 10.0):
        fd = (asr_forward(x + h, lam) - asr_forward(x - h, lam)) / (2 * h)
        an = asr_backward(x, lam)
        worst = max(worst, float(np.max(np.abs(an - fd) / np.abs(fd))))
    record(1, len(x) == 1000 and worst < 1e-4, f"max relative error {worst:.2e} (< 1e-4)")


def test_c02_asr_approaches_round():
    rng = np.random.default_rng(2)
    x = rng.uniform(-20, 20, 200000)
    frac = x - np.floor(x)
    keep = (np.minimum(frac, 1 - frac) >= 0.05) & (np.abs(frac - 0.5) >= 0.05)
    x = x[keep]
    err = float(np.max(np.abs(asr_forward(x, 1e4) - np.round(x))))
    record(2, err <= 1e-3, f"max |asr - round| = {err:.2e} over {len(x)} points (<= 1e-3)")


def test_c03_half_integers_are_fixed_points():
    n = np.arange(-1000, 1001, dtype=np.float64)
    worst = 0.0
    for lam in (0.5, 1.0, 5.0, 10.0, 50.0, 1e4):
        y = asr_forward(n + 0.5, lam)
        worst = max(worst, float(np.max(np.abs(y - (n + 0.5)) / np.spacing(np.abs(n + 0.5)))))
    record(3, worst <= 1.0, f"max deviation {worst:.1f} ulp (<= 1)")


def test_c04_mde_identities():
    rng = np.random.default_rng(4)
    g = rng.standard_normal(100000) * 3
    x = rng.uniform(-8, 8, 100000)
    same = np.array_equal(mde_adjust(g, x, x.copy()), g)
    zero = not np.any(mde_adjust(np.zeros_like(g), x, x + rng.uniform(-1, 1, x.size)))
    e = rng.uniform(-1, 1, 100000) * (1 - 1e-12)
    mult = mde_adjust(g, e, np.zeros_like(e)) / g
    positive = bool(np.all(mult > 0))
    record(4, same and zero and positive,
           f"identity {same}, zero gradient {zero}, multiplier positive {positive}")


# ----------------------------------------------------------------------
# scale learning


def grid_mse(x, scale, q_min=-8, q_max=7):
    return float(np.mean((x - np.clip(np.round(x / scale), q_min, q_max) * scale) ** 2))


def test_c05_ssg_scale_quality():
    # relative step: lr = eta / alpha0, so each move is eta * (alpha / alpha0)**2 * alpha0
    rng = np.random.default_rng(5)
    eta = 0.01
    ratios = []
    for _ in range(20):
        sigma = 10 ** rng.uniform(-1, 1)
        x = rng.normal(0.0, sigma, 4096)
        q = QuantizerState(4, True, estimator=EstimatorConfig(), ssg=SsgState())
        q.set_alpha(init_scale(x, q))
        lr = eta / float(q.alpha[0])
        for _ in range(500):
            scale_step(q, x, lr)
        grid = np.geomspace(1e-3 * x.std(), 10 * x.std(), 1000)
        best = min(grid_mse(x, s) for s in grid)
        ratios.append(grid_mse(x, float(q.alpha[0])) / best)
    worst = max(ratios)
    record(5, worst <= 1.05,
           f"worst SSG/grid MSE ratio {worst:.3f}, median {np.median(ratios):.3f} (<= 1.05)")


def test_c06_ssg_z_mechanics():
    st = SsgState()
    for _ in range(4):
        ssg_observe_and_adapt(st, LEFT)
    step_ok = st.z[0] == 0.03125
    st2 = SsgState()
    for a in (LEFT, LEFT, LEFT, MIDDLE, LEFT, LEFT, LEFT):
        ssg_observe_and_adapt(st2, a)
    reset_ok = st2.z[0] == 0.0
    st3 = SsgState()
    for a in np.random.default_rng(6).choice([LEFT, RIGHT], 2000, p=[0.2, 0.8]):
        ssg_observe_and_adapt(st3, a)
        if st3.z[0] > 0.5:
            break
    cap_ok = st3.z[0] <= 0.5
    record(6, step_ok and reset_ok and cap_ok,
           f"step {step_ok}, middle resets streak {reset_ok}, z capped at 0.5 {cap_ok} "
           f"(final z {st3.z[0]})")


# ----------------------------------------------------------------------
# quantizer algebra


def test_c07_quantizer_algebra():
    rng = np.random.default_rng(7)
    n = 100000
    checks = {"idempotent": True, "monotone": True, "half-step error": True, "symmetric": True}
    for k in range(2, 9):
        q = QuantizerState(k, True)
        q.set_alpha([rng.uniform(0.01, 2.0)])
        a = np.float64(q.alpha[0])
        x = (rng.standard_normal(n) * a * 2 ** (k - 1)).astype(np.float32)
        codes = quantize_codes(x, q)
        deq = dequantize(codes, q)
        checks["idempotent"] &= np.array_equal(quantize_codes(deq, q), codes)
        order = np.argsort(x, kind="stable")
        checks["monotone"] &= bool(np.all(np.diff(codes[order]) >= 0))
        inside = (x >= q.q_min * a) & (x <= q.q_max * a)
        # reconstruction in float64; storing codes*alpha as float32 adds up to one ulp
        err = np.abs(codes * a - x.astype(np.float64))[inside]
        checks["half-step error"] &= bool(np.all(err <= a / 2 * (1 + 1e-6)))
        neg = quantize_codes(-x, q)
        keep = (codes != q.q_min) & (neg != q.q_min)
        checks["symmetric"] &= np.array_equal(codes[keep], -neg[keep])
    record(7, all(checks.values()), ", ".join(f"{k} {v}" for k, v in checks.items()))


# ----------------------------------------------------------------------
# end-to-end on MNIST


@pytest.fixture(scope="module")
def mnist_runs(mnist, tmp_path_factory):
    out = tmp_path_factory.mktemp("acc")
    runs = {}
    for tag, bits in (("float", 32), ("w4a4", 4), ("w3a3", 3)):
        cfg = RunConfig(bits_w=bits, bits_a=bits, out_dir=str(out / tag))
        runs[tag] = (cfg, train(cfg, *mnist))
    return runs


def test_c08_mnist_accuracy_vs_float(mnist_runs, mnist):
    acc = {k: r["rows"][-1]["test_acc"] * 100 for k, (_, r) in mnist_runs.items()}
    d4, d3 = acc["float"] - acc["w4a4"], acc["float"] - acc["w3a3"]
    n = len(mnist[1])
    record("8a", d4 <= 0.5 and d3 <= 1.0,
           f"MNIST ({n} test images) float {acc['float']:.2f}%, W4/A4 {acc['w4a4']:.2f}% "
           f"(gap {d4:+.2f}, <= 0.5), W3/A3 {acc['w3a3']:.2f}% (gap {d3:+.2f}, <= 1.0)")


@pytest.mark.slow
def test_c08_cifar_subset_accuracy_vs_float(tmp_path):
    root = cifar_root()
    if root is None:
        skip("8b", "CIFAR-10 binaries not found under $LGLSQ_DATA")
    accs = {}
    for bits in (32, 4):
        cfg = RunConfig(model="vgg7_small", dataset="cifar10", data_root=root, train_subset=10000,
                        bits_w=bits, bits_a=bits, epochs=60, out_dir=str(tmp_path / str(bits)))
        accs[bits] = train(cfg)["rows"][-1]["test_acc"] * 100
    gap = accs[32] - accs[4]
    record("8b", gap <= 2.0, f"CIFAR-10 10k VGG7-small float {accs[32]:.2f}%, "
           f"W4/A4 {accs[4]:.2f}% (gap {gap:+.2f}, <= 2.0)")


def test_c09_ablation_direction(mnist, tmp_path):
    base = RunConfig(bits_w=3, bits_a=3)
    variants = [dataclasses.replace(base, estimator=e) for e in ("ste", "asr", "asr_mde")]
    variants.append(dataclasses.replace(base, scale_learning="llsq_grid"))
    rows = ablate(variants, seeds=(0, 1, 2), train_ds=mnist[0], test_ds=mnist[1],
                  out_dir=str(tmp_path))
    m = {r["variant"]: r["mean_acc"] * 100 for r in rows}
    est_ok = m["asr_mde+ssg"] >= m["asr+ssg"] >= m["ste+ssg"]
    sl_ok = m["asr_mde+ssg"] >= m["asr_mde+llsq_grid"]
    detail = ", ".join(f"{k} {v:.2f}" for k, v in m.items())
    record(9, est_ok and sl_ok, f"means over seeds 0,1,2: {detail}; "
           f"estimator order {est_ok}, SSG >= grid {sl_ok}")


@pytest.mark.extended
def test_c10_extended_full_cifar(tmp_path):
    if os.environ.get("LGLSQ_EXTENDED") != "1":
        skip(10, "extended run disabled (set LGLSQ_EXTENDED=1)")
    root = cifar_root()
    if root is None:
        skip(10, "CIFAR-10 binaries not found under $LGLSQ_DATA")
    cfg = RunConfig(model="vgg7_small", dataset="cifar10", data_root=root, epochs=300,
                    out_dir=str(tmp_path))
    acc = train(cfg)["rows"][-1]["test_acc"] * 100
    ok = abs(acc - 93.56) <= 1.5
    RESULTS["10"] = ("PASS" if ok else "FAIL (non-blocking)", f"VGG7-small W4/A4 {acc:.2f}% vs 93.56")
    if not ok:
        pytest.xfail(f"extended run {acc:.2f}% outside 93.56 +/- 1.5 (non-blocking)")


def test_c11_export_integrity(mnist_runs, mnist):
    cfg, run = mnist_runs["w4a4"]
    model = run["model"]
    blob = dumps(quantized_model_from(model, cfg))
    back, _ = restore_model(loads(blob))
    x = mnist[1].images[:1000]
    with T.no_grad():
        exact = np.array_equal(model(x).data, back(x).data)
    rep = verify_int(loads(blob), x)
    rejected = 0
    cases = [b"XXXX" + blob[4:], blob[:len(blob) // 2], blob + b"\x00", blob[:9]]
    for bad in cases:
        try:
            loads(bad)
        except FormatError as e:
            rejected += e.offset is not None
    ok = exact and rep.ok and rep.agreement == 1.0 and rejected == len(cases)
    record(11, ok, f"bit-exact logits {exact}; {rep}; malformed rejected with offset "
           f"{rejected}/{len(cases)}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
