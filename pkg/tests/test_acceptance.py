"""Acceptance criteria, one test each. Every test prints a single verdict line."""

import os
import time

import numpy as np
import pytest

from mscvit import blocks as B
from mscvit import data as D
from mscvit.gradcheck import TOLERANCE, run_suite
from mscvit.model import (
    build_model,
    complexity_lmssa,
    complexity_mhsa,
    count_params,
    estimate_flops,
    measure_macs,
    variant_config,
)
from mscvit.tensor import Tensor
from mscvit.train import (
    OptimizerState,
    TrainConfig,
    evaluate_top1,
    load_checkpoint,
    save_checkpoint,
    train_epochs,
)
from mscvit.wavelet import dwt_stacked, haar_dwt2d, idwt_stacked

from tests.helpers import plain_attention

CIFAR_ENV = "MSCVIT_CIFAR10_DIR"


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return report


def rel(value, target):
    return value / target - 1


def test_01_parameter_parity(verdict):
    targets = {"t": 3.8e6, "xs": 7.8e6, "s": 14.0e6}
    parts, ok = [], True
    for name, target in targets.items():
        t0 = time.perf_counter()
        n = count_params(build_model(variant_config(name)))
        dt = time.perf_counter() - t0
        ok &= abs(rel(n, target)) <= 0.05 and dt < 1.0
        parts.append(f"{name} {n / 1e6:.2f}M ({100 * rel(n, target):+.1f}%, {dt:.2f}s)")
    verdict(1, "parameter parity within 5%, under 1 s", ok, ", ".join(parts))


def test_02_flop_parity(verdict):
    targets = {"t": 0.5, "xs": 1.0, "s": 2.5}
    parts, ok = [], True
    for name, target in targets.items():
        model = build_model(variant_config(name, 224))
        report = estimate_flops(model)
        measured = measure_macs(model)["attention"]
        attn_gap = rel(measured, report.lmssa_total)
        ok &= abs(rel(report.gflops, target)) <= 0.10 and abs(attn_gap) <= 0.02
        parts.append(f"{name} {report.gflops:.3f} GFLOPs ({100 * rel(report.gflops, target):+.1f}%), "
                     f"attention {100 * attn_gap:+.2f}% vs analytic")
    verdict(2, "GFLOPs within 10%, attention within 2%", ok, "; ".join(parts))


def test_03_formula_degeneracy(verdict):
    grid = list(range(1, 65)) + [128, 256, 512, 1024]
    bad = [(n, d) for n in grid for d in grid if complexity_lmssa(n, d, [1]) != complexity_mhsa(n, d)]
    verdict(3, "single R=1 group equals full attention cost", not bad,
            f"{len(grid) ** 2} (n, d) pairs, {len(bad)} mismatches")


def test_04_lightweight_saving(verdict):
    cfg = variant_config("s")
    light = count_params(build_model(cfg))
    normal = count_params(build_model(cfg.replace(attention="normal")))
    gap = 100 * rel(normal, light)
    verdict(4, "normal attention adds 10.7 +/- 3 points", abs(gap - 10.7) <= 3,
            f"{normal / 1e6:.2f}M vs {light / 1e6:.2f}M ({gap:+.1f}%)")


def test_05_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    dt = time.perf_counter() - t0
    names = {r.name for r in results}
    required = {"LFE", "LMSSA R={2,1}", "CFF", "FFN", "MSCBlock"}
    failed = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.error)
    ok = not failed and required <= names and dt < 300
    verdict(5, f"finite differences below {TOLERANCE:g} in under 300 s", ok,
            f"{len(results)} checks, worst {worst.error:.1e} ({worst.name}), {dt:.0f}s, failed {failed}")


def test_06_wavelet_suite(verdict):
    rng = np.random.default_rng(6)
    roundtrip = parseval = 0.0
    for dtype in (np.float64, np.float32):
        x = rng.standard_normal((2, 8, 56, 56)).astype(dtype)
        s = dwt_stacked(Tensor(x))
        roundtrip = max(roundtrip, float(np.max(np.abs(idwt_stacked(s).data - x))))
        e_in = float((x.astype(np.float64) ** 2).sum())
        e_out = float((s.data.astype(np.float64) ** 2).sum())
        parseval = max(parseval, abs(e_out - e_in) / e_in)
    const = haar_dwt2d(Tensor(np.full((1, 3, 14, 14), 0.37)))
    high_zero = all(np.all(b.data == 0.0) for b in (const.lh, const.hl, const.hh))
    ok = roundtrip < 1e-6 and parseval < 1e-5 and high_zero
    verdict(6, "roundtrip, energy, constant image", ok,
            f"roundtrip {roundtrip:.1e}, relative energy error {parseval:.1e}, high bands zero {high_zero}")


def test_07_attention_oracle(verdict):
    rng = np.random.default_rng(7)
    C = 16
    attn = B.LMSSA(C, (1,), rng, head_dim=C)
    attn.astype(np.float64)
    for p in attn.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.3
    g = attn.groups[0]
    assert (len(attn.groups), g.heads, g.reduction) == (1, 1, 1)
    x = rng.standard_normal((3, C, 8, 8))
    got = attn(Tensor(x)).data
    err = 0.0
    for b in range(3):
        tokens = x[b].reshape(C, -1).T
        ref = plain_attention(tokens, g.q.weight.data, g.q.bias.data, g.k.weight.data,
                              g.k.bias.data, g.v.weight.data, g.v.bias.data)
        ref = ref @ attn.proj.weight.data + attn.proj.bias.data
        err = max(err, float(np.max(np.abs(got[b].reshape(C, -1).T - ref))))
    verdict(7, "one group, R=1, one head equals plain attention", err < 1e-6, f"max abs err {err:.1e}")


def _permute(x, perm):
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w)[:, :, perm].reshape(b, c, h, w)


def _gap(block, x, perm):
    block.eval()
    a = _permute(block(Tensor(x)).data, perm)
    b = block(Tensor(_permute(x, perm))).data
    return float(np.max(np.abs(a - b)))


def test_08_permutation_equivariance(verdict):
    rng = np.random.default_rng(8)
    dim, res = 64, 7
    plain = B.MSCBlock(dim, 0.25, 5, (1, 1), rng, lfe=False, conv_path=False)
    plain.astype(np.float64)
    with_lfe = B.MSCBlock(dim, 0.25, 5, (1, 1), rng, lfe=True, conv_path=False)
    with_lfe.astype(np.float64)
    # witness: a smooth ramp plus noise, so the depthwise filter sees distinct neighbourhoods
    ramp = np.linspace(-1, 1, res * res).reshape(1, 1, res, res)
    witness = ramp + 0.1 * rng.standard_normal((2, dim, res, res))
    perm = rng.permutation(res * res)
    off = _gap(plain, witness, perm)
    on = _gap(with_lfe, witness, perm)
    ok = off < 1e-6 and on > 1e-3
    verdict(8, "equivariant without LFE, broken by LFE", ok,
            f"max deviation {off:.1e} without LFE, {on:.2e} with LFE")


def test_09_cifar10_smoke_training(verdict, capsys):
    data_dir = os.environ.get(CIFAR_ENV)
    if not data_dir or not os.path.isdir(data_dir):
        with capsys.disabled():
            print(f"\n[criterion  9] NOT RUN  CIFAR-10 smoke training: set {CIFAR_ENV} to a "
                  "cifar-10-batches-bin directory")
        pytest.skip(f"CIFAR-10 binaries not available; set {CIFAR_ENV}")
    train, test = D.load_cifar10(data_dir)
    train = D.subset(train, 5000, seed=0)
    cfg = TrainConfig(epochs=5, batch_size=128, warmup_epochs=4, seed=0)
    model = build_model(variant_config("t", 32, num_classes=10), seed=0)
    t0 = time.perf_counter()
    history = train_epochs(model, train, test, cfg)
    dt = time.perf_counter() - t0
    acc = history[-1]["test_top1"]
    verdict(9, "T native-32, 5k images, 5 epochs: top-1 > 30% in < 30 min",
            acc > 0.30 and dt < 1800, f"test top-1 {100 * acc:.1f}%, {dt / 60:.1f} min")


def test_10_synthetic_sanity(verdict):
    recs = D.synth_dataset(4, 256, seed=0)
    cfg = TrainConfig(epochs=1, batch_size=32, warmup_epochs=0, seed=0)
    runs = []
    for _ in range(2):
        model = build_model(variant_config("t", 32, num_classes=4), seed=0)
        runs.append(train_epochs(model, recs, [], cfg)[0])
    acc = runs[0]["train_acc"]
    same = runs[0]["batch_losses"] == runs[1]["batch_losses"]
    verdict(10, "one epoch above 90% train accuracy, bit-exact rerun", acc > 0.90 and same,
            f"train accuracy {100 * acc:.1f}%, {len(runs[0]['batch_losses'])} losses identical: {same}")


def test_11_format_suite(verdict, tmp_path):
    rng = np.random.default_rng(11)
    checks = {}
    pixels = rng.integers(0, 256, (3, 3072), dtype=np.uint8)
    c10 = b"".join(bytes([k]) + pixels[k].tobytes() for k in range(3))
    (tmp_path / "c10.bin").write_bytes(c10)
    recs = D.parse_cifar10_bin(tmp_path / "c10.bin")
    checks["cifar10 3073-byte records"] = (
        len(c10) == 3 * 3073 and [r.label for r in recs] == [0, 1, 2]
        and all(r.pixels == pixels[k].tobytes() for k, r in enumerate(recs))
    )
    c100 = b"".join(bytes([k + 1, 40 + k]) + pixels[k].tobytes() for k in range(3))
    (tmp_path / "c100.bin").write_bytes(c100)
    recs = D.parse_cifar100_bin(tmp_path / "c100.bin")
    checks["cifar100 3074-byte records"] = (
        len(c100) == 3 * 3074 and [(r.coarse_label, r.label) for r in recs] == [(1, 40), (2, 41), (3, 42)]
    )

    def rejects(parser, blob, offset):
        path = tmp_path / "bad.bin"
        path.write_bytes(blob)
        try:
            parser(path)
        except D.DataFormatError as exc:
            return f"offset {offset}" in str(exc)
        return False

    checks["truncated cifar10"] = rejects(D.parse_cifar10_bin, c10[:-5], 2 * 3073)
    checks["truncated cifar100"] = rejects(D.parse_cifar100_bin, c100[:3074 + 100], 3074)
    corrupt = bytearray(c10)
    corrupt[3073] = 200
    checks["corrupt cifar10 label"] = rejects(D.parse_cifar10_bin, bytes(corrupt), 3073)
    corrupt = bytearray(c100)
    corrupt[2 * 3074 + 1] = 150
    checks["corrupt cifar100 label"] = rejects(D.parse_cifar100_bin, bytes(corrupt), 2 * 3074 + 1)

    model = build_model(variant_config("t", 32, num_classes=10), seed=5)
    model.eval()
    x = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
    before = model(x).data
    save_checkpoint(model, OptimizerState(step=3), tmp_path / "m.ckpt")
    restored = build_model(model.config, seed=6)
    load_checkpoint(restored, tmp_path / "m.ckpt")
    restored.eval()
    checks["checkpoint roundtrip"] = restored(x).data.tobytes() == before.tobytes()

    failed = [k for k, v in checks.items() if not v]
    verdict(11, "binary formats and checkpoint roundtrip", not failed,
            f"{len(checks) - len(failed)}/{len(checks)} checks, failed {failed}")
