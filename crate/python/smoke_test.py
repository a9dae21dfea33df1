#!/usr/bin/env python3
"""Smoke test for the mtsc_py extension module.

Builds are produced by cargo; this script locates the cdylib under
target/, exposes it as an importable module, and checks a handful of
known values against the library.

Usage:
    cargo build -p mtsc-py --release
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path


def locate_module() -> Path:
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libmtsc_py.so", "libmtsc_py.dylib", "mtsc_py.dll")
    ]
    for cand in candidates:
        if cand.exists():
            return cand
    sys.exit("mtsc_py cdylib not found; run `cargo build -p mtsc-py` first")


def main() -> None:
    lib = locate_module()
    staging = Path(tempfile.mkdtemp(prefix="mtsc_py_"))
    target = staging / ("mtsc_py" + (".pyd" if lib.suffix == ".dll" else ".so"))
    shutil.copy2(lib, target)
    sys.path.insert(0, str(staging))

    import mtsc_py

    # Time-lag kernel: 1/|i-j|^5 off the diagonal, 1 on it.
    assert mtsc_py.time_lag_weight(3, 4) == 1.0
    assert mtsc_py.time_lag_weight(0, 2) == 0.03125
    assert mtsc_py.time_lag_weight(5, 5) == 1.0

    # Run decomposition of a segment mask.
    assert mtsc_py.extract_events([True, True, False, True]) == [(0, 1), (3, 3)]
    assert mtsc_py.extract_events([False] * 4 ) == []

    # Spearman rank correlation, including the tied-rank value sqrt(0.9).
    assert mtsc_py.spearman([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]) == 1.0
    rho = mtsc_py.spearman([1.0, 2.0, 2.0, 4.0], [1.0, 3.0, 2.0, 4.0])
    assert abs(rho - math.sqrt(0.9)) < 1e-12, rho
    try:
        mtsc_py.spearman([1.0, 1.0], [1.0, 2.0])
    except ValueError:
        pass
    else:
        sys.exit("expected a ValueError for zero rank variance")

    # Step-decay schedule.
    assert mtsc_py.learning_rate(0) == 3e-4
    assert abs(mtsc_py.learning_rate(25) - 3e-6) < 1e-18

    # NT-Xent on perfectly matched orthogonal pairs: -log(e / 1) = -1.
    eye = [[1.0, 0.0], [0.0, 1.0]]
    loss, g1, g2 = mtsc_py.nt_xent(eye, eye, tau=1.0)
    assert abs(loss + 1.0) < 1e-12, loss
    assert len(g1) == 2 and len(g1[0]) == 2

    # The weighted variant with a constant-one kernel reduces to plain.
    wloss, _, _ = mtsc_py.weighted_nt_xent(eye, eye, tau=1.0, exponent=0.0)
    assert wloss == loss

    # Squared MTSC on identical constant rows: (2/9) * (31/32)^2.
    rows = [[0.6, 0.8]] * 3
    loss, grad1, grad2 = mtsc_py.mtsc_loss(rows, rows)
    assert abs(loss - 2.0 / 9.0 * (31.0 / 32.0) ** 2) < 1e-12, loss
    assert len(grad1) == 3 and len(grad2) == 3
    part, _, _ = mtsc_py.mtsc_loss(rows, rows, mode="literal", scope="part")
    assert abs(part) < 1e-12

    # Dataset generation writes the three split files plus the manifest.
    out = staging / "dataset"
    sizes = mtsc_py.generate_dataset(str(out), videos=10, segments=6, classes=3, seed=5)
    assert sizes == (6, 2, 2), sizes
    for name in ("train.jsonl", "eval.jsonl", "test.jsonl", "manifest.json"):
        assert (out / name).exists(), name
    assert len((out / "train.jsonl").read_text().splitlines()) == 6

    print(f"mtsc_py {mtsc_py.__version__}: all smoke checks passed")


if __name__ == "__main__":
    main()
