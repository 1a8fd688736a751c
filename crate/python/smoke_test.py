"""Smoke test for the san_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run:
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

import san_py


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    t = san_py.Tensor((1, 1, 2, 2), [0.0, 1.0, 2.0, 3.0])
    check(t.shape == (1, 1, 2, 2) and t.at(0, 0, 1, 1) == 3.0, "tensor construction")
    check(len(t) == 4 and t.sum() == 6.0, "tensor reductions")

    samples = san_py.gen_synthetic(4, classes=3, size=32, seed=7)
    again = san_py.gen_synthetic(4, classes=3, size=32, seed=7)
    check([s[1].tolist() for s in samples] == [s[1].tolist() for s in again],
          "synthetic data is seeded")
    _, image, mask, label = samples[0]
    check(image.shape == (1, 3, 32, 32) and 1 <= label <= 3, "synthetic sample shape")

    g = san_py.Generator(hidden_widths=[8, 8], map_dims=9, seed=1)
    maps = g.forward(image)
    check(maps.shape == (1, 9, 32, 32), "generator output shape")
    check(all(0.0 < v < 1.0 for v in maps.tolist()), "generator output in (0, 1)")
    full = san_py.Generator()
    check(full.forward(san_py.Tensor.zeros((2, 3, 64, 64))).shape == (2, 9, 64, 64),
          "default generator contract")

    labels = san_py.slic(image, 16)
    check(len(labels) == 32 * 32 and max(labels) + 1 <= 32, "slic partition")

    refined = san_py.postprocess(image, g.predict(image), slic_k=16)
    check(all(0.0 <= v <= 1.0 for v in refined.tolist()), "post-processing range")

    p, r = san_py.precision_recall([True, True, False, False], [True, False, True, False])
    check((p, r) == (0.5, 0.5), "precision / recall")
    check(abs(san_py.f_beta(0.5, 0.5) - 0.5) < 1e-12, "f_beta of equal P and R")
    check(san_py.score_map(mask, mask) == 1.0, "a mask scores itself perfectly")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "g.ckpt")
        g.save(path)
        h = san_py.Generator.load(path)
        check(h.forward(image).tolist() == maps.tolist(), "checkpoint round trip")
        pgm = os.path.join(tmp, "m.pgm")
        san_py.write_pgm(g.predict(image), pgm)
        check(san_py.read_pgm(pgm).shape == (1, 1, 32, 32), "pgm round trip")

    checks = san_py.gradcheck(3)
    check(all(passed for _, _, passed in checks), f"gradcheck ({len(checks)} layers)")

    try:
        san_py.Tensor((1, 1, 2, 2), [0.0])
    except ValueError:
        check(True, "shape mismatch raises ValueError")
    else:
        check(False, "shape mismatch raises ValueError")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
