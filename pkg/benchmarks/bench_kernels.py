"""Compare the compiled and numpy convolution kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times im2col/col2im alone and a full conv2d forward+backward at the
shapes used by the 64x64 model, once per backend (each backend runs in a
fresh interpreter so the import-time selection is exercised).
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, timeit
import numpy as np
from sipgs import kernels, tensor as T

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
rows = []
for (B, C, H, K) in [(16, 3, 64, 32), (16, 32, 32, 64), (16, 64, 16, 128), (16, 128, 8, 256)]:
    xp = np.ascontiguousarray(rng.normal(size=(B, C, H + 2, H + 2)))
    cols = kernels.im2col(xp, 4, 4, 2)
    t_i2c = min(timeit.repeat(lambda: kernels.im2col(xp, 4, 4, 2), number=1, repeat=repeat))
    t_c2i = min(timeit.repeat(lambda: kernels.col2im(cols, B, C, H + 2, H + 2, 4, 4, 2), number=1, repeat=repeat))
    x = T.Tensor(rng.normal(size=(B, C, H, H)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(K, C, 4, 4)) * 0.05, requires_grad=True)

    def step():
        x.zero_grad(); w.zero_grad()
        T.sum(T.conv2d(x, w, 2, 1)).backward()

    t_conv = min(timeit.repeat(step, number=1, repeat=repeat))
    rows.append({"shape": f"B{B} C{C} {H}x{H} -> K{K}", "im2col_ms": 1e3 * t_i2c,
                 "col2im_ms": 1e3 * t_c2i, "conv_fwd_bwd_ms": 1e3 * t_conv})
print(json.dumps({"backend": kernels.BACKEND, "rows": rows}))
"""


def run(backend: str, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("SIPGS_PURE_PYTHON", None)
    if backend == "python":
        env["SIPGS_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    res = {b: run(b, args.repeat) for b in ("cython", "python")}
    if res["cython"]["backend"] != "cython":
        print("compiled extension not available; only the numpy backend was measured")
    print(f"{'shape':<26}{'kernel':<18}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for rc, rp in zip(res["cython"]["rows"], res["python"]["rows"]):
        for key in ("im2col_ms", "col2im_ms", "conv_fwd_bwd_ms"):
            print(f"{rc['shape']:<26}{key[:-3]:<18}{rc[key]:>11.2f}{rp[key]:>11.2f}{rp[key] / rc[key]:>8.2f}x")


if __name__ == "__main__":
    main()
