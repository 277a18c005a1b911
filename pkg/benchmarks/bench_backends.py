"""Compare the numba kernels with the pure-numpy fallback.

Kernel timings call both implementations in one process. The end-to-end
training step is timed in a fresh interpreter per backend, because the
backend is fixed when ``mscam`` is first imported.

    python benchmarks/bench_backends.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mscam import _kernels as K

STEP_SCRIPT = r"""
import json, sys, timeit
import numpy as np
from mscam import _kernels
from mscam.model import ModelConfig, class_balance_factors, init_model, loss
from mscam.tensor import Tape, backward

rng = np.random.default_rng(0)
x = rng.random((32, 1, 64, 64))
y = (rng.random((32, 2)) > 0.5).astype(float)
beta = class_balance_factors(y)
model = init_model(ModelConfig(), 0)

def step():
    model.zero_grad()
    with Tape() as tape:
        l = loss(model.forward(x).fused_probs, y, beta)
    backward(l, tape)

step()  # compile / warm caches
t = min(timeit.repeat(step, number=1, repeat=int(sys.argv[1])))
print(json.dumps({"backend": _kernels.BACKEND, "seconds": t}))
"""


def best_of(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(repeat: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for name, shape in (("im2col 32x16x34x34", (32, 16, 34, 34)), ("im2col 32x64x18x18", (32, 64, 18, 18))):
        xp = rng.random(shape)
        oh, ow = shape[2] - 2, shape[3] - 2
        t_np = best_of(lambda: K.im2col_numpy(xp, 3, 3, 1, oh, ow), repeat)
        t_nb = best_of(lambda: K.im2col_numba(xp, 3, 3, 1, oh, ow), repeat)
        rows.append((name, t_np, t_nb))
        cols = K.im2col_numpy(xp, 3, 3, 1, oh, ow)
        t_np = best_of(lambda: K.col2im_numpy(cols, shape, 3, 3, 1, oh, ow), repeat)
        t_nb = best_of(lambda: K.col2im_numba(cols, shape, 3, 3, 1, oh, ow), repeat)
        rows.append((name.replace("im2col", "col2im"), t_np, t_nb))
    mask = rng.random((64, 64)) > 0.55
    t_py = best_of(lambda: K.label_components_python(mask), max(3, repeat // 4))
    t_nb = best_of(lambda: K.label_components_numba(mask), repeat)
    rows.append(("label 64x64", t_py, t_nb))
    return rows


def train_step(backend: str, repeat: int) -> float:
    env = dict(os.environ, MSCAM_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SCRIPT, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)["seconds"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-step", action="store_true", help="only time the kernels")
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<24s}{'numpy ms':>12s}{'numba ms':>12s}{'speedup':>10s}")
    for name, a, b in kernel_rows(args.repeat):
        print(f"{name:<24s}{a * 1e3:12.2f}{b * 1e3:12.2f}{a / b:10.1f}x")
    if not args.skip_step:
        a = train_step("numpy", max(3, args.repeat // 4))
        b = train_step("numba", max(3, args.repeat // 4))
        print(f"{'train step (B=32, 64px)':<24s}{a * 1e3:12.1f}{b * 1e3:12.1f}{a / b:10.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
