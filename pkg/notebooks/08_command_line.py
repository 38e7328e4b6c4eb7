"""
The dense-ntp command line
==========================

Every subcommand writes its artifacts plus a ``manifest.json`` into the
``--out`` directory. This script drives the CLI in-process on a very small
configuration and prints what each step produced.
"""

# %%
import json
import tempfile
from pathlib import Path

from dense_ntp.cli import main

work = Path(tempfile.mkdtemp(prefix="dense_ntp_demo_"))
small = ["--n-classes", "4", "--n-filler", "20", "--n-train", "4", "--n-test", "2", "--base-size", "32", "--steps", "30"]


def run(name, *argv):
    out = work / name
    code = main([*argv, "--out", str(out)])
    print(f"{name:8} exit {code}  ->", sorted(p.name for p in out.iterdir()))
    return out


# %% Train, then decode, evaluate and visualize with the saved model
trained = run("train", "train", *small)
model = str(next(trained.glob("*.npz")))
run("decode", "decode", "--model", model, *small)
ev = run("eval", "eval", "--model", model, *small)
print(json.loads((ev / "manifest.json").read_text())["command"])
run("pca", "viz-pca", "--model", model, *small)

# %% Utilities: depth bins, RLE masks, gradient check
dq = run("depth", "depth-quant", "--preset", "nyuv2", "--depth", "10", "5")
print((dq / "depth_quant.json").read_text()[:120])

(work / "mask.rle").write_text("3x0,5x1\n")
run("codec", "codec", "decode", "--in", str(work / "mask.rle"), "--w", "4", "--h", "2")

gc = run("gradchk", "gradcheck", "--loss", "ntpm", "--trials", "30")
print("max relative error:", json.loads((gc / "gradcheck.json").read_text())["max_rel_error"])

# %% A short ablation preset; the report JSON holds per-arm mIoU
bench = run("bench", "bench", "--preset", "table3-mini", "--seeds", "2", *small)
print(sorted(p.name for p in bench.iterdir()))
