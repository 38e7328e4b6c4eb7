"""
Depth bins
==========

Depth in meters maps to bins 1..1000 (0 = invalid). Linear presets split the
range evenly; the open-world preset is log-uniform.
"""

# %%
import numpy as np

from dense_ntp.depthq import PRESETS, preset

for name, q in PRESETS.items():
    print(f"{name:10} {q.scheme:11} {q.d_min:5}..{q.d_max:<6} bin 500 center {q.dequantize(500):.4f} m")

# %%
nyu = preset("nyuv2")
d = np.array([0.0, 0.004, 5.0, 9.999, 10.0, 12.0])
print(dict(zip(d.tolist(), nyu.quantize_array(d).tolist())))

ow = preset("openworld")
print("open-world: 0.5 m ->", ow.quantize(0.5), "  sqrt(50) m ->", ow.quantize(np.sqrt(50.0)))

# %% Round-trip error stays within half a bin
x = np.random.default_rng(1).uniform(0.01, 10, 100_000)
err = np.abs(nyu.dequantize_array(nyu.quantize_array(x)) - x)
print("max round-trip error (m):", err.max(), " half bin:", nyu.bin_width(1) / 2)
