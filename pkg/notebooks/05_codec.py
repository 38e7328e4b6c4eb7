"""
Tagged responses and RLE masks
==============================

Answers interleave prose with <ref>, <mask>, <box>, <ins>/<poly> and <depth>
tags. Masks are run-length encoded as comma-separated ``count x value`` runs.
"""

# %%
import numpy as np

from dense_ntp.codec import fg_bg_message, parse_message, rle_decode, rle_encode, emit_message

mask = np.array([[0, 0, 0, 1], [1, 1, 1, 1]])
payload = rle_encode(mask).payload
print("payload:", payload)
print(rle_decode(payload, 4, 2).values)

# %%
text = emit_message(fg_bg_message(payload))
print(text)
msg = parse_message(text)
print(msg.fields())

# %%
answer = "Found it <box><x_54><y_0><x_361><y_141></box> and a cup <ins><poly><x_1><y_2><x_3><y_4></poly></ins>"
m = parse_message(answer)
print("boxes:", m.boxes, " polygons:", m.polys)
assert emit_message(m) == answer
