"""The two transmitted layers on their own: range coder, compact codec, residual codec.

    python3 demos/entropy_and_layers.py
"""

import math

import numpy as np

from edms import entropy, layer_codecs, train

rng = np.random.default_rng(0)

# A skewed binary source lands close to its Shannon bound.
bits = (rng.random(100_000) < 0.1).astype(int).tolist()
h = -(0.9 * math.log2(0.9) + 0.1 * math.log2(0.1))
coded = entropy.encode_symbols(bits, 2)
print(f"binary p=0.1: {len(coded)} bytes, bound {len(bits) * h / 8:.0f} bytes")
assert entropy.decode_symbols(coded, len(bits), 2) == bits

# The compact layer is lossless: MED prediction plus adaptive coding.
img, _ = train.gen_dataset(3, 1, 64, 4)[0]
small = img[::8, ::8].copy()
blob = layer_codecs.encode_compact(small)
assert np.array_equal(layer_codecs.decode_compact(blob, small.shape[:2]), small)
print(f"compact 8x8x3: {len(blob)} bytes (raw {small.size})")
blob = layer_codecs.encode_compact(img)
print(f"full 64x64x3 through the compact codec: {len(blob)} bytes (raw {img.size})")

# The residual layer trades bytes for a bounded error.
residual = np.clip(rng.laplace(0, 6, (64, 64, 3)), -255, 255).astype(int)
for q in (1, 4, 16):
    blob = layer_codecs.encode_residual(residual, q)
    back = layer_codecs.decode_residual(blob, (64, 64), q)
    print(f"residual Q={q:<2}: {len(blob):5d} bytes, max error {np.abs(back - residual).max()}"
          f" (bound {math.ceil(q / 2)})")
