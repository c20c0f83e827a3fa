"""Encode one synthetic image at several quantiser steps and decode it again.

Untrained (randomly initialised) networks are enough to show the container
mechanics: the synthesis is poor, so the residual carries most of the bits,
but encoder and decoder still agree bit for bit.

    python3 demos/codec_roundtrip.py [--weights toy.edmw]
"""

import argparse

import numpy as np

from edms import nets, pipeline, train


def untrained_weights(seed=0, width=4):
    rng = np.random.default_rng(seed)
    params = {}
    for name in ("compnet", "finenet", "smapnet"):
        params.update(nets.init_params(name, rng, width if name != "smapnet" else 8))
    params.update(nets.init_params("segmenter", rng, classes=4))
    return nets.WeightSet(params)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", help="EDMW file; default is an untrained width-4 set")
    args = ap.parse_args()
    w = nets.load_weights(args.weights) if args.weights else untrained_weights()

    img, _ = train.gen_dataset(7, 1, 64, 4)[0]
    print(f"image 64x64, weights digest {w.digest.hex()[:16]}")
    print(f"{'Q':>3} {'bytes':>6} {'bpp':>7} {'compact':>8} {'residual':>9} {'PSNR':>7}  max err")
    for q in (1, 2, 4, 8, 16, 32):
        data, stats = pipeline.encode(img, w, q, embed_hash=True)
        out, dec = pipeline.decode(data, w)
        assert dec.synth_hash == stats.synth_hash
        err = int(np.abs(out.astype(int) - img.astype(int)).max())
        print(f"{q:>3} {len(data):>6} {stats.bpp:>7.3f} {stats.compact_bytes:>8} "
              f"{stats.residual_bytes:>9} {stats.psnr:>7.2f}  {err} (bound {-(-q // 2)})")

    # Flip one bit of the compact layer: the verifier notices, nothing crashes.
    data, _ = pipeline.encode(img, w, 8, embed_hash=True)
    bad = bytearray(data)
    bad[pipeline.HEADER_SIZE + 3] ^= 0x10
    print("untouched:", pipeline.verify_matched(data, w).match,
          "| one flipped compact bit:", pipeline.verify_matched(bytes(bad), w).match)


if __name__ == "__main__":
    main()
