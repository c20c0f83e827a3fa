"""Run the seeded toy recipe and compare the codec with and without SMapNet.

Trains the segmenter, then CompNet+FineNet on ground-truth segments, then
SMapNet on codec-extracted segments (about five minutes on one core), and
prints the held-out segment and PSNR comparison.

    python3 demos/toy_training.py [--out toy.edmw]
"""

import argparse
import logging
import time

from edms import evaluate, nets, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="toy.edmw")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    recipe = train.ToyRecipe()
    start = time.perf_counter()
    history = []
    w = train.run_toy_recipe(recipe, history)
    nets.save_weights(w, args.out)
    print(f"trained in {time.perf_counter() - start:.0f}s, weights -> {args.out}")
    for stage in train.STAGES:
        losses = [h[2] for h in history if h[1] == stage]
        print(f"  {stage:<9} loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} epochs")

    held = recipe.heldout_data()
    seg = evaluate.segment_report(held, w)
    print(f"segment L1: degraded {seg.l1_degraded:.4f}, enhanced {seg.l1_enhanced:.4f}")
    print(f"segment mIoU: degraded {seg.miou_degraded:.3f}, enhanced {seg.miou_enhanced:.3f}")

    images = [(f"h{i:02d}", img) for i, (img, _) in enumerate(held)]
    rows, _ = evaluate.evaluate(images, w, [4, 16, 32], list(evaluate.VARIANTS))
    print(evaluate.to_csv(evaluate.rd_points(rows), evaluate.RD_COLUMNS), end="")


if __name__ == "__main__":
    main()
