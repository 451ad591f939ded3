#!/usr/bin/env python3
"""(Re)train the toy detector fixture checkpoint.

The fixture ships with the package; this script exists so the training
is reproducible. Same seed, same checkpoint bytes.
"""

import argparse

from docsr.detector.toy_fixture import (FIXTURE_PATH, fixture_quality, save_toy_fixture,
                                        train_toy_detector)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--pages", type=int, default=96)
    args = ap.parse_args()

    backend, history = train_toy_detector(seed=args.seed, epochs=args.epochs,
                                          n_pages=args.pages, log=print)
    quality = fixture_quality(backend, seeds=range(1000, 1012))
    print(f"held-out mask IoU {quality['mean_iou']:.3f}, "
          f"boxes on blank pages {quality['blank_boxes']}")
    if quality["blank_boxes"] > 0:
        raise SystemExit("refusing to save: fixture hallucinates boxes on blank pages")
    save_toy_fixture(backend)
    print(f"saved {FIXTURE_PATH} ({backend.backend_id()})")


if __name__ == "__main__":
    main()
