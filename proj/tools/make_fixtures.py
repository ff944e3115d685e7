# Copyright 2026 The D2Net Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the metric fixtures under tests/fixtures.

Reference values come from scikit-image, not from this library.
"""

import json
import pathlib

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def write_p6(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.astype(np.uint8).tobytes())


def pair(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack([
        0.5 + 0.4 * np.sin(xx / 3.0 + c) * np.cos(yy / 5.0 - c) for c in range(3)
    ], axis=-1)
    ref = np.clip(np.round(base * 255 + rng.normal(0, 6, base.shape)), 0, 255)
    test = np.clip(np.round(ref * 0.9 + 12 + rng.normal(0, 10, base.shape)), 0, 255)
    return ref.astype(np.uint8), test.astype(np.uint8)


def main():
    rng = np.random.default_rng(20261019)
    values = {}
    for name, (h, w) in {"pair16": (16, 16), "pair40x48": (40, 48)}.items():
        ref, test = pair(rng, h, w)
        write_p6(OUT / f"{name}_ref.ppm", ref)
        write_p6(OUT / f"{name}_test.ppm", test)
        a = ref.astype(np.float64) / 255.0
        b = test.astype(np.float64) / 255.0
        values[name] = {
            "psnr": peak_signal_noise_ratio(a, b, data_range=1.0),
            "ssim": structural_similarity(a, b, channel_axis=-1, gaussian_weights=True, sigma=1.5,
                                          use_sample_covariance=False, data_range=1.0),
        }
    (OUT / "metrics_oracle.json").write_text(json.dumps(values, indent=2) + "\n")


if __name__ == "__main__":
    main()
