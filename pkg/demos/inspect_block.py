"""Fit a single 8x8 block and look at the kernels.

Run ``python3 demos/inspect_block.py [row col]``. Prints the model dump and
compares the block with its reconstruction.
"""
import os
import sys

import numpy as np

from smoe_mmi import BlockData, FitConfig, fit_block, load_image, predict_block, psnr
from smoe_mmi.model_text import format_model

CROP = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests", "data", "camera_crop.pgm")


def main(row="40", col="56"):
    r, c = int(row), int(col)
    pixels = load_image(CROP)[r:r + 8, c:c + 8]
    model, report = fit_block(BlockData.from_pixels(pixels, (r, c)), FitConfig(num_kernels=4))
    print(format_model(model, origin=(r, c), final_loss=report.final_loss))
    np.set_printoptions(precision=2, suppress=True)
    print("block:\n", pixels)
    print("reconstruction:\n", predict_block(model, 8))
    print(f"reconstruction PSNR {psnr(pixels, predict_block(model, 8)):.2f} dB")


if __name__ == "__main__":
    main(*sys.argv[1:])
