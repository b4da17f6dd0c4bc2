"""Denoise the bundled 128x128 camera crop with both pipelines.

Run ``python3 demos/denoise_camera.py [workers]``. Shows how PSNR grows with
the number of overlapping models per pixel and how block matching compares.
Stride 1 takes around a minute on one core.
"""
import os
import sys
import time

from smoe_mmi import NoiseSpec, PipelineConfig, add_noise, denoise, load_image, psnr, ssim
from smoe_mmi.pipeline import max_models_per_pixel

HERE = os.path.dirname(os.path.abspath(__file__))
CROP = os.path.join(HERE, "..", "tests", "data", "camera_crop.pgm")


def main(workers="1"):
    clean = load_image(CROP)
    for kind in ("gaussian", "speckle"):
        noisy = add_noise(clean, NoiseSpec(kind, 0.01, seed=1))
        print(f"{kind} var 0.01: noisy input {psnr(clean, noisy):.2f} dB")
        configs = [(f"S-SMoE s={s} (H={max_models_per_pixel(8, s)})", PipelineConfig(stride=s)) for s in (8, 2, 1)]
        configs.append(("BM-SMoE (groups of 16)", PipelineConfig(mode="bm_smoe")))
        for name, cfg in configs:
            start = time.perf_counter()
            out = denoise(noisy, cfg, int(workers))
            print(f"  {name:24s} {psnr(clean, out):6.2f} dB  SSIM {ssim(clean, out):.4f}"
                  f"  ({time.perf_counter() - start:.1f} s)")


if __name__ == "__main__":
    main(*sys.argv[1:])
