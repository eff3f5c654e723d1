"""Oracle-score reconstruction PSNR against the number of reverse steps.

Uses the exact noise of each chain in place of a network, so the numbers
isolate the discretization error of the sampler.
"""
import argparse

import torch

from ediffsr.metrics import psnr
from ediffsr.sampling import SampleConfig, oracle_noise_model, sample_sr
from ediffsr.schedule import build_schedule
from ediffsr.imaging import bicubic_resize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seeds", type=int, default=5)
    args = p.parse_args()
    for steps in range(10, 101, 10):
        scores = []
        for seed in range(args.seeds):
            g = torch.Generator().manual_seed(seed)
            x0 = torch.rand(args.images, 3, args.size, args.size, generator=g, dtype=torch.float64)
            v = bicubic_resize(x0, args.size // 4, args.size // 4)
            s = build_schedule(T=steps)
            sr = sample_sr(oracle_noise_model(s, x0), s, v, SampleConfig(stochastic=False), scale=4,
                           mu=bicubic_resize(v, args.size, args.size))
            scores.append(sum(psnr(a, b) for a, b in zip(sr, x0)) / args.images)
        print(f"steps {steps:3d}  psnr {sum(scores) / len(scores):.3f} dB")


if __name__ == "__main__":
    main()
