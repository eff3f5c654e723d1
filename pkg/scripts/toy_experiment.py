"""Run the toy end-to-end experiment and print the measured properties.

    python3 scripts/toy_experiment.py --work runs/toy [--iterations 2000] [--lr 1e-3]
"""
import argparse
import logging
from dataclasses import replace

from ediffsr.toy import ToyConfig, run_toy


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", default="runs/toy")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = ToyConfig()
    for key, attr in (("iterations", "iterations"), ("lr", "lr_init"), ("seed", "seed")):
        if getattr(args, key) is not None:
            cfg = replace(cfg, **{attr: getattr(args, key)})
    result = run_toy(cfg, args.work)
    for name, value in result.rows():
        print(f"{name:24s} {value}")


if __name__ == "__main__":
    main()
