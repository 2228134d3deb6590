"""Write a synthetic unpaired low/clean PNG set for quick training runs.

    python3 scripts/make_synthetic_dataset.py /tmp/synth --count 32 --size 64
"""

import argparse

from lowlight.synthetic import make_unpaired_set


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("root")
    parser.add_argument("--count", type=int, default=32)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--low-scale", type=float, default=0.2)
    parser.add_argument("--noise", type=float, default=0.02)
    args = parser.parse_args()
    low, clean = make_unpaired_set(args.root, args.count, args.size, args.seed, args.low_scale, args.noise)
    print(f"low images in {low}\nclean images in {clean}")


if __name__ == "__main__":
    main()
