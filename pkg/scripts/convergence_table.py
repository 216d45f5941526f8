"""Error table over doubling block sizes on the refined-cube benchmark.

    python3 scripts/convergence_table.py --sizes 8,16,32 --out results/
"""

import argparse
import logging

from octreemg.cli import PRESET_CONFIGS, RunConfig, cmd_convergence
from octreemg.interp import SchemeOrder


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="8,16,32")
    p.add_argument("--schemes", default="constant,linear,quadratic")
    p.add_argument("--bc-rule", default="ghost-center")
    p.add_argument("--out", default=None)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = RunConfig.from_dict(dict(PRESET_CONFIGS["poisson-fig6"], bc_rule=args.bc_rule, out=args.out))
    schemes = tuple(SchemeOrder.parse(s) for s in args.schemes.split(","))
    cmd_convergence(cfg, [int(s) for s in args.sizes.split(",")], schemes=schemes)


if __name__ == "__main__":
    main()
