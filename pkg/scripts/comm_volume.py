"""Per-level message and scalar counts of one exchange per multigrid level.

Prints one CSV per rank count so remote traffic can be compared.
"""

import argparse

from octreemg.cli import PRESET_CONFIGS, RunConfig, comm_volume


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--preset", default="poisson-fig6", choices=sorted(PRESET_CONFIGS))
    p.add_argument("--block-size", type=int, default=16)
    p.add_argument("--scheme", default="quadratic")
    p.add_argument("--ranks", default="1,2,4,8")
    args = p.parse_args()
    for k in map(int, args.ranks.split(",")):
        cfg = RunConfig.from_dict(dict(PRESET_CONFIGS[args.preset], block_size=args.block_size,
                                       scheme=args.scheme, ranks=k))
        rep = comm_volume(cfg)
        tot = rep.totals()
        print(f"# ranks={k}: {tot.messages} messages, {tot.remote_messages} remote, "
              f"{tot.bytes} bytes ({tot.remote_bytes} remote)")
        print(rep.to_csv(), end="")


if __name__ == "__main__":
    main()
