"""Drive a full transfer experiment from one config: train, transfer, report.

Equivalent to chaining the CLI commands per seed:
    mattar train CONFIG --seed S
    mattar transfer CONFIG --checkpoint .../seed_S/checkpoint --seed S
    mattar transfer CONFIG --checkpoint .../seed_S/checkpoint --seed S --ablation
    mattar report CONFIG --out .../report
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mattar.cli import main as cli_main
from mattar.config import load_config


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config", nargs="?", default=str(Path(__file__).resolve().parent.parent / "configs" / "soldier_counts.ini"))
    parser.add_argument("--seeds", default=None, help="comma-separated override, e.g. 0,1")
    parser.add_argument("--budget", type=int, default=None, help="training steps override")
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds
    base = cfg.output / cfg.name
    for seed in seeds:
        t0 = time.time()
        train_args = ["train", args.config, "--seed", str(seed)]
        if args.budget:
            train_args += ["--budget", str(args.budget)]
        if cli_main(train_args) != 0:
            return 1
        ckpt = base / f"seed_{seed}" / "checkpoint"
        for extra in ([], ["--ablation"]):
            if cli_main(["transfer", args.config, "--checkpoint", str(ckpt), "--seed", str(seed)] + extra) != 0:
                return 1
        print(f"[seed {seed}] done in {(time.time() - t0) / 60:.1f} min", flush=True)
    return cli_main(["report", str(base), "--out", str(base / "report")])


if __name__ == "__main__":
    sys.exit(run())
