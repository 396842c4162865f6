"""Run every desk-scale experiment through the CLI and print a summary table.

    python scripts/reproduce_all.py --out jamsense-out [--quick]

--quick shrinks poses and epochs for a fast smoke run (numbers then do not
meet the acceptance bounds).
"""
import argparse
import sys

from jamsense.cli import main

EXPERIMENTS = [
    # (subcommand args, epochs at full scale)
    (["synth", "--scenario", "media_energy"], None),
    (["train", "--scenario", "sizes", "--model", "cnn", "--noise-dba", "45,60,80"], 100),
    (["train", "--scenario", "orientation", "--model", "cnn"], 100),
    (["train", "--scenario", "materials_spheres", "--model", "cnn"], 100),
    (["train", "--scenario", "materials_plates", "--model", "cnn"], 100),
    (["train", "--scenario", "materials_spheres_small", "--model", "cnn"], 100),
    (["train", "--scenario", "ycb16", "--model", "cnn", "--pose-counts", "2,4,8,12,16"], 60),
    (["train", "--scenario", "ycb16", "--model", "mlp,lr,knn"], None),
    (["embed", "--scenario", "ycb16", "--latent-dim", "2,8"], 40),
]


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="jamsense-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    args = p.parse_args(argv)
    for cmd, epochs in EXPERIMENTS:
        cmd = cmd + ["--out", args.out, "--seed", str(args.seed)]
        if args.quick and cmd[0] != "synth":
            cmd += ["--epochs", "3", "--poses-per-object", "5"]
            if "--pose-counts" in cmd:
                cmd[cmd.index("--pose-counts") + 1] = "2,4"
        elif epochs is not None:
            cmd += ["--epochs", str(epochs)]
        print("$ jamsense " + " ".join(cmd), flush=True)
        code = main(cmd)
        if code:
            return code
    return main(["report", f"{args.out}/runs", "--csv", f"{args.out}/summary.csv"])


if __name__ == "__main__":
    sys.exit(run())
