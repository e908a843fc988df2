"""Drive the full command-line surface end to end: synthesize a dataset,
train a transformer and a CNN baseline on it, evaluate both, and run the
statistical comparison (paired bootstrap t-test on MCC, best row marked "-").

Everything goes through cli.main, exactly as the installed `vitbench`
entry point would run it. Takes roughly half a minute on one CPU core.
"""

import argparse
import tempfile
from pathlib import Path

from vitbench.cli import main as vitbench


def run(argv):
    print(f"$ vitbench {' '.join(argv)}")
    code = vitbench(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")
    print()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default=None,
                    help="where to put datasets and runs (default: temp dir)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp())
    dataset = work / "toy"
    manifest = dataset / "manifest.csv"

    run(["synth-data", "--out", str(dataset), "--classes", "2",
         "--per-class", "64", "--resolution", "32",
         "--seed", str(args.seed)])

    run(["validate-manifest", "--manifest", str(manifest),
         "--expect", "64,32,32"])

    shared = ["--dataset.manifest", str(manifest),
              "--dataset.resolution", "32",
              "--train.epochs", "25", "--train.batch_size", "16",
              "--train.learning_rate", "1e-3", "--train.decay", "0.99",
              "--seed", str(args.seed)]

    run(["train", "--out", str(work / "vit"),
         "--model.patch_size", "8", "--model.hidden_dim", "64",
         "--model.depth", "4", "--model.heads", "4", "--model.mlp_dim", "128",
         "--model.dropout", "0", "--model.name", "vit-small", *shared])

    run(["train", "--out", str(work / "cnn"),
         "--model.kind", "cnn-baseline", "--model.name", "cnn-baseline",
         *shared])

    run(["evaluate", "--checkpoint", str(work / "vit" / "checkpoint"),
         "--manifest", str(manifest), "--split", "test",
         "--out", str(work / "vit_eval")])

    run(["compare", "--checkpoints", str(work / "vit" / "checkpoint"),
         str(work / "cnn" / "checkpoint"), "--manifest", str(manifest),
         "--split", "test", "--resamples", "500", "--seed", str(args.seed),
         "--out", str(work / "comparison")])

    run(["benchmark", "--checkpoint", str(work / "vit" / "checkpoint"),
         "--batch-size", "8", "--iters", "10"])

    print(f"artifacts under {work}")


if __name__ == "__main__":
    main()
