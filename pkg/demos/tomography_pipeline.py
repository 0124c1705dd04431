"""End-to-end batch pipeline through the command-line interface.

simulate (spheres) -> info -> retrieve (CTF pure phase, 2 workers) -> tomo.
Each stage is the same call as ``nearfield <command> ...`` in a shell.

    python demos/tomography_pipeline.py --out tomo_demo
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from nearfield.cli import main as nearfield
from nearfield.dataset import read_image, read_manifest


def run(*argv):
    print("$ nearfield", " ".join(map(str, argv)))
    code = nearfield([str(a) for a in argv])
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tomo_demo")
    ap.add_argument("--projections", type=int, default=32)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    out = Path(args.out)

    run("simulate", out / "data", "--projections", args.projections, "--size", args.size,
        "--phantom", "spheres", "--spheres", 4, "--beta", 0, "--distances", "0.01,0.02,0.04")
    run("info", out / "data")
    run("retrieve", out / "data", "--out", out / "phase", "--method", "ctfpurephase",
        "--no-align", "--workers", 2, "--executor", "local")
    run("tomo", out / "phase", "--out", out / "tomo")

    ds = read_manifest(out / "data")
    rows = sorted((out / "tomo/slices").glob("*.f32"))
    vol = np.stack([read_image(p, (args.size, args.size)) for p in rows])
    print(f"delta: reconstructed max {vol.max():.3g}, simulated {ds.extra['delta']:.3g}")


if __name__ == "__main__":
    main()
