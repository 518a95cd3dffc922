"""Download the crabs and AIS tables into ./data as CSV.

crabs: 200 Leptograpsus crabs, R package MASS.
ais: 202 Australian Institute of Sport athletes, R package DAAG.

Both are fetched through the ``rdatasets`` package when installed, otherwise
from the Rdatasets CSV mirror.
"""

import argparse
import os
import urllib.request

SOURCES = {
    "crabs": ("MASS", "crabs"),
    "ais": ("DAAG", "ais"),
}
MIRROR = "https://vincentarelbundock.github.io/Rdatasets/csv/{pkg}/{item}.csv"


def fetch(name: str, outdir: str) -> str:
    pkg, item = SOURCES[name]
    path = os.path.join(outdir, f"{name}.csv")
    try:
        import rdatasets

        rdatasets.data(pkg, item).to_csv(path, index=False)
    except ImportError:
        urllib.request.urlretrieve(MIRROR.format(pkg=pkg, item=item), path)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data")
    ap.add_argument("names", nargs="*", default=sorted(SOURCES))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name in args.names:
        print(fetch(name, args.out))


if __name__ == "__main__":
    main()
