"""Write tests/data/golden_1000.ply with a plain struct-based writer.

Deliberately shares no code with pickpoint: points come from Python's
``random.Random``, bytes are packed record by record with ``struct``.
The expected values (float32 positions widened to float64, colors) go to
golden_1000_expected.txt, one point per line.
"""

import random
import struct
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def main():
    rng = random.Random(20240611)
    pts = []
    for _ in range(1000):
        xyz = [rng.uniform(-2.0, 2.0) for _ in range(3)]
        rgb = [rng.randrange(256) for _ in range(3)]
        # what a float32 field can hold
        xyz = [struct.unpack("<f", struct.pack("<f", v))[0] for v in xyz]
        pts.append((xyz, rgb))
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        "comment golden file from an independent writer\n"
        "element vertex 1000\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    body = b"".join(struct.pack("<fffBBB", *xyz, *rgb) for xyz, rgb in pts)
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "golden_1000.ply").write_bytes(header.encode("ascii") + body)
    lines = [" ".join([repr(v) for v in xyz] + [str(c) for c in rgb]) for xyz, rgb in pts]
    (DATA / "golden_1000_expected.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
