"""Write tests/data/golden_small.spnw with a struct-only writer.

Layer list transcribed by hand from the documented layer map for a narrow
network (stem 8, stages 8/8/8/8, head 8, SE ratio 4, one class, no prune
layers).  Element k of a tensor named ``name`` holds
float32(sin(0.37 * k + len(name))).
"""

import math
import struct
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
FINGERPRINT = "fcaf3d-se:in=3;stem=8;ch=8,8,8,8;head=8;se=4;cls=1"


def layers():
    out = {}

    def conv(name, k, cin, cout):
        out[name + ".weight"] = (k, cin, cout)
        out[name + ".bias"] = (cout,)

    conv("stem", 27, 3, 8)
    for s in (1, 2, 3, 4):
        conv(f"stage{s}.down", 8, 8, 8)
        conv(f"stage{s}.block.conv1", 27, 8, 8)
        conv(f"stage{s}.block.conv2", 27, 8, 8)
        out[f"stage{s}.block.se.fc1.weight"] = (8, 2)
        out[f"stage{s}.block.se.fc1.bias"] = (2,)
        out[f"stage{s}.block.se.fc2.weight"] = (2, 8)
        out[f"stage{s}.block.se.fc2.bias"] = (8,)
    for lvl in (1, 2, 3):
        conv(f"neck.up{lvl}", 8, 8, 8)
    for lvl in (1, 2, 3, 4):
        conv(f"neck.out{lvl}", 27, 8, 8)
    conv("head.cls", 1, 8, 1)
    conv("head.reg", 1, 8, 6)
    conv("head.ctr", 1, 8, 1)
    return out


def value(name, k):
    return math.sin(0.37 * k + len(name))


def main():
    specs = layers()
    fp = FINGERPRINT.encode()
    buf = [b"SPNW", struct.pack("<II", 1, len(fp)), fp, struct.pack("<I", len(specs))]
    for name in sorted(specs):
        dims = specs[name]
        n = 1
        for d in dims:
            n *= d
        raw = name.encode()
        buf.append(struct.pack("<I", len(raw)) + raw)
        buf.append(struct.pack("<I", len(dims)) + b"".join(struct.pack("<I", d) for d in dims))
        buf.append(b"".join(struct.pack("<f", value(name, k)) for k in range(n)))
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "golden_small.spnw").write_bytes(b"".join(buf))


if __name__ == "__main__":
    main()
