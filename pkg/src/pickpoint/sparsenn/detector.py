"""Hand-constructed weights that turn the full network into a stem detector.

No training data exists for this project, so this module writes the weights
by hand for the synthetic scenes of :mod:`pickpoint.synth`.  Only the stem,
stage-1, neck level 1 and head layers are non-zero; everything deeper is
zero, which still runs the full architecture end to end.

How the pieces fit (fine voxel index k covers [k, k+1) * voxel):

* stem conv: per-site stem indicator ``clip(25 (G - 0.37), 0, 1)`` from the
  mean green channel, built as the difference of two ReLUs.  Among colors
  that pass the color filter (G <= 150/255) stem bark is the only one above
  the threshold; fruit and branch are darker in G.
* stage-1 down conv: per parent cell, stem counts split by child half along
  z (S0, S1), x (X0, X1) and y (Y0, Y1), and the number of occupied children.
* stage-1 SE-res block (SE weights zero, so its gate is exactly 0.5 and the
  conv2 weights are doubled): 6-voxel vertical window sums of the stem count
  for two alignments W0 (fine z 2v-2..2v+3, centered on the cell) and W1
  (2v-1..2v+4, one voxel higher), emitted as W0, relu(W1 - W0), relu(W0 - W1).  The count is taken over the xy-3x3
  neighbourhood with the site's own column weighted twice, so the column
  holding most of a stem ranks highest.
* neck level 1 prune: keeps occupied sites, drops the empty children the
  transposed conv generates.
* neck out conv 1 + head: the class logit rewards the window maximum
  Wmax = max(W0, W1) and is driven far negative unless the site is a strict
  local maximum of Wmax over its 26 neighbours (ties go to the neighbour with
  the larger coordinate).  Centerness requires stem voxels in the site
  itself.  The z offset moves the center up one fine voxel when W1 wins;
  x and y move half a fine voxel toward the heavier cell half.
"""

from __future__ import annotations

import itertools

import numpy as np

from pickpoint.sparsenn.network import ArchConfig, NetworkWeights, zero_weights

# indicator threshold on the normalized green channel
GREEN_LO = 0.37
GREEN_GAIN = 25.0
# head calibration
CLS_BIAS = -4.5
CLS_SUPPRESS = 100.0    # gain on "a neighbour ranks higher"
TIE_MARGIN = 0.5        # ties with higher-coordinate neighbours count as losses
CTR_GAIN = 4.0
BOX_SCALE = 1.6  # predicted box side in units of the stride-2 cell (2 voxels)


def _c3(dx, dy, dz):
    """Index of offset (dx, dy, dz) in the lexicographic 3^3 kernel."""
    return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)


def _c2(ix, iy, iz):
    return ix * 4 + iy * 2 + iz


# stem conv outputs
ST_P, ST_PQ, ST_OCC = 0, 1, 2
# stage-1 feature channels
S0, S1, X0, X1, Y0, Y1, OCC, W0, DP, DN = range(10)
# stage-1 block conv1 channels: T[b][dz] = weighted xy-3x3 sum of S_b at z offset dz
T = {(b, dz): 3 * b + dz + 1 for b in (0, 1) for dz in (-1, 0, 1)}
# head-input channels: Wmax, own-stem pair, three signed-offset pairs per axis,
# then one "neighbour ranks higher" channel per non-zero 3^3 offset
H_WMAX, H_OWN, H_OWN1 = 0, 1, 2
H_OFFSET = {axis: (3 + 4 * axis, 4 + 4 * axis, 5 + 4 * axis, 6 + 4 * axis) for axis in range(3)}
NEIGHBOURS = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
H_NEIGHBOUR = {o: 15 + k for k, o in enumerate(NEIGHBOURS)}


def constructed_weights(voxel_size: float = 0.01, config: ArchConfig = ArchConfig()) -> NetworkWeights:
    """Detector weights for scenes voxelized at ``voxel_size`` (offsets are in meters)."""
    t = {k: v.copy() for k, v in zero_weights(config, with_prune=True).tensors.items()}

    # stem: indicator as relu(a) - relu(a - 1), occupancy from the bias
    c = _c3(0, 0, 0)
    t["stem.weight"][c, 1, ST_P] = GREEN_GAIN
    t["stem.bias"][ST_P] = -GREEN_GAIN * GREEN_LO
    t["stem.weight"][c, 1, ST_PQ] = GREEN_GAIN
    t["stem.bias"][ST_PQ] = -GREEN_GAIN * GREEN_LO - 1.0
    t["stem.bias"][ST_OCC] = 1.0

    w = t["stage1.down.weight"]
    for ix in (0, 1):
        for iy in (0, 1):
            for iz in (0, 1):
                k = _c2(ix, iy, iz)
                for ch in ((S0, S1)[iz], (X0, X1)[ix], (Y0, Y1)[iy]):
                    w[k, ST_P, ch] = 1.0
                    w[k, ST_PQ, ch] = -1.0
                w[k, ST_OCC, OCC] = 1.0

    w = t["stage1.block.conv1.weight"]
    for (b, dz), ch in T.items():
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                w[_c3(dx, dy, dz), (S0, S1)[b], ch] = 2.0 if dx == dy == 0 else 1.0

    # conv2 (weights doubled to undo the 0.5 gate)
    # W0(v) = S(v-1) + S(v) + S(v+1);  W1 - W0 = S0(v+2) - S0(v-1)
    w = t["stage1.block.conv2.weight"]
    g = 2.0
    centre = _c3(0, 0, 0)
    for b in (0, 1):
        for dz in (-1, 0, 1):
            w[centre, T[(b, dz)], W0] += g
    w[_c3(0, 0, 1), T[(0, 1)], DP] += g
    w[centre, T[(0, -1)], DP] -= g
    w[_c3(0, 0, 1), T[(0, 1)], DN] -= g
    w[centre, T[(0, -1)], DN] += g

    # levels 2 and 3 keep every site; level 1 keeps occupied sites
    for lvl in (2, 3):
        t[f"neck.prune{lvl}.bias"][0] = 5.0
    t["neck.prune1.weight"][0, OCC, 0] = 10.0
    t["neck.prune1.bias"][0] = -5.0

    w = t["neck.out1.weight"]
    b = t["neck.out1.bias"]
    for src in (W0, DP):
        w[centre, src, H_WMAX] = 1.0
    for o, ch in H_NEIGHBOUR.items():
        for src in (W0, DP):
            w[_c3(*o), src, ch] += 1.0
            w[centre, src, ch] -= 1.0
        b[ch] = TIE_MARGIN if o > (0, 0, 0) else 0.0
    for src in (S0, S1):
        w[centre, src, H_OWN] = 1.0
        w[centre, src, H_OWN1] = 1.0
    b[H_OWN1] = -1.0
    # signed imbalance a = pos - neg as relu(a), relu(a - 1), relu(-a), relu(-a - 1)
    for axis, (pos, neg) in enumerate(((X1, X0), (Y1, Y0), (DP, DN))):
        c0, c1, c2, c3 = H_OFFSET[axis]
        w[centre, pos, c0], w[centre, neg, c0] = 1.0, -1.0
        w[centre, pos, c1], w[centre, neg, c1] = 1.0, -1.0
        w[centre, neg, c2], w[centre, pos, c2] = 1.0, -1.0
        w[centre, neg, c3], w[centre, pos, c3] = 1.0, -1.0
        b[c1] = b[c3] = -1.0

    # head; clip(a) = relu(a) - relu(a - 1)
    cls = t["head.cls.weight"][0, :, 0]
    cls[H_WMAX] = 1.0
    for ch in H_NEIGHBOUR.values():
        cls[ch] = -CLS_SUPPRESS
    t["head.cls.bias"][0] = CLS_BIAS
    t["head.ctr.weight"][0, H_OWN, 0] = CTR_GAIN
    t["head.ctr.weight"][0, H_OWN1, 0] = -CTR_GAIN
    t["head.ctr.bias"][0] = -CTR_GAIN / 2

    reg = t["head.reg.weight"][0]
    half = 0.5 * voxel_size
    for axis in range(2):
        c0, c1, c2, c3 = H_OFFSET[axis]
        reg[c0, axis], reg[c1, axis], reg[c2, axis], reg[c3, axis] = half, -half, -half, half
    c0, c1, _, _ = H_OFFSET[2]
    reg[c0, 2], reg[c1, 2] = voxel_size, -voxel_size
    t["head.reg.bias"][3:] = np.log(BOX_SCALE)

    return NetworkWeights(t, config)
