"""Detail-enhancing prior on the local code.

Two residual stages applied to the (J, B, H, W) code:

    y   = x + dconv(x)
    out = y + y * conv1(conv1(y))

dconv sums five depthwise 3x3x3 branches: one plain correlation plus four
difference branches (central, inter-band, horizontal, vertical). Each
difference branch multiplies its kernel against neighbor-minus-reference
values, so a constant input yields exactly zero from that branch, not merely
a small number. All taps clamp to the volume edge (replicate padding); zero
padding would break the exact-zero property at the borders. conv1 is the same
depthwise correlation with its own kernel, applied twice in cascade to form a
multiplicative gate. All-zero weights make the whole map an exact identity.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

# diff3 modes; order fixes the leaf order in checkpoints and gradients
BRANCHES = (("plain", 0), ("central", 1), ("spectral", 2), ("horiz", 3), ("vert", 4))


@dataclass
class DetailPriorWeights:
    plain: np.ndarray
    central: np.ndarray
    spectral: np.ndarray
    horiz: np.ndarray
    vert: np.ndarray
    attn1: np.ndarray
    attn2: np.ndarray

    def validate(self):
        for name in ("plain", "central", "spectral", "horiz", "vert", "attn1", "attn2"):
            arr = getattr(self, name)
            if arr.shape != (3, 3, 3):
                raise ShapeError(f"detail kernel {name} must be (3,3,3), got {arr.shape}")


def init_detail_prior(rng):
    """Exact-identity start: all five branch kernels are zero, so the map
    passes codes through unchanged until training moves them (their gradients
    do not depend on their own values). The gate pair cannot start all-zero:
    with both gate kernels zero their gradients vanish identically (each
    enters the product through the other), so attn1 draws small values and
    attn2 holds the zeros, which keeps the gate term exactly off at init."""
    z = lambda: np.zeros((3, 3, 3))
    return DetailPriorWeights(
        plain=z(), central=z(), spectral=z(), horiz=z(), vert=z(),
        attn1=rng.normal(0.0, 0.01, (3, 3, 3)), attn2=z(),
    )


def zero_detail_prior():
    z = lambda: np.zeros((3, 3, 3))
    return DetailPriorWeights(z(), z(), z(), z(), z(), z(), z())


def _check_code(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"local code must be (J, B, H, W), got {x.shape}")
    return x


def dconv(x, weights):
    """Five-branch difference convolution; shape-preserving."""
    x = _check_code(x)
    weights.validate()
    out = np.zeros_like(x)
    for name, mode in BRANCHES:
        out += kernels.diff3(x, getattr(weights, name), mode)
    return out


def net2_forward(x, weights):
    x = _check_code(x)
    weights.validate()
    y = x + dconv(x, weights)
    c1 = kernels.diff3(y, weights.attn1, 0)
    c2 = kernels.diff3(c1, weights.attn2, 0)
    out = y + y * c2
    return out, (x, y, c1, c2)


def net2_backward(cache, weights, dout):
    x, y, c1, c2 = cache
    dy = dout + dout * c2
    dc2 = dout * y
    dc1, dk_attn2 = kernels.diff3_bwd(c1, weights.attn2, 0, dc2)
    dy2, dk_attn1 = kernels.diff3_bwd(y, weights.attn1, 0, dc1)
    dy = dy + dy2
    dx = dy.copy()
    grads = {"attn1": dk_attn1, "attn2": dk_attn2}
    for name, mode in BRANCHES:
        dxm, dkm = kernels.diff3_bwd(x, getattr(weights, name), mode, dy)
        dx += dxm
        grads[name] = dkm
    return dx, grads


def net2_apply(x, weights):
    out, _ = net2_forward(x, weights)
    return out
