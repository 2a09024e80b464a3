"""Independent numpy reimplementation of the block descriptor.

Prints values frozen into test_featurize.cpp.
"""
import numpy as np
from mpmath import mp, mpf, exp, log


def descriptor(block):
    b = block.astype(np.float64)
    n = b.shape[0] * b.shape[1]
    f = np.zeros(64)
    s = b / 255.0
    f[0:3] = s.reshape(-1, 3).mean(axis=0)
    f[3:6] = s.reshape(-1, 3).std(axis=0)
    for c in range(3):
        hist = np.bincount((block[:, :, c].ravel() >> 5), minlength=8)
        f[6 + 8 * c:14 + 8 * c] = hist / n
    dx = np.diff(s, axis=1)
    dy = np.diff(s, axis=0)
    pairs = 2 * block.shape[0] * (block.shape[0] - 1)
    f[30] = ((dx ** 2).sum() + (dy ** 2).sum()) / (3 * pairs)
    return f / np.linalg.norm(f)


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


yy, xx = np.mgrid[0:64, 0:64]
checker = np.where(((yy + xx) % 2 == 0)[..., None], 255, 0).astype(np.uint8).repeat(3, axis=2)
gray = np.full((64, 64, 3), 128, dtype=np.uint8)
dc = descriptor(checker[:32, :32])
dg = descriptor(gray[:32, :32])
print("checker_vs_gray_cosine %.17g" % cos(dc, dg))

# Two-colour patch: left half red-ish, right half blue-ish, 128 px patch.
patch = np.zeros((128, 128, 3), dtype=np.uint8)
patch[:, :64] = (200, 60, 80)
patch[:, 64:] = (70, 90, 210)
blocks = [descriptor(patch[r:r + 32, c:c + 32]) for r in range(0, 128, 32) for c in range(0, 128, 32)]
mean = np.mean(blocks, axis=0)
pa = descriptor(np.full((32, 32, 3), (200, 60, 80), dtype=np.uint8))
pb = descriptor(np.full((32, 32, 3), (70, 90, 210), dtype=np.uint8))
print("mixed_mean_equals_midpoint", np.allclose(mean, (pa + pb) / 2, atol=0, rtol=1e-15))
print("mixed_mean[0..2]", ["%.17g" % v for v in mean[:3]])

mp.dps = 40
print("nt_xent_one_negative %s" % mp.nstr(-log(exp(2) / (exp(2) + 1)), 20))
