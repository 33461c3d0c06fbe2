"""Slow, obviously-correct reference implementations used by the tests.

None of these share code with the package: loops and textbook formulas only.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, stride=1, padding=0, groups=1):
    """Direct cross-correlation with zero padding, seven nested loops."""
    b, c, h, wd = x.shape
    o, cg, k1, k2 = w.shape
    og = o // groups
    oh = (h + 2 * padding - k1) // stride + 1
    ow = (wd + 2 * padding - k2) // stride + 1
    out = np.zeros((b, o, oh, ow))
    for n in range(b):
        for oc in range(o):
            grp = oc // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(cg):
                        for p in range(k1):
                            for q in range(k2):
                                r = i * stride + p - padding
                                s = j * stride + q - padding
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[n, grp * cg + ic, r, s] * w[oc, ic, p, q]
                    out[n, oc, i, j] = acc
    return out


def window_average(x, out_size):
    """Adaptive average pooling from the bin rule [floor(i*n/m), ceil((i+1)*n/m))."""
    b, c, h, w = x.shape
    m1, m2 = out_size
    out = np.zeros((b, c, m1, m2))
    for i in range(m1):
        r0, r1 = (i * h) // m1, -((-(i + 1) * h) // m1)
        for j in range(m2):
            c0, c1 = (j * w) // m2, -((-(j + 1) * w) // m2)
            for n in range(b):
                for ch in range(c):
                    vals = [x[n, ch, r, s] for r in range(r0, r1) for s in range(c0, c1)]
                    out[n, ch, i, j] = sum(vals) / len(vals)
    return out


def two_pass_norm(x, gamma, beta, eps, axes, param_axis):
    """Mean first, then variance of the centred values; plain Python sums."""
    moved = np.moveaxis(x, param_axis, 0)
    out = np.empty_like(moved)
    n_ch = moved.shape[0]
    if axes == "batch":
        for ch in range(n_ch):
            vals = moved[ch].ravel().tolist()
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            out[ch] = (moved[ch] - mean) / math.sqrt(var + eps) * gamma[ch] + beta[ch]
    return np.moveaxis(out, 0, param_axis)


def block_diagonal(wg, g):
    """Dense (c, o) matrix that repeats ``wg`` along the diagonal ``g`` times."""
    cg, og = wg.shape
    dense = np.zeros((cg * g, og * g))
    for k in range(g):
        dense[k * cg:(k + 1) * cg, k * og:(k + 1) * og] = wg
    return dense


def momentum_recursion(p, grads, lr, mu, wd):
    """Scalar SGD with momentum, one parameter, step by step."""
    m = 0.0
    history = []
    for g in grads:
        m = mu * m + (g + wd * p)
        p = p - lr * m
        history.append(p)
    return history


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def cgc_extra_tensors(c, o, k1, k2, *, d, g, pooled, combine="sum_sigmoid",
                      shared_norm=False, shared_D=False, two_E=False):
    """Instantiate (zeros) every extra tensor a CGC layer owns, by name."""
    K = k1 * k2
    P = pooled[0] * pooled[1]
    t = {"E": np.zeros((P, d))}
    uses_g1 = combine in ("sum_sigmoid", "only_g1", "product")
    uses_g2 = combine in ("sum_sigmoid", "only_g2", "product")
    if uses_g1:
        t["D_c"] = np.zeros((d, K))
        t["norm_c1.gamma"], t["norm_c1.beta"] = np.zeros(c), np.zeros(c)
    if uses_g2:
        t["I"] = np.zeros((c // g, o // g))
        if two_E:
            t["E2"] = np.zeros((P, d))
        if not (shared_D and uses_g1):
            t["D_o"] = np.zeros((d, K))
        if not (shared_norm and uses_g1):
            t["norm_c2.gamma"], t["norm_c2.beta"] = np.zeros(c), np.zeros(c)
        t["norm_o.gamma"], t["norm_o.beta"] = np.zeros(o), np.zeros(o)
    return t


def enumerate_params(arch_layers):
    """Parameter count from instantiated zero tensors for a flat list of layer dicts."""
    total = 0
    for layer in arch_layers:
        for shape in layer:
            total += np.zeros(shape).size
    return total
