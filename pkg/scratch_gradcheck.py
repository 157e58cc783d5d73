"""Scratch: FD-check every layer backward, then the full model composite."""
import numpy as np
from mfcontrast import nn

rng = np.random.default_rng(0)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def rel(a, b):
    na = np.linalg.norm(a.ravel())
    nb = np.linalg.norm(b.ravel())
    return np.linalg.norm((a - b).ravel()) / max(na, nb, 1e-12)


def check(name, f_scalar, analytic_pairs):
    """analytic_pairs: list of (array, analytic_grad)"""
    worst = 0.0
    for x, g in analytic_pairs:
        fd = fd_grad(f_scalar, x)
        worst = max(worst, rel(g, fd))
    print(f"{name:28s} rel_err={worst:.3e}", "OK" if worst < 1e-6 else "FAIL")
    assert worst < 1e-6, name


# linear
x = rng.standard_normal((2, 5, 4))
w = rng.standard_normal((4, 3))
b = rng.standard_normal(3)
r = rng.standard_normal((2, 5, 3))
def f():
    y, _ = nn.linear_fwd(x, w, b)
    return (y * r).sum()
y, c = nn.linear_fwd(x, w, b)
dx, dw, db = nn.linear_bwd(r, c)
check("linear", f, [(x, dx), (w, dw), (b, db)])

# layer norm
g_ = rng.standard_normal(6)
b_ = rng.standard_normal(6)
x = rng.standard_normal((3, 4, 6))
r = rng.standard_normal((3, 4, 6))
def f():
    y, _ = nn.layer_norm_fwd(x, g_, b_)
    return (y * r).sum()
y, c = nn.layer_norm_fwd(x, g_, b_)
dx, dg, dbta = nn.layer_norm_bwd(r, c)
check("layer_norm", f, [(x, dx), (g_, dg), (b_, dbta)])

# batch norm (train)
g_ = rng.standard_normal(5)
b_ = rng.standard_normal(5)
x = rng.standard_normal((4, 3, 5))
r = rng.standard_normal((4, 3, 5))
rm, rv = np.zeros(5), np.ones(5)
def f():
    y, _, _, _ = nn.batch_norm_fwd(x, g_, b_, rm, rv, "train")
    return (y * r).sum()
y, c, _, _ = nn.batch_norm_fwd(x, g_, b_, rm, rv, "train")
dx, dg, dbta = nn.batch_norm_bwd(r, c)
check("batch_norm train", f, [(x, dx), (g_, dg), (b_, dbta)])

# batch norm (eval)
rm = rng.standard_normal(5) * 0.1
rv = np.abs(rng.standard_normal(5)) + 0.5
def f():
    y, _, _, _ = nn.batch_norm_fwd(x, g_, b_, rm, rv, "eval")
    return (y * r).sum()
y, c, _, _ = nn.batch_norm_fwd(x, g_, b_, rm, rv, "eval")
dx, dg, dbta = nn.batch_norm_bwd(r, c)
check("batch_norm eval", f, [(x, dx), (g_, dg), (b_, dbta)])

# softmax
x = rng.standard_normal((3, 4, 6))
r = rng.standard_normal((3, 4, 6))
def f():
    p, _ = nn.softmax_fwd(x)
    return (p * r).sum()
p, c = nn.softmax_fwd(x)
dx = nn.softmax_bwd(r, c)
check("softmax", f, [(x, dx)])

# silu
x = rng.standard_normal((3, 7))
r = rng.standard_normal((3, 7))
def f():
    y, _ = nn.silu_fwd(x)
    return (y * r).sum()
y, c = nn.silu_fwd(x)
dx = nn.silu_bwd(r, c)
check("silu", f, [(x, dx)])

# glu
x = rng.standard_normal((2, 5, 8))
r = rng.standard_normal((2, 5, 4))
def f():
    y, _ = nn.glu_fwd(x)
    return (y * r).sum()
y, c = nn.glu_fwd(x)
dx = nn.glu_bwd(r, c)
check("glu", f, [(x, dx)])

# depthwise conv
x = rng.standard_normal((2, 9, 4))
w = rng.standard_normal((5, 4))
b = rng.standard_normal(4)
r = rng.standard_normal((2, 9, 4))
def f():
    y, _ = nn.depthwise_conv1d_fwd(x, w, b)
    return (y * r).sum()
y, c = nn.depthwise_conv1d_fwd(x, w, b)
dx, dw, db = nn.depthwise_conv1d_bwd(r, c)
check("depthwise_conv1d", f, [(x, dx), (w, dw), (b, db)])

# strided conv
x = rng.standard_normal((2, 11, 6))
w = rng.standard_normal((3, 6, 5))
b = rng.standard_normal(5)
y0, _ = nn.strided_conv1d_fwd(x, w, b)
r = rng.standard_normal(y0.shape)
def f():
    y, _ = nn.strided_conv1d_fwd(x, w, b)
    return (y * r).sum()
y, c = nn.strided_conv1d_fwd(x, w, b)
dx, dw, db = nn.strided_conv1d_bwd(r, c)
check("strided_conv1d", f, [(x, dx), (w, dw), (b, db)])

# attentive stats
h = rng.standard_normal((3, 6, 5))
w = rng.standard_normal((5, 4))
b = rng.standard_normal(4)
v = rng.standard_normal(4)
r = rng.standard_normal((3, 10))
def f():
    y, _ = nn.attentive_stats_fwd(h, w, b, v)
    return (y * r).sum()
y, c = nn.attentive_stats_fwd(h, w, b, v)
dh, dw, db, dv = nn.attentive_stats_bwd(r, c)
check("attentive_stats", f, [(h, dh), (w, dw), (b, db), (v, dv)])

# l2 normalize
x = rng.standard_normal((4, 6))
r = rng.standard_normal((4, 6))
def f():
    y, _ = nn.l2_normalize_fwd(x)
    return (y * r).sum()
y, c = nn.l2_normalize_fwd(x)
dx = nn.l2_normalize_bwd(r, c)
check("l2_normalize", f, [(x, dx)])

print("all layer checks passed")
