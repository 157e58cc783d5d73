"""Scratch: FD-check the full model backward and every loss gradient."""
import numpy as np
from mfcontrast.encoder import EncoderConfig
from mfcontrast.heads import HeadConfig
from mfcontrast.model import SpeakerModel
from mfcontrast import losses
from mfcontrast.losses import LossConfig

rng = np.random.default_rng(7)


def rel(a, b):
    na = np.linalg.norm(np.asarray(a).ravel())
    nb = np.linalg.norm(np.asarray(b).ravel())
    return np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) / max(na, nb, 1e-12)


# --- full model composite -------------------------------------------------
enc = EncoderConfig(num_blocks=2, model_dim=16, num_heads=2, ff_expansion=2,
                    conv_kernel=7, dropout=0.0, input_dim=8)
head = HeadConfig(embed_dim=6, attention_hidden=5)
m = SpeakerModel(enc, head, num_speakers=3, seed=1)
feats = rng.standard_normal((3, 12, 8))
r_taps = [rng.standard_normal((3, 6)) for _ in range(2)]
r_spk = rng.standard_normal((3, 6))


def scalar():
    out = m.forward(feats, mode="train", rng=None)
    # train-mode forward mutates bn state; restore below
    s = sum((t * r).sum() for t, r in zip(out.tap_embeddings, r_taps))
    return s + (out.speaker_embedding * r_spk).sum()


state0 = {k: v.copy() for k, v in m.state.items()}
out = m.forward(feats, mode="train")
m.state = {k: v.copy() for k, v in state0.items()}
grads = m.backward(out, r_taps, r_spk)

h = 1e-6
worst = 0.0
names = sorted(m.params)
coord_rng = np.random.default_rng(3)
for name in names:
    p = m.params[name]
    flat = p.reshape(-1)
    count = min(6, flat.size)
    idxs = coord_rng.choice(flat.size, size=count, replace=False)
    for i in idxs:
        old = flat[i]
        flat[i] = old + h
        m.state = {k: v.copy() for k, v in state0.items()}
        fp = scalar()
        flat[i] = old - h
        m.state = {k: v.copy() for k, v in state0.items()}
        fm = scalar()
        flat[i] = old
        fd = (fp - fm) / (2 * h)
        an = grads[name].reshape(-1)[i]
        # atol floor covers FD roundoff (~eps*|f|/h) on zero-gradient coords
        e = abs(an - fd) - 1e-5 * max(abs(an), abs(fd))
        if e > worst:
            worst = e
            worst_name = name
m.state = state0
print(f"model param coord FD worst abs-excess err: {worst:.3e}  ({worst_name})")
assert worst < 1e-6

# directional derivative over all params at once
dirs_rng = np.random.default_rng(11)
for trial in range(3):
    d = {k: dirs_rng.standard_normal(v.shape) for k, v in m.params.items()}
    an = sum((grads[k] * d[k]).sum() for k in m.params)
    saved = {k: v.copy() for k, v in m.params.items()}
    for k in m.params:
        m.params[k] = saved[k] + h * d[k]
    m.state = {k: v.copy() for k, v in state0.items()}
    fp = scalar()
    for k in m.params:
        m.params[k] = saved[k] - h * d[k]
    m.state = {k: v.copy() for k, v in state0.items()}
    fm = scalar()
    for k in m.params:
        m.params[k] = saved[k]
    fd = (fp - fm) / (2 * h)
    print(f"  directional {trial}: analytic={an:+.8e} fd={fd:+.8e} rel={abs(an-fd)/max(abs(an),abs(fd)):.2e}")
    assert abs(an - fd) / max(abs(an), abs(fd)) < 1e-7

# gradient w.r.t. the input features
g_feats = rng.standard_normal(feats.shape)  # direction
out = m.forward(feats, mode="train")
m.state = {k: v.copy() for k, v in state0.items()}
# backward returns param grads; input grad needs encoder bwd return -- check via directional FD on feats
from mfcontrast.encoder import _encoder_fwd, _encoder_bwd
from mfcontrast.heads import _heads_fwd, _heads_bwd, _mfa_fwd, _mfa_bwd
taps, enc_cache, _ = _encoder_fwd(feats, m.params, state0, enc, mode="train")
tap_embs, hc, st2 = _heads_fwd(taps, m.params, state0, head, "train")
spk, mc, _ = _mfa_fwd(taps, m.params, st2, head, "train")
gr = {}
d_taps = _heads_bwd(r_taps, hc, gr)
d_taps2 = _mfa_bwd(r_spk, mc, gr)
d_taps = [a + b for a, b in zip(d_taps, d_taps2)]
dfeats = _encoder_bwd(d_taps, enc_cache, enc, gr)
an = (dfeats * g_feats).sum()
m.state = {k: v.copy() for k, v in state0.items()}
feats2 = feats + h * g_feats
feats_save = feats.copy()
feats[...] = feats2
m.state = {k: v.copy() for k, v in state0.items()}
fp = scalar()
feats[...] = feats_save - h * g_feats
m.state = {k: v.copy() for k, v in state0.items()}
fm = scalar()
feats[...] = feats_save
fd = (fp - fm) / (2 * h)
print(f"  input-grad directional: rel={abs(an-fd)/max(abs(an),abs(fd)):.2e}")
assert abs(an - fd) / max(abs(an), abs(fd)) < 1e-7

print("model composite OK")

# --- losses ----------------------------------------------------------------

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


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


n, d, k = 6, 5, 3
z = rng.standard_normal((n, d))
labels = np.array([0, 1, 2, 0, 1, 2])
w = rng.standard_normal((k, d))

for style in ("cosine_additive", "angular_additive"):
    cfg = LossConfig(margin=0.2, scale=30.0, margin_style=style)
    loss, dz, dw = losses.am_softmax(z, labels, w, cfg)
    fz = fd_grad(lambda: losses.am_softmax(z, labels, w, cfg)[0], z)
    fw = fd_grad(lambda: losses.am_softmax(z, labels, w, cfg)[0], w)
    print(f"am_softmax[{style}] relz={rel(dz, fz):.2e} relw={rel(dw, fw):.2e}")
    assert rel(dz, fz) < 1e-7 and rel(dw, fw) < 1e-7

zc = unit_rows(rng.standard_normal((6, 5)))
cfg = LossConfig(temperature=0.3)
loss, dz, skipped = losses.supcon(zc, labels, cfg)
fz = fd_grad(lambda: losses.supcon(zc, labels, cfg)[0], zc)
print(f"supcon rel={rel(dz, fz):.2e} skipped={skipped}")
assert rel(dz, fz) < 1e-7

# supcon with mean over anchors
cfg2 = LossConfig(temperature=0.3, supcon_mean_over_anchors=True)
loss, dz, _ = losses.supcon(zc, labels, cfg2)
fz = fd_grad(lambda: losses.supcon(zc, labels, cfg2)[0], zc)
print(f"supcon(mean) rel={rel(dz, fz):.2e}")
assert rel(dz, fz) < 1e-7

pairs = np.array([3, 4, 5, 0, 1, 2])
loss, dz = losses.ntxent(zc, pairs, cfg)
fz = fd_grad(lambda: losses.ntxent(zc, pairs, cfg)[0], zc)
print(f"ntxent rel={rel(dz, fz):.2e}")
assert rel(dz, fz) < 1e-7

cfg3 = LossConfig(triplet_margin=0.4)
loss, dz = losses.triplet(zc, labels, cfg3)
fz = fd_grad(lambda: losses.triplet(zc, labels, cfg3)[0], zc)
print(f"triplet rel={rel(dz, fz):.2e} loss={loss:.4f}")
assert rel(dz, fz) < 1e-6

anchors = np.array([0, 1, 2])
positives = np.array([3, 4, 5])
loss, dz = losses.npair(zc, labels, anchors, positives)
fz = fd_grad(lambda: losses.npair(zc, labels, anchors, positives)[0], zc)
print(f"npair rel={rel(dz, fz):.2e}")
assert rel(dz, fz) < 1e-7

# composites
taps = [rng.standard_normal((n, d)) for _ in range(3)]
spk = rng.standard_normal((n, d))
is_aug = np.array([False, False, False, True, True, True])
cfgm = LossConfig(lam=0.5, temperature=0.2)
total, bd, d_taps, d_spk, d_w = losses.mfcon(taps, spk, labels, w, cfgm, is_aug)
for i, t in enumerate(taps):
    fz = fd_grad(lambda: losses.mfcon(taps, spk, labels, w, cfgm, is_aug)[0], t)
    assert rel(d_taps[i], fz) < 1e-7, f"tap {i}"
fs = fd_grad(lambda: losses.mfcon(taps, spk, labels, w, cfgm, is_aug)[0], spk)
fw = fd_grad(lambda: losses.mfcon(taps, spk, labels, w, cfgm, is_aug)[0], w)
print(f"mfcon rel_spk={rel(d_spk, fs):.2e} rel_w={rel(d_w, fw):.2e}")
assert rel(d_spk, fs) < 1e-7 and rel(d_w, fw) < 1e-7

cfgc = LossConfig(lam1=0.3, lam2=0.2, temperature=0.2)
total, bd, d_taps, d_spk, d_w = losses.combined(taps, spk, labels, w, cfgc, is_aug)
for i, t in enumerate(taps):
    fz = fd_grad(lambda: losses.combined(taps, spk, labels, w, cfgc, is_aug)[0], t)
    assert rel(d_taps[i], fz) < 1e-7, f"tap {i}"
fs = fd_grad(lambda: losses.combined(taps, spk, labels, w, cfgc, is_aug)[0], spk)
fw = fd_grad(lambda: losses.combined(taps, spk, labels, w, cfgc, is_aug)[0], w)
print(f"combined rel_spk={rel(d_spk, fs):.2e} rel_w={rel(d_w, fw):.2e}")
assert rel(d_spk, fs) < 1e-7 and rel(d_w, fw) < 1e-7

# mfcon with other contrastive kinds
for kind in ("ntxent", "triplet", "npair"):
    cfgk = LossConfig(lam=0.5, temperature=0.2, contrastive_kind=kind, triplet_margin=0.4)
    total, bd, d_taps, d_spk, d_w = losses.mfcon(taps, spk, labels, w, cfgk, is_aug)
    fz = fd_grad(lambda: losses.mfcon(taps, spk, labels, w, cfgk, is_aug)[0], taps[0])
    print(f"mfcon[{kind}] rel_tap0={rel(d_taps[0], fz):.2e}")
    assert rel(d_taps[0], fz) < 1e-6

print("loss checks passed")

# closed forms
e1 = np.zeros(4); e1[0] = 1
e2 = np.zeros(4); e2[1] = 1
z4 = np.stack([e1, e1, e2, e2])
lab4 = np.array([0, 0, 1, 1])
val, _, _ = losses.supcon(z4, lab4, LossConfig(temperature=1.0))
expected = 4.0 * (np.log(np.e + 2.0) - 1.0)
print(f"supcon orthogonal: {val:.9f} expected {expected:.9f} diff={abs(val-expected):.2e}")
assert abs(val - expected) < 1e-12

val, _ = losses.ntxent(z4, np.array([1, 0, 3, 2]), LossConfig(temperature=1.0))
print(f"ntxent orthogonal mean: {val:.9f} expected {expected/4:.9f}")
assert abs(val - expected / 4) < 1e-12

val, _, _ = losses.supcon(np.stack([e1, e1]), np.array([0, 0]), LossConfig(temperature=1.0))
print(f"supcon two-row: {val}")
assert val == 0.0

# npair closed form: 2 orthogonal pairs
za = np.stack([e1, e2, e1, e2])
lab = np.array([0, 1, 0, 1])
val, _ = losses.npair(za, lab, np.array([0, 1]), np.array([2, 3]))
print(f"npair: {val:.9f} expected {np.log(1+1/np.e)+0:.9f}")
assert abs(val - np.log(1 + np.exp(-1.0))) < 1e-12

# triplet hand case: a=e1,p=e2,n=e1 -> 2.2
zt = np.stack([e1, e2, e1])
labt = np.array([0, 0, 1])
valt, _ = losses.triplet(zt, labt, LossConfig(triplet_margin=0.2))
print(f"triplet hand case mean term: {valt}")

# am_softmax closed form
z1 = np.array([[1.0, 0.0]])
w1 = np.array([[1.0, 0.0], [-1.0, 0.0]])
val, _, _ = losses.am_softmax(z1, np.array([0]), w1, LossConfig(margin=0.2, scale=30.0))
print(f"ams perfect case: {val:.3e} (log(1+e^-54)={np.log1p(np.exp(-54)):.3e})")
assert val < 1e-20
print("closed forms OK")
