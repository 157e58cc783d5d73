"""Independent oracles the tests check production code against.

Everything here is deliberately written the slow, obvious way (plain Python
loops, direct definitions) and shares no code with the library paths it
verifies.
"""

import numpy as np


def fd_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f() w.r.t. array x,
    perturbing x in place."""
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
        g[i] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return np.linalg.norm((a - b).ravel()) / denom


def direct_convolution(x, k):
    """O(N*K) full convolution by definition."""
    n, m = len(x), len(k)
    out = np.zeros(n + m - 1)
    for i in range(n):
        for j in range(m):
            out[i + j] += x[i] * k[j]
    return out


def plain_temporal_stats(h, eps=1e-8):
    """Uniform-weight mean and std over time of a (T, C) map."""
    t = h.shape[0]
    mu = h.sum(axis=0) / t
    m2 = (h * h).sum(axis=0) / t
    sigma = np.sqrt(np.maximum(m2 - mu ** 2, eps))
    return np.concatenate([mu, sigma])


def dft_mel_energies(frame, n_fft, sample_rate, n_mels):
    """Mel-band energies of one windowed frame via an explicit DFT and
    triangle weights built from the mel formula directly."""
    n_bins = n_fft // 2 + 1
    spectrum = np.zeros(n_bins, dtype=complex)
    for k in range(n_bins):
        for n in range(len(frame)):
            spectrum[k] += frame[n] * np.exp(-2j * np.pi * k * n / n_fft)
    power = np.abs(spectrum) ** 2

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = [from_mel(m) for m in
             np.linspace(to_mel(0.0), to_mel(sample_rate / 2.0), n_mels + 2)]
    freqs = [k * sample_rate / n_fft for k in range(n_bins)]
    energies = np.zeros(n_mels)
    for m in range(n_mels):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        for k, f in enumerate(freqs):
            if lo <= f <= ctr and ctr > lo:
                w = (f - lo) / (ctr - lo)
            elif ctr < f <= hi and hi > ctr:
                w = (hi - f) / (hi - ctr)
            else:
                w = 0.0
            energies[m] += w * power[k]
    return energies


def sweep_error_rates(scores, labels):
    """(threshold, p_miss, p_fa) at every distinct score plus reject-all,
    counted with plain loops. Accept iff score >= threshold."""
    thresholds = sorted(set(scores))
    thresholds.append(thresholds[-1] + 1.0)
    n_target = sum(1 for is_t in labels if is_t)
    n_nontarget = len(labels) - n_target
    points = []
    for t in thresholds:
        miss = sum(1 for s, is_t in zip(scores, labels) if is_t and s < t)
        fa = sum(1 for s, is_t in zip(scores, labels) if not is_t and s >= t)
        points.append((t, miss / n_target, fa / n_nontarget))
    return points


def brute_force_eer(scores, labels):
    """EER by exhaustive threshold sweep and linear interpolation of the
    crossing between the adjacent operating points."""
    points = sweep_error_rates(scores, labels)
    prev = None
    for t, p_miss, p_fa in points:
        if p_miss - p_fa >= 0.0:
            if p_miss - p_fa == 0.0:
                return p_miss
            t0, y1, x1 = prev
            x2, y2 = p_fa, p_miss
            frac = (x1 - y1) / ((y2 - y1) - (x2 - x1))
            return x1 + frac * (x2 - x1)
        prev = (t, p_miss, p_fa)
    raise AssertionError("no crossing found")


def brute_force_mindcf(scores, labels, p_target=0.01, c_miss=1.0, c_fa=1.0):
    best = float("inf")
    for _, p_miss, p_fa in sweep_error_rates(scores, labels):
        dcf = c_miss * p_target * p_miss + c_fa * (1.0 - p_target) * p_fa
        best = min(best, dcf)
    return best / min(c_miss * p_target, c_fa * (1.0 - p_target))


def brute_force_triplet(z, labels, margin):
    """Batch-all triplet loss by direct triple enumeration."""
    n = len(z)
    total, count = 0.0, 0
    any_valid = False
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for neg in range(n):
                if labels[neg] == labels[a]:
                    continue
                any_valid = True
                term = (np.sum((z[a] - z[p]) ** 2)
                        - np.sum((z[a] - z[neg]) ** 2) + margin)
                if term > 0.0:
                    total += term
                    count += 1
    assert any_valid, "oracle: no valid triple"
    return total / count if count else 0.0


def brute_force_supcon(z, labels, tau):
    """Supervised contrastive loss by direct pair enumeration."""
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denom = sum(np.exp(np.dot(z[i], z[a]) / tau) for a in range(n) if a != i)
        for p in positives:
            total += (-1.0 / len(positives)) * np.log(
                np.exp(np.dot(z[i], z[p]) / tau) / denom)
    return total
