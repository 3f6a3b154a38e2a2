"""Built-in verification suites for the ``selfcheck`` CLI command.

Each suite returns (name, passed, detail) triples.  The reference
implementations here are deliberately naive straight-line code,
independent of the vectorized production paths they cross-check.
"""

from __future__ import annotations

import numpy as np

from .decomposition import DecompositionParams, guided_filter
from .metrics import ssim
from .network import Network, NetworkConfig
from .optim import xavier_init
from .tensor import ConvParams, Tensor, concat_channels, conv2d, mse_loss, mul, relu

Check = tuple[str, bool, str]

PARAM_RANGE = {2: (2_400_000, 2_600_000), 4: (2_530_000, 2_750_000)}


def paramcount_suite() -> list[Check]:
    checks = []
    for sf, (lo, hi) in PARAM_RANGE.items():
        count = Network(NetworkConfig(sf=sf)).param_count()
        checks.append(
            (f"paramcount sf={sf}", lo <= count <= hi, f"{count} parameters, expected [{lo}, {hi}]")
        )
    return checks


# -- naive references ---------------------------------------------------------


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, co, h, wd), dtype=np.float64)
    for ni in range(n):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for cc in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, cc, i + ki, j + kj] * w[o, cc, ki, kj]
                    out[ni, o, i, j] = acc + b[o]
    return out


def naive_guided_filter(img: np.ndarray, radius: int, eps: float) -> np.ndarray:
    h, w = img.shape
    mean = np.zeros_like(img)
    mean_sq = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            win = img[max(0, i - radius) : i + radius + 1, max(0, j - radius) : j + radius + 1]
            mean[i, j] = win.mean()
            mean_sq[i, j] = (win * win).mean()
    var = mean_sq - mean * mean
    a = var / (var + eps)
    b = mean - a * mean
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            sl = (slice(max(0, i - radius), i + radius + 1), slice(max(0, j - radius), j + radius + 1))
            out[i, j] = a[sl].mean() * img[i, j] + b[sl].mean()
    return out


def naive_ssim(a: np.ndarray, b: np.ndarray) -> float:
    from .metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW

    half = (SSIM_WINDOW - 1) / 2.0
    g1 = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2.0 * SSIM_SIGMA**2))
    g1 /= g1.sum()
    kernel = np.outer(g1, g1)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    h, w = a.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(w - SSIM_WINDOW + 1):
            wa = a[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            wb = b[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mu_a = (kernel * wa).sum()
            mu_b = (kernel * wb).sum()
            va = (kernel * wa * wa).sum() - mu_a**2
            vb = (kernel * wb * wb).sum() - mu_b**2
            cov = (kernel * wa * wb).sum() - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


def oracles_suite() -> list[Check]:
    rng = np.random.default_rng(2024)
    checks = []

    x = rng.standard_normal((2, 4, 8, 8))
    w = rng.standard_normal((6, 4, 3, 3)) * 0.2
    b = rng.standard_normal(6) * 0.1
    fast = conv2d(Tensor(x, dtype=np.float64), ConvParams(Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64)))
    err = float(np.max(np.abs(fast.data - naive_conv2d(x, w, b))))
    checks.append(("conv2d vs naive loop", err < 1e-10, f"max abs err {err:.2e}"))

    img = rng.uniform(0, 1, (8, 8))
    fast_gf = guided_filter(Tensor(img[None, None], dtype=np.float64), Tensor(img[None, None], dtype=np.float64),
                            DecompositionParams(radius=2, eps=0.01))
    err = float(np.max(np.abs(fast_gf.data[0, 0] - naive_guided_filter(img, 2, 0.01))))
    checks.append(("guided filter vs naive windows", err < 1e-6, f"max abs err {err:.2e}"))

    a = rng.uniform(0, 1, (16, 16))
    bb = np.clip(a + rng.normal(0, 0.05, (16, 16)), 0, 1)
    err = abs(ssim(a, bb) - naive_ssim(a, bb))
    checks.append(("ssim vs naive windows", err < 1e-8, f"abs err {err:.2e}"))

    return checks


# -- gradient spot checks ------------------------------------------------------


def _fd_check(params: dict[str, Tensor], loss_fn, sample: int, rng: np.random.Generator) -> float:
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    for t in params.values():
        t.grad = None
    worst = 0.0
    entries = [(name, i) for name, t in params.items() for i in range(t.data.size)]
    if sample and len(entries) > sample:
        picks = rng.choice(len(entries), size=sample, replace=False)
        entries = [entries[i] for i in picks]
    for name, i in entries:
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        eps = 1e-4 * max(1.0, abs(orig))
        flat[i] = orig + eps
        fp = float(loss_fn().data)
        flat[i] = orig - eps
        fm = float(loss_fn().data)
        flat[i] = orig
        fd = (fp - fm) / (2 * eps)
        an = analytic[name].reshape(-1)[i]
        worst = max(worst, abs(fd - an) / max(1.0, abs(fd), abs(an)))
    return worst


def gradcheck_suite(tolerance: float = 1e-4) -> list[Check]:
    """Finite-difference spot checks per block type plus a reduced toy net."""
    checks = []
    rng = np.random.default_rng(11)

    def conv_p(ci, co, k, seed_name):
        return ConvParams(
            xavier_init((co, ci, k, k), 11, name=f"{seed_name}.weight", dtype=np.float64),
            xavier_init((co,), 11, name=f"{seed_name}.bias", dtype=np.float64),
        )

    c = 4
    x_feat = Tensor(rng.uniform(0.1, 0.9, (1, c, 8, 8)), dtype=np.float64)
    bridged = Tensor(rng.uniform(0.1, 0.9, (1, c, 8, 8)), dtype=np.float64)
    smf = Tensor(rng.uniform(0.0, 0.5, (1, c, 8, 8)), dtype=np.float64)

    def rb_convs(prefix):
        return {f"{prefix}.conv1": conv_p(c, c, 3, f"{prefix}.conv1"), f"{prefix}.conv2": conv_p(c, c, 3, f"{prefix}.conv2")}

    def run_rb(p):
        t = relu(x_feat)
        t = conv2d(t, p["rb.conv1"])
        t = relu(t)
        t = conv2d(t, p["rb.conv2"])
        return mse_loss(t + x_feat, Tensor(np.zeros_like(x_feat.data), dtype=np.float64))

    p_rb = rb_convs("rb")
    params_rb = {}
    for name, cp in p_rb.items():
        params_rb[f"{name}.weight"] = cp.weight
        params_rb[f"{name}.bias"] = cp.bias
    err = _fd_check(params_rb, lambda: run_rb(p_rb), sample=0, rng=rng)
    checks.append(("gradcheck res block", err < tolerance, f"max rel err {err:.2e}"))

    p_mod = {**rb_convs("rmb"), "rmb.mod1": conv_p(c, c, 3, "rmb.mod1"), "rmb.mod2": conv_p(c, c, 3, "rmb.mod2")}

    def run_rmb(p):
        t = relu(x_feat)
        t = conv2d(t, p["rmb.conv1"])
        t = relu(t)
        body = conv2d(t, p["rmb.conv2"])
        m = conv2d(smf, p["rmb.mod1"])
        m = relu(m)
        m = conv2d(m, p["rmb.mod2"])
        return mse_loss(mul(body, m) + x_feat, Tensor(np.zeros_like(x_feat.data), dtype=np.float64))

    params_rmb = {}
    for name, cp in p_mod.items():
        params_rmb[f"{name}.weight"] = cp.weight
        params_rmb[f"{name}.bias"] = cp.bias
    err = _fd_check(params_rmb, lambda: run_rmb(p_mod), sample=0, rng=rng)
    checks.append(("gradcheck res-mod block", err < tolerance, f"max rel err {err:.2e}"))

    p_skip = {"rsb.dr": conv_p(2 * c, c, 1, "rsb.dr"), **rb_convs("rsb")}

    def run_rsb(p):
        t = relu(concat_channels(x_feat, bridged))
        t = conv2d(t, p["rsb.dr"])
        t = conv2d(t, p["rsb.conv1"])
        t = relu(t)
        t = conv2d(t, p["rsb.conv2"])
        return mse_loss(t + x_feat, Tensor(np.zeros_like(x_feat.data), dtype=np.float64))

    params_rsb = {}
    for name, cp in p_skip.items():
        params_rsb[f"{name}.weight"] = cp.weight
        params_rsb[f"{name}.bias"] = cp.bias
    err = _fd_check(params_rsb, lambda: run_rsb(p_skip), sample=0, rng=rng)
    checks.append(("gradcheck res-skip block", err < tolerance, f"max rel err {err:.2e}"))

    net = Network(NetworkConfig.toy_default(base_channels=4), seed=11, dtype=np.float64)
    data_rng = np.random.default_rng(5)
    x_img = Tensor(data_rng.uniform(0.1, 0.9, (1, 3, 8, 8)), dtype=np.float64)
    target = Tensor(data_rng.uniform(0.0, 1.0, (1, 3, 16, 16)), dtype=np.float64)
    err = _fd_check(net.store, lambda: mse_loss(net.forward(x_img), target), sample=400, rng=rng)
    checks.append(("gradcheck toy network (sampled)", err < tolerance, f"max rel err {err:.2e}"))

    return checks


SUITES = {
    "paramcount": paramcount_suite,
    "gradcheck": gradcheck_suite,
    "oracles": oracles_suite,
}
