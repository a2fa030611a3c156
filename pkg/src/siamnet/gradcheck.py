"""Finite-difference verification of every backward pass.

Central differences with h=1e-5 on 64-bit floats are the independent
oracle for the layer primitives, the pairwise matrix gradients, and the
full network.  The suites below power `siamnet gradcheck` and the test
suite.
"""

import numpy as np

from . import network, pairwise
from .layers import (
    conv2d,
    conv2d_backward,
    cross_channel_norm,
    cross_channel_norm_backward,
    fully_connected,
    fully_connected_backward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
)

H_STEP = 1e-5


def numerical_gradient(f, x: np.ndarray, h: float = H_STEP) -> np.ndarray:
    """Central finite differences of scalar f at every entry of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-10)
    return float((np.abs(a - b) / denom).max())


def _check_one(analytic, fd):
    return relative_error(np.asarray(analytic), np.asarray(fd))


def check_layers(trials: int = 3, seed: int = 0):
    """FD-verify conv, pool, normalization, relu, fc on random shapes."""
    rng = np.random.default_rng(seed)
    results = []
    shapes = [(1, 2, 6, 6), (2, 3, 4, 8), (1, 4, 8, 4)]
    for t in range(trials):
        n, c, h, w = shapes[t % len(shapes)]

        x = rng.normal(size=(n, c, h, w))
        f = rng.normal(size=(3, c, 3, 3))
        b = rng.normal(size=3)
        up = rng.normal(size=(n, 3, h, w))
        dx, df, db = conv2d_backward(x, f, up)
        loss = lambda: float((conv2d(x, f, b) * up).sum())
        results.append(("conv2d/input", _check_one(dx, numerical_gradient(loss, x)), 1e-6))
        results.append(("conv2d/filters", _check_one(df, numerical_gradient(loss, f)), 1e-6))
        results.append(("conv2d/bias", _check_one(db, numerical_gradient(loss, b)), 1e-6))

        x = rng.normal(size=(n, c, h, w))
        up = rng.normal(size=(n, c, h // 2, w // 2))
        _, idx = maxpool2(x)
        dx = maxpool2_backward(idx, up)
        loss = lambda: float((maxpool2(x)[0] * up).sum())
        results.append(("maxpool2/input", _check_one(dx, numerical_gradient(loss, x)), 1e-6))

        x = rng.normal(size=(n, 5, 3, 3))
        up = rng.normal(size=x.shape)
        kw = dict(k0=2.0, alpha_n=0.5, beta_n=0.75, radius=1)
        dx = cross_channel_norm_backward(x, up, **kw)
        loss = lambda: float((cross_channel_norm(x, **kw) * up).sum())
        results.append(("cross_channel_norm/input",
                        _check_one(dx, numerical_gradient(loss, x)), 1e-6))

        # keep entries away from the relu kink so FD stays two-sided
        x = rng.normal(size=(4, 6))
        x[np.abs(x) < 1e-3] = 0.1
        up = rng.normal(size=x.shape)
        dx = relu_backward(x, up)
        loss = lambda: float((relu(x) * up).sum())
        results.append(("relu/input", _check_one(dx, numerical_gradient(loss, x)), 1e-8))

        x = rng.normal(size=(4, 6))
        wgt = rng.normal(size=(3, 6))
        b = rng.normal(size=3)
        up = rng.normal(size=(4, 3))
        dx, dw, db = fully_connected_backward(x, wgt, up)
        loss = lambda: float((fully_connected(x, wgt, b) * up).sum())
        results.append(("fully_connected/input", _check_one(dx, numerical_gradient(loss, x)), 1e-8))
        results.append(("fully_connected/weights", _check_one(dw, numerical_gradient(loss, wgt)), 1e-8))
        results.append(("fully_connected/bias", _check_one(db, numerical_gradient(loss, b)), 1e-8))
    return _collapse(results)


def check_pairwise(trials: int = 20, seed: int = 0, alpha: float = 2.0,
                   beta: float = 0.5, c: float = 2.0):
    """FD- and oracle-verify the matrix-form costs and gradients."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(trials):
        X = rng.normal(size=(5, 6))
        labels = [1, 1, 2, 2, 3, 3]
        masks = pairwise.build_masks(labels, c)
        S = pairwise.cosine_similarity(X)
        g = pairwise.deviance_grad_general(X, S, masks, alpha, beta)
        cost = lambda: pairwise.deviance_cost(
            pairwise.cosine_similarity(X), masks, alpha, beta)
        results.append(("deviance_grad_general",
                        _check_one(g, numerical_gradient(cost, X)), 1e-6))

        ocost, ograd = pairwise.pairwise_oracle(X, masks, alpha, beta)
        results.append(("matrix_vs_loop/cost",
                        abs(ocost - pairwise.deviance_cost(S, masks, alpha, beta)), 1e-10))
        results.append(("matrix_vs_loop/grad", _check_one(g, ograd), 1e-10))

        Xs = rng.normal(size=(5, 4))
        Ys = rng.normal(size=(5, 3))
        lx, ly = [1, 2, 3, 1], [1, 2, 4]
        msp = pairwise.build_masks(lx, c, labels_y=ly)
        Ssp = pairwise.cosine_similarity(Xs, Ys)
        dX, dY = pairwise.deviance_grad_specific(Xs, Ys, Ssp, msp, alpha, beta)
        cost = lambda: pairwise.deviance_cost(
            pairwise.cosine_similarity(Xs, Ys), msp, alpha, beta)
        results.append(("deviance_grad_specific/X",
                        _check_one(dX, numerical_gradient(cost, Xs)), 1e-6))
        results.append(("deviance_grad_specific/Y",
                        _check_one(dY, numerical_gradient(cost, Ys)), 1e-6))

        Xf = rng.normal(size=(5, 6))
        mf = pairwise.build_masks(labels, 1.0)
        gf = pairwise.fisher_grad(Xf, pairwise.cosine_similarity(Xf), mf)
        cost = lambda: pairwise.fisher_cost(pairwise.cosine_similarity(Xf), mf)
        results.append(("fisher_grad", _check_one(gf, numerical_gradient(cost, Xf)), 1e-6))
    return _collapse(results)


def toy_net_config() -> network.NetConfig:
    """Small geometry for full-network checks: 16x48 images, 8 channels."""
    return network.NetConfig(
        image_h=48, image_w=16, part_h=24, part_offsets=(0, 12, 24),
        c1_channels=8, c3_channels=8, feature_dim=20)


def check_fullnet(trials: int = 1, seed: int = 0, n_params: int = 50,
                  batch: int = 6):
    """End-to-end FD check: deviance cost through the whole toy network."""
    rng = np.random.default_rng(seed)
    results = []
    cfg = toy_net_config()
    for t in range(trials):
        params = network.init_network("general", seed + t, cfg)
        parts = rng.normal(size=(batch, 3, cfg.in_channels, cfg.part_h, cfg.image_w))
        labels = [i // 2 for i in range(batch)]
        masks = pairwise.build_masks(labels, 2.0)

        def cost():
            feats, _ = network.forward_batch(params, parts, "a")
            S = pairwise.cosine_similarity(feats.T)
            return pairwise.deviance_cost(S, masks)

        feats, cache = network.forward_batch(params, parts, "a")
        X = feats.T
        S = pairwise.cosine_similarity(X)
        gX = pairwise.deviance_grad_general(X, S, masks)
        grads = network.backward_batch(params, cache, gX.T, "a").tensors()
        tensors = params.branch_set("a").tensors()

        sizes = np.array([tt.size for tt in tensors])
        total = int(sizes.sum())
        chosen = rng.choice(total, size=min(n_params, total), replace=False)
        bounds = np.cumsum(sizes)
        worst = 0.0
        h = H_STEP
        for flat_idx in sorted(chosen):
            ti = int(np.searchsorted(bounds, flat_idx, side="right"))
            off = flat_idx - (bounds[ti - 1] if ti else 0)
            view = tensors[ti].reshape(-1)
            orig = view[off]
            view[off] = orig + h
            fp = cost()
            view[off] = orig - h
            fm = cost()
            view[off] = orig
            fd = (fp - fm) / (2 * h)
            an = grads[ti].reshape(-1)[off]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-10))
        results.append(("fullnet/sampled_params", worst, 1e-4))
    return _collapse(results)


def _collapse(results):
    """Keep the worst error per target name."""
    agg = {}
    for name, err, thr in results:
        prev = agg.get(name)
        if prev is None or err > prev[0]:
            agg[name] = (err, thr)
    return [(name, err, thr) for name, (err, thr) in agg.items()]


SUITES = {
    "layers": check_layers,
    "pairwise": check_pairwise,
    "fullnet": check_fullnet,
}


def run_suite(module: str, trials: int, seed: int):
    """Returns (results, all_passed)."""
    results = SUITES[module](trials=trials, seed=seed)
    return results, all(err < thr for _, err, thr in results)
