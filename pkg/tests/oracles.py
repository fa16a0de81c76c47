"""Reference implementations used only by the tests.

They are written differently from the package code on purpose (sorted
search instead of cumulative counts, dense joint Gaussians instead of the
closed-form quadratic) so that agreement means something.
"""
import numpy as np
from scipy.stats import multivariate_normal


def brute_force_sweep(scores, labels):
    """FAR/FRR at every midpoint threshold (plus both ends), accepting score > thr."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    u = np.unique(scores)
    thr = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    frr = np.searchsorted(tar, thr, side="right") / len(tar)
    far = (len(non) - np.searchsorted(non, thr, side="right")) / len(non)
    return thr, far, frr


def brute_force_eer(scores, labels) -> float:
    _, far, frr = brute_force_sweep(scores, labels)
    for k in range(len(far)):
        if far[k] <= frr[k]:
            if k == 0 or far[k] == frr[k]:
                return float(frr[k])
            d0, d1 = far[k - 1] - frr[k - 1], far[k] - frr[k]
            t = d0 / (d0 - d1)
            return float(frr[k - 1] + t * (frr[k] - frr[k - 1]))
    raise AssertionError("sweep never crossed")


def brute_force_min_dcf(scores, labels, p_target=0.01, c_miss=1.0, c_fa=1.0) -> float:
    _, far, frr = brute_force_sweep(scores, labels)
    best = min(c_miss * p_target * m + c_fa * (1 - p_target) * f for f, m in zip(far, frr))
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


def dense_two_cov_llr(a, b, between, within) -> float:
    """log N([a;b]; 0, [[T,B],[B,T]]) - log N(a; 0, T) - log N(b; 0, T)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    T = between + within
    joint = np.block([[T, between], [between, T]])
    d = len(a)
    zero = np.zeros(2 * d)
    return float(multivariate_normal(zero, joint).logpdf(np.concatenate([a, b]))
                 - multivariate_normal(zero[:d], T).logpdf(a)
                 - multivariate_normal(zero[:d], T).logpdf(b))


def finite_difference_check(model, loss_fn, n_coords=100, eps=1e-6, seed=0):
    """Max relative error between autograd and central differences on sampled parameters.

    ``model`` must be in float64.  Coordinates are spread over every
    parameter tensor in proportion to its size (at least one each).
    """
    import torch

    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn().backward()
    grads = [p.grad.detach().clone() for p in params]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    picks = []
    for i, p in enumerate(params):
        k = max(1, int(round(n_coords * sizes[i] / sizes.sum())))
        picks += [(i, int(j)) for j in rng.choice(p.numel(), size=min(k, p.numel()), replace=False)]
    worst = 0.0
    with torch.no_grad():
        for i, j in picks:
            flat = params[i].view(-1)
            old = flat[j].item()
            flat[j] = old + eps
            up = loss_fn().item()
            flat[j] = old - eps
            down = loss_fn().item()
            flat[j] = old
            num = (up - down) / (2 * eps)
            ana = grads[i].view(-1)[j].item()
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            worst = max(worst, err)
    return worst, len(picks)


def randomize_batchnorm(model, seed=0):
    """Move BatchNorm affine params and running stats off their init values.

    At init (bias 0, mean 0, var 1) dead channels put ReLU inputs exactly on
    the kink, where finite differences and autograd legitimately disagree.
    """
    import torch

    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
                shape = m.weight.shape
                m.weight.copy_(0.5 + torch.rand(shape, generator=g))
                m.bias.copy_(0.2 * torch.randn(shape, generator=g))
                m.running_mean.copy_(0.1 * torch.randn(shape, generator=g))
                m.running_var.copy_(0.5 + torch.rand(shape, generator=g))
    return model


def one_batch_losses(model, step_loss, steps=20, lr=1e-3):
    """Adam on one fixed batch; returns the loss before each step."""
    import torch

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    losses = []
    for _ in range(steps):
        loss = step_loss()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses
