import numpy as np

from biq.natural_model import fit_kde, kde_evaluate
from biq.tensor import ConvParams, GdnParams, Tensor


def finite_difference(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        hi = f()
        arr[idx] = orig - step
        lo = f()
        arr[idx] = orig
        out[idx] = (hi - lo) / (2 * step)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def conv_params(rng, c_out, c_in, k, stride=1, padding=0, output_padding=0, transpose=False):
    # a transposed layer produces weights.shape[1] channels, so its bias has that length
    return ConvParams(
        Tensor(rng.standard_normal((c_out, c_in, k, k)), requires_grad=True),
        Tensor(rng.standard_normal(c_in if transpose else c_out), requires_grad=True),
        stride=stride,
        padding=padding,
        output_padding=output_padding,
    )


def gdn_params(rng, c):
    return GdnParams(
        Tensor(rng.uniform(0.5, 1.5, c), requires_grad=True),
        Tensor(rng.uniform(0.0, 0.3, (c, c)), requires_grad=True),
    )


def direct_conv2d(x, w, b, stride, padding):
    """Quadruple-loop convolution oracle on a single (C, H, W) input."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                window = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = b[o] + np.sum(window * w[o])
    return out


GRADIENT_OPS = ("conv2d", "conv2d_transpose", "gdn", "igdn", "mse_loss")


def gradient_trial(op: str, seed: int) -> float:
    """Worst relative error between backprop and central differences for one random trial.

    Inputs are at most 4x8x8; every input and parameter of the operation is checked.
    """
    from biq.tensor import conv2d, conv2d_transpose, gdn, mse_loss

    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 5, size=2)
    h, w = rng.integers(4, 9, size=2)
    x = Tensor(rng.standard_normal((c_in, h, w)), requires_grad=True)

    if op == "conv2d":
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        p = conv_params(rng, c_out, c_in, k, stride, k // 2)
        fn, tensors = (lambda: conv2d(x, p)), [x, p.weights, p.bias]
    elif op == "conv2d_transpose":
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        p = conv_params(rng, c_in, c_out, k, stride, k // 2, stride - 1, transpose=True)
        fn, tensors = (lambda: conv2d_transpose(x, p)), [x, p.weights, p.bias]
    elif op in ("gdn", "igdn"):
        p = gdn_params(rng, c_in)
        fn, tensors = (lambda: gdn(x, p, inverse=op == "igdn")), [x, p.beta, p.gamma]
    elif op == "mse_loss":
        other = Tensor(rng.standard_normal(x.shape), requires_grad=True)
        fn, tensors = (lambda: x), [x, other]
    else:
        raise ValueError(op)

    if op == "mse_loss":
        def loss_fn():
            return mse_loss(x, other)
    else:
        target = Tensor(rng.standard_normal(fn().shape))

        def loss_fn():
            return mse_loss(fn(), target)

    from biq.tensor import grad

    analytic = grad(loss_fn(), tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        numeric = finite_difference(lambda: float(loss_fn().data), t.data)
        worst = max(worst, max_rel_error(g, numeric))
    return worst


def naive_density(obs, h, x):
    """Direct transcription of the estimator, one term at a time."""
    total = 0.0
    for xi in obs:
        u = (xi - x) / h
        total += 0.75 * (1 - u * u) if abs(u) <= 1 else 0.0
    return total / (len(obs) * h)


def random_kde(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 300))
    obs = rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 2), n) * rng.choice([1.0, 1e-3, 50.0])
    return fit_kde(obs)


def trapezoid_integral(kde, points=8192):
    lo = kde.observations.min() - kde.bandwidth
    hi = kde.observations.max() + kde.bandwidth
    xs = np.linspace(lo, hi, points)
    return float(np.trapezoid(kde_evaluate(kde, xs), xs))
