"""Finite-difference verification suite for all operators and block types.

Checks run in 64-bit arithmetic regardless of the training dtype. Input
samplers keep values away from the kinks of non-smooth operators (PReLU,
L1, max pooling) so central differences stay valid; all draws are seeded,
so a passing suite is reproducible.
"""

import numpy as np

from . import tensor as tc
from .blocks import BasicBlock, DenseResidualBlock, EnhancementNetwork, NetworkConfig, NonLocalBlock
from .tensor import GradcheckResult, Tensor, gradcheck


def _t(rng, shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, shape), dtype=np.float64)


def _away_from_zero(arr: np.ndarray, margin: float) -> np.ndarray:
    small = np.abs(arr) < margin
    arr[small] = margin * np.where(arr[small] < 0, -1.0, 1.0)
    return arr


def _pool_input(rng, shape) -> Tensor:
    """Pooling input whose 2x2 windows have well-separated values."""
    n, c, h, w = shape
    levels = np.linspace(-0.9, 0.9, 4)
    windows = np.empty((n, c, h // 2, w // 2, 4))
    flat = windows.reshape(-1, 4)
    for row in flat:
        row[:] = levels[rng.permutation(4)]
    windows += rng.uniform(-0.05, 0.05, windows.shape)
    data = windows.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return Tensor(data.reshape(shape), dtype=np.float64)


def _check(name, forward_fn, inputs, rng, tol, max_coords=None) -> GradcheckResult:
    return gradcheck(forward_fn, inputs, tol=tol, rng=rng, name=name,
                     max_coords=max_coords)


def op_cases(rng: np.random.Generator):
    """Yield (name, forward_fn, inputs) for one random instance per op."""
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2)) if k == 1 else int(rng.integers(0, 3))
    h = int(rng.integers(max(k - 2 * padding, 1), 7))
    w = int(rng.integers(max(k - 2 * padding, 1), 7))
    x = _t(rng, (1, cin, h, w))
    wt = _t(rng, (cout, cin, k, k))
    b = _t(rng, (1, cout, 1, 1))
    yield ("conv2d",
           lambda: tc.conv2d(x, wt, b, stride=stride, padding=padding),
           [x, wt, b])

    xp = _pool_input(rng, (1, 2, 4, 6))
    yield ("maxpool2d", lambda: tc.maxpool2d(xp), [xp])

    xu = _t(rng, (1, 2, 3, 4))
    yield ("upsample_nearest2x", lambda: tc.upsample_nearest2x(xu), [xu])

    xa = _t(rng, (1, 2, 3, 3))
    xb = _t(rng, (1, 1, 3, 3))
    xc = _t(rng, (1, 3, 3, 3))
    yield ("concat_channels", lambda: tc.concat_channels(xa, xb, xc), [xa, xb, xc])

    xr = Tensor(_away_from_zero(rng.uniform(-1, 1, (1, 3, 4, 4)), 1e-2), dtype=np.float64)
    slope = _t(rng, (1, 3, 1, 1))
    yield ("prelu", lambda: tc.prelu(xr, slope), [xr, slope])

    xs = _t(rng, (1, 1, 4, 5))
    yield ("softmax_rows", lambda: tc.softmax_rows(xs), [xs])

    ma = _t(rng, (1, 1, 3, 4))
    mb = _t(rng, (1, 1, 4, 2))
    yield ("matmul", lambda: tc.matmul(ma, mb), [ma, mb])

    aa = _t(rng, (1, 2, 3, 3))
    ab = _t(rng, (1, 2, 3, 3))
    yield ("add", lambda: tc.add(aa, ab), [aa, ab])

    xf = _t(rng, (1, 2, 3, 3))
    factor = float(rng.uniform(0.5, 2.0))
    yield ("scale", lambda: tc.scale(xf, factor), [xf])

    xg = _t(rng, (1, 2, 3, 4))
    yield ("reshape", lambda: tc.reshape(xg, (1, 1, 6, 4)), [xg])

    xh = _t(rng, (1, 2, 3, 4))
    yield ("permute", lambda: tc.permute(xh, (0, 2, 3, 1)), [xh])

    pred_data = rng.uniform(-1, 1, (1, 2, 3, 3))
    target_data = pred_data + _away_from_zero(rng.uniform(-0.5, 0.5, pred_data.shape), 5e-2)
    pred = Tensor(pred_data, dtype=np.float64)
    target = Tensor(target_data, dtype=np.float64)
    yield ("l1_loss", lambda: tc.l1_loss(pred, target), [pred])

    xi = _t(rng, (1, 2, 2, 3))
    yield ("tensor_sum", lambda: tc.tensor_sum(xi), [xi])

    xj = _t(rng, (1, 2, 2, 3))
    probe = rng.standard_normal(xj.shape)
    yield ("weighted_sum", lambda: tc.weighted_sum(xj, probe), [xj])


def run_op_suite(trials: int = 20, seed: int = 0, tol: float = 1e-4) -> list[GradcheckResult]:
    """Gradcheck every operator over ``trials`` random instances."""
    worst: dict[str, GradcheckResult] = {}
    for trial in range(trials):
        rng = np.random.default_rng((seed, trial))
        for name, forward_fn, inputs in op_cases(rng):
            result = _check(name, forward_fn, inputs, rng, tol)
            best = worst.get(name)
            if best is None or result.max_rel_error > best.max_rel_error:
                worst[name] = result
    return list(worst.values())


def run_block_suite(seed: int = 0, tol: float = 1e-3,
                    max_coords: int = 25) -> list[GradcheckResult]:
    """Gradcheck the three block types plus the full tiny network.

    Parameter sets are large, so a seeded subset of coordinates is probed
    per tensor.
    """
    results = []
    rng = np.random.default_rng((seed, 1000))

    basic = BasicBlock("bb", 3, 4, seed=seed, dtype=np.float64)
    x = _t(rng, (1, 3, 6, 6))
    results.append(_check("basic_block", lambda: basic.forward(x),
                          [x] + basic.parameters(), rng, tol, max_coords))

    drb = DenseResidualBlock("drb", 4, seed=seed, dtype=np.float64)
    xd = _t(rng, (1, 4, 6, 6))
    results.append(_check("dense_residual_block", lambda: drb.forward(xd),
                          [xd] + drb.parameters(), rng, tol, max_coords))

    attn = NonLocalBlock("attn", 4, seed=seed, dtype=np.float64)
    # The output projection is zero at init; give it values so its path
    # is exercised too.
    attn.out_w.data = rng.uniform(-0.5, 0.5, attn.out_w.shape)
    xn = _t(rng, (1, 4, 4, 4))
    results.append(_check("nonlocal_block", lambda: attn.forward(xn),
                          [xn] + attn.parameters(), rng, tol, max_coords))
    return results


def run_network_check(seed: int = 0, tol: float = 1e-3,
                      max_coords: int = 6) -> GradcheckResult:
    """End-to-end gradcheck of the full variant at tiny scale."""
    rng = np.random.default_rng((seed, 2000))
    config = NetworkConfig(num_stages=2, base_channels=4)
    network = EnhancementNetwork(config, seed=seed, dtype=np.float64)
    x = Tensor(rng.uniform(0.0, 1.0, (1, 3, 8, 8)), dtype=np.float64)
    return _check("network", lambda: network.forward(x),
                  [x] + network.parameters(), rng, tol, max_coords)


def run_full_suite(trials: int = 5, seed: int = 0) -> list[GradcheckResult]:
    """The gradcheck command's work list: ops, blocks, then the network."""
    results = run_op_suite(trials=trials, seed=seed)
    results += run_block_suite(seed=seed)
    results.append(run_network_check(seed=seed))
    return results


def format_report(results: list[GradcheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  max rel err {r.max_rel_error:.3e}  "
                     f"(tol {r.tolerance:g})  {status}")
    return "\n".join(lines)
