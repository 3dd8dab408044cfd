"""Central finite-difference checks of every differentiable operation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng
from .spectral import Spectrum, dft2, idft2, magnitude, spectral_filter

REL_TOL = 1e-4
ABS_FLOOR = 1e-6
# smooth points agree across step sizes to O(h^2); kinks do not
KINK_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    coords: int
    max_rel: float
    skipped: int = 0

    @property
    def ok(self) -> bool:
        return self.max_rel <= REL_TOL


def rel_error(analytic: float, numeric: float, floor: float = ABS_FLOOR) -> float:
    """|a - n| / max(|a|, |n|), with differences below the floor counting as exact."""
    diff = abs(analytic - numeric)
    if diff <= floor * REL_TOL:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), floor)


def _scalarize(out, probe: list) -> Tensor:
    """Contract an op output with fixed random weights to get a scalar."""
    parts = [out.re, out.im] if isinstance(out, Spectrum) else [out]
    total = None
    for i, part in enumerate(parts):
        if i >= len(probe):
            probe.append(Rng(1000 + i).normal(part.shape))
        term = ad.sum_all(ad.mul(part, Tensor(probe[i])))
        total = term if total is None else ad.add(total, term)
    return total


def _central(loss_fn: Callable[[], Tensor], view: np.ndarray, j: int, h: float) -> float:
    orig = view[j]
    with ad.no_grad():
        view[j] = orig + h
        up = loss_fn().item()
        view[j] = orig - h
        down = loss_fn().item()
    view[j] = orig
    return (up - down) / (2 * h)


def check_function(
    name: str,
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    coords: int = 100,
    seed: int = 0,
) -> CheckResult:
    """Compare tape gradients of a scalar ``loss_fn`` over ``leaves`` to central differences.

    Coordinates are drawn uniformly without replacement until ``coords``
    have been checked (or every entry has been tried).  A coordinate whose
    stencil straddles a kink (relu, L1) has no well-defined difference
    quotient; it is detected by central differences at h and h/2
    disagreeing, and redrawn.
    """
    for leaf in leaves:
        leaf.grad = np.zeros_like(leaf.data)
    with ad.Tape():
        loss = loss_fn()
        ad.backward(loss)
    sizes = np.array([leaf.data.size for leaf in leaves])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = Rng(seed).permutation(int(sizes.sum()))
    worst, checked, skipped = 0.0, 0, 0
    for f in order:
        if checked == coords:
            break
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        leaf, j = leaves[k], int(f - offsets[k])
        view = leaf.data.reshape(-1)
        h = 1e-5 * max(1.0, abs(view[j]))
        numeric = _central(loss_fn, view, j, h)
        if rel_error(numeric, _central(loss_fn, view, j, h / 2)) > KINK_TOL:
            skipped += 1
            continue
        worst = max(worst, rel_error(float(leaf.grad.reshape(-1)[j]), numeric))
        checked += 1
    return CheckResult(name, checked, worst, skipped)


def check_op(name: str, fn: Callable[..., object], inputs: Sequence[np.ndarray], coords: int = 100, seed: int = 0) -> CheckResult:
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    probe: list = []
    return check_function(name, lambda: _scalarize(fn(*leaves), probe), leaves, coords, seed)


def _away_from_zero(a: np.ndarray, gap: float = 0.05) -> np.ndarray:
    """Push samples off kinks at zero (relu, abs)."""
    return np.where(np.abs(a) < gap, np.sign(a + 1e-300) * gap + a, a)


def op_cases(seed: int = 0) -> list[tuple[str, Callable, list[np.ndarray]]]:
    r = Rng(seed)
    n = r.normal
    x4 = n((2, 3, 6, 6))
    pos = r.uniform((4, 30), 0.5, 2.0)
    cases = [
        ("add", ad.add, [n((4, 30)), n((4, 30))]),
        ("sub", ad.sub, [n((4, 30)), n((4, 30))]),
        ("mul", ad.mul, [n((4, 30)), n((4, 30))]),
        ("scale", lambda a: ad.scale(a, -1.7), [n((4, 30))]),
        ("add_scalar", lambda a: ad.add_scalar(a, 0.3), [n((4, 30))]),
        ("relu", ad.relu, [_away_from_zero(n((4, 30)))]),
        ("sigmoid", ad.sigmoid, [3 * n((4, 30))]),
        ("absolute", ad.absolute, [_away_from_zero(n((4, 30)))]),
        ("sqrt", ad.sqrt, [pos]),
        ("square", ad.square, [n((4, 30))]),
        ("where", lambda a, b: ad.where(np.arange(120).reshape(4, 30) % 3 == 0, a, b), [n((4, 30)), n((4, 30))]),
        ("sum_all", ad.sum_all, [n((4, 30))]),
        ("mean_all", ad.mean_all, [n((4, 30))]),
        ("reshape", lambda a: ad.reshape(a, (12, 10)), [n((4, 30))]),
        ("gap", ad.gap, [x4]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [n((2, 2, 5, 5)), n((2, 3, 5, 5))]),
        ("take_batch", lambda a: ad.take_batch(a, np.array([0, 2])), [n((3, 2, 5, 5))]),
        ("put_batch", lambda a, b: ad.put_batch(a, np.array([1]), b), [n((3, 2, 5, 5)), n((1, 2, 5, 5))]),
        ("matmul", ad.matmul, [n((10, 12)), n((12, 9))]),
        ("add_rowvec", ad.add_rowvec, [n((10, 12)), n((12,))]),
        ("channel_scale", ad.channel_scale, [x4, n((2, 3))]),
        ("upsample_nearest2x", ad.upsample_nearest2x, [n((2, 3, 5, 5))]),
        ("transpose2d", ad.transpose2d, [n((10, 12))]),
        ("conv2d", lambda x, w, b: ad.conv2d(x, w, b), [x4, n((4, 3, 3, 3)), n((4,))]),
        ("conv2d_stride2", lambda x, w, b: ad.conv2d(x, w, b, stride=2), [x4, n((4, 3, 3, 3)), n((4,))]),
        ("conv2d_1x1", lambda x, w: ad.conv2d(x, w), [x4, n((5, 3, 1, 1))]),
        ("depthwise_conv2d", lambda x, w, b: ad.depthwise_conv2d(x, w, b), [x4, n((3, 1, 3, 3)), n((3,))]),
        ("depthwise_conv2d_stride2", lambda x, w: ad.depthwise_conv2d(x, w, stride=2), [x4, n((3, 1, 3, 3))]),
        ("layer_norm", ad.layer_norm, [x4, n((3,)), n((3,))]),
        ("channel_attention", ad.channel_attention, [n((2, 8, 4, 4)), n((2, 8)), n((8, 2))]),
        ("l1_mean", ad.l1_mean, [n((4, 30)), n((4, 30))]),
        ("cross_entropy", lambda z: ad.cross_entropy(z, np.arange(50) % 3 % 2), [2 * n((50, 2))]),
        ("dft2", dft2, [n((2, 3, 8, 8))]),
        ("dft2_nonpow2", dft2, [n((1, 3, 6, 6))]),
        ("idft2", lambda re, im: idft2(Spectrum(re, im)), [n((2, 2, 8, 8)), n((2, 2, 8, 8))]),
        (
            "spectral_filter_hadamard",
            lambda re, im, wr, wi: spectral_filter(Spectrum(re, im), wr, wi, "hadamard"),
            [n((2, 2, 6, 6)), n((2, 2, 6, 6)), n((2, 6, 6)), n((2, 6, 6))],
        ),
        (
            "spectral_filter_hadamard_shared",
            lambda re, im, wr, wi: spectral_filter(Spectrum(re, im), wr, wi, "hadamard"),
            [n((2, 2, 6, 6)), n((2, 2, 6, 6)), n((1, 6, 6)), n((1, 6, 6))],
        ),
        (
            "spectral_filter_conv3",
            lambda re, im, wr, wi: spectral_filter(Spectrum(re, im), wr, wi, "conv3"),
            [n((2, 2, 6, 6)), n((2, 2, 6, 6)), n((2, 1, 3, 3)), n((2, 1, 3, 3))],
        ),
        ("magnitude", lambda re, im: magnitude(Spectrum(re, im)), [_away_from_zero(n((2, 2, 6, 6)), 0.3), n((2, 2, 6, 6))]),
    ]
    return cases


def _offsets(r: Rng, shape: tuple[int, ...]) -> np.ndarray:
    """Random signs times magnitudes in [0.05, 0.15]."""
    sign = np.where(r.uniform(shape) < 0.5, -1.0, 1.0)
    return sign * (0.05 + 0.1 * r.uniform(shape))


def composite_case(seed: int = 0, gate_active: bool = True):
    """Small full network with the tri-objective loss; returns (loss_fn, leaves)."""
    from .model import ArchConfig, TFDNet
    from .train import Batch, TrainConfig, composite_loss

    arch = ArchConfig(blocks=2, channels=8, insert_at=1, feat_size=8, classifier_hidden=4, reduction_ratio=4)
    net = TFDNet(arch, seed=seed)
    r = Rng(seed + 1)
    # move off the pass-through init so the encoder-decoder carries gradient
    fuse = net.params["tfd.spatial.fuse_in.w"]
    fuse.data += 0.2 * r.normal(fuse.shape)
    lr = Tensor(r.uniform((3, 3, 8, 8)))
    batch = Batch(lr, Tensor(r.uniform((3, 3, 32, 32))), Tensor(r.uniform((3, 3, 8, 8))), np.array([1, 0, 1]))
    cfg = TrainConfig()
    # shift the noisy logit so the gate threshold falls midway between two
    # samples: routing then takes a strict subset, far from the boundary
    with ad.no_grad():
        logits, _ = net.detect(net.features(lr))
    d = np.sort(logits.data[:, 1] - logits.data[:, 0])
    net.params["tfd.detector.cls2.b"].data[1] += np.log(3.0) - 0.5 * (d[0] + d[1])

    # L1 terms have kinks at zero residual; place the targets a fixed margin
    # away from the current outputs so the difference stencil never straddles
    # one.  The reference path carries no gradient, so finite differences
    # must see it frozen.
    with ad.no_grad():
        sr, aux = net.forward(lr, gate_enabled=gate_active)
        h_ref = net.features(batch.clean_lr).data
    batch.hr = Tensor(sr.data + _offsets(r, sr.shape))
    if aux["h_denoised"] is not None:
        den = aux["h_denoised"].data
        h_ref[aux["denoised_idx"]] = den + _offsets(r, den.shape)

    def loss_fn() -> Tensor:
        return composite_loss(net, batch, cfg, gate_active, h_ref)[0]

    return net, loss_fn, [t for _, t in net.params]


def run_suite(coords: int = 100, seed: int = 0) -> list[CheckResult]:
    results = [check_op(name, fn, inputs, coords, seed) for name, fn, inputs in op_cases(seed)]
    _, loss_fn, leaves = composite_case(seed)
    results.append(check_function("tfd_total_loss", loss_fn, leaves, coords, seed))
    return results
