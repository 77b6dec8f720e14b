import numpy as np
import pytest

from cinmark.core import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True)


def naive_conv(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def randomize(module, rng, scale=0.1, dtype=np.float32):
    """Overwrite every parameter (zero-initialised ones included) with N(0, scale^2)."""
    for _, p in module.named_parameters():
        p.data = (rng.normal(size=p.shape) * scale).astype(dtype)
    return module


def randomize_coupling(inn, rng, gain=0.3, dtype=np.float32):
    """Give the zero-initialised output convs of every subnet random weights.

    Weights come from the default uniform init scaled by ``gain``; at full
    scale a deep stack amplifies activations by orders of magnitude and
    round trips measure conditioning rather than correctness.
    """
    for name, p in inn.named_parameters():
        if name.endswith("convs.4.weight"):
            bound = gain * np.sqrt(6.0 / (p.shape[1] * p.shape[2] * p.shape[3]))
            p.data = rng.uniform(-bound, bound, p.shape)
        elif name.endswith("convs.4.bias"):
            p.data = rng.uniform(-0.1 * gain, 0.1 * gain, p.shape)
    for _, p in inn.named_parameters():
        p.data = p.data.astype(dtype)
    return inn


TINY = dict(n_layers=1, growth=4, dem_widths=(4,), niam_stem=8, niam_blocks=1, niam_reduction=4,
            niam_down=(8,), nsm_widths=(4, 4, 4))


def tiny_config(size=32, L=8):
    from cinmark.model import preset
    return preset("desk", image_size=size, message_length=L, **TINY)


@pytest.fixture
def tiny_model():
    from cinmark.model import CIN
    return CIN(tiny_config(), seed=0)


@pytest.fixture
def tiny_images(rng):
    return rng.random((8, 3, 32, 32)).astype(np.float32)


ACCEPTANCE_TOTAL = 10
_verdicts = {}


def record_verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    _verdicts[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_TOTAL + 1):
        terminalreporter.write_line(_verdicts.get(n, f"criterion {n:2d}: FAIL (no verdict: not run or errored)"))
