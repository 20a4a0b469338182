import numpy as np
import pytest

from tfcsr.data import split_protocol, synth_tasks
from tfcsr.nn import Conv2d, Dense, Flatten, MaxPool2x2, NetworkSpec, ReLU, _conv_forward, _pool_forward


def numeric_grad(model, fn, h=1e-5):
    """Central finite differences of ``fn()`` w.r.t. every parameter entry."""
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


def kink_margin(model, x):
    """Distance of the forward pass from the nearest non-differentiable point.

    Finite differences straddling a ReLU zero-crossing or a max-pool tie do not
    estimate the gradient, so checks only use inputs with a comfortable margin.
    """
    margin = np.inf
    for i, layer in enumerate(model.spec.layers):
        if isinstance(layer, Dense):
            x = x @ model.params[f"{i}.weight"] + model.params[f"{i}.bias"]
        elif isinstance(layer, Conv2d):
            x = _conv_forward(x, model.params[f"{i}.weight"], model.params[f"{i}.bias"])[0]
        elif isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(x).min()))
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool2x2):
            n, c, h, w = x.shape
            blocks = x[:, :, :h // 2 * 2, :w // 2 * 2].reshape(n, c, h // 2, 2, w // 2, 2)
            top2 = np.sort(blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4), axis=-1)[..., -2:]
            live = top2[..., 1] > 0
            if live.any():
                margin = min(margin, float((top2[..., 1] - top2[..., 0])[live].min()))
            x = _pool_forward(x)[0]
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
    return margin


def conv_micro_spec(out_units=3):
    return NetworkSpec(
        [Conv2d(1, 2), ReLU(), MaxPool2x2(), Flatten(), Dense(8, out_units)], out_units, (1, 6, 6))


def dense_micro_spec(out_units=4):
    return NetworkSpec([Dense(5, 6), ReLU(), Dense(6, out_units)], out_units, (5,))


@pytest.fixture(scope="session")
def desk_protocol():
    return split_protocol(synth_tasks(10, 4, 625, 0.2, 42), 2, seed=42)


@pytest.fixture
def small_protocol():
    return split_protocol(synth_tasks(4, 2, 40, 0.1, 7), 2, seed=7)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True, 0.0])
    entry[1] = entry[1] and report.passed
    entry[2] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  ({duration:.1f} s)")
