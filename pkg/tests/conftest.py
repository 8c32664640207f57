import numpy as np
import pytest

from defian.autograd import DiffNode, backward, default_dtype, mul, sum_


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


def grad_check(fn, arrays, n_coords=20, eps=1e-6, rtol=1e-4, atol=1e-8, seed=0, probe=None):
    """Compare autodiff gradients of ``fn`` against central differences.

    ``fn`` maps DiffNodes to a DiffNode; non-scalar outputs are reduced with a
    fixed random projection so every output element matters.  Returns the
    worst relative error seen.
    """
    rng = np.random.default_rng(seed)
    nodes = [DiffNode(np.array(a, copy=True), requires_grad=True) for a in arrays]
    out = fn(*nodes)
    if probe is None:
        probe = rng.standard_normal(out.shape).astype(out.dtype) if out.value.size > 1 else None

    def scalar(o):
        return o if probe is None else sum_(mul(o, probe))

    backward(scalar(out))
    worst = 0.0
    for k, node in enumerate(nodes):
        flat = node.value.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(scalar(fn(*[DiffNode(n.value) for n in nodes])).value)
            flat[idx] = orig - eps
            down = float(scalar(fn(*[DiffNode(n.value) for n in nodes])).value)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = float(node.grad.reshape(-1)[idx])
            err = abs(numeric - analytic)
            scale = max(abs(numeric), abs(analytic))
            assert err <= atol + rtol * scale, (
                f"input {k} coord {idx}: analytic {analytic:.8g} vs numeric {numeric:.8g}"
            )
            worst = max(worst, err / max(scale, 1e-12))
    return worst


# acceptance criteria report ------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
