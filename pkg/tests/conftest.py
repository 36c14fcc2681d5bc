import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gradcheck():
    """Central finite differences against tape gradients, float64 inputs."""
    check_rng = np.random.default_rng(99)

    def _check(f, tensors, h=1e-6, tol=1e-5, samples_per_tensor=6):
        for t in tensors:
            t.grad = None
        f().backward()
        worst = 0.0
        for t in tensors:
            assert t.grad is not None, f"no gradient reached {t!r}"
            pick = min(samples_per_tensor, t.data.size)
            idxs = check_rng.choice(t.data.size, size=pick, replace=False)
            parts = ("real", "imag") if np.iscomplexobj(t.data) else ("real",)
            for idx in idxs:
                for part in parts:
                    view = t.data.real if part == "real" else t.data.imag
                    orig = view.flat[idx]
                    # the tape convention: gradients are of the loss's real part
                    view.flat[idx] = orig + h
                    lp = float(np.real(f().data.item()))
                    view.flat[idx] = orig - h
                    lm = float(np.real(f().data.item()))
                    view.flat[idx] = orig
                    numeric = (lp - lm) / (2 * h)
                    grad = t.grad.real if part == "real" else t.grad.imag
                    analytic = grad.flat[idx]
                    rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
                    worst = max(worst, rel)
        assert worst < tol, f"worst relative gradient error {worst:.3e} >= {tol:.0e}"
        return worst

    return _check
