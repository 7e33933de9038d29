import numpy as np

from w2fair.distribution import w2
from w2fair.model import backward, cross_entropy, cross_entropy_grad, forward
from w2fair.regularizer import GroupCdfPair, pseudo_grads

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pseudo_flow(a, b, grid_steps=50, eta=0.05, iters=100, w2_steps=2000):
    """Move every point against its pseudo-gradient; return the W2 trace.

    The pseudo-gradient differentiates a mean over ``n_s`` samples, so each
    point moves by ``eta * n_s * pg`` (per-particle velocity).
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    trace = [w2(a, b, w2_steps)]
    for _ in range(iters):
        cdfs = GroupCdfPair.from_samples(a, b, grid_steps)
        ga = pseudo_grads(a, np.zeros(a.size, int), cdfs)
        gb = pseudo_grads(b, np.ones(b.size, int), cdfs)
        a = a - eta * a.size * ga
        b = b - eta * b.size * gb
        trace.append(w2(a, b, w2_steps))
    return np.array(trace)


def separated_gaussians(seed, n=200):
    rng = np.random.default_rng(seed)
    return (np.clip(rng.normal(0.3, 0.05, n), 0, 1), np.clip(rng.normal(0.7, 0.05, n), 0, 1))


def fd_check(params, x, y, h=1e-6):
    """Analytic vs. central-difference gradient of the mean cross-entropy."""
    trace = forward(params, x)
    analytic = backward(params, trace, cross_entropy_grad(trace.probs, y))
    numeric = []
    for a in params.arrays():
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = cross_entropy(forward(params, x).probs, y)
            flat[i] = old - h
            down = cross_entropy(forward(params, x).probs, y)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        numeric.append(g)
    an = np.concatenate([g.ravel() for g in analytic])
    nu = np.concatenate([g.ravel() for g in numeric])
    return np.linalg.norm(an - nu) / max(np.linalg.norm(nu), 1e-12)
