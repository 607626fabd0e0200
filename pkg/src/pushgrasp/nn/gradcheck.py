"""Central finite-difference verification of every analytic gradient.

Networks are copied to float64 and probed parameter by parameter against a
fixed random linear readout of the output, so the check exercises the same
code paths the float32 training uses.
"""

from __future__ import annotations

import numpy as np


def gradcheck(net, x: np.ndarray, rng: np.random.Generator,
              tolerance: float = 1e-3, step: float = 1e-3) -> dict:
    """Compare analytic parameter gradients to central differences.

    `net` must expose forward/backward/zero_grads/named_params/astype.
    Returns {"max_rel_err", "per_param", "passed"}.
    """
    net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    probe = rng.standard_normal(net.forward(x).shape)

    def loss() -> float:
        return float(np.sum(net.forward(x) * probe))

    net.zero_grads()
    net.forward(x)
    net.backward(probe.copy())

    per_param: dict[str, float] = {}
    worst = 0.0
    for name, p, g in net.named_params():
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        err = 0.0
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            hi = loss()
            flat_p[i] = orig - step
            lo = loss()
            flat_p[i] = orig
            fd = (hi - lo) / (2 * step)
            an = float(flat_g[i])
            denom = max(abs(fd), abs(an), 1e-8)
            err = max(err, abs(fd - an) / denom)
        per_param[name] = err
        worst = max(worst, err)
    return {"max_rel_err": worst, "per_param": per_param, "passed": worst < tolerance}
