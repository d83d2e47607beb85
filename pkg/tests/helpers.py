"""Shared test oracles: finite-difference gradient checking."""

import numpy as np


def fd_gradcheck(run, params, rng, n_probe=5, h=1e-4, tol=1e-4):
    """Compare analytic gradients against central finite differences.

    `run()` must execute a full forward+backward pass and return the scalar
    loss as float, leaving fresh gradients in each Param's .grad buffer.
    Probes `n_probe` random coordinates per parameter.  Returns the worst
    relative error seen.
    """
    worst = 0.0
    for p in params:
        run()  # gradients at the unperturbed point
        g = p.grad.copy()
        flat = p.data.ravel()
        gflat = g.ravel()
        k = min(n_probe, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            lp = run()
            flat[i] = old - h
            lm = run()
            flat[i] = old
            fd = (lp - lm) / (2.0 * h)
            rel = abs(fd - gflat[i]) / max(abs(fd) + abs(gflat[i]), 1e-6)
            worst = max(worst, rel)
            assert rel < tol, (
                f"param {getattr(p, 'name', '?')} coord {i}: "
                f"fd={fd:.8g} analytic={gflat[i]:.8g} rel={rel:.3g}"
            )
    return worst
