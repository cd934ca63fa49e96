"""Central finite-difference check of the network's parameter gradients."""

import numpy as np

from turngrab.net import forward_batch, init_params, risk_and_grads
from turngrab.pu import risk_terms


def _risk(w, cfg, X, n_first, risk_cfg):
    out, cache = forward_batch(w, cfg, X)
    terms = risk_terms(out[:n_first], out[n_first:], risk_cfg)
    return terms.value, terms.clip_active, cache[1] > 0, cache[3] > 0


def random_weights(cfg, rng):
    w = init_params(cfg).as_float64()
    for name in w:
        if name.endswith("bias"):
            # np.array keeps 0-d tensors as arrays so in-place perturbation works
            w[name] = np.array(w[name] + rng.normal(0.0, 0.1, size=np.shape(w[name])))
    return w


def check_gradients(cfg, risk_cfg, rng, n_first=3, n_second=3, per_tensor=6, h=1e-5, floor=1e-6):
    """Relative errors ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    ``per_tensor`` entries of every parameter tensor are checked (all of
    them for smaller tensors). Perturbations that flip a ReLU or the
    non-negativity clip sit on a kink and are skipped. Returns
    ``(errors, skipped)`` where ``errors`` maps ``name -> list of rel. err``.
    """
    w = random_weights(cfg, rng)
    X = rng.normal(0.0, 1.0, size=(n_first + n_second, cfg.seq_len, cfg.input_channels))
    _, grads = risk_and_grads(w, cfg, X[:n_first], X[n_first:], risk_cfg)
    _, clip0, r1, r2 = _risk(w, cfg, X, n_first, risk_cfg)
    errors, skipped = {}, 0
    for name in sorted(w):
        arr = w[name]
        flat = arr.reshape(-1)
        picks = np.arange(flat.size)
        if flat.size > per_tensor:
            picks = rng.choice(flat.size, size=per_tensor, replace=False)
        errs = []
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            up, clip_u, r1u, r2u = _risk(w, cfg, X, n_first, risk_cfg)
            flat[i] = old - h
            dn, clip_d, r1d, r2d = _risk(w, cfg, X, n_first, risk_cfg)
            flat[i] = old
            kink = (clip_u != clip0 or clip_d != clip0 or not np.array_equal(r1u, r1)
                    or not np.array_equal(r1d, r1) or not np.array_equal(r2u, r2)
                    or not np.array_equal(r2d, r2))
            if kink:
                skipped += 1
                continue
            num = (up - dn) / (2.0 * h)
            ana = float(np.reshape(grads[name], -1)[i])
            errs.append(abs(ana - num) / max(abs(ana), abs(num), floor))
        errors[name] = errs
    return errors, skipped
