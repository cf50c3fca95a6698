import numpy as np

from cdrls.config import RunConfig


class ReplaySource:
    """Source that serves pre-built arrays ``X[T, J]`` and ``H[T, J, p]``."""

    def __init__(self, X, H, truth=None, noise_var=None):
        self.X, self.H = np.asarray(X, float), np.asarray(H, float)
        self.p = self.H.shape[2]
        self._truth = np.ones(self.p) if truth is None else np.asarray(truth, float)
        self.noise_var = noise_var

    def truth(self, t):
        return self._truth

    def next_slot(self, t):
        return self.X[t - 1].copy(), self.H[t - 1].copy()


def random_stream(T, J, p, seed=0, noise=0.05):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((T, J, p))
    X = H @ np.ones(p) + noise * rng.standard_normal((T, J))
    return X, H


def cfg(kind="drls", **kw):
    base = dict(algorithms=(kind,), J=kw.pop("J", 5), p=kw.pop("p", 4), T=kw.pop("T", 100), runs=1)
    if kind in ("cdrls1", "cdrls2", "cdrls3", "acrls") and "tau" not in kw and "pi_star" not in kw:
        kw["pi_star"] = 0.6
    base.update(kw)
    return RunConfig(**base)
