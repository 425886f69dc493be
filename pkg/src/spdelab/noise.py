"""Driving Wiener processes on a uniform time grid.

Each realization is an M-mode discrete Brownian path reproducible from a
(master_seed, sample_index) pair.  Coefficient fields never see the raw path:
they get a RestrictedPath whose reads past the current time fail loudly, so
look-ahead bugs cannot silently bias a simulation.
"""

from dataclasses import dataclass

import numpy as np

from .util import fmt_float


class AdaptednessError(Exception):
    """Raised when a path value beyond the current restriction time is read."""


@dataclass(frozen=True)
class NoiseConfig:
    modes: int
    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("modes must be >= 1, got %d" % self.modes)
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1, got %d" % self.n_steps)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive, got %s" % fmt_float(self.horizon))

    @property
    def dt(self):
        return self.horizon / self.n_steps


class WienerPath:
    """One sampled M-mode Brownian path.

    increments has shape (modes, n_steps); cumulative has shape
    (modes, n_steps + 1) with cumulative[:, 0] == 0.
    """

    def __init__(self, config, increments, seed_key):
        increments = np.asarray(increments, dtype=np.float64)
        if increments.shape != (config.modes, config.n_steps):
            raise ValueError(
                "increments shape %s, expected %s"
                % (increments.shape, (config.modes, config.n_steps))
            )
        self.config = config
        self.increments = increments
        self.cumulative = np.concatenate(
            [np.zeros((config.modes, 1)), np.cumsum(increments, axis=1)], axis=1
        )
        self.increments.setflags(write=False)
        self.cumulative.setflags(write=False)
        self.seed_key = seed_key

    @property
    def times(self):
        return np.arange(self.config.n_steps + 1) * self.config.dt

    def value(self, t):
        """Cumulative path value at a grid time, shape (modes,)."""
        j = self._tick_index(t)
        return self.cumulative[:, j]

    def _tick_index(self, t):
        dt = self.config.dt
        j = int(round(t / dt))
        if j < 0 or j > self.config.n_steps or abs(t - j * dt) > 1e-9 * max(1.0, abs(t)):
            raise ValueError("time %s is not on the path grid (dt=%s)" % (fmt_float(t), fmt_float(dt)))
        return j

    def restrict(self, t):
        return RestrictedPath(self, t)

    def to_csv(self, fp):
        """Write step, t, W^1..W^M rows of the cumulative path."""
        m = self.config.modes
        fp.write("step,t," + ",".join("W%d" % (k + 1) for k in range(m)) + "\n")
        for j in range(self.config.n_steps + 1):
            t = j * self.config.dt
            row = [str(j), fmt_float(t)] + [fmt_float(v) for v in self.cumulative[:, j]]
            fp.write(",".join(row) + "\n")


class RestrictedPath:
    """Read-only view of a WienerPath up to and including time t_limit.

    Accessing cumulative values or increments beyond the limit raises
    AdaptednessError naming the offending time.
    """

    def __init__(self, path, t_limit):
        if t_limit < -1e-15:
            raise ValueError("restriction time must be nonnegative")
        self.path = path
        self.t_limit = float(t_limit)
        self.limit_index = path._tick_index(t_limit)

    @property
    def config(self):
        return self.path.config

    def value(self, t):
        j = self.path._tick_index(t)
        if j > self.limit_index:
            raise AdaptednessError(
                "path value at t=%s requested, restriction is t=%s"
                % (fmt_float(t), fmt_float(self.t_limit))
            )
        return self.path.cumulative[:, j]

    @property
    def increments(self):
        """Increments fully contained in [0, t_limit]: shape (modes, limit_index)."""
        return self.path.increments[:, : self.limit_index]

    @property
    def current(self):
        """Path value at the restriction time itself."""
        return self.path.cumulative[:, self.limit_index]


def sample_path(config, master_seed, sample_index):
    """Draw the sample_index-th path of the ensemble keyed by master_seed.

    The stream is derived from SeedSequence(master_seed, spawn_key=(index,)),
    so any subset of indices can be regenerated in any order, on any worker,
    with byte-identical results.
    """
    if sample_index < 0:
        raise ValueError("sample_index must be nonnegative")
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(sample_index,))
    rng = np.random.default_rng(ss)
    inc = rng.standard_normal((config.modes, config.n_steps)) * np.sqrt(config.dt)
    return WienerPath(config, inc, (master_seed, sample_index))


def sample_ensemble_paths(config, master_seed, n_samples):
    return [sample_path(config, master_seed, i) for i in range(n_samples)]
