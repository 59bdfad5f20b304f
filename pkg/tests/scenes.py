"""Small scenes that keep statistical tests fast.

The estimator and channel are the nominal ones; only the burst length and
recording window are shortened.
"""

from dataclasses import replace

from lostsim.simkit import NoiseMode, TagSpec, default_config
from lostsim.tdoa import RecordingWindow


def fast_config(n_pulses=800, **overrides):
    base = default_config()
    train = replace(base.train, n_pulses=n_pulses)
    burst = n_pulses * train.prp
    half = 1.5e-6 + burst + 2e-6 + 1.5e-6
    window = RecordingWindow(t_r=2 * half, t_w=burst + 2e-6, offset=1e-6)
    kw = dict(train=train, window=window, ref_start=1.5e-6, tag_start=1.5e-6)
    kw.update(overrides)
    return replace(base, **kw)


def quiet(cfg):
    return replace(cfg, noise=NoiseMode.OFF)


def with_tags(cfg, *positions, height=2.03):
    tags = tuple(TagSpec(i + 1, (x, y, height)) for i, (x, y) in enumerate(positions))
    return replace(cfg, tags=tags)
