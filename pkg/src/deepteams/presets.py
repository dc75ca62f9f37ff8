"""Bundled benchmark models and their default experiment parameters.

``example1``: a risk-sensitive scalar team of 10 agents with one feature,
coupled through the deep-state/-action cost only. ``example2``: a
risk-neutral scalar team of 10 agents whose initial states are uniform on
[0, 0.1]. Noise entries written as ``norm(0, v)`` are interpreted with ``v``
as a *variance*; see the README note.
"""

import numpy as np

from .errors import ConfigError
from .model import SubPopulationSpec, TeamModel

PRESET_NAMES = ("example1", "example2")


def example1() -> TeamModel:
    alpha = np.sqrt(np.array([0.5] * 6 + [1.5, 1.0, 2.0, 2.5]))[:, None]
    sub = SubPopulationSpec(
        n=10, f=1,
        A=[[0.9]], B=[[0.4]], Q=[[1.0]], R=[[1.0]],
        Abar=[np.zeros((1, 1))], Bbar=[np.zeros((1, 1))],
        sigma_x=[[0.1]], sigma_w=[[0.1]],
        alpha=alpha, mu=1.0,
    )
    return TeamModel(subs=(sub,), qbar_cross=[[2.0]], rbar_cross=[[1.0]], lam=0.1)


def example2() -> TeamModel:
    alpha = np.sqrt(np.array([0.1] * 9 + [9.1]))[:, None]
    sub = SubPopulationSpec(
        n=10, f=1,
        A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[2.0]],
        Abar=[np.zeros((1, 1))], Bbar=[np.zeros((1, 1))],
        # sigma_x set to the variance of the uniform [0, 0.1] initial draw so
        # the optional gaussian init mode matches its spread
        sigma_x=[[0.1 ** 2 / 12.0]], sigma_w=[[0.02]],
        alpha=alpha, mu=1.0,
    )
    return TeamModel(subs=(sub,), qbar_cross=[[2.0]], rbar_cross=[[1.0]], lam=0.0)


def preset(name: str) -> TeamModel:
    if name == "example1":
        return example1()
    if name == "example2":
        return example2()
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def default_params(name: str) -> dict:
    """Step size, horizon, sample count, risk factor, and init mode bundled
    with each preset."""
    if name == "example1":
        return {"eta": 5.0, "T": 10, "L": 100, "lam": 0.1, "init_mode": "gaussian"}
    if name == "example2":
        return {"eta": 0.2, "T": 10, "L": 100, "lam": 0.0, "init_mode": "uniform"}
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
