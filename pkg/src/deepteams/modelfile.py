"""Model and policy files: a JSON grammar of nested keys and numeric arrays.

Top level:

    {
      "risk_factor": 0.1,
      "qbar_cross": [[...]],        # (Dx, Dx)
      "rbar_cross": [[...]],        # (Du, Du)
      "subpopulations": [
        {
          "n": 10, "f": 1,
          "A": [[...]], "B": [[...]], "Q": [[...]], "R": [[...]],
          "Abar": [[[...]], ...],   # f blocks, each (dx, Dx)
          "Bbar": [[[...]], ...],   # f blocks, each (dx, Du)
          "sigma_x": [[...]], "sigma_w": [[...]],
          "alpha": [[...]],         # (n, f)
          "mu": 1.0                 # optional, defaults to 1
        }, ...
      ]
    }

Unknown keys are errors; ``mu`` is the only field with a silent default.
Parsing validates the model and rejects it with the full list of violations.

Policy files hold ``{"theta": [block, ...], "theta_bar": block}``.
"""

import json

import numpy as np

from .errors import ConfigError
from .model import Policy, SubPopulationSpec, TeamModel, validate_model

_SUB_REQUIRED = ("n", "f", "A", "B", "Q", "R", "Abar", "Bbar",
                 "sigma_x", "sigma_w", "alpha")
_SUB_OPTIONAL = ("mu",)
_TOP_REQUIRED = ("risk_factor", "qbar_cross", "rbar_cross", "subpopulations")


def _matrix(obj, where: str) -> np.ndarray:
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric array ({exc})") from None
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a 2-D numeric array, got shape {arr.shape}")
    return arr


def _parse_sub(obj, idx: int) -> SubPopulationSpec:
    where = f"subpopulations[{idx}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - set(_SUB_REQUIRED) - set(_SUB_OPTIONAL)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = [k for k in _SUB_REQUIRED if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    for key in ("Abar", "Bbar"):
        if not isinstance(obj[key], list):
            raise ConfigError(f"{where}.{key}: expected a list of feature blocks")
    try:
        n = int(obj["n"])
        f = int(obj["f"])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: n and f must be integers") from None
    return SubPopulationSpec(
        n=n, f=f,
        A=_matrix(obj["A"], f"{where}.A"),
        B=_matrix(obj["B"], f"{where}.B"),
        Q=_matrix(obj["Q"], f"{where}.Q"),
        R=_matrix(obj["R"], f"{where}.R"),
        Abar=[_matrix(blk, f"{where}.Abar[{j}]") for j, blk in enumerate(obj["Abar"])],
        Bbar=[_matrix(blk, f"{where}.Bbar[{j}]") for j, blk in enumerate(obj["Bbar"])],
        sigma_x=_matrix(obj["sigma_x"], f"{where}.sigma_x"),
        sigma_w=_matrix(obj["sigma_w"], f"{where}.sigma_w"),
        alpha=_matrix(obj["alpha"], f"{where}.alpha"),
        mu=float(obj.get("mu", 1.0)),
    )


def model_from_dict(data) -> TeamModel:
    if not isinstance(data, dict):
        raise ConfigError("model file: top level must be an object")
    unknown = set(data) - set(_TOP_REQUIRED)
    if unknown:
        raise ConfigError(f"model file: unknown keys {sorted(unknown)}")
    missing = [k for k in _TOP_REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"model file: missing keys {missing}")
    if not isinstance(data["subpopulations"], list) or not data["subpopulations"]:
        raise ConfigError("subpopulations: expected a non-empty list")
    subs = tuple(_parse_sub(s, i) for i, s in enumerate(data["subpopulations"]))
    try:
        lam = float(data["risk_factor"])
    except (TypeError, ValueError):
        raise ConfigError("risk_factor: expected a number") from None
    m = TeamModel(
        subs=subs,
        qbar_cross=_matrix(data["qbar_cross"], "qbar_cross"),
        rbar_cross=_matrix(data["rbar_cross"], "rbar_cross"),
        lam=lam,
    )
    report = validate_model(m)
    if not report.ok:
        raise ConfigError("invalid model:\n  " + "\n  ".join(report.issues))
    return m


def parse_model(path) -> TeamModel:
    """Load a model file; raises :class:`ConfigError` with field context."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path}: invalid JSON at line {exc.lineno}: "
                          f"{exc.msg}") from None
    return model_from_dict(data)


def model_to_dict(m: TeamModel) -> dict:
    return {
        "risk_factor": m.lam,
        "qbar_cross": m.qbar_cross.tolist(),
        "rbar_cross": m.rbar_cross.tolist(),
        "subpopulations": [
            {
                "n": sub.n, "f": sub.f,
                "A": sub.A.tolist(), "B": sub.B.tolist(),
                "Q": sub.Q.tolist(), "R": sub.R.tolist(),
                "Abar": [blk.tolist() for blk in sub.Abar],
                "Bbar": [blk.tolist() for blk in sub.Bbar],
                "sigma_x": sub.sigma_x.tolist(), "sigma_w": sub.sigma_w.tolist(),
                "alpha": sub.alpha.tolist(),
                "mu": sub.mu,
            }
            for sub in m.subs
        ],
    }


def serialize_model(m: TeamModel, path=None) -> str:
    """JSON text of a model; round-trips exactly through :func:`parse_model`."""
    text = json.dumps(model_to_dict(m), indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def parse_policy(path, m: TeamModel) -> Policy:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"policy file {path}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or set(data) != {"theta", "theta_bar"}:
        raise ConfigError("policy file: expected exactly the keys theta, theta_bar")
    theta = [_matrix(blk, f"theta[{s}]") for s, blk in enumerate(data["theta"])]
    p = Policy(theta=tuple(theta), theta_bar=_matrix(data["theta_bar"], "theta_bar"))
    if len(p.theta) != m.S:
        raise ConfigError(f"policy file: {len(p.theta)} local blocks, expected {m.S}")
    for s, (t, sub) in enumerate(zip(p.theta, m.subs)):
        if t.shape != (sub.du, sub.dx):
            raise ConfigError(f"policy file: theta[{s}] has shape {t.shape}, "
                              f"expected ({sub.du}, {sub.dx})")
    if p.theta_bar.shape != (m.Du, m.Dx):
        raise ConfigError(f"policy file: theta_bar has shape {p.theta_bar.shape}, "
                          f"expected ({m.Du}, {m.Dx})")
    return p


def serialize_policy(p: Policy, path=None) -> str:
    text = json.dumps({"theta": [t.tolist() for t in p.theta],
                       "theta_bar": p.theta_bar.tolist()}, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
