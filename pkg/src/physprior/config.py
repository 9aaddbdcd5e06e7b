"""Run configuration: INI sections with documented defaults and strict keys."""

from __future__ import annotations

import configparser
import hashlib
import json

from .errors import InvalidArgument

# section -> key -> (default, type, description)
DEFAULTS = {
    "grid": {
        "n": (32, int, "generative grid points per side"),
    },
    "solver": {
        "cfl": (0.5, float, "safety factor on the explicit stability bound"),
    },
    "dataset": {
        "investigation": ("unified", str, "class library to generate"),
        "n_per_class": (200, int, "training samples per class"),
        "seed": (0, int, "root seed for data generation"),
        "classes": ("", str, "comma list restricting generated classes (empty: all)"),
    },
    "prior": {
        "kind": ("oracle", str, "oracle | trainable"),
        "checkpoint": ("", str, "trainable denoiser checkpoint path"),
        "steps": (2000, int, "training steps"),
        "batch": (32, int, "training batch size"),
        "lr": (1e-3, float, "initial Adam step size (cosine decay)"),
        "p_mean": (-1.2, float, "log-normal location of training noise levels"),
        "p_std": (1.2, float, "log-normal scale of training noise levels"),
    },
    "sampler": {
        "sigma_min": (0.002, float, "smallest nonzero noise level"),
        "sigma_max": (80.0, float, "initial noise level"),
        "rho": (7.0, float, "schedule curvature"),
        "n_steps": (64, int, "noise levels before the terminal zero"),
    },
    "guidance": {
        "mode": ("auto", str, "auto | off | fixed | residual_normalized"),
        "zeta": (1.0, float, "scale when mode is not auto"),
        "zeta_sparse": (1.0, float, "auto mode: residual-normalised scale for sparse data"),
        "zeta_full": (0.2, float, "auto mode: fixed scale when observed channels are complete"),
        "hard_replace": (True, bool, "overwrite complete channels in the clean estimate"),
    },
    "conformal": {
        "alpha": (0.05, float, "miscoverage level"),
        "M": (6, int, "ensemble size"),
        "n_cal": (50, int, "calibration instances"),
        "floor": (1e-6, float, "sigma floor relative to the channel data scale"),
        "score": ("pooled", str, "pooled | instance_max"),
    },
    "selection": {
        "repeats": (10, int, "infer-and-validate repeats"),
    },
    "output": {
        "pgm": (False, bool, "write truth/observation/prediction PGM triptychs"),
        "pgm_dir": ("", str, "PGM directory (default: next to the CSV)"),
    },
}


def _parse(value, typ):
    if typ is bool:
        v = str(value).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"not a boolean: {value!r}")
    try:
        return typ(value)
    except ValueError:
        raise InvalidArgument(f"cannot read {value!r} as {typ.__name__}") from None


class RunConfig:
    """Typed configuration; ``cfg["sampler"]["n_steps"]`` style access."""

    def __init__(self, values: dict | None = None):
        self.values = {s: {k: d[0] for k, d in keys.items()} for s, keys in DEFAULTS.items()}
        for section, kv in (values or {}).items():
            for key, v in kv.items():
                self.set(section, key, v)

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS:
            raise InvalidArgument(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise InvalidArgument(f"unknown config key {section}.{key}")
        self.values[section][key] = _parse(value, DEFAULTS[section][key][1])

    def __getitem__(self, section):
        return self.values[section]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InvalidArgument(f"unreadable config: {exc}") from None
        return cls({s: dict(cp[s]) for s in cp.sections()})

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        if not path:
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = []
        for s, keys in DEFAULTS.items():
            lines.append(f"[{s}]")
            for k, (_, _, doc) in keys.items():
                lines.append(f"# {doc}")
                lines.append(f"{k} = {self.values[s][k]}")
            lines.append("")
        return "\n".join(lines)

    def digest(self, extra=None) -> str:
        blob = json.dumps({"config": self.values, "extra": extra}, sort_keys=True,
                          default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
