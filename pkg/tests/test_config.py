import pytest

from physprior.config import DEFAULTS, RunConfig
from physprior.errors import InvalidArgument


def test_defaults_documented():
    for section, keys in DEFAULTS.items():
        for key, (default, typ, doc) in keys.items():
            assert doc, f"{section}.{key} lacks a description"
            assert isinstance(default, typ)


def test_text_round_trip():
    cfg = RunConfig()
    cfg.set("sampler", "n_steps", "32")
    cfg.set("guidance", "hard_replace", "no")
    back = RunConfig.from_text(cfg.to_text())
    assert back.values == cfg.values
    assert back["sampler"]["n_steps"] == 32 and back["guidance"]["hard_replace"] is False
    assert back.digest() == cfg.digest()


def test_unknown_keys_rejected():
    with pytest.raises(InvalidArgument, match="unknown config key"):
        RunConfig.from_text("[sampler]\nsteps = 3\n")
    with pytest.raises(InvalidArgument, match="section"):
        RunConfig.from_text("[network]\nwidth = 3\n")
    with pytest.raises(InvalidArgument):
        RunConfig.from_text("[conformal]\nalpha = lots\n")
    with pytest.raises(InvalidArgument):
        RunConfig.from_text("not an ini file")


def test_digest_tracks_values():
    a, b = RunConfig(), RunConfig()
    b.set("conformal", "alpha", 0.1)
    assert a.digest() != b.digest()
    assert a.digest({"seed": 1}) != a.digest({"seed": 2})
