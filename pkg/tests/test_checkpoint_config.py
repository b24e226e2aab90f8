import math
import struct

import numpy as np
import pytest

from geosolve import checkpoint as ck
from geosolve.config import (
    ARCHITECTURE_KEYS, RunConfig, apply_overrides, dump_config, load_config, parse_kv,
)
from geosolve.errors import CheckpointError, ConfigurationError


def _ckpt(rng):
    arrays = {"b.w": rng.normal(size=(3, 4)), "a.bias": rng.normal(size=5),
              "c.scalar": np.array(2.5)}
    return ck.Checkpoint(arrays, "abc123", seed=7, meta={"kind": "diagram", "step": 3})


# checkpoint format

def test_round_trip_is_byte_identical(rng, tmp_path):
    blob = ck.to_bytes(_ckpt(rng))
    assert blob[:8] == b"GEOCKPT1"
    loaded = ck.from_bytes(blob)
    assert ck.to_bytes(loaded) == blob
    assert loaded.fingerprint == "abc123" and loaded.seed == 7 and loaded.meta["step"] == 3
    path = tmp_path / "x.ckpt"
    ck.save(path, loaded)
    assert path.read_bytes() == blob


def test_arrays_are_float32_little_endian(rng):
    c = _ckpt(rng)
    loaded = ck.from_bytes(ck.to_bytes(c))
    for name, a in c.arrays.items():
        assert loaded.arrays[name].dtype == np.dtype("<f4")
        np.testing.assert_array_equal(loaded.arrays[name], np.asarray(a, dtype=np.float32))


def test_header_layout(rng):
    blob = ck.to_bytes(_ckpt(rng))
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = blob[12:12 + hlen].decode()
    assert '"entries":[["a.bias",[5]],["b.w",[3,4]],["c.scalar",[]]]' in header
    assert len(blob) == 12 + hlen + 4 * (5 + 12 + 1)


@pytest.mark.parametrize("mutate, fragment", [
    (lambda b: b"NOTACKPT" + b[8:], "bad magic"),
    (lambda b: b[:5], "bad magic"),
    (lambda b: b[:-4], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
    (lambda b: b[:12] + b"}" + b[13:], "corrupt header"),
])
def test_corrupt_files_raise(rng, mutate, fragment):
    blob = ck.to_bytes(_ckpt(rng))
    with pytest.raises(CheckpointError, match=fragment):
        ck.from_bytes(mutate(blob))


def test_refuses_non_finite(rng):
    c = _ckpt(rng)
    c.arrays["a.bias"][2] = math.nan
    with pytest.raises(CheckpointError, match="non-finite"):
        ck.to_bytes(c)


def test_fingerprint_mismatch(rng, tmp_path):
    path = tmp_path / "x.ckpt"
    ck.save(path, _ckpt(rng))
    with pytest.raises(CheckpointError, match="fingerprint"):
        ck.load(path, expect_fingerprint="other")
    assert ck.load(path, expect_fingerprint="other", allow_mismatch=True).fingerprint == "abc123"
    assert ck.load(path, expect_fingerprint="abc123").fingerprint == "abc123"


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        ck.load(tmp_path / "nope.ckpt")


# configuration

def test_defaults():
    cfg = RunConfig()
    assert (cfg.grid, cfg.patch, cfg.image_size, cfg.n_patches) == (8, 28, 224, 64)
    assert cfg.mask_ratio == 0.2 and cfg.char_weight == 0.1
    assert cfg.batch_size == 32 and cfg.epochs == 100 and cfg.diagram_epochs == 300
    assert cfg.beam_size == 10 and cfg.choice_tol == 5e-3


def test_lr_groups():
    g = RunConfig().lr_groups()
    assert g == {"ctx.": 2e-5, "reasoner.": 1e-5, "align.": 1e-5, "diagram.": 1e-4}
    assert RunConfig().lr_other == 1e-3


def test_parse_kv():
    text = "# comment\nd_model = 32\n\nbeam_size=3  # trailing\nresidual = false\n"
    assert parse_kv(text) == {"d_model": "32", "beam_size": "3", "residual": "false"}
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_kv("a = 1\nnot a pair\n")


def test_apply_overrides_coerces_types():
    cfg = apply_overrides(RunConfig(), {"d_model": "32", "residual": "no", "lr_other": "0.01",
                                        "aux_tasks": "mlc"})
    assert cfg.d_model == 32 and cfg.residual is False and cfg.lr_other == 0.01
    assert cfg.aux_tasks == "mlc"
    with pytest.raises(ConfigurationError, match="unknown"):
        apply_overrides(RunConfig(), {"nope": "1"})
    with pytest.raises(ConfigurationError, match="bad value"):
        apply_overrides(RunConfig(), {"d_model": "wide"})
    with pytest.raises(ConfigurationError, match="bad value"):
        apply_overrides(RunConfig(), {"residual": "maybe"})


def test_load_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nd_model = 32\nbeam_size = 4\n")
    cfg = load_config(path, {"beam_size": "6"}, env={})
    assert (cfg.seed, cfg.d_model, cfg.beam_size) == (3, 32, 6)
    cfg = load_config(path, {"seed": "5"}, env={"GEOSOLVE_SEED": "11"})
    assert cfg.seed == 11


def test_dump_config_round_trip():
    cfg = RunConfig(d_model=24, residual=False, lr_ctx=3e-5, aux_tasks="mim")
    assert apply_overrides(RunConfig(), parse_kv(dump_config(cfg))) == cfg


@pytest.mark.parametrize("changes", [
    {"lr_other": 0.0}, {"mode": "fast"}, {"beam_size": 0}, {"aux_tasks": "mim+x"},
])
def test_validate_rejects(changes):
    with pytest.raises(ConfigurationError):
        RunConfig(**changes).validate()


def test_fingerprints_track_architecture_only():
    base = RunConfig()
    assert base.fingerprint() == RunConfig(seed=9, beam_size=3, lr_other=0.1).fingerprint()
    for key in ARCHITECTURE_KEYS:
        value = getattr(base, key)
        changed = (not value) if isinstance(value, bool) else value + 1
        assert base.replace(**{key: changed}).fingerprint() != base.fingerprint(), key
    # text-side changes leave the diagram fingerprint alone
    assert base.replace(d_model=64).diagram_fingerprint() == base.diagram_fingerprint()
    assert base.replace(diag_dim=64).diagram_fingerprint() != base.diagram_fingerprint()
