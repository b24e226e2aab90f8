"""Run configuration: defaults, key=value files, fingerprints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError

# keys that change parameter shapes or the forward computation
ARCHITECTURE_KEYS = (
    "d_model", "d_ff", "diag_dim", "diag_ff", "diag_blocks", "grid", "patch",
    "align_blocks", "ctx_blocks", "reasoner_units", "residual", "layer_norm",
    "max_text_len", "use_align", "use_merge",
)
DIAGRAM_KEYS = ("diag_dim", "diag_ff", "diag_blocks", "grid", "patch")


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "train"

    # diagram encoder
    grid: int = 8
    patch: int = 28
    diag_dim: int = 128
    diag_ff: int = 256
    diag_blocks: int = 4
    mask_ratio: float = 0.2
    char_weight: float = 0.1
    aux_tasks: str = "mim+mlc"

    # solver
    d_model: int = 128
    d_ff: int = 256
    align_blocks: int = 2
    ctx_blocks: int = 2
    reasoner_units: int = 6
    residual: bool = True
    layer_norm: bool = True
    max_text_len: int = 128
    use_align: bool = True
    use_merge: bool = True

    # optimization
    lr_ctx: float = 2e-5
    lr_reasoner: float = 1e-5
    lr_other: float = 1e-3
    lr_diagram: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    stop_at_exact: float = 0.0
    diagram_epochs: int = 300
    max_steps: int = 0
    diagram_steps: int = 0

    # decoding and adjudication
    beam_size: int = 10
    max_program_len: int = 40
    length_norm: bool = False
    choice_tol: float = 5e-3

    # character detection
    max_aspect: float = 3.0
    area_min: float = 1e-5
    area_max: float = 0.01
    iou_threshold: float = 0.5
    binarize_threshold: int = 128

    @property
    def image_size(self) -> int:
        return self.grid * self.patch

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    def lr_groups(self) -> dict:
        return {"ctx.": self.lr_ctx, "reasoner.": self.lr_reasoner, "align.": self.lr_reasoner,
                "diagram.": self.lr_diagram}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, keys=ARCHITECTURE_KEYS) -> str:
        arch = {k: getattr(self, k) for k in keys}
        blob = json.dumps(arch, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def diagram_fingerprint(self) -> str:
        return self.fingerprint(DIAGRAM_KEYS)

    def validate(self) -> "RunConfig":
        for name in ("lr_ctx", "lr_reasoner", "lr_other", "lr_diagram"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.mode not in ("train", "test"):
            raise ConfigurationError(f"mode must be 'train' or 'test', got {self.mode!r}")
        if self.beam_size < 1 or self.batch_size < 1:
            raise ConfigurationError("beam_size and batch_size must be >= 1")
        if self.aux_tasks not in ("mim+mlc", "mim", "mlc"):
            raise ConfigurationError(f"aux_tasks must be mim+mlc, mim or mlc, not {self.aux_tasks!r}")
        return self


def _coerce(field_type, raw: str):
    kind = field_type if isinstance(field_type, str) else field_type.__name__
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def apply_overrides(cfg: RunConfig, pairs: dict) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    changes = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        try:
            changes[key] = _coerce(types[key], str(raw))
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from exc
    return cfg.replace(**changes)


def parse_kv(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults < config file < explicit overrides < GEOSOLVE_SEED."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_kv(Path(path).read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if env.get("GEOSOLVE_SEED"):
        cfg = cfg.replace(seed=int(env["GEOSOLVE_SEED"]))
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
