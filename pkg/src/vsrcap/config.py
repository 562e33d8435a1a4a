"""Run configuration: a flat key = value document over typed defaults.

Defaults marked [paper] follow the published training setup; the rest are
artifact defaults sized for a desk run.  Checkpoints embed a fingerprint of
the dimensions they were built with and refuse to load into a different
configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # data / grammar
    d_v: int = 64                    # region feature width (desk stand-in for 2048)
    grammar_sigma: float = 0.1
    grammar_seed: int = 0
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    seed: int = 0
    singleton_sets: bool = False     # group proposals per entity class unless set

    # shared planner limits
    n_max: int = 10                  # [paper] max entities per role
    sinkhorn_iters: int = 20         # [paper] K
    beam: int = 5                    # [paper] beam size
    max_len: int = 20

    # grounding model
    gsrl_verb_dim: int = 64
    gsrl_role_dim: int = 64
    gsrl_attn_dim: int = 64
    gsrl_lr: float = 1e-5            # [paper]
    gsrl_lr_decay: float = 0.5       # [paper] every 3 epochs
    gsrl_lr_step: int = 3
    gsrl_epochs: int = 20            # [paper] max

    # structure planner, sentence level
    slevel_dim: int = 512            # [paper] transformer hidden size
    slevel_heads: int = 8            # [paper]
    slevel_layers: int = 3           # [paper]
    slevel_maxlen: int = 10          # [paper] transformer length

    # structure planner, role level
    rlevel_visual_dim: int = 32
    rlevel_class_dim: int = 16
    rlevel_hidden: int = 64

    ssp_lr: float = 1e-4             # [paper] both planner levels
    rlevel_lr: float = 1e-4          # desk runs push this higher than ssp_lr
    ssp_lr_decay: float = 0.6        # [paper] every 3 epochs
    ssp_lr_step: int = 3
    ssp_epochs: int = 20             # [paper] max

    # captioner
    cap_hidden: int = 512            # [paper] both recurrent cells
    cap_word_dim: int = 128
    cap_attn_dim: int = 128
    cap_batch: int = 32              # paper uses 100; scaled for desk runs
    xe_lr: float = 5e-4              # [paper]
    rl_lr: float = 5e-5              # [paper]
    cap_lr_decay: float = 0.8        # [paper] every epoch
    xe_epochs: int = 20
    rl_epochs: int = 5
    xe_patience: int = 3             # early stop on validation reward
    xe_gate_weight: float = 1.0      # 0 recovers word-only teacher forcing
    rl_subset: int = 500             # training samples touched per RL epoch
    share_attention: bool = True     # gate and context heads share W_sr/W_g/w_h
    verb_conditioning: bool = True   # feed the verb embedding to the captioner

    def copy(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)

    # --- fingerprints ---

    def _subset(self, keys) -> dict:
        return {k: getattr(self, k) for k in keys}

    def fingerprint(self, section: str, grammar_hash: str) -> str:
        """Stable hash of the dimensions a checkpoint of `section` depends on."""
        relevant = {
            "gsrl": ("d_v", "gsrl_verb_dim", "gsrl_role_dim", "gsrl_attn_dim"),
            "slevel": ("slevel_dim", "slevel_heads", "slevel_layers", "slevel_maxlen"),
            "rlevel": ("d_v", "n_max", "rlevel_visual_dim", "rlevel_class_dim",
                       "rlevel_hidden"),
            "captioner": ("d_v", "cap_hidden", "cap_word_dim", "cap_attn_dim",
                          "share_attention", "verb_conditioning"),
        }
        try:
            keys = relevant[section]
        except KeyError:
            raise ConfigError(f"unknown checkpoint section {section!r}") from None
        doc = {"section": section, "grammar": grammar_hash, **self._subset(keys)}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    # --- flat key = value round trip ---

    def to_text(self) -> str:
        lines = ["# effective configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    if ftype in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus explicit overrides.

    Unknown keys are an error; nothing is read from the environment.
    """
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val if not isinstance(val, str) else _coerce(key, val)
    return RunConfig(**values)
