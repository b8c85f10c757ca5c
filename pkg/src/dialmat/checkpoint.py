"""Checkpoint files: one ``.npz`` archive with an embedded JSON manifest.

Array keys are namespaced: ``maper/<param>``, ``questioner/<param>``,
``mat/<modality>/<delta|m|v|t>`` and ``optim/<name>``. The manifest records
the format version, the config and its sha256, seed, epoch and a digest of
every array so truncated or edited files are rejected on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mat import MatHyperParams, PerturbationState

FORMAT_VERSION = 1
_MANIFEST = "__manifest__"


class CorruptCheckpoint(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        a = np.ascontiguousarray(arrays[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    config: dict
    seed: int
    epoch: int
    maper: dict[str, np.ndarray] = field(default_factory=dict)
    questioner: dict[str, np.ndarray] = field(default_factory=dict)
    perturbations: dict[str, PerturbationState] = field(default_factory=dict)
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    kind: str = "maper"

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    arrays: dict[str, np.ndarray] = {}
    for k, v in ckpt.maper.items():
        arrays[f"maper/{k}"] = np.asarray(v)
    for k, v in ckpt.questioner.items():
        arrays[f"questioner/{k}"] = np.asarray(v)
    hparams = {}
    for name, st in ckpt.perturbations.items():
        for k, v in st.arrays().items():
            arrays[f"mat/{name}/{k}"] = np.asarray(v)
        hparams[name] = st.hp.to_dict()
    for k, v in ckpt.optimizer.items():
        arrays[f"optim/{k}"] = np.asarray(v)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "mat_hyperparams": hparams,
        "payload_sha256": _digest(arrays),
    }
    blob = json.dumps(manifest, sort_keys=True, default=list).encode()
    arrays[_MANIFEST] = np.frombuffer(blob, dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_config_hash: str | None = None) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, EOFError, OSError, ValueError) as e:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({e})") from e
    if _MANIFEST not in arrays:
        raise CorruptCheckpoint(f"{path}: missing manifest")
    try:
        manifest = json.loads(arrays.pop(_MANIFEST).tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"{path}: manifest is not valid JSON") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {manifest.get('format_version')}")
    if _digest(arrays) != manifest["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: array payload does not match its digest")
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise CorruptCheckpoint(f"{path}: config does not match recorded hash")
    if expected_config_hash is not None and expected_config_hash != manifest["config_hash"]:
        raise ConfigMismatch(f"{path}: config hash {manifest['config_hash'][:12]} "
                             f"!= expected {expected_config_hash[:12]}")
    ckpt = Checkpoint(manifest["config"], manifest["seed"], manifest["epoch"], kind=manifest["kind"])
    mats: dict[str, dict[str, np.ndarray]] = {}
    for key, a in arrays.items():
        group, _, rest = key.partition("/")
        if group == "maper":
            ckpt.maper[rest] = a
        elif group == "questioner":
            ckpt.questioner[rest] = a
        elif group == "optim":
            ckpt.optimizer[rest] = a
        elif group == "mat":
            name, _, field_ = rest.partition("/")
            mats.setdefault(name, {})[field_] = a
        else:
            raise CorruptCheckpoint(f"{path}: unexpected array {key!r}")
    for name, arrs in mats.items():
        hp = MatHyperParams(**manifest["mat_hyperparams"][name])
        ckpt.perturbations[name] = PerturbationState.from_arrays(arrs, hp)
    return ckpt


def restore_maper(ckpt: Checkpoint):
    """Rebuild the MAPer stored in ``ckpt`` (config is a full run config)."""
    from .config import maper_config
    from .maper import Maper

    if not ckpt.maper:
        raise ValueError("checkpoint holds no MAPer weights")
    model = Maper(maper_config(ckpt.config), seed=ckpt.seed)
    model.load_state_dict(ckpt.maper)
    return model


def restore_questioner(ckpt: Checkpoint):
    from .config import questioner_configs
    from .questioner import Questioner

    if not ckpt.questioner:
        raise ValueError("checkpoint holds no questioner weights")
    model = Questioner(questioner_configs(ckpt.config)[0], seed=ckpt.seed)
    model.load_state_dict(ckpt.questioner)
    return model
