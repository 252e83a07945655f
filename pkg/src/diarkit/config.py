"""Sectioned ``key = value`` pipeline configuration."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError

# section -> key -> (type, default); "floats3" is a "lo, hi, step" triple
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "corpus": {
        "manifest": ("str", ""),
        "num_speakers": ("int", 4),
        "num_recordings": ("int", 10),
        "duration": ("float", 120.0),
        "turn_min": ("float", 2.0),
        "turn_max": ("float", 6.0),
        "train_recordings": ("int", 6),
        "dev_recordings": ("int", 2),
    },
    "features": {
        "frame_length": ("float", 25.0),
        "frame_shift": ("float", 10.0),
        "num_mel_filters": ("int", 23),
        "num_ceps": ("int", 13),
    },
    "vad": {
        "threshold_offset": ("float", 5.5),
        "mean_scale": ("float", 0.5),
        "context": ("int", 5),
        "proportion": ("float", 0.6),
    },
    "segmentation": {
        "window": ("float", 1.5),
        "period": ("float", 0.75),
        "min_tail": ("float", 0.5),
    },
    "extractor": {
        "embedding_dim": ("int", 512),
        "shrink": ("float", 1.0),
        "epochs": ("int", 10),
        "lr": ("float", 0.01),
        "minibatch_size": ("int", 32),
        "chunks_per_epoch": ("int", 2048),
        "min_frames": ("int", 16),
        "max_frames": ("int", 50),
    },
    "plda": {"lda_dim": ("int", 0), "length_norm": ("bool", True)},
    "bilstm": {
        "hidden": ("int", 256),
        "layers": ("int", 2),
        "dense": ("int", 64),
        "epochs": ("int", 10),
        "lr": ("float", 0.01),
        "max_seq_len": ("int", 200),
        "folds": ("int", 5),
        "rows_per_batch": ("int", 16),
    },
    "clustering": {
        "scorers": ("list", ["plda", "bilstm"]),
        "clusterers": ("list", ["ahc", "sc"]),
        "linkage": ("str", "average"),
        "plda_ahc_sweep": ("floats3", [-0.3, 0.5, 0.05]),
        "bilstm_ahc_sweep": ("floats3", [0.0, 1.0, 0.1]),
        "sc_sweep": ("floats3", [0.0, 1.0, 0.1]),
        "kmeans_restarts": ("int", 10),
    },
    "evaluation": {"collar": ("float", 0.25)},
    "run": {
        "seed": ("int", 0),
        "jobs": ("int", 1),
        "out": ("str", "diarkit_out"),
    },
}

SCORERS = ("plda", "bilstm")
CLUSTERERS = ("ahc", "sc")


def bundled_config_path() -> Path:
    return Path(str(resources.files("diarkit") / "data" / "synthetic.ini"))


@dataclass
class PipelineConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)
    source: Path | None = None

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        self.values[section][key] = value

    def digest(self, *sections: str) -> str:
        """Stable hash of the given sections (all when none are named)."""
        names = sections or tuple(sorted(self.values))
        blob = json.dumps({s: self.values[s] for s in names}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def out_dir(self) -> Path:
        return Path(str(self.values["run"]["out"]))

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    def validate(self) -> None:
        """Collect every violation and raise them together."""
        errors = []
        v = self.values
        pos_ints = [
            ("corpus", "num_speakers"), ("corpus", "num_recordings"),
            ("features", "num_mel_filters"), ("features", "num_ceps"),
            ("extractor", "epochs"), ("extractor", "minibatch_size"), ("extractor", "chunks_per_epoch"),
            ("extractor", "min_frames"), ("extractor", "max_frames"),
            ("bilstm", "hidden"), ("bilstm", "layers"), ("bilstm", "dense"), ("bilstm", "epochs"),
            ("bilstm", "max_seq_len"), ("bilstm", "rows_per_batch"),
            ("clustering", "kmeans_restarts"), ("run", "jobs"),
        ]  # fmt: skip
        for s, k in pos_ints:
            if v[s][k] < 1:
                errors.append(f"[{s}] {k} must be >= 1 (got {v[s][k]})")
        pos_floats = [
            ("corpus", "duration"), ("corpus", "turn_min"), ("corpus", "turn_max"),
            ("features", "frame_length"), ("features", "frame_shift"),
            ("segmentation", "window"), ("segmentation", "period"),
            ("extractor", "shrink"), ("extractor", "lr"), ("bilstm", "lr"),
        ]  # fmt: skip
        for s, k in pos_floats:
            if not v[s][k] > 0:
                errors.append(f"[{s}] {k} must be > 0 (got {v[s][k]})")
        if v["corpus"]["turn_min"] > v["corpus"]["turn_max"]:
            errors.append("[corpus] turn_min must not exceed turn_max")
        if v["extractor"]["embedding_dim"] not in (512, 128):
            errors.append(f"[extractor] embedding_dim must be 512 or 128 (got {v['extractor']['embedding_dim']})")
        if v["extractor"]["shrink"] > 1:
            errors.append("[extractor] shrink must be <= 1")
        if v["extractor"]["min_frames"] > v["extractor"]["max_frames"]:
            errors.append("[extractor] min_frames must not exceed max_frames")
        if v["segmentation"]["period"] > v["segmentation"]["window"]:
            errors.append("[segmentation] period must not exceed window")
        if v["segmentation"]["min_tail"] < 0:
            errors.append("[segmentation] min_tail must be >= 0")
        if v["plda"]["lda_dim"] < 0:
            errors.append("[plda] lda_dim must be >= 0")
        if v["bilstm"]["max_seq_len"] < 2:
            errors.append("[bilstm] max_seq_len must be >= 2")
        if v["bilstm"]["folds"] < 2:
            errors.append("[bilstm] folds must be >= 2")
        if v["evaluation"]["collar"] < 0:
            errors.append("[evaluation] collar must be >= 0")
        for s in v["clustering"]["scorers"]:
            if s not in SCORERS:
                errors.append(f"[clustering] unknown scorer {s!r}")
        for c in v["clustering"]["clusterers"]:
            if c not in CLUSTERERS:
                errors.append(f"[clustering] unknown clusterer {c!r}")
        if v["clustering"]["linkage"] not in ("average", "single", "complete"):
            errors.append(f"[clustering] unknown linkage {v['clustering']['linkage']!r}")
        for k in ("plda_ahc_sweep", "bilstm_ahc_sweep", "sc_sweep"):
            lo, hi, step = v["clustering"][k]
            if not step > 0 or hi < lo:
                errors.append(f"[clustering] {k} is an empty range ({lo}, {hi}, {step})")
        manifest = v["corpus"]["manifest"]
        if manifest:
            if not Path(manifest).is_file():
                errors.append(f"[corpus] manifest {manifest} does not exist")
        else:
            n, tr, dv = v["corpus"]["num_recordings"], v["corpus"]["train_recordings"], v["corpus"]["dev_recordings"]
            if tr < 1 or dv < 0 or tr + dv >= n:
                errors.append(f"[corpus] need train >= 1, dev >= 0 and at least one eval recording (got {tr}/{dv}/{n})")
            if n < v["bilstm"]["folds"]:
                errors.append(f"[corpus] {n} recordings cannot fill {v['bilstm']['folds']} folds")
        if errors:
            raise ValidationError("invalid configuration:\n  " + "\n  ".join(errors))


def _convert(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError("expected a boolean")
            return low in ("1", "true", "yes", "on")
        if kind == "list":
            return [p.strip() for p in raw.split(",") if p.strip()]
        if kind == "floats3":
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError("expected lo, hi, step")
            return parts
        return raw.strip()
    except ValueError as e:
        raise ValueError(f"{where}: cannot parse {raw!r} as {kind} ({e})") from None


def defaults() -> PipelineConfig:
    return PipelineConfig({s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def load_config(path=None) -> PipelineConfig:
    """Read an INI file over the defaults; unknown sections or keys are errors.

    Relative ``manifest`` and ``out`` paths resolve against the current
    directory. With no path the bundled synthetic configuration is used.
    """
    path = Path(path) if path is not None else bundled_config_path()
    if not path.is_file():
        raise ValidationError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ValidationError(f"{path}: {e}") from None
    cfg = defaults()
    cfg.source = path
    errors = []
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                errors.append(f"unknown key [{section}] {key}")
                continue
            try:
                cfg.values[section][key] = _convert(SCHEMA[section][key][0], raw, f"[{section}] {key}")
            except ValueError as e:
                errors.append(str(e))
    if errors:
        raise ValidationError(f"{path}:\n  " + "\n  ".join(errors))
    return cfg
