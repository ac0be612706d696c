"""Structured-text configuration files: ``key = value`` lines, fixed schemas.

Unknown keys are errors so a config can never silently drift from the
code that reads it.  ``#`` starts a comment; blank lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

_REQUIRED = object()


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _int_pair(text):
    parts = [int(v) for v in text.replace("x", " ").split()]
    if len(parts) == 1:
        return (parts[0], parts[0])
    if len(parts) != 2:
        raise ValueError(f"expected one or two integers, got {text!r}")
    return tuple(parts)


@dataclass
class Field:
    parse: callable
    default: object = _REQUIRED


def parse_config_text(text, schema, where="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = schema[key].parse(value.strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}:{lineno}: bad value for {key!r}: {exc}") from None
    for key, spec in schema.items():
        if key not in values:
            if spec.default is _REQUIRED:
                raise ConfigError(f"{where}: missing required key {key!r}")
            values[key] = spec.default
    return values


def load_config(path, schema):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), schema, where=str(path))


CORPUS_SCHEMA = {
    "image_size": Field(_int_pair, (64, 64)),
    "channels": Field(int, 1),
    "train_count": Field(int, 2000),
    "validation_count": Field(int, 40),
    "master_seed": Field(int, 1),
    "width_min": Field(float, 1.0),
    "width_max": Field(float, 4.0),
    "branch_probability": Field(float, 0.15),
    "waviness": Field(float, 1.0),
    "background_level": Field(float, 0.3),
    "noise_amplitude": Field(float, 0.1),
}

GAN_SCHEMA = {
    "minibatch": Field(int, 16),
    "epochs": Field(int, 25),
    "learning_rate": Field(float, 0.0002),
    "beta1": Field(float, 0.5),
    "beta2": Field(float, 0.999),
    "g_updates_per_d_update": Field(int, 2),
    "loss_variant": Field(str, "non_saturating"),
    "seed": Field(int, 0),
    "latent_dim": Field(int, 100),
    "g_channels": Field(int, 32),
    "d_channels": Field(int, 32),
}

SEGMENTER_SCHEMA = {
    "window": Field(int, 15),
    "tau": Field(float, 0.15),
    "min_area": Field(int, 20),
    "closing_radius": Field(int, 1),
}

EXPERIMENT_SCHEMA = {
    "corpus_dir": Field(str),
    "model_file": Field(str, ""),
    "out_dir": Field(str, "results"),
    "seed": Field(int, 1),
    "methods": Field(_str_list, ["gan", "cosamp", "ista"]),
    "cr_list": Field(_float_list, [2.0, 4.0, 8.0, 16.0, 32.0, 64.0]),
    "nl_list": Field(_float_list, [0.0, 0.05, 0.1]),
    "restarts": Field(int, 10),
    "recovery_iterations": Field(int, 200),
    "recovery_lambda": Field(float, 0.001),
    "recovery_lr": Field(float, 0.1),
    "max_images": Field(int, 0),  # 0 = whole validation split
    "k_fraction": Field(float, 0.05),
    "lambda1": Field(float, 0.01),
    "ista_iterations": Field(int, 500),
    "blur_degree": Field(int, 13),
    "blur_restarts": Field(int, 5),
    "occlusion_coverage": Field(float, 0.25),
    "occlusion_restarts": Field(int, 5),
    "occlusion_fill": Field(float, 0.0),
    "correlation_trials": Field(int, 100),
    "correlation_cr": Field(float, 16.0),
    "correlation_image": Field(int, 0),
    "restart_study_crs": Field(_float_list, [2.0, 64.0]),
    "restart_study_images": Field(int, 10),
    "segmenter_window": Field(int, 15),
    "segmenter_tau": Field(float, 0.15),
    "segmenter_min_area": Field(int, 20),
    "segmenter_closing": Field(int, 1),
    "write_mosaics": Field(_bool, True),
    "mosaic_images": Field(int, 8),
}
