"""Experiment configuration: INI files, shipped presets, CLI overrides.

Every key has a declared type and default below; unknown sections or
keys are configuration errors, named in the message. Presets are looked
up by bare name (no path separator, no .cfg suffix) in the packaged
presets directory.
"""

import configparser
from importlib import resources

from .exceptions import ConfigError


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


# (section, key) -> (parser, default)
SCHEMA = {
    ("data", "kind"): (str, "synthetic"),
    ("data", "synthetic_kind"): (str, "two-gaussians"),
    ("data", "n"): (int, 1000),
    ("data", "train_images"): (str, ""),
    ("data", "train_labels"): (str, ""),
    ("data", "test_images"): (str, ""),
    ("data", "test_labels"): (str, ""),
    ("data", "train_csv"): (str, ""),
    ("data", "test_csv"): (str, ""),
    ("data", "label_column"): (str, "label"),
    ("data", "binary_columns"): (_str_list, []),
    ("data", "condition"): (str, "label"),
    ("data", "standardize"): (_bool, True),
    ("data", "input_noise"): (float, 0.0),
    ("flow", "coupling"): (str, "gin"),
    ("flow", "blocks"): (int, 8),
    ("flow", "width"): (int, 128),
    ("flow", "clamp"): (float, 2.0),
    ("flow", "lr"): (float, 5e-4),
    ("flow", "batch_size"): (int, 128),
    ("flow", "steps"): (int, 2000),
    ("flow", "val_fraction"): (float, 0.1),
    ("flow", "eval_every"): (int, 50),
    ("classifier", "hidden_layers"): (int, 2),
    ("classifier", "width"): (int, 128),
    ("classifier", "activation"): (str, "relu"),
    ("classifier", "optimizer"): (str, "adam"),
    ("classifier", "lr"): (float, 5e-4),
    ("classifier", "batch_size"): (int, 512),
    ("classifier", "steps"): (int, 2000),
    ("classifier", "eval_every"): (int, 100),
    ("dpsgd", "clip_norm"): (float, 1.0),
    ("dpsgd", "delta"): (float, 1e-5),
    ("dpsgd", "lot_size"): (int, 128),
    ("dpsgd", "steps"): (int, 300),
    ("dpsgd", "lr"): (float, 0.05),
    ("dpsgd", "noise_multiplier"): (float, 0.0),  # 0 = calibrate from epsilon
    ("privacy", "epsilons"): (_float_list, [0.2, 0.5, 1.0, 2.0, 10.0]),
    ("privacy", "sensitivity"): (str, "half-epsilon-capped-4"),
    ("privacy", "clip_mode"): (str, "rescale-always"),
    ("privacy", "strict_accounting"): (_bool, False),
    ("sweep", "seeds"): (_int_list, [0, 1, 2]),
    ("sweep", "methods"): (_str_list, ["original", "cadp", "dpsgd"]),
}

SECTIONS = sorted({section for section, _ in SCHEMA})


class ExperimentConfig:
    """Typed view over the merged (defaults, file, overrides) key space."""

    def __init__(self, values):
        self._values = values

    def __getitem__(self, section_key):
        return self._values[section_key]

    def get(self, section, key):
        return self._values[(section, key)]

    def as_dict(self):
        out = {}
        for (section, key), value in sorted(self._values.items()):
            out.setdefault(section, {})[key] = value
        return out


def _preset_text(name):
    try:
        ref = resources.files("cadp").joinpath("presets", f"{name}.cfg")
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(
            f"unknown preset {name!r}; shipped presets: mnist, diabetes"
        ) from None


def load_config(source=None, overrides=()):
    """Build an ExperimentConfig.

    source may be None (pure defaults), a preset name, or a path to an
    INI file. overrides are 'section.key=value' strings that win over
    the file.
    """
    values = {pair: default for pair, (_, default) in SCHEMA.items()}

    if source:
        source = str(source)
        parser = configparser.ConfigParser(interpolation=None)
        if "/" in source or source.endswith(".cfg") or source.endswith(".ini"):
            read = parser.read(source)
            if not read:
                raise ConfigError(f"config file {source!r} not found")
        else:
            parser.read_string(_preset_text(source), source=source)
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(
                    f"unknown config section [{section}]; known: {SECTIONS}"
                )
            for key, raw in parser.items(section):
                _apply(values, section, key, raw)

    for text in overrides:
        if "=" not in text or "." not in text.split("=", 1)[0]:
            raise ConfigError(
                f"override {text!r} must look like section.key=value"
            )
        target, raw = text.split("=", 1)
        section, key = target.split(".", 1)
        _apply(values, section.strip(), key.strip(), raw.strip())

    return ExperimentConfig(values)


def _apply(values, section, key, raw):
    if (section, key) not in SCHEMA:
        known = sorted(k for s, k in SCHEMA if s == section)
        raise ConfigError(
            f"unknown config key {key!r} in section [{section}]; known keys: "
            f"{known}"
        )
    parse, _ = SCHEMA[(section, key)]
    try:
        values[(section, key)] = parse(raw)
    except (ValueError, TypeError) as e:
        raise ConfigError(
            f"bad value for {section}.{key}: {raw!r} ({e})"
        ) from e
