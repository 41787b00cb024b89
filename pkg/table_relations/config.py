# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Run configuration: TOML config file overlaid by command-line flags.

A config file has up to four tables:

    [run]      seed, jobs, dataset, out
    [train]    `TrainConfig` fields
    [model]    `ModelConfig` fields, the architecture used by training
    [synth]    `GenParams` fields

The `seed` of `[run]` seeds both training and generation unless those
tables set their own. Command-line flags win over the file. The
effective configuration is written as `run_config.json` next to the
artifacts of a run, so the run can be repeated from that file alone.
"""

import dataclasses
import json
import logging
import pathlib
import tomllib
from typing import Any, Dict, Mapping, Optional

from .error import ConfigError
from .synthgen import GenParams
from .training import TrainConfig

# Module logger.
LOG = logging.getLogger(__name__)

RUN_CONFIG_NAME = "run_config.json"
SECTIONS = ("run", "train", "model", "synth")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a command needs besides its positional arguments."""

    command: str = ""
    seed: int = 0
    # Worker threads of the per-table stages.
    jobs: int = 1
    dataset: Optional[str] = None
    out: Optional[str] = None
    # -1 quiet, 0 normal, 1 debug.
    verbosity: int = 0
    train: TrainConfig = TrainConfig()
    synth: GenParams = GenParams()

    def __post_init__(self):
        """Check the values.

        Raises:
            ConfigError: Invalid value.
        """
        if self.jobs < 1:
            raise ConfigError(f"Need at least one job: {self.jobs}")

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible dict in the config file layout."""
        train = self.train.to_dict()
        return {
            "run": {
                "command": self.command,
                "seed": self.seed,
                "jobs": self.jobs,
                "dataset": self.dataset,
            },
            "model": train.pop("model"),
            "train": train,
            "synth": self.synth.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Build from the config file layout.

        Raises:
            ConfigError: Unknown tables, keys or invalid values.
        """
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config tables: {', '.join(unknown)}")
        run = dict(data.get("run", {}))
        names = {field.name for field in dataclasses.fields(cls)} - {"train", "synth"}
        if set(run) - names:
            raise ConfigError(f"Unknown [run] keys: {sorted(set(run) - names)}")

        train = dict(data.get("train", {}))
        train.setdefault("seed", run.get("seed", 0))
        train["model"] = {**train.get("model", {}), **data.get("model", {})}
        synth = dict(data.get("synth", {}))
        synth.setdefault("seed", run.get("seed", 0))
        try:
            return cls(
                **run,
                train=TrainConfig.from_dict(train),
                synth=GenParams.from_dict(synth),
            )
        except TypeError as ex:
            raise ConfigError(f"Invalid [run] table: {ex}") from ex

    def override(self, **flags) -> "RunConfig":
        """Apply command-line flags, `None` values are ignored.

        `seed` applies to training and generation, `k`, `variant`,
        `bbox_mode` and `epochs` to training.
        """
        flags = {name: value for name, value in flags.items() if value is not None}
        train_flags = {
            name: flags.pop(name)
            for name in ("k", "variant", "bbox_mode", "epochs")
            if name in flags
        }
        train, synth = self.train, self.synth
        if "seed" in flags:
            train_flags["seed"] = flags["seed"]
            synth = dataclasses.replace(synth, seed=flags["seed"])
        if train_flags:
            train = TrainConfig.from_dict({**train.to_dict(), **train_flags})
        return dataclasses.replace(self, train=train, synth=synth, **flags)


def load_config(path) -> RunConfig:
    """Read a TOML config file.

    Raises:
        ConfigError: The file is missing, not TOML, or invalid.
    """
    try:
        with open(path, "rb") as config_file:
            data = tomllib.load(config_file)
    except OSError as ex:
        raise ConfigError(f"Cannot read config {path}: {ex}") from ex
    except tomllib.TOMLDecodeError as ex:
        raise ConfigError(f"Config {path} is not valid TOML: {ex}") from ex
    LOG.debug("Loaded config %s: %s.", path, data)
    return RunConfig.from_dict(data)


def write_run_config(config: RunConfig, out_dir) -> pathlib.Path:
    """Store the effective configuration beside the run artifacts."""
    path = pathlib.Path(out_dir) / RUN_CONFIG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def read_run_config(path) -> RunConfig:
    """Read a `run_config.json` written by `write_run_config`.

    Raises:
        ConfigError: The file is missing or invalid.
    """
    try:
        data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as ex:
        raise ConfigError(f"Cannot read run config {path}: {ex}") from ex
    return RunConfig.from_dict(data)
