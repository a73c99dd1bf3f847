"""Where trained networks live and how to ask for missing ones."""
from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

from ..errors import MissingCheckpoint
from ..neuralcore import load_checkpoint

CHECKPOINT_ENV = "ROVER_CHECKPOINTS"
OUTPUT_ENV = "ROVER_OUTPUT_ROOT"
ANGLE_FILE = "angle_all.rvck"
ACTOR_FILE = "actor.rvck"
CRITIC_FILE = "critic.rvck"

TRAIN_COMMANDS = {
    ANGLE_FILE: "rover train-angle --out {dir}/" + ANGLE_FILE,
    ACTOR_FILE: "rover train-policy --angle {dir}/" + ANGLE_FILE + " --out {dir}",
    CRITIC_FILE: "rover train-policy --angle {dir}/" + ANGLE_FILE + " --out {dir}",
}


def bundled_checkpoint_dir() -> Path:
    return Path(str(resources.files("rover") / "data" / "checkpoints"))


def checkpoint_dir(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CHECKPOINT_ENV)
    return Path(env) if env else bundled_checkpoint_dir()


def output_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ENV, "rover_runs"))


def require(name: str, directory=None):
    d = checkpoint_dir(directory)
    path = d / name
    if not path.exists():
        cmd = TRAIN_COMMANDS.get(name, "rover train-angle / rover train-policy").format(dir=d)
        raise MissingCheckpoint(f"checkpoint {path} not found; create it with `{cmd}`")
    return load_checkpoint(path)


def load_rover(directory=None):
    """``(angle, actor)`` checkpoints of the trained 2D optimizer."""
    return require(ANGLE_FILE, directory), require(ACTOR_FILE, directory)
