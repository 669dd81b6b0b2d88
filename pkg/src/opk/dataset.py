"""Training sets of input/output pairs with a certified output bound."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hilbert import DimensionError, OutputSpace, OutVec


@dataclass(eq=False)
class Dataset:
    """``m`` pairs ``(x_i, y_i)``; every ``||y_i|| <= C_y`` is checked on construction.

    ``inputs`` has shape ``(m, p)`` in ``input_space`` and ``outputs`` has
    shape ``(m, dim)`` in ``space``.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    space: OutputSpace
    input_space: OutputSpace
    C_y: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        m = self.outputs.shape[0]
        if m < 1 or self.inputs.shape[0] != m:
            raise ValueError("need m >= 1 and as many inputs as outputs")
        if self.outputs.shape[1] != self.space.dim:
            raise DimensionError("outputs do not match the output space")
        if self.inputs.shape[1] != self.input_space.dim:
            raise DimensionError("inputs do not match the input space")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("dataset contains non-finite values")
        if not self.C_y > 0:
            raise ValueError("C_y must be positive")
        if np.max(self.space.norms(self.outputs)) > self.C_y * (1 + 1e-12):
            raise ValueError("an output exceeds the certified bound C_y")

    @property
    def m(self) -> int:
        return self.outputs.shape[0]

    def output(self, i: int) -> OutVec:
        return OutVec(self.space, self.outputs[i])

    def without(self, i: int) -> "Dataset":
        """The training set with pair ``i`` removed."""
        keep = np.arange(self.m) != i
        return Dataset(self.inputs[keep], self.outputs[keep], self.space, self.input_space, self.C_y, dict(self.meta))

    def permuted(self, perm) -> "Dataset":
        perm = np.asarray(perm)
        return Dataset(self.inputs[perm], self.outputs[perm], self.space, self.input_space, self.C_y, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "input_space": self.input_space.to_dict(),
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
            "C_y": float(self.C_y),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        space = OutputSpace.from_dict(d["space"])
        inp = OutputSpace.from_dict(d["input_space"]) if "input_space" in d else space
        return cls(np.asarray(d["inputs"]), np.asarray(d["outputs"]), space, inp, float(d["C_y"]), dict(d.get("meta", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))
