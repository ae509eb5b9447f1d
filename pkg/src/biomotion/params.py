"""Named parameter bundles and their flat JSON file format."""
from __future__ import annotations

import json
import math

import numpy as np

from .autodiff import Tensor, parameter

PARAMS_FORMAT = "biovae-params-v1"


class ParamBundle:
    """Ordered mapping of parameter name to float64 array.

    Names are dotted (``base.w1``, ``dyn.s_w``) so one bundle can hold the
    denoiser, the dynamics predictor and the residual decoder together.
    """

    def __init__(self, arrays=None):
        self.arrays: dict[str, np.ndarray] = {}
        for name, a in (arrays or {}).items():
            self.arrays[name] = np.array(a, dtype=np.float64)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = np.array(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def names(self):
        return list(self.arrays)

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "ParamBundle":
        return ParamBundle({k: v.copy() for k, v in self.arrays.items()})

    def subset(self, prefix: str) -> "ParamBundle":
        return ParamBundle({k: v for k, v in self.arrays.items() if k.startswith(prefix)})

    def update(self, other: "ParamBundle"):
        for k, v in other.items():
            self[k] = v

    def tensors(self, trainable=True) -> dict[str, Tensor]:
        """Fresh leaf tensors; gradients land in ``.grad`` after backward()."""
        if trainable:
            return {k: parameter(v) for k, v in self.arrays.items()}
        return {k: Tensor(v) for k, v in self.arrays.items()}

    def flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def allclose(self, other: "ParamBundle", atol=0.0) -> bool:
        return (self.names() == other.names()
                and all(np.allclose(self[k], other[k], rtol=0, atol=atol) for k in self))

    # -- files --------------------------------------------------------------
    def to_dict(self, extra: dict | None = None) -> dict:
        doc = {
            "format": PARAMS_FORMAT,
            "shapes": [[k, list(v.shape)] for k, v in self.arrays.items()],
            "values": [float(x) for x in self.flat()],
        }
        if extra:
            doc.update(extra)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamBundle":
        if doc.get("format") != PARAMS_FORMAT:
            raise ValueError(f"expected format {PARAMS_FORMAT!r}, got {doc.get('format')!r}")
        values = np.asarray(doc["values"], dtype=np.float64)
        out, pos = {}, 0
        for name, shape in doc["shapes"]:
            size = int(np.prod(shape)) if shape else 1
            if pos + size > values.size:
                raise ValueError(f"parameter file truncated at {name!r}")
            out[name] = values[pos:pos + size].reshape(shape)
            pos += size
        if pos != values.size:
            raise ValueError(f"{values.size - pos} values left over after the shape manifest")
        return cls(out)

    def dumps(self, extra: dict | None = None) -> str:
        # repr floats so a reload is exact, unlike the 9-digit motion files
        doc = self.to_dict(extra)
        for v in doc["values"]:
            if not math.isfinite(v):
                raise ValueError("cannot save non-finite parameters")
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def save(self, path, extra: dict | None = None):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps(extra) + "\n")

    @classmethod
    def load(cls, path) -> "ParamBundle":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    scale = gain * math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def as_tensor_map(params) -> dict:
    """Accept a ParamBundle or a name -> Tensor/array mapping."""
    if isinstance(params, ParamBundle):
        return params.tensors(trainable=False)
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
