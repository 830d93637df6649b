"""Naming and enumeration of parameter bundles."""

from __future__ import annotations

import dataclasses

from .numerics import Tensor


class ParamGroup:
    """Mixin for dataclasses whose fields are tensors or nested groups.

    List fields named ``layers`` enumerate as ``layer0``, ``layer1``, ...
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            path = f"{prefix}.{f.name}" if prefix else f.name
            if isinstance(value, Tensor):
                out[path] = value
            elif isinstance(value, ParamGroup):
                out.update(value.named_parameters(path))
            elif isinstance(value, list):
                stem = f.name[:-1] if f.name.endswith("s") else f.name
                for i, item in enumerate(value):
                    item_path = f"{prefix}.{stem}{i}" if prefix else f"{stem}{i}"
                    out.update(item.named_parameters(item_path))
        return dict(sorted(out.items()))
