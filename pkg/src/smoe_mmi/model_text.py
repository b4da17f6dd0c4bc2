"""Human-readable text dump of a fitted model.

The format is line based. A first line ``smoe-model 1`` is followed by
``key = value`` header lines, then one stanza per kernel opened by
``[kernel j]``. Stanza keys are the packed parameter names of
:func:`smoe_mmi.core.param_names` plus two derived, informational keys
(``precision``, row-major, and ``mixing_weight``) that the parser ignores.
Floats are written with ``repr`` so a dump parses back to the same model.
Blank lines and lines starting with ``#`` are skipped.
"""
from __future__ import annotations

import numpy as np

from .core import SMoEModel, param_names

MAGIC = "smoe-model 1"
_DERIVED = ("precision", "mixing_weight")


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def format_model(model: SMoEModel, **meta) -> str:
    """Serialize ``model``; ``meta`` entries become extra header lines."""
    lines = [MAGIC, f"dim = {model.dim}", f"num_kernels = {model.num_kernels}"]
    for key, value in meta.items():
        if isinstance(value, (tuple, list, np.ndarray)):
            value = " ".join(str(v) for v in np.ravel(value))
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    names = param_names(model.dim)
    weights = model.mixing_weights()
    for j, (kernel, row) in enumerate(zip(model.kernels, model.packed())):
        lines += ["", f"[kernel {j}]"]
        lines += [f"{name} = {_fmt([v])}" for name, v in zip(names, row)]
        lines.append(f"precision = {_fmt(kernel.precision())}")
        lines.append(f"mixing_weight = {_fmt([weights[j]])}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> tuple[SMoEModel, dict[str, str]]:
    """Inverse of :func:`format_model`. Header values are returned as strings."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"not a model dump: first line must be {MAGIC!r}")
    header: dict[str, str] = {}
    stanzas: list[dict[str, str]] = []
    for ln in lines[1:]:
        if ln.startswith("[kernel ") and ln.endswith("]"):
            if int(ln[8:-1]) != len(stanzas):
                raise ValueError(f"kernel stanzas out of order at {ln!r}")
            stanzas.append({})
            continue
        key, sep, value = ln.partition("=")
        if not sep:
            raise ValueError(f"expected 'key = value', got {ln!r}")
        (stanzas[-1] if stanzas else header)[key.strip()] = value.strip()
    dim = int(header.get("dim", 0))
    names = param_names(dim)
    if int(header.get("num_kernels", -1)) != len(stanzas):
        raise ValueError("num_kernels does not match the number of kernel stanzas")
    rows = []
    for j, stanza in enumerate(stanzas):
        missing = [n for n in names if n not in stanza]
        unknown = [k for k in stanza if k not in names and k not in _DERIVED]
        if missing or unknown:
            raise ValueError(f"kernel {j}: missing {missing}, unknown {unknown}")
        rows.append([float(stanza[n]) for n in names])
    meta = {k: v for k, v in header.items() if k not in ("dim", "num_kernels")}
    return SMoEModel.from_packed(np.array(rows), dim), meta
