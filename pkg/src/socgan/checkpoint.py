"""Text checkpoints: magic line, embedded run config, tensor manifest, decimal payload."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, parse_config
from .encoder import Params

MAGIC = "SOCGAN-CKPT v1"


class CheckpointError(ValueError):
    """A checkpoint file that cannot be read back."""


def dumps(params: Params, config: RunConfig) -> str:
    lines = [MAGIC, "[config]"]
    lines += config.to_text().splitlines()
    lines.append("[manifest]")
    names = sorted(params)
    for name in names:
        lines.append(" ".join([name, *map(str, params[name].shape)]))
    lines.append("[payload]")
    for name in names:
        flat = params[name].data.ravel()
        lines.append(" ".join("%.17g" % v for v in flat))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[Params, RunConfig]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError("not a SOCGAN-CKPT file")
    try:
        i_cfg = lines.index("[config]")
        i_man = lines.index("[manifest]")
        i_pay = lines.index("[payload]")
    except ValueError as exc:
        raise CheckpointError(f"checkpoint is missing a section: {exc}") from None
    config = parse_config("\n".join(lines[i_cfg + 1:i_man]))
    manifest = []
    for row in lines[i_man + 1:i_pay]:
        if not row.strip():
            continue
        name, *dims = row.split()
        try:
            shape = tuple(int(d) for d in dims)
        except ValueError:
            raise CheckpointError(f"bad manifest row: {row!r}") from None
        manifest.append((name, shape))
    if len({n for n, _ in manifest}) != len(manifest):
        raise CheckpointError("manifest names are not unique")
    tokens = " ".join(lines[i_pay + 1:]).split()
    expected = sum(int(np.prod(s)) for _, s in manifest)
    if len(tokens) != expected:
        raise CheckpointError(f"payload size mismatch: manifest needs {expected} values, "
                              f"found {len(tokens)}")
    try:
        values = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise CheckpointError(f"bad payload value: {exc}") from None
    params, at = {}, 0
    for name, shape in manifest:
        n = int(np.prod(shape))
        params[name] = Tensor(values[at:at + n].reshape(shape), requires_grad=True)
        at += n
    return params, config


def save_checkpoint(path, params: Params, config: RunConfig) -> None:
    Path(path).write_text(dumps(params, config))


def load_checkpoint(path) -> tuple[Params, RunConfig]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(text)
