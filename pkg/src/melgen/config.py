"""Training configuration files.

Format: two sections introduced by ``DataConfig:`` and ``TrainConfig:``
header lines, each holding ``key=value`` assignments separated by commas
and/or newlines.  Values are integers, floats, arithmetic expressions
(``256*8``), bracketed integer lists (``[12,6,5,4]``) or bare words for the
``model`` key.  Duplicate or unknown keys and malformed values are rejected
with the offending line number.

Which model a file configures is inferred from its TrainConfig keys (or
forced with ``model=melnet`` / ``model=cmelgan``).
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field, fields

from .errors import ParseError

_WORD_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")


@dataclass
class DataConfig:
    batch_sz: int
    num_mels: int
    win_sz: float          # clip length in seconds
    stft_hop_sz: int
    stft_win_sz: int
    sample_rate: int = 22050


@dataclass
class MelNetSettings:
    dims: int
    n_layers: tuple[int, ...]
    directions: tuple[int, ...]
    mixture_k: int = 10
    epochs: int = 1
    seed: int = 0
    lr: float = 1e-3
    checkpointing: bool = False


@dataclass
class GanSettings:
    noise_dim: int = 128
    seed_channels: int = 64
    upsample_channels: tuple[int, ...] = (32, 16, 8)
    upsample_stride: int = 2
    upsample_kernel: int = 4
    finetune_kernels: tuple[int, ...] = (3, 7, 15, 31)
    dilations: tuple[int, ...] = (1, 3, 9)
    disc_channels: tuple[int, ...] = (16, 32, 64)
    disc_kernels: tuple[int, ...] = (7, 7, 9)
    disc_strides: tuple[int, ...] = (2, 2, 2)
    disc_groups: int = 4
    disc_embed_dim: int = 64
    t_out: int | None = None
    epochs: int = 1
    seed: int = 0
    lr: float = 1e-4
    checkpointing: bool = False


@dataclass
class TrainConfig:
    data: DataConfig
    model_kind: str
    melnet: MelNetSettings | None = None
    cmelgan: GanSettings | None = None


# key name -> (value kind, required). Kinds: int, pos_int, pos_float,
# int_list, flag, word.
_DATA_KEYS = {
    "batch_sz": ("pos_int", True),
    "num_mels": ("pos_int", True),
    "win_sz": ("pos_float", True),
    "stft_hop_sz": ("pos_int", True),
    "stft_win_sz": ("pos_int", True),
    "sample_rate": ("pos_int", False),
}
_COMMON_KEYS = {
    "model": ("word", False),
    "epochs": ("pos_int", False),
    "seed": ("int", False),
    "lr": ("pos_float", False),
    "checkpointing": ("flag", False),
}
_MELNET_KEYS = {
    "dims": ("pos_int", True),
    "n_layers": ("int_list", True),
    "directions": ("int_list", True),
    "mixture_k": ("pos_int", False),
}
_GAN_KEYS = {
    "noise_dim": ("pos_int", False),
    "seed_channels": ("pos_int", False),
    "upsample_channels": ("int_list", False),
    "upsample_stride": ("pos_int", False),
    "upsample_kernel": ("pos_int", False),
    "finetune_kernels": ("int_list", False),
    "dilations": ("int_list", False),
    "disc_channels": ("int_list", False),
    "disc_kernels": ("int_list", False),
    "disc_strides": ("int_list", False),
    "disc_groups": ("pos_int", False),
    "disc_embed_dim": ("pos_int", False),
    "t_out": ("pos_int", False),
}
_TRAIN_KEYS = {**_COMMON_KEYS, **_MELNET_KEYS, **_GAN_KEYS}


def _eval_expr(node, lineno: int):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body, lineno)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        v = _eval_expr(node.operand, lineno)
        return v if isinstance(node.op, ast.UAdd) else -v
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult,
                                                            ast.Div, ast.FloorDiv)):
        left, right = _eval_expr(node.left, lineno), _eval_expr(node.right, lineno)
        op = type(node.op)
        if op is ast.Add:
            return left + right
        if op is ast.Sub:
            return left - right
        if op is ast.Mult:
            return left * right
        if op is ast.FloorDiv:
            return left // right
        return left / right
    if isinstance(node, ast.List):
        return [_eval_expr(e, lineno) for e in node.elts]
    raise ParseError("value must be a number, arithmetic expression or list", line=lineno)


def _parse_value(text: str, kind: str, key: str, lineno: int):
    text = text.strip()
    if kind == "word":
        if not _WORD_RE.match(text):
            raise ParseError(f"{key}: expected a bare word, got {text!r}", line=lineno)
        return text
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        raise ParseError(f"{key}: malformed value {text!r}", line=lineno) from None
    value = _eval_expr(tree, lineno)

    def as_int(v):
        if isinstance(v, float):
            if not v.is_integer():
                raise ParseError(f"{key}: expected an integer, got {v}", line=lineno)
            v = int(v)
        return v

    if kind == "int":
        return as_int(_require_scalar(value, key, lineno))
    if kind == "pos_int":
        v = as_int(_require_scalar(value, key, lineno))
        if v <= 0:
            raise ParseError(f"{key}: must be positive, got {v}", line=lineno)
        return v
    if kind == "pos_float":
        v = float(_require_scalar(value, key, lineno))
        if v <= 0:
            raise ParseError(f"{key}: must be positive, got {v}", line=lineno)
        return v
    if kind == "flag":
        v = as_int(_require_scalar(value, key, lineno))
        if v not in (0, 1):
            raise ParseError(f"{key}: expected 0 or 1, got {v}", line=lineno)
        return bool(v)
    if kind == "int_list":
        if not isinstance(value, list) or not value:
            raise ParseError(f"{key}: expected a non-empty list", line=lineno)
        return tuple(as_int(v) for v in value)
    raise AssertionError(kind)


def _require_scalar(value, key, lineno):
    if isinstance(value, list):
        raise ParseError(f"{key}: expected a scalar, got a list", line=lineno)
    return value


def _split_assignments(line: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in line:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    sections: dict[str, dict[str, tuple[object, int]]] = {"DataConfig": {}, "TrainConfig": {}}
    current: str | None = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.endswith(":"):
            name = line[:-1].strip()
            if name not in sections:
                raise ParseError(f"unknown section {name!r}", line=lineno)
            current = name
            continue
        if current is None:
            raise ParseError("assignment before any section header", line=lineno)
        keyset = _DATA_KEYS if current == "DataConfig" else _TRAIN_KEYS
        for assignment in _split_assignments(line):
            if "=" not in assignment:
                raise ParseError(f"expected key=value, got {assignment!r}", line=lineno)
            key, text = (s.strip() for s in assignment.split("=", 1))
            if key not in keyset:
                raise ParseError(f"unknown {current} key {key!r}", line=lineno)
            if key in sections[current]:
                raise ParseError(f"duplicate key {key!r}", line=lineno)
            kind = keyset[key][0]
            sections[current][key] = (_parse_value(text, kind, key, lineno), lineno)

    data_vals = {k: v for k, (v, _) in sections["DataConfig"].items()}
    missing = [k for k, (_, req) in _DATA_KEYS.items() if req and k not in data_vals]
    if missing:
        raise ParseError(f"DataConfig missing required keys: {missing}")
    data = DataConfig(**data_vals)
    if data.stft_hop_sz > data.stft_win_sz:
        raise ParseError("stft_hop_sz must not exceed stft_win_sz")

    train_vals = {k: v for k, (v, _) in sections["TrainConfig"].items()}
    kind = _infer_model_kind(train_vals, sections["TrainConfig"])
    common = {k: train_vals[k] for k in _COMMON_KEYS if k != "model" and k in train_vals}
    if kind == "melnet":
        missing = [k for k, (_, req) in _MELNET_KEYS.items() if req and k not in train_vals]
        if missing:
            raise ParseError(f"TrainConfig missing required keys: {missing}")
        settings = MelNetSettings(
            **{k: train_vals[k] for k in _MELNET_KEYS if k in train_vals}, **common)
        return TrainConfig(data=data, model_kind="melnet", melnet=settings)
    settings = GanSettings(**{k: train_vals[k] for k in _GAN_KEYS if k in train_vals}, **common)
    return TrainConfig(data=data, model_kind="cmelgan", cmelgan=settings)


def _infer_model_kind(train_vals: dict, with_lines: dict) -> str:
    melnet_used = sorted(k for k in train_vals if k in _MELNET_KEYS)
    gan_used = sorted(k for k in train_vals if k in _GAN_KEYS)
    declared = train_vals.get("model")
    if declared is not None:
        if declared not in ("melnet", "cmelgan"):
            raise ParseError(f"model must be 'melnet' or 'cmelgan', got {declared!r}",
                             line=with_lines["model"][1])
        wrong = gan_used if declared == "melnet" else melnet_used
        if wrong:
            raise ParseError(f"model={declared} conflicts with keys {wrong}",
                             line=with_lines["model"][1])
        return declared
    if melnet_used and gan_used:
        raise ParseError(f"config mixes model families: {melnet_used} vs {gan_used}")
    if melnet_used:
        return "melnet"
    if gan_used:
        return "cmelgan"
    raise ParseError("cannot infer the model: set model=melnet or model=cmelgan, "
                     "or provide model-specific keys")
