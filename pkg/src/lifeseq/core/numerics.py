"""Shape-checked differentiable array operations, gradient checking and checkpoints.

Tensors are torch tensors; reverse-mode differentiation is torch autograd,
rebuilt per step. Full precision (float64) is used in tests, float32 for
training runs.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

DEFAULT_DTYPE = torch.float64
NO_DECAY_MARKERS = ("bias", "embedding", "norm", "gate", "time2vec")
_BACKWARD_DONE = "_lifeseq_backward_done"


def _shape(t: torch.Tensor) -> Tuple[int, ...]:
    return tuple(t.shape)


def _broadcast(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ValueError(f"{op}: incompatible shapes {_shape(a)} and {_shape(b)}") from None


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product over the last two axes."""
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ValueError(f"matmul: incompatible shapes {_shape(a)} and {_shape(b)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcast(a, b, "add")
    return a + b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcast(a, b, "mul")
    return a * b


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def sin(x: torch.Tensor) -> torch.Tensor:
    return torch.sin(x)


def exp(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(x)


def softmax(x: torch.Tensor) -> torch.Tensor:
    """Row softmax over the last axis."""
    return torch.softmax(x, dim=-1)


def mean(x: torch.Tensor, dim: Optional[int] = None) -> torch.Tensor:
    return x.mean() if dim is None else x.mean(dim=dim)


def sum(x: torch.Tensor, dim: Optional[int] = None) -> torch.Tensor:  # noqa: A001
    return x.sum() if dim is None else x.sum(dim=dim)


def slice_rows(x: torch.Tensor, start: int, stop: int) -> torch.Tensor:
    if not 0 <= start <= stop <= x.shape[0]:
        raise ValueError(f"slice_rows: [{start}:{stop}] out of range for shape {_shape(x)}")
    return x[start:stop]


def concat(tensors: Sequence[torch.Tensor], dim: int = -1) -> torch.Tensor:
    """Concatenate along one axis; all other axes must agree."""
    if not tensors:
        raise ValueError("concat: no tensors")
    ref = tensors[0]
    axis = dim % ref.dim()
    for t in tensors[1:]:
        if t.dim() != ref.dim() or any(
            t.shape[i] != ref.shape[i] for i in range(ref.dim()) if i != axis
        ):
            raise ValueError(f"concat: incompatible shapes {_shape(ref)} and {_shape(t)}")
    return torch.cat(list(tensors), dim=dim)


def gather_rows(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    """Embedding lookup; backward scatter-adds into the table rows."""
    if table.dim() != 2:
        raise ValueError(f"gather_rows: table must be 2-D, got {_shape(table)}")
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ValueError(
            f"gather_rows: ids outside [0, {table.shape[0]}) for table {_shape(table)}"
        )
    return table[ids]


def dropout(
    x: torch.Tensor,
    rate: float,
    training: bool = True,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Inverted dropout; the exact identity when not training or rate is 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep / (1.0 - rate)


def backward(loss: torch.Tensor) -> None:
    """Backpropagate a scalar loss, accumulating into parameter gradients.

    Raises:
        ValueError: If the loss is not a scalar
        RuntimeError: If backward already ran on this loss
    """
    if loss.dim() != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {_shape(loss)}")
    if getattr(loss, _BACKWARD_DONE, False):
        raise RuntimeError("backward: this loss was already backpropagated; rebuild the graph")
    loss.backward()
    setattr(loss, _BACKWARD_DONE, True)


def zero_grad(params: Iterable[torch.Tensor]) -> None:
    for p in params:
        p.grad = None


@dataclass
class GradCheckReport:
    max_relative_error: float
    checkable: bool
    worst_parameter: int = -1
    worst_index: int = -1


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    h: float = 1e-5,
    kink_tolerance: Optional[float] = None,
) -> GradCheckReport:
    """Compare autograd gradients with central finite differences.

    Relative error per coordinate is |a - n| / max(1, |a|, |n|). A coordinate
    whose one-sided differences disagree by more than kink_tolerance
    (default 10 * sqrt(h), scaled like the error) marks the function as not
    checkable there.

    Args:
        f: Closure recomputing the scalar loss from params
        params: Leaf tensors with requires_grad (use float64)
        h: Finite-difference step

    Returns:
        GradCheckReport
    """
    tolerance = kink_tolerance if kink_tolerance is not None else 10.0 * math.sqrt(h)
    zero_grad(params)
    loss = f()
    backward(loss)
    analytic = [
        (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for p in params
    ]
    zero_grad(params)

    worst = 0.0
    worst_p, worst_i = -1, -1
    checkable = True
    with torch.no_grad():
        f0 = float(f())
        for pi, p in enumerate(params):
            flat = p.view(-1)
            a_flat = analytic[pi].view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                fp = float(f())
                flat[i] = original - h
                fm = float(f())
                flat[i] = original
                numeric = (fp - fm) / (2 * h)
                forward_diff = (fp - f0) / h
                backward_diff = (f0 - fm) / h
                scale = max(1.0, abs(forward_diff), abs(backward_diff))
                if abs(forward_diff - backward_diff) / scale > tolerance:
                    checkable = False
                a = float(a_flat[i])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if err > worst:
                    worst, worst_p, worst_i = err, pi, i
    return GradCheckReport(worst, checkable, worst_p, worst_i)


@dataclass
class ParameterSpec:
    name: str
    shape: Tuple[int, ...]
    decay_eligible: bool


def is_decay_eligible(name: str) -> bool:
    """Biases, embeddings, norms, gates and Time2Vec parameters are excluded from weight decay."""
    lowered = name.lower()
    return not any(marker in lowered for marker in NO_DECAY_MARKERS)


def parameter_specs(module: nn.Module) -> List[ParameterSpec]:
    return [
        ParameterSpec(name, tuple(p.shape), is_decay_eligible(name))
        for name, p in module.named_parameters()
    ]


def decay_groups(module: nn.Module) -> Tuple[List[nn.Parameter], List[nn.Parameter]]:
    """Split trainable parameters into (decay, no_decay) lists."""
    decay, no_decay = [], []
    for name, p in module.named_parameters():
        if not p.requires_grad:
            continue
        (decay if is_decay_eligible(name) else no_decay).append(p)
    return decay, no_decay


_DTYPES = {
    "float16": ("<f2", torch.float16),
    "float32": ("<f4", torch.float32),
    "float64": ("<f8", torch.float64),
    "int32": ("<i4", torch.int32),
    "int64": ("<i8", torch.int64),
    "bool": ("|b1", torch.bool),
}
_DTYPE_NAMES = {torch_dtype: name for name, (_, torch_dtype) in _DTYPES.items()}


def _paths(path: str) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".bin", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save_checkpoint(
    state: Dict[str, torch.Tensor],
    path: str,
    decay_flags: Optional[Dict[str, bool]] = None,
    extra: Optional[dict] = None,
) -> Tuple[Path, Path]:
    """Write tensors as one little-endian binary blob plus a JSON manifest.

    Args:
        state: Name to tensor mapping (for example a state_dict)
        path: Base path; ".bin" and ".json" are appended
        decay_flags: Optional decay eligibility per name (False when absent)
        extra: Optional metadata stored in the manifest

    Returns:
        (binary path, manifest path)

    Raises:
        ValueError: If a tensor has a dtype the format does not store
    """
    for name, tensor in state.items():
        if tensor.dtype not in _DTYPE_NAMES:
            raise ValueError(f"Cannot store {name} with dtype {tensor.dtype}; supported: {sorted(_DTYPES)}")
    bin_path, manifest_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(bin_path, "wb") as f:
        for name, tensor in state.items():
            dtype_name = _DTYPE_NAMES[tensor.dtype]
            np_dtype = _DTYPES[dtype_name][0]
            data = tensor.detach().cpu().numpy().astype(np_dtype).tobytes()
            f.write(data)
            entries.append(
                {
                    "name": name,
                    "shape": list(tensor.shape),
                    "offset": offset,
                    "dtype": dtype_name,
                    "decay_eligible": bool((decay_flags or {}).get(name, False)),
                }
            )
            offset += len(data)
    manifest = {"format": "lifeseq-checkpoint", "version": 1, "tensors": entries, "extra": extra or {}}
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return bin_path, manifest_path


def load_checkpoint(path: str) -> Tuple[Dict[str, torch.Tensor], dict]:
    """Read a checkpoint written by save_checkpoint.

    Returns:
        (state dict, manifest)

    Raises:
        FileNotFoundError: If either file is missing
    """
    bin_path, manifest_path = _paths(path)
    for p in (bin_path, manifest_path):
        if not p.exists():
            raise FileNotFoundError(f"Checkpoint file not found: {p}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    blob = bin_path.read_bytes()
    state: Dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        np_dtype, torch_dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        array = np.frombuffer(blob, dtype=np_dtype, count=count, offset=entry["offset"])
        state[entry["name"]] = torch.from_numpy(array.copy()).to(torch_dtype).reshape(entry["shape"])
    return state, manifest
