"""
Dense-tensor numeric core shared by every learning module.

Tensors are CPU ``torch`` tensors in float64.  Reverse-mode gradients come
from ``torch.autograd``; this module adds the named-gradient contract the
rest of the package relies on (zero gradients for unused parameters, a
``NumericFault`` naming the operation when a value goes non-finite), the
``ParamSet`` that owns parameters together with their Adam moments, global
norm clipping and the GRU recurrence.

Usage::

    from choreo.substrate import ParamSet, backward, adam_step, clip_grad_norm

    params = ParamSet(net, lr=3e-4)
    loss   = net(x).square().mean()
    grads  = clip_grad_norm(backward(loss, params.named()), max_norm=100.0)
    adam_step(params, grads)
"""

import logging
import math
from typing import Dict, Mapping, Optional, Tuple

import torch
from torch import nn

from choreo.errors import CheckpointError, ContractViolation, NumericFault

logger = logging.getLogger(__name__)

DTYPE = torch.float64

# Adam constants, shared by every ParamSet
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS   = 1e-8


def make_generator(seed: int) -> torch.Generator:
    """Return a CPU generator seeded with ``seed``; the only RNG source in choreo."""
    gen = torch.Generator(device='cpu')
    gen.manual_seed(int(seed))
    return gen


def check_finite(tensor: torch.Tensor, op: str) -> torch.Tensor:
    """Raise NumericFault(op) if ``tensor`` holds NaN or infinity; returns tensor."""
    if not bool(torch.isfinite(tensor).all()):
        raise NumericFault(op, f"shape={tuple(tensor.shape)}")
    return tensor


def _op_name(output: torch.Tensor) -> str:
    fn = output.grad_fn
    return fn.name() if fn is not None else 'forward'


# ---------------------------------------------------------------------------
# Reverse-mode differentiation
# ---------------------------------------------------------------------------

def backward(
    output: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    retain_graph: bool = False,
) -> Dict[str, torch.Tensor]:
    """
    Exact reverse-mode gradients of a scalar ``output`` w.r.t. named tensors.

    Parameters that do not contribute to ``output`` receive zero gradients.

    A non-finite ``output`` is reported under the name of its last autograd
    node, which need not be the operation that first went non-finite; the
    primitives that can overflow (GRU step, logits heads, rewards, returns)
    call ``check_finite`` on their own outputs and fault under their own
    names first.  A non-finite gradient is reported as ``backward:<param>``.

    Raises:
        ContractViolation: ``output`` is not a scalar.
        NumericFault:      ``output`` or a gradient is non-finite.
    """
    if output.numel() != 1:
        raise ContractViolation(
            f"backward() needs a scalar output, got shape {tuple(output.shape)}"
        )
    check_finite(output.detach(), _op_name(output))

    names   = list(params.keys())
    tensors = [params[n] for n in names]
    if not output.requires_grad:
        return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}

    raw = torch.autograd.grad(
        output.reshape(()), tensors,
        allow_unused=True, retain_graph=retain_graph,
    )
    grads = {}
    for name, tensor, grad in zip(names, tensors, raw):
        if grad is None:
            grad = torch.zeros_like(tensor)
        check_finite(grad, f"backward:{name}")
        grads[name] = grad
    return grads


# ---------------------------------------------------------------------------
# ParamSet + Adam
# ---------------------------------------------------------------------------

class ParamSet:
    """
    Named parameters of one module plus their Adam state.

    The step counter advances by exactly one per ``adam_step`` call.
    ``snapshot()`` returns detached copies that are safe to share read-only.

    Args:
        module: Module whose ``named_parameters()`` form the set.
        lr:     Default learning rate for ``adam_step``.
    """

    def __init__(self, module: nn.Module, lr: float):
        self.module = module
        self.lr     = float(lr)
        self.step   = 0
        self._optimizer = torch.optim.Adam(
            module.parameters(), lr=self.lr,
            betas=ADAM_BETAS, eps=ADAM_EPS, foreach=False,
        )

    def named(self) -> Dict[str, torch.Tensor]:
        return dict(self.module.named_parameters())

    def moments(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        """First and second Adam moments of parameter ``name`` (zeros before any step)."""
        param = self.named()[name]
        state = self._optimizer.state.get(param, {})
        if 'exp_avg' not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state['exp_avg'], state['exp_avg_sq']

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.module.named_parameters()}

    def state_tensors(self, prefix: str = '') -> Dict[str, torch.Tensor]:
        """Flat name → tensor map of parameters, moments and counters for checkpoints."""
        out = {f'{prefix}step': torch.tensor([float(self.step)], dtype=DTYPE)}
        for name, param in self.module.named_parameters():
            m, v = self.moments(name)
            state = self._optimizer.state.get(param, {})
            t = float(state['step']) if 'step' in state else 0.0
            out[f'{prefix}param/{name}']  = param.detach().clone()
            out[f'{prefix}adam_m/{name}'] = m.detach().clone()
            out[f'{prefix}adam_v/{name}'] = v.detach().clone()
            out[f'{prefix}adam_t/{name}'] = torch.tensor([t], dtype=DTYPE)
        return out

    def load_state_tensors(self, tensors: Mapping[str, torch.Tensor], prefix: str = '') -> None:
        """Inverse of ``state_tensors``; shapes must match the live module."""
        with torch.no_grad():
            for name, param in self.module.named_parameters():
                key = f'{prefix}param/{name}'
                if key not in tensors:
                    raise CheckpointError(key, "missing")
                value = tensors[key]
                if tuple(value.shape) != tuple(param.shape):
                    raise CheckpointError(
                        key, f"shape {tuple(value.shape)} != {tuple(param.shape)}"
                    )
                param.copy_(value)
                t = float(tensors[f'{prefix}adam_t/{name}'].reshape(-1)[0])
                if t > 0:
                    self._optimizer.state[param] = {
                        'step':       torch.tensor(t),
                        'exp_avg':    tensors[f'{prefix}adam_m/{name}'].clone().to(DTYPE),
                        'exp_avg_sq': tensors[f'{prefix}adam_v/{name}'].clone().to(DTYPE),
                    }
                else:
                    self._optimizer.state.pop(param, None)
        self.step = int(tensors[f'{prefix}step'].reshape(-1)[0])


def adam_step(
    params: ParamSet,
    grads: Mapping[str, torch.Tensor],
    lr: Optional[float] = None,
) -> ParamSet:
    """
    One bias-corrected Adam update of ``params`` using ``grads``.

    Raises:
        ContractViolation: a gradient is missing or its shape differs.
    """
    named = params.named()
    if set(grads.keys()) != set(named.keys()):
        missing = sorted(set(named) ^ set(grads))
        raise ContractViolation(f"adam_step gradient names do not match params: {missing}")
    for name, param in named.items():
        grad = grads[name]
        if tuple(grad.shape) != tuple(param.shape):
            raise ContractViolation(
                f"adam_step shape mismatch for '{name}': "
                f"{tuple(grad.shape)} vs {tuple(param.shape)}"
            )
        param.grad = grad.detach().clone().to(param.dtype)

    step_lr = params.lr if lr is None else float(lr)
    for group in params._optimizer.param_groups:
        group['lr'] = step_lr
    params._optimizer.step()
    params._optimizer.zero_grad(set_to_none=True)
    params.step += 1
    return params


def clip_grad_norm(grads: Mapping[str, torch.Tensor], max_norm: float) -> Dict[str, torch.Tensor]:
    """
    Scale all gradients by ``max_norm / g`` when their global L2 norm ``g`` exceeds it.

    Returns a new map; directions are preserved.
    """
    if max_norm <= 0:
        raise ContractViolation(f"max_norm must be > 0, got {max_norm}")
    if not grads:
        return {}
    total = global_norm(grads)
    if total <= max_norm:
        return dict(grads)
    scale = max_norm / total
    logger.debug(f"clip_grad_norm: global norm {total:.4g} > {max_norm}, scaling by {scale:.4g}")
    return {name: g * scale for name, g in grads.items()}


def global_norm(grads: Mapping[str, torch.Tensor]) -> float:
    """L2 norm of all gradients taken together."""
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(
        torch.stack([torch.linalg.vector_norm(g.detach()) for g in grads.values()])
    ))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def gru_step(hidden: torch.Tensor, inputs: torch.Tensor, cell: nn.GRUCell) -> torch.Tensor:
    """
    Standard gated-recurrent-unit update ``h' = (1 - u) * n + u * h``.

    Raises:
        ContractViolation: sizes disagree with the cell parameters.
    """
    if hidden.shape[-1] != cell.hidden_size:
        raise ContractViolation(
            f"gru_step hidden size {hidden.shape[-1]} != {cell.hidden_size}"
        )
    if inputs.shape[-1] != cell.input_size:
        raise ContractViolation(
            f"gru_step input size {inputs.shape[-1]} != {cell.input_size}"
        )
    if hidden.shape[:-1] != inputs.shape[:-1]:
        raise ContractViolation(
            f"gru_step batch shapes differ: {tuple(hidden.shape)} vs {tuple(inputs.shape)}"
        )
    return check_finite(cell(inputs, hidden), 'gru_step')


def mlp(in_dim: int, out_dim: int, hidden: int, layers: int) -> nn.Sequential:
    """``layers`` tanh-activated hidden layers of width ``hidden`` and a linear head."""
    modules = []
    width = in_dim
    for _ in range(layers):
        modules += [nn.Linear(width, hidden, dtype=DTYPE), nn.Tanh()]
        width = hidden
    modules.append(nn.Linear(width, out_dim, dtype=DTYPE))
    return nn.Sequential(*modules)


def initialize(module: nn.Module, rng: torch.Generator) -> nn.Module:
    """
    Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.

    Applies to every ``nn.Linear`` and ``nn.GRUCell`` below ``module``.
    """
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                _uniform_(sub.weight, rng)
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.GRUCell):
                _uniform_(sub.weight_ih, rng)
                _uniform_(sub.weight_hh, rng)
                if sub.bias:
                    sub.bias_ih.zero_()
                    sub.bias_hh.zero_()
    return module


def _uniform_(weight: torch.Tensor, rng: torch.Generator) -> None:
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    weight.uniform_(-bound, bound, generator=rng)


def straight_through(hard: torch.Tensor, soft: torch.Tensor) -> torch.Tensor:
    """Value of ``hard`` with the gradient of ``soft``."""
    return hard + soft - soft.detach()


def sample_one_hot(probs: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """One-hot categorical samples over the last axis of ``probs``."""
    flat = probs.detach().reshape(-1, probs.shape[-1])
    idx = torch.multinomial(flat, 1, generator=rng).squeeze(-1)
    hard = nn.functional.one_hot(idx, probs.shape[-1]).to(probs.dtype)
    return hard.reshape(probs.shape)
