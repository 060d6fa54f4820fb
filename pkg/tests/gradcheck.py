"""
Central finite-difference checks shared by the gradient tests.

Straight-through samples make a loss piecewise constant in the parameters
that produced the samples, so finite differences of the raw loss see no
slope where autograd reports one.  ``FrozenSamples`` replays the one-hot
samples of a first pass as ``hard + p(theta) - p_first``: the value is the
same, the function is smooth, and its derivative is the straight-through
gradient.
"""

import torch
from torch.nn import functional as F


class FrozenSamples:
    """Installs itself as ``wm.sample_stoch``; the first pass records, later passes replay."""

    def __init__(self, wm):
        self.wm = wm
        self.original = wm.sample_stoch
        self.samples = []
        self.cursor = None
        wm.sample_stoch = self

    def rewind(self):
        if self.samples:
            self.cursor = 0

    def __call__(self, logits, rng):
        # the generator is consumed exactly as in an unpatched pass
        out = self.original(logits, rng)
        lead = logits.shape[:-1]
        probs = F.softmax(logits.reshape(*lead, self.wm.groups, self.wm.classes), dim=-1)
        probs = probs.reshape(*lead, self.wm.stoch_dim)
        if self.cursor is None:
            self.samples.append((out.detach(), probs.detach()))
            return out
        hard, first = self.samples[self.cursor]
        self.cursor += 1
        return hard + probs - first


def assert_gradients_match(case, loss_fn, params, rel_tol=1e-3, eps=1e-5, entries=3, numeric_fn=None):
    """
    Compare ``backward(loss_fn(), params)`` with central differences on a
    spread of ``entries`` elements of every tensor.  ``loss_fn`` must
    recompute the loss from the current parameter values with fresh,
    identically seeded generators.  ``numeric_fn``, when given, is the
    function differenced instead of ``loss_fn``; it must share its value
    and slope at the current parameters.
    """
    from choreo.substrate.core import backward
    numeric_fn = numeric_fn or loss_fn
    grads = backward(loss_fn(), params)
    checked = 0
    with torch.no_grad():
        for name, tensor in params.items():
            flat = tensor.view(-1)
            stride = max(1, flat.numel() // entries)
            for i in range(0, flat.numel(), stride):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(numeric_fn())
                flat[i] = orig - eps
                down = float(numeric_fn())
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                analytic = float(grads[name].view(-1)[i])
                scale = max(abs(numeric), abs(analytic))
                case.assertLessEqual(
                    abs(numeric - analytic), rel_tol * scale + 1e-7,
                    f"{name}[{i}]: autograd {analytic:.8g} vs finite difference {numeric:.8g}",
                )
                checked += 1
    case.assertGreater(checked, 0)
    return grads
