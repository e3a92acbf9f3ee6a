"""Adam with bias correction, gradient clipping, and the lr schedule:
linear warmup from zero, then log-linear decay to the final rate."""

import numpy as np


def lr_schedule(step, total, warmup, lr_start, lr_end):
    """Learning rate at 1-based step in [0, total].

    Ramps linearly 0 -> lr_start over warmup steps, then anneals
    log-linearly so lr(warmup) = lr_start and lr(total) = lr_end.
    """
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if warmup and step < warmup:
        return lr_start * step / warmup
    if total == warmup:
        return lr_start
    progress = (step - warmup) / (total - warmup)
    return float(np.exp(np.log(lr_start) * (1 - progress) + np.log(lr_end) * progress))


def global_grad_norm(named_params):
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return np.sqrt(total)


def clip_gradients(named_params, max_norm):
    """Scale all gradients so the global norm stays within max_norm."""
    norm = global_grad_norm(named_params)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Standard bias-corrected Adam over named parameter tensors."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.value) for name, p in self.named_params}

    def step(self, lr):
        """One update; missing gradients count as zero (moments still decay)."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else 0.0
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()

    def state_blocks(self, prefix="adam"):
        """Serializable blocks: moments and the step counter."""
        blocks = {f"{prefix}.step": np.array([float(self.step_count)])}
        for name, _ in self.named_params:
            blocks[f"{prefix}.m.{name}"] = self.m[name]
            blocks[f"{prefix}.v.{name}"] = self.v[name]
        return blocks

    def load_state_blocks(self, blocks, prefix="adam"):
        self.step_count = int(blocks[f"{prefix}.step"][0])
        for name, _ in self.named_params:
            self.m[name] = blocks[f"{prefix}.m.{name}"].copy()
            self.v[name] = blocks[f"{prefix}.v.{name}"].copy()
