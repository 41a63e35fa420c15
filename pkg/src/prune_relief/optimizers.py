"""SGD with momentum and Adam, both mask-aware.

Weight decay is classic L2 added to the gradient before any moment update
(not decoupled). Masks are multiplied into the effective gradient, the moment
state, and the parameter itself on every step, so a masked entry and its
moments stay exactly 0.0 bit-for-bit no matter how many steps run.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LrSpan:
    """Learning rate over an inclusive 1-based epoch range."""

    first_epoch: int
    last_epoch: int
    lr: float


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    epochs: int = 1
    batch_size: int = 128
    lr_schedule: list = field(default_factory=lambda: [LrSpan(1, 1, 1e-3)])
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> "OptimizerConfig":
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be 'sgd' or 'adam', got "
                              f"{self.kind!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.lr_schedule:
            raise ConfigError("lr_schedule must not be empty")
        expect = 1
        for span in self.lr_schedule:
            if span.first_epoch != expect:
                raise ConfigError(
                    f"lr_schedule spans must be contiguous from epoch 1: span "
                    f"starting at {span.first_epoch} should start at {expect}")
            if span.last_epoch < span.first_epoch:
                raise ConfigError(f"lr_schedule span [{span.first_epoch}, "
                                  f"{span.last_epoch}] is empty")
            if span.lr <= 0:
                raise ConfigError(f"learning rate must be > 0, got {span.lr}")
            expect = span.last_epoch + 1
        if expect != self.epochs + 1:
            raise ConfigError(f"lr_schedule covers epochs 1..{expect - 1} but "
                              f"the run has {self.epochs} epochs")
        return self

    def lr_at(self, epoch: int) -> float:
        for span in self.lr_schedule:
            if span.first_epoch <= epoch <= span.last_epoch:
                return span.lr
        raise ConfigError(f"epoch {epoch} outside the lr schedule")


def sgd_step(param, grad, velocity, lr, weight_decay=0.0, momentum=0.0, mask=None):
    """One SGD/momentum update, in place on ``param`` and ``velocity``."""
    g = grad + weight_decay * param
    if mask is not None:
        g = g * mask
    velocity *= momentum
    velocity += g
    param -= lr * velocity
    if mask is not None:
        param *= mask
        velocity *= mask
    return param, velocity


def adam_step(param, grad, m, v, step, lr, weight_decay=0.0,
              beta1=0.9, beta2=0.999, eps=1e-8, mask=None):
    """One Adam update (bias-corrected), in place on ``param``, ``m``, ``v``."""
    g = grad + weight_decay * param
    if mask is not None:
        g = g * mask
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * (g * g)
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    if mask is not None:
        update *= mask
    param -= update
    if mask is not None:
        param *= mask
    return param, m, v


class Optimizer:
    """Applies per-tensor step updates across all parameterized layers."""

    def __init__(self, net, cfg: OptimizerConfig):
        cfg.validate()
        self.cfg = cfg
        self.step_count = 0
        self.slots = []
        for layer in net.layers:
            slot = {}
            for name, p in layer.params().items():
                if cfg.kind == "sgd":
                    slot[name] = {"velocity": np.zeros_like(p)}
                else:
                    slot[name] = {"m": np.zeros_like(p), "v": np.zeros_like(p)}
            self.slots.append(slot)

    def apply(self, net, grads, lr: float) -> None:
        """grads: per-layer dict of gradient arrays aligned with params()."""
        self.step_count += 1
        cfg = self.cfg
        for layer, slot, g in zip(net.layers, self.slots, grads):
            if not g:
                continue
            masks = layer.param_masks()
            for name, p in layer.params().items():
                state = slot[name]
                if cfg.kind == "sgd":
                    sgd_step(p, g[name], state["velocity"], lr,
                             weight_decay=cfg.weight_decay,
                             momentum=cfg.momentum, mask=masks[name])
                else:
                    adam_step(p, g[name], state["m"], state["v"],
                              self.step_count, lr,
                              weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                              beta2=cfg.beta2, eps=cfg.eps, mask=masks[name])

    def state_summary(self) -> dict:
        return summarize(self.cfg, self.step_count)


def summarize(cfg: OptimizerConfig, step_count: int) -> dict:
    """JSON-ready record of the optimizer setup and how many steps it took."""
    summary = {"kind": cfg.kind, "step_count": step_count,
               "weight_decay": cfg.weight_decay,
               "batch_size": cfg.batch_size, "epochs": cfg.epochs,
               "lr_schedule": [[s.first_epoch, s.last_epoch, s.lr]
                               for s in cfg.lr_schedule]}
    if cfg.kind == "sgd":
        summary["momentum"] = cfg.momentum
    else:
        summary.update(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return summary
