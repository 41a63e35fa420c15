"""Parameter init, softmax cross-entropy backprop, and the training loop.

Initialization draws He-normal weights (std = sqrt(2 / fan_in), biases zero)
in layer order from a single seeded generator, so the same seed always
produces the same bytes and surviving weights can later be restored to their
original drawn values. Training shuffles with its own seeded generator and
raises on the first non-finite epoch loss.
"""

import numpy as np

from .errors import DimensionError, TrainingError
from .network import Network
from .optimizers import Optimizer, OptimizerConfig


def init_params(net: Network, seed) -> Network:
    """He-normal init of every prunable layer, in place; masks reset to one."""
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        if layer.kind == "dense":
            fan_in = layer.fan_in
            std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal(layer.weights.shape, dtype=np.float32)
            layer.weights[...] = w * np.float32(std)
            layer.bias[...] = 0
            layer.weight_mask[...] = 1
            layer.bias_mask[...] = 1
        elif layer.kind == "conv":
            fan_in = layer.in_channels * layer.kernel_size ** 2
            std = np.sqrt(2.0 / fan_in)
            k = rng.standard_normal(layer.kernels.shape, dtype=np.float32)
            layer.kernels[...] = k * np.float32(std)
            layer.bias[...] = 0
            layer.kernel_mask[...] = 1
            layer.bias_mask[...] = 1
    return net


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and its gradient with respect to the logits."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (N, classes), got {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match "
                             f"batch of {n}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    picked = p[np.arange(n), labels]
    loss = float(np.mean(-np.log(np.maximum(picked, np.finfo(p.dtype).tiny)),
                         dtype=np.float64))
    d = p.copy()
    d[np.arange(n), labels] -= 1
    d /= n
    return loss, d


def forward_backward(net: Network, x: np.ndarray, labels: np.ndarray):
    """One supervised step's worth of math: loss, per-layer grads, correct count."""
    a = x
    caches = []
    for layer in net.layers:
        a, cache = layer.forward(a, with_cache=True)
        caches.append(cache)
    loss, d = softmax_cross_entropy(a, labels)
    correct = int(np.sum(a.argmax(axis=1) == labels))
    grads = []
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        d, g = layer.backward(cache, d)
        grads.append(g)
    grads.reverse()
    return loss, grads, correct


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    """Top-1 accuracy in [0, 1]."""
    n = images.shape[0]
    correct = 0
    for start in range(0, n, batch_size):
        logits = net.forward(images[start:start + batch_size])
        correct += int(np.sum(logits.argmax(axis=1) == labels[start:start + batch_size]))
    return correct / n


def train(net: Network, images: np.ndarray, labels: np.ndarray,
          cfg: OptimizerConfig, seed, log=None) -> Network:
    """Minibatch-train the network in place and return it.

    ``seed`` feeds the shuffle generator only; parameter init is the caller's
    business. ``log``, if given, is called with a dict per epoch.
    """
    cfg.validate()
    n = images.shape[0]
    if n == 0:
        raise TrainingError("cannot train on an empty dataset")
    opt = Optimizer(net, cfg)
    rng = np.random.default_rng(seed)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads, ok = forward_backward(net, images[idx], labels[idx])
            opt.apply(net, grads, lr)
            loss_sum += loss * idx.size
            correct += ok
        epoch_loss = loss_sum / n
        if not np.isfinite(epoch_loss):
            raise TrainingError(
                f"training diverged at epoch {epoch}: loss {epoch_loss}")
        if log is not None:
            log({"epoch": epoch, "lr": lr, "loss": epoch_loss,
                 "train_accuracy": correct / n})
    return net
