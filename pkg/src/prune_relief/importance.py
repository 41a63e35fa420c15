"""Importance scores and mask selection.

Each target unit j of a prunable layer gets one score per contributor: every
input connection (dense) or input-channel kernel (conv), plus the bias as the
last entry. Scores are the contributor's mean absolute signal on a pruning
set, normalized by the target's total signal S_j, so a live target's row sums
to one. Selection keeps the smallest group of top contributors whose combined
score mass reaches the threshold ``alpha`` and masks the rest.

Dense layer, contributor i of target j:

    numerator_ij = mean_n |w_ij * x_ni| = |w_ij| * mean_n |x_ni|
    bias numerator = |b_j|
    S_j = sum_i numerator_ij + |b_j|,   s_ij = numerator_ij / S_j

Conv layer, input channel i of filter j (maps of size h x w after the layer's
own stride and padding):

    numerator_ij = mean_n || |K_ij| (*) |x_ni| ||_F
    bias numerator = |b_j| * sqrt(h * w)
    S_j = sum_i numerator_ij + bias numerator,   s_ij = numerator_ij / S_j

where (*) is the layer's convolution applied to the absolute input channel
with the absolute kernel. Score accumulation runs in float64 regardless of
the network dtype.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyPruningSetError
from .layers import ConvLayer, DenseLayer
from .network import Network
from .tensor_ops import conv_output_hw, im2col


@dataclass
class ImportanceScores:
    """Normalized scores per target: shape (targets, contributors + 1).

    The bias is the last column. ``totals[j]`` is S_j in signal units; rows
    of dead targets (S_j == 0) are all zero rather than NaN.
    """

    scores: np.ndarray
    totals: np.ndarray

    @property
    def num_targets(self) -> int:
        return self.scores.shape[0]

    @property
    def num_contributors(self) -> int:
        return self.scores.shape[1]

    def dead_targets(self) -> np.ndarray:
        return self.totals == 0


@dataclass
class PruneDecision:
    """Outcome of mask selection for a single target unit."""

    target: int
    kept: np.ndarray
    pruned: np.ndarray
    prefix_len: int
    threshold: float
    achieved_mass: float


@dataclass
class LayerDecisions:
    layer_index: int
    kind: str
    alpha: float
    scores: ImportanceScores
    targets: list = field(default_factory=list)

    def kept_score_values(self) -> np.ndarray:
        vals = [self.scores.scores[d.target][d.kept] for d in self.targets]
        if not vals:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate(vals)


def _as_input_batch(inputs) -> np.ndarray:
    if isinstance(inputs, (list, tuple)):
        if len(inputs) == 0:
            raise EmptyPruningSetError("importance scoring needs at least one sample")
        inputs = np.stack(inputs)
    x = np.asarray(inputs)
    if x.shape[0] == 0:
        raise EmptyPruningSetError("importance scoring needs at least one sample")
    return x


def _normalize(numer: np.ndarray, bias_numer: np.ndarray) -> ImportanceScores:
    totals = numer.sum(axis=1) + bias_numer
    scores = np.concatenate([numer, bias_numer[:, None]], axis=1)
    live = totals > 0
    scores[live] /= totals[live, None]
    scores[~live] = 0.0
    return ImportanceScores(scores=scores, totals=totals)


def fc_importance(layer: DenseLayer, inputs) -> ImportanceScores:
    """Score a dense layer's connections on a batch of its input vectors."""
    x = _as_input_batch(inputs)
    if x.ndim != 2 or x.shape[1] != layer.fan_in:
        raise DimensionError(
            f"dense layer with fan-in {layer.fan_in} got scoring batch of "
            f"shape {x.shape}"
        )
    mean_abs_x = np.mean(np.abs(x), axis=0, dtype=np.float64)
    numer = np.abs(layer.weights).astype(np.float64) * mean_abs_x[None, :]
    bias_numer = np.abs(layer.bias).astype(np.float64)
    return _normalize(numer, bias_numer)


def conv_importance(layer: ConvLayer, inputs) -> ImportanceScores:
    """Score a conv layer's per-channel kernels on a batch of input maps."""
    x = _as_input_batch(inputs)
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"conv layer with {layer.in_channels} input channels got scoring "
            f"batch of shape {x.shape}"
        )
    n = x.shape[0]
    r = layer.kernel_size
    co, ci = layer.out_channels, layer.in_channels
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], r, layer.stride, layer.padding)
    # the whole rectified convolution runs in float64: norms of an f32
    # convolution would carry ~1e-8 relative noise into scores that
    # equality-tight bounds are checked against
    khat = np.abs(layer.kernels).astype(np.float64)
    xabs = np.abs(x).astype(np.float64)
    numer = np.empty((co, ci), dtype=np.float64)
    for i in range(ci):
        cols = im2col(xabs[:, i : i + 1], r, layer.stride, layer.padding)
        maps = np.matmul(khat[:, i].reshape(co, -1), cols)  # (N, Co, Ho*Wo)
        norms = np.sqrt(np.sum(maps**2, axis=2))
        numer[:, i] = norms.mean(axis=0)
    bias_numer = np.abs(layer.bias).astype(np.float64) * np.sqrt(float(ho * wo))
    return _normalize(numer, bias_numer)


def select_kept(scores, alpha: float) -> PruneDecision:
    """Choose which contributors of one target survive at threshold ``alpha``.

    Contributors are ranked by descending score (ties broken by ascending
    index) and the shortest prefix whose mass reaches ``alpha`` sets the score
    threshold; everything scoring strictly below it is pruned, so ties at the
    threshold are kept. ``alpha`` is capped at the total available mass, which
    makes alpha = 1.0 prune exactly the zero-score contributors. A dead target
    (all scores zero) prunes everything.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DimensionError("select_kept needs at least one score")
    if np.any(s < 0):
        raise ValueError("scores must be non-negative")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    m = s.size
    order = np.lexsort((np.arange(m), -s))
    cum = np.cumsum(s[order])
    total = float(cum[-1])
    if total <= 0:
        return PruneDecision(target=-1, kept=np.zeros(0, dtype=np.int64),
                             pruned=np.arange(m, dtype=np.int64), prefix_len=0,
                             threshold=0.0, achieved_mass=0.0)
    target_mass = min(alpha, total)
    p0 = int(np.searchsorted(cum, target_mass, side="left")) + 1
    threshold = float(s[order[p0 - 1]])
    keep = s >= threshold
    return PruneDecision(
        target=-1,
        kept=np.flatnonzero(keep).astype(np.int64),
        pruned=np.flatnonzero(~keep).astype(np.int64),
        prefix_len=p0,
        threshold=threshold,
        achieved_mass=float(s[keep].sum()),
    )


def score_layer(layer, inputs) -> ImportanceScores:
    if isinstance(layer, DenseLayer):
        return fc_importance(layer, inputs)
    if isinstance(layer, ConvLayer):
        return conv_importance(layer, inputs)
    raise DimensionError(f"layer kind {layer.kind!r} has no importance scores")


def _mask_layer(layer, scores: ImportanceScores, alpha: float,
                layer_index: int) -> LayerDecisions:
    dec = LayerDecisions(layer_index=layer_index, kind=layer.kind, alpha=alpha,
                         scores=scores)
    for j in range(scores.num_targets):
        d = select_kept(scores.scores[j], alpha)
        d.target = j
        layer.apply_mask(j, d.pruned)
        dec.targets.append(d)
    return dec


def prune_pass(net: Network, pruning_set, alpha_conv: float,
               alpha_fc: float) -> tuple[Network, list[LayerDecisions]]:
    """One full pruning pass over every prunable layer, in place.

    The pruning set is pushed through the pass-start network once; every
    layer is then scored from that single captured trace, so later layers see
    activations unaffected by the masks applied earlier in the same pass.
    """
    batch = pruning_set
    if isinstance(batch, (list, tuple)) and len(batch) == 0:
        raise EmptyPruningSetError("prune pass needs at least one sample")
    _, trace = net.forward(batch, capture=True)
    decisions = []
    for li in net.prunable_indices():
        layer = net.layers[li]
        scores = score_layer(layer, trace.inputs_to(li))
        alpha = alpha_fc if layer.kind == "dense" else alpha_conv
        decisions.append(_mask_layer(layer, scores, alpha, li))
    return net, decisions


def prune_single_layer(net: Network, layer_index: int, alpha: float,
                       pruning_set) -> tuple[Network, LayerDecisions]:
    """Score and mask one prunable layer on a copy of the network.

    Returns the pruned copy and the decisions; the original is untouched.
    Used by bound reporting, which compares the copy against the original.
    """
    if layer_index not in net.prunable_indices():
        raise IndexError(f"layer {layer_index} is not prunable")
    _, trace = net.forward(pruning_set, capture=True)
    pruned = net.clone()
    layer = pruned.layers[layer_index]
    scores = score_layer(layer, trace.inputs_to(layer_index))
    return pruned, _mask_layer(layer, scores, alpha, layer_index)
