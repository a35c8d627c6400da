"""
Loss functions on top of the tensor primitives
"""
import numpy as np

from backend.tensor import Tensor, _node, primitive
from config.settings import IGNORE_ID
from utils.errors import DimensionError, TargetIndexError, UndefinedMeanError


@primitive('cross_entropy')
def cross_entropy(logits: Tensor, targets, ignore_id: int = IGNORE_ID) -> Tensor:
    """
    Mean token-level cross-entropy

    Args:
        logits: Tensor of shape [batch, seq, classes] or [batch, classes]
        targets: Integer ids of shape logits.shape[:-1]
        ignore_id: Target value excluded from the mean

    Returns:
        Scalar tensor
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    n_classes = logits.shape[-1]
    keep = targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise UndefinedMeanError("cross_entropy: every position is ignored, the mean is undefined")
    kept = targets[keep]
    if kept.min() < 0 or kept.max() >= n_classes:
        raise TargetIndexError(f"cross_entropy: target ids must lie in [0, {n_classes}), got {kept.min()}..{kept.max()}")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    safe_targets = np.where(keep, targets, 0)
    picked = np.take_along_axis(log_probs, safe_targets[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count

    def grads(g: np.ndarray):
        grad = np.exp(log_probs)
        np.put_along_axis(
            grad, safe_targets[..., None],
            np.take_along_axis(grad, safe_targets[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        grad *= (keep / count)[..., None]
        return (grad * g,)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), grads, 'cross_entropy')
