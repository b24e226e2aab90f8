"""Patch-transformer diagram encoder and its two pretraining tasks.

Masked image modeling reconstructs hidden patches (loss on hidden patches
only); weakly supervised multi-label classification predicts which letters
the problem text mentions from the character-bearing patches. The two losses
are combined as ``L_mim + 0.1 * L_char``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .corpus import N_CLASSES, Problem, class_weights
from .detect import boxes_to_patch_mask, detect_characters
from .errors import ConfigurationError, InvalidInputError, ShapeError, TrainingError
from .layers import AttentionReduce, PreNormBlock
from .numerics import Linear, ParamSet, Tensor

BCE_CLIP = 1e-7


def patchify(image: np.ndarray, grid: int = 8, patch: int = 28) -> np.ndarray:
    """Split an image into grid×grid patches (raster order), scaled to [0, 1]."""
    image = np.asarray(image)
    size = grid * patch
    if image.shape != (size, size):
        raise ShapeError(f"expected a {size}×{size} image, got {image.shape}")
    blocks = image.reshape(grid, patch, grid, patch).transpose(0, 2, 1, 3)
    return blocks.reshape(grid * grid, patch * patch).astype(np.float64) / 255.0


def reassemble(patches: np.ndarray, grid: int = 8, patch: int = 28) -> np.ndarray:
    """Inverse of :func:`patchify`, returning 0–255 pixel values."""
    blocks = np.asarray(patches).reshape(grid, grid, patch, patch).transpose(0, 2, 1, 3)
    return blocks.reshape(grid * patch, grid * patch) * 255.0


def n_masked(n_patches: int, ratio: float = 0.2) -> int:
    return int(round(ratio * n_patches))


def sample_patch_mask(seed: int, n_patches: int = 64, ratio: float = 0.2) -> np.ndarray:
    """Exactly round(ratio * n) patches set to 1, chosen uniformly at random."""
    rng = np.random.default_rng(seed)
    mask = np.zeros(n_patches, dtype=np.int8)
    mask[rng.permutation(n_patches)[:n_masked(n_patches, ratio)]] = 1
    return mask


def mim_loss(pred, target, mask) -> Tensor:
    """Mean over masked patches of the per-patch pixel MSE."""
    pred = nx.as_tensor(pred)
    target = np.asarray(target)
    mask = np.asarray(mask)
    if pred.shape != target.shape or pred.shape[0] != mask.shape[0]:
        raise ShapeError(f"mim_loss shapes disagree: {pred.shape}, {target.shape}, {mask.shape}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InvalidInputError("mim_loss needs at least one masked patch")
    diff = nx.sub(pred[idx], target[idx])
    per_patch = nx.mean(nx.square(diff), axis=1)
    return nx.mean(per_patch)


def weighted_bce(x, y, w) -> Tensor:
    """(1/N) sum_n -w_n [y_n log x_n + (1 - y_n) log(1 - x_n)], x clipped away from 0 and 1."""
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    x = nx.clip(nx.as_tensor(x), BCE_CLIP, 1.0 - BCE_CLIP)
    y = y.astype(np.float64)
    w = np.asarray(w, dtype=np.float64)
    ll = nx.add(nx.mul(nx.log(x), y), nx.mul(nx.log(nx.sub(1.0, x)), 1.0 - y))
    return nx.mul(nx.mean(nx.mul(ll, w)), -1.0)


def aux_loss(l_mim, l_char, weight: float = 0.1):
    return nx.add(l_mim, nx.mul(l_char, weight))


def detection_patch_mask(image: np.ndarray, cfg: RunConfig, cutouts=None) -> np.ndarray:
    boxes = detect_characters(
        image, threshold=cfg.binarize_threshold, max_aspect=cfg.max_aspect,
        area_range=(cfg.area_min, cfg.area_max), iou_threshold=cfg.iou_threshold,
        cutouts=cutouts,
    )
    return boxes_to_patch_mask(boxes, cfg.grid, cfg.patch)


@dataclass
class PretrainSample:
    """Precomputed inputs for one diagram: patches, detection mask and weak labels."""

    patches: np.ndarray
    det_mask: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_problem(cls, problem: Problem, cfg: RunConfig, det_mask=None) -> "PretrainSample":
        patches = patchify(problem.diagram, cfg.grid, cfg.patch)
        if det_mask is None:
            det_mask = detection_patch_mask(problem.diagram, cfg)
        return cls(patches, np.asarray(det_mask), problem.labels)


class DiagramEncoder:
    """Linear patch embedding + learned positions + pre-norm transformer blocks.

    Parameters live under ``diagram.*``. Pass ``initialize=False`` to allocate
    placeholders that must be filled from a checkpoint before use.
    """

    def __init__(self, params: ParamSet, cfg: RunConfig, initialize: bool = True):
        self.cfg = cfg
        self.params = params
        d, n, pdim = cfg.diag_dim, cfg.n_patches, cfg.patch * cfg.patch
        init = "uniform" if initialize else "empty"
        self.embed = Linear(params, "diagram.patch_embed", pdim, d)
        self.pos = params.add("diagram.pos", (n, d), init=init, fan_in=d)
        self.mask_token = params.add("diagram.mask_token", (d,), init=init, fan_in=d)
        self.blocks = [PreNormBlock(params, f"diagram.block{i}", d, cfg.diag_ff)
                       for i in range(cfg.diag_blocks)]
        self.recon = Linear(params, "diagram.recon", d, pdim)
        self.reduce = AttentionReduce(params, "diagram.reduce", d)
        self.classifier = Linear(params, "diagram.cls", d, N_CLASSES)
        if not initialize:
            for name, t in params.items():
                if name.startswith("diagram."):
                    t.data = np.full_like(t.data, np.nan)
        self.use_positions = True

    def check_loaded(self) -> None:
        for name, t in self.params.items():
            if name.startswith("diagram.") and np.isnan(t.data).any():
                raise ConfigurationError(f"diagram encoder parameter {name} was never loaded")

    def encode(self, patches, patch_mask=None) -> Tensor:
        """64×d features; masked patches are replaced by the learned mask token."""
        self.check_loaded()
        patches = np.asarray(patches)
        if patches.shape != (self.cfg.n_patches, self.cfg.patch ** 2):
            raise ShapeError(f"expected {self.cfg.n_patches} patches, got {patches.shape}")
        x = self.embed(patches)
        if patch_mask is not None:
            m = np.asarray(patch_mask, dtype=bool)[:, None]
            x = nx.where(m, nx.reshape(self.mask_token, (1, -1)), x)
        if self.use_positions:
            x = nx.add(x, self.pos)
        for block in self.blocks:
            x = block(x)
        return x

    def attention_reduce(self, masked_features) -> Tensor:
        return self.reduce(masked_features)

    def char_logits(self, f_star) -> Tensor:
        """Per-class presence scores in (0, 1)."""
        return nx.sigmoid(self.classifier(f_star))

    def mim_branch(self, sample: PretrainSample, mask_seed: int) -> Tensor:
        mask = sample_patch_mask(mask_seed, self.cfg.n_patches, self.cfg.mask_ratio)
        feats = self.encode(sample.patches, patch_mask=mask)
        return mim_loss(self.recon(feats), sample.patches, mask)

    def mlc_branch(self, sample: PretrainSample, weights) -> Tensor:
        feats = self.encode(sample.patches)
        keep = np.asarray(sample.det_mask, dtype=np.float64)[:, None]
        f_star = self.attention_reduce(nx.mul(feats, keep))
        return weighted_bce(self.char_logits(f_star), sample.labels, weights)

    def pretrain_loss(self, sample: PretrainSample, mask_seed: int, weights,
                      tasks: str | None = None):
        """Returns (L_aux, L_mim, L_char) for the configured task mix."""
        tasks = tasks or self.cfg.aux_tasks
        zero = Tensor(0.0)
        l_mim = self.mim_branch(sample, mask_seed) if "mim" in tasks else zero
        l_char = self.mlc_branch(sample, weights) if "mlc" in tasks else zero
        if tasks == "mlc":
            return l_char, l_mim, l_char
        return aux_loss(l_mim, l_char, self.cfg.char_weight), l_mim, l_char

    def pretrain_step(self, sample: PretrainSample, mask_seed: int, weights):
        """Forward both branches, backward, and return (L_aux, gradients by name)."""
        self.params.zero_grad()
        total, _, _ = self.pretrain_loss(sample, mask_seed, weights)
        nx.backward(total)
        grads = {n: t.grad.copy() for n, t in self.params.items()
                 if n.startswith("diagram.") and t.grad is not None}
        return float(total.data), grads


def stream_batch(step: int, n_items: int, batch_size: int, seed: int) -> list[int]:
    """Indices for a given step of an endless shuffled stream over ``n_items``.

    Epoch ``e`` uses the permutation drawn from ``(seed, e)``, so the batch at any
    step can be recomputed without replaying earlier steps (used on resume).
    """
    bs = min(batch_size, n_items)
    out, perms = [], {}
    for pos in range(step * bs, step * bs + bs):
        epoch, k = divmod(pos, n_items)
        if epoch not in perms:
            perms[epoch] = np.random.default_rng([seed, epoch]).permutation(n_items)
        out.append(int(perms[epoch][k]))
    return out


def pretrain(encoder: DiagramEncoder, samples: list[PretrainSample], optimizer: nx.Adam,
             steps: int, weights=None, start_step: int = 0, seed: int = 0,
             callback=None) -> list[tuple]:
    """Run ``steps`` optimizer updates of the auxiliary loss from ``start_step``.

    Each step averages the loss over a batch. Returns rows of
    ``(step, L_mim, L_char, L_aux)`` where the losses are batch means measured
    before the update.
    """
    if not samples:
        raise InvalidInputError("pretraining needs at least one diagram")
    if weights is None:
        weights = class_weights([s.labels for s in samples])
    cfg = encoder.cfg
    history = []
    for step in range(start_step, start_step + steps):
        idx = stream_batch(step, len(samples), cfg.batch_size, seed)
        encoder.params.zero_grad()
        totals, mims, chars = [], [], []
        for i in idx:
            total, l_mim, l_char = encoder.pretrain_loss(samples[i], [seed, step, i], weights)
            totals.append(total)
            mims.append(float(l_mim.data))
            chars.append(float(l_char.data))
        batch_loss = nx.mul(nx.sum(nx.stack(totals)), 1.0 / len(idx))
        value = float(batch_loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite pretraining loss at step {step}")
        nx.backward(batch_loss)
        optimizer.step()
        row = (step, float(np.mean(mims)), float(np.mean(chars)), value)
        history.append(row)
        if callback is not None:
            callback(row)
    return history


def fixed_mask_loss(encoder: DiagramEncoder, samples: list[PretrainSample], weights,
                    seed: int = 12345) -> float:
    """Mean auxiliary loss over ``samples`` with a fixed set of patch masks."""
    with nx.no_grad():
        vals = [float(encoder.pretrain_loss(s, [seed, i], weights)[0].data)
                for i, s in enumerate(samples)]
    return float(np.mean(vals))
