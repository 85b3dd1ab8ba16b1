"""Adam optimizer and the training loop with balanced-accuracy model selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..encoder import encode, init_encoder
from ..guidance import compute_alphas, image_loss, patch_labels, patch_loss, prepare_mask
from ..head import forward_features, init_head
from ..ndtensor import Tensor, no_grad, zero_grads
from .config import RunConfig
from .metrics import classification_metrics


class Adam:
    """Standard bias-corrected Adam; no weight decay."""

    def __init__(self, params: dict, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)


def class_weights_from(labels: np.ndarray) -> tuple:
    """Inverse class frequency, normalized so a balanced set gives (1, 1)."""
    labels = np.asarray(labels)
    n = labels.size
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return (1.0, 1.0)
    return (n / (2.0 * n_pos), n / (2.0 * n_neg))


@dataclass
class TrainResult:
    params: dict                # best parameters, name -> ndarray
    meta: dict                  # config + selection info for the checkpoint
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_balanced_accuracy: float = 0.0


def _batch_images(samples, indices) -> Tensor:
    stack = np.stack([samples[i].image for i in indices])[:, None, :, :]
    return Tensor(np.ascontiguousarray(stack, dtype=np.float32))


def _forward_batch(x: Tensor, enc_params, cfg: RunConfig):
    u = encode(x, enc_params, cfg.encoder)
    u = u.transpose(0, 2, 3, 1)
    return u


def predict_scores(samples, indices, enc_params, head_params, cfg: RunConfig,
                   batch_size: int = 64, collect_patches: bool = False):
    """Image scores (and optionally patch vectors) without building a tape."""
    scores = []
    patch_records = []
    with no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            u = _forward_batch(_batch_images(samples, chunk), enc_params, cfg)
            pred = forward_features(u, head_params, cfg.head)
            scores.extend(np.atleast_1d(pred.y_hat.data).tolist())
            if collect_patches:
                yt = np.atleast_2d(pred.y_tilde.data)
                wv = None if pred.w is None else np.atleast_2d(pred.w.data)
                for row in range(len(chunk)):
                    patch_records.append((yt[row], None if wv is None else wv[row], pred.grid))
    arr = np.asarray(scores, dtype=np.float64)
    return (arr, patch_records) if collect_patches else arr


def _prepare_patch_targets(samples, indices, cfg: RunConfig):
    """Filtered masks -> per-patch label vectors, fixed for the whole run."""
    targets = {}
    if not cfg.guidance.use_masks:
        return targets
    h, w = cfg.synth.height, cfg.synth.width
    sample0 = samples[indices[0]] if len(indices) else None
    if sample0 is not None:
        h, w = sample0.image.shape
    dims = cfg.encoder.feature_dims(h, w)
    for i in indices:
        s = samples[i]
        rng = np.random.default_rng([cfg.seed, 2, int(i)])
        prepared = prepare_mask(s.mask, s.label, cfg.guidance, rng)
        if prepared.mask is not None:
            targets[i] = patch_labels(prepared.mask, dims, cfg.head.kernel, cfg.head.stride)
    return targets


def train(cfg: RunConfig, samples, train_idx, val_idx, log_fn=None) -> TrainResult:
    """Train on the given split; keep the epoch with best validation balanced accuracy.

    Deterministic for a fixed (config, seed): initialization, shuffling and
    mask corruption all derive from cfg.seed.  Aborts on a non-finite loss.
    """
    enc_params = init_encoder(cfg.encoder, cfg.seed)
    c_u = cfg.encoder.out_channels
    head_params = init_head(c_u, cfg.head, cfg.seed + 1)
    params = {f"encoder.{k}": v for k, v in enc_params.items()}
    params.update({f"head.{k}": v for k, v in head_params.items()})
    adam = Adam(params, lr=cfg.optim.lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2)

    labels = np.asarray([samples[i].label for i in train_idx])
    weights = class_weights_from(labels) if cfg.class_weighting else (1.0, 1.0)
    patch_targets = _prepare_patch_targets(samples, train_idx, cfg)

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(params={}, meta={}, best_epoch=-1, best_val_balanced_accuracy=-1.0)

    for epoch in range(cfg.max_epochs):
        order = np.array(train_idx, dtype=np.int64)
        shuffle_rng.shuffle(order)
        epoch_stats = {"total": [], "l_image": [], "l_patch": [], "alpha_image": [], "alpha_patch": []}
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            n = len(chunk)
            y_vec = np.asarray([samples[i].label for i in chunk], dtype=np.float32)
            u = _forward_batch(_batch_images(samples, chunk), enc_params, cfg)
            pred = forward_features(u, head_params, cfg.head)

            l_img_vec = image_loss(pred.y_hat, y_vec, weights)
            img_vals = np.atleast_1d(l_img_vec.data).astype(np.float64)

            masked_pos = [j for j, i in enumerate(chunk) if int(i) in patch_targets]
            alpha_img = np.ones(n, dtype=np.float64)
            l_patch_vec = None
            alpha_patch = None
            if masked_pos:
                target_mat = np.stack([patch_targets[int(chunk[j])] for j in masked_pos])
                yt_sub = pred.y_tilde.take(np.asarray(masked_pos), axis=0)
                l_patch_vec = patch_loss(yt_sub, target_mat)
                patch_vals = np.atleast_1d(l_patch_vec.data).astype(np.float64)
                alpha_patch = np.ones(len(masked_pos), dtype=np.float64)
                for m, j in enumerate(masked_pos):
                    a_img, a_patch = compute_alphas([img_vals[j], patch_vals[m]])
                    alpha_img[j] = a_img
                    alpha_patch[m] = a_patch

            total = (l_img_vec * Tensor(alpha_img.astype(np.float32))).sum()
            if l_patch_vec is not None:
                total = total + (l_patch_vec * Tensor(alpha_patch.astype(np.float32))).sum()
            total = total * (1.0 / n)

            if not np.isfinite(total.data):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")

            adam.zero_grad()
            total.backward()
            adam.step()

            epoch_stats["total"].append(float(total.data))
            epoch_stats["l_image"].append(float(img_vals.mean()))
            epoch_stats["alpha_image"].append(float(alpha_img.mean()))
            if masked_pos:
                epoch_stats["l_patch"].append(float(patch_vals.mean()))
                epoch_stats["alpha_patch"].append(float(alpha_patch.mean()))

        val_scores = predict_scores(samples, val_idx, enc_params, cfg=cfg, head_params=head_params)
        val_labels = np.asarray([samples[i].label for i in val_idx])
        val_bal = classification_metrics(val_scores, val_labels).balanced_accuracy

        entry = {
            "event": "epoch",
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_stats["total"])) if epoch_stats["total"] else 0.0,
            "l_image": float(np.mean(epoch_stats["l_image"])) if epoch_stats["l_image"] else 0.0,
            "l_patch": float(np.mean(epoch_stats["l_patch"])) if epoch_stats["l_patch"] else None,
            "alpha_image": float(np.mean(epoch_stats["alpha_image"])) if epoch_stats["alpha_image"] else 1.0,
            "alpha_patch": float(np.mean(epoch_stats["alpha_patch"])) if epoch_stats["alpha_patch"] else None,
            "val_balanced_accuracy": val_bal,
        }
        result.log.append(entry)
        if log_fn:
            log_fn(entry)

        if val_bal > result.best_val_balanced_accuracy:
            result.best_val_balanced_accuracy = val_bal
            result.best_epoch = epoch
            result.params = {k: p.data.copy() for k, p in params.items()}

    if not result.params:  # max_epochs == 0: keep the initialization
        result.params = {k: p.data.copy() for k, p in params.items()}
    result.meta = {
        "seed": cfg.seed,
        "class_weights": list(weights),
        "best_epoch": result.best_epoch,
        "best_val_balanced_accuracy": result.best_val_balanced_accuracy,
        "encoder": {
            "stage_channels": list(cfg.encoder.stage_channels),
            "blocks_per_stage": cfg.encoder.blocks_per_stage,
            "stage_strides": list(cfg.encoder.stage_strides),
            "input_channels": cfg.encoder.input_channels,
            "feature_upsample_factor": cfg.encoder.feature_upsample_factor,
        },
        "head": {
            "kernel": list(cfg.head.kernel),
            "stride": list(cfg.head.stride),
            "k_min": cfg.head.k_min,
            "hidden": cfg.head.hidden,
            "aggregator": cfg.head.aggregator,
        },
    }
    return result


def params_to_tensors(flat: dict) -> tuple:
    """Split a checkpoint's flat name->array dict into encoder/head tensor dicts."""
    enc, head = {}, {}
    for name, arr in flat.items():
        if name.startswith("encoder."):
            enc[name[len("encoder."):]] = Tensor(np.asarray(arr))
        elif name.startswith("head."):
            head[name[len("head."):]] = Tensor(np.asarray(arr))
    return enc, head
