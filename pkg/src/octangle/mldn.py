"""Multi-level deep network: three parallel sub-networks and an FC head.

Each sub-network stacks conv-BN-ReLU blocks with interleaved 2x2 max pools
and ends in a global average pool; the three feature vectors (global image,
local half-image, ACA patch, in that fixed order) are concatenated into one
fully connected softmax head.  Training is two-phase: each sub-network is
first fitted individually under a temporary private head, then the merged
head is fitted with the sub-networks frozen.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .nngine import (
    ConvBlock,
    GlobalAvgPool,
    GradCheckReport,
    Layer,
    Linear,
    MaxPool2,
    Sequential,
    SgdState,
    softmax,
    softmax_bce_loss,
    zero_grads,
)

DESK_BLOCKS = ((8, 3, True), (16, 3, True), (32, 3, True), (32, 3, True))
LEVEL_NAMES = ("global", "local", "aca")
DEFAULT_LR = 1e-4
DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH = 16

_MAGIC = b"OMLD"
_VERSION = 1


@dataclass(frozen=True)
class SubnetConfig:
    """(out_channels, kernel_size, pool_after) conv blocks plus input size."""

    blocks: tuple[tuple[int, int, bool], ...] = DESK_BLOCKS
    input_size: int = 224

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("subnet needs at least one block")
        size = self.input_size
        for ch, k, pool in self.blocks:
            if ch < 1 or k < 1 or k % 2 == 0:
                raise ValueError("block channels must be positive and kernels odd")
            if pool:
                if size % 2:
                    raise ValueError(f"cannot pool a {size}-px feature map; adjust input size")
                size //= 2
        if size < 1:
            raise ValueError("input size too small for the pooling stack")

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1][0]


@dataclass(frozen=True)
class MldnConfig:
    subnet_global: SubnetConfig
    subnet_local: SubnetConfig
    subnet_aca: SubnetConfig
    seed: int = 0

    def subnet(self, name: str) -> SubnetConfig:
        return {"global": self.subnet_global, "local": self.subnet_local, "aca": self.subnet_aca}[name]

    def to_dict(self) -> dict:
        return {
            f"subnet_{name}": {"blocks": [list(b) for b in self.subnet(name).blocks],
                               "input_size": self.subnet(name).input_size}
            for name in LEVEL_NAMES
        } | {"seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "MldnConfig":
        def sub(key):
            return SubnetConfig(
                blocks=tuple(tuple(b) for b in d[key]["blocks"]),
                input_size=int(d[key]["input_size"]),
            )

        return cls(
            subnet_global=sub("subnet_global"),
            subnet_local=sub("subnet_local"),
            subnet_aca=sub("subnet_aca"),
            seed=int(d["seed"]),
        )


def desk_config(input_size: int = 112, seed: int = 0) -> MldnConfig:
    sub = SubnetConfig(blocks=DESK_BLOCKS, input_size=input_size)
    return MldnConfig(subnet_global=sub, subnet_local=sub, subnet_aca=sub, seed=seed)


@dataclass(frozen=True)
class TrainBatch:
    """Stacked (n,1,s,s) level tensors with integer labels (1 = closure)."""

    level_global: np.ndarray
    level_local: np.ndarray
    level_aca: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = self.labels.shape[0]
        for arr in (self.level_global, self.level_local, self.level_aca):
            if arr.ndim != 4 or arr.shape[0] != n or arr.shape[1] != 1:
                raise ValueError("levels must be (n,1,h,w) tensors sharing n with labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def level(self, name: str) -> np.ndarray:
        return {"global": self.level_global, "local": self.level_local, "aca": self.level_aca}[name]

    @property
    def n(self) -> int:
        return self.labels.shape[0]


def _build_subnet(cfg: SubnetConfig, rng: np.random.Generator) -> Sequential:
    layers: list[Layer] = []
    in_ch = 1
    for ch, k, pool in cfg.blocks:
        layers.append(ConvBlock(in_ch, ch, k, rng=rng))
        if pool:
            layers.append(MaxPool2())
        in_ch = ch
    layers.append(GlobalAvgPool())
    return Sequential(layers)


class MldnModel:
    def __init__(self, cfg: MldnConfig):
        rng = np.random.default_rng(cfg.seed)
        self.config = cfg
        self.subnets = {name: _build_subnet(cfg.subnet(name), rng) for name in LEVEL_NAMES}
        self.feature_dims = [cfg.subnet(name).feature_dim for name in LEVEL_NAMES]
        self.head = Linear(sum(self.feature_dims), 2, rng=rng)
        self.train_log: list[dict] = []

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in LEVEL_NAMES:
            out.extend(self.subnets[name].state(name + "."))
        out.extend(self.head.state("head."))
        return out

    def subnet_features(self, batch: TrainBatch, train: bool = False) -> np.ndarray:
        feats = [self.subnets[name].forward(batch.level(name), train=train) for name in LEVEL_NAMES]
        return np.concatenate(feats, axis=1)

    def forward_logits(self, batch: TrainBatch, train: bool = False) -> np.ndarray:
        for name in LEVEL_NAMES:
            size = self.config.subnet(name).input_size
            if batch.level(name).shape[2:] != (size, size):
                raise ValueError(f"{name} level must be {size}x{size}, got {batch.level(name).shape[2:]}")
        return self.head.forward(self.subnet_features(batch, train=train), train=train)

    def backward_logits(self, dlogits: np.ndarray, train_subnets: bool = True) -> None:
        dfeat = self.head.backward(dlogits, need_dx=train_subnets)
        if not train_subnets:
            return
        splits = np.cumsum(self.feature_dims)[:-1]
        for name, chunk in zip(LEVEL_NAMES, np.split(dfeat, splits, axis=1)):
            self.subnets[name].backward(chunk, need_dx=False)

    def params(self):
        return [p for name in LEVEL_NAMES for p in self.subnets[name].params()] + self.head.params()


def build_mldn(cfg: MldnConfig) -> MldnModel:
    return MldnModel(cfg)


def forward(model: MldnModel, batch: TrainBatch) -> np.ndarray:
    """Inference-mode class probabilities, rows summing to 1."""
    return softmax(model.forward_logits(batch, train=False))


def _bce(logits: np.ndarray, labels: np.ndarray, class_weights) -> tuple[float, np.ndarray]:
    if class_weights is None:
        return softmax_bce_loss(logits, labels)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    n = logits.shape[0]
    p = softmax(logits)
    p1 = np.clip(p[:, 1], 1e-12, 1.0 - 1e-12)
    loss = -float(np.mean(w * (labels * np.log(p1) + (1 - labels) * np.log(1.0 - p1))))
    onehot = np.zeros_like(p)
    onehot[np.arange(n), labels] = 1.0
    return loss, w[:, None] * (p - onehot) / n


def balanced_class_weights(labels: np.ndarray) -> tuple[float, float]:
    """w_c = N / (2 N_c) so each class contributes equally to the loss."""
    labels = np.asarray(labels)
    n = labels.size
    n1 = int(labels.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes required for balanced weights")
    return n / (2.0 * n0), n / (2.0 * n1)


def _batch_slices(n: int, batch_size: int) -> list[slice]:
    """Contiguous batches; a trailing singleton is merged into the previous
    batch so train-mode batch norm always sees at least two samples."""
    if batch_size < 2:
        raise ValueError("batch size must be >= 2")
    edges = list(range(0, n, batch_size)) + [n]
    if len(edges) > 2 and edges[-1] - edges[-2] == 1:
        edges.pop(-2)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _train_subnet(
    subnet: Sequential,
    head: Linear,
    level: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float,
    momentum: float,
    batch_size: int,
    rng: np.random.Generator,
    class_weights,
) -> list[float]:
    params = subnet.params() + head.params()
    opt = SgdState(params, lr=lr, momentum=momentum)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(labels.shape[0])
        total = 0.0
        for sl in _batch_slices(labels.shape[0], batch_size):
            idx = perm[sl]
            zero_grads(params)
            feats = subnet.forward(level[idx], train=True)
            loss, dlogits = _bce(head.forward(feats, train=True), labels[idx], class_weights)
            if not np.isfinite(loss):
                raise FloatingPointError("training loss diverged")
            subnet.backward(head.backward(dlogits), need_dx=False)
            opt.step()
            total += loss * idx.size
        losses.append(total / labels.shape[0])
    return losses


def train_phase1(
    model: MldnModel,
    data: TrainBatch,
    epochs: int,
    lr: float = DEFAULT_LR,
    momentum: float = DEFAULT_MOMENTUM,
    batch_size: int = DEFAULT_BATCH,
    seed: int = 1,
    class_weights=None,
) -> MldnModel:
    """Fit each sub-network individually under a temporary private head.

    The temporary heads are discarded; only the sub-network parameters (and
    their batch-norm running statistics) carry over to phase 2.
    """
    if data.n == 0:
        raise ValueError("empty training data")
    rng = np.random.default_rng(seed)
    for name in LEVEL_NAMES:
        head = Linear(model.config.subnet(name).feature_dim, 2, rng=rng)
        losses = _train_subnet(
            model.subnets[name], head, data.level(name), data.labels,
            epochs, lr, momentum, batch_size, rng, class_weights,
        )
        for e, loss in enumerate(losses):
            model.train_log.append({"phase": 1, "subnet": name, "epoch": e, "loss": loss})
    return model


def train_phase2(
    model: MldnModel,
    data: TrainBatch,
    epochs: int,
    lr: float = DEFAULT_LR,
    momentum: float = DEFAULT_MOMENTUM,
    batch_size: int = DEFAULT_BATCH,
    seed: int = 2,
    end_to_end: bool = False,
    class_weights=None,
) -> MldnModel:
    """Fit the merged head on frozen sub-network features.

    Frozen mode runs the sub-networks once in inference mode and trains the
    head on the cached feature vectors; end_to_end unfreezes everything and
    backpropagates through train-mode batch norm.
    """
    if data.n == 0:
        raise ValueError("empty training data")
    rng = np.random.default_rng(seed)
    if end_to_end:
        params = model.params()
        opt = SgdState(params, lr=lr, momentum=momentum)
        for e in range(epochs):
            perm = rng.permutation(data.n)
            total = 0.0
            for sl in _batch_slices(data.n, batch_size):
                idx = perm[sl]
                sub = TrainBatch(
                    level_global=data.level_global[idx],
                    level_local=data.level_local[idx],
                    level_aca=data.level_aca[idx],
                    labels=data.labels[idx],
                )
                zero_grads(params)
                loss, dlogits = _bce(model.forward_logits(sub, train=True), sub.labels, class_weights)
                if not np.isfinite(loss):
                    raise FloatingPointError("training loss diverged")
                model.backward_logits(dlogits, train_subnets=True)
                opt.step()
                total += loss * idx.size
            model.train_log.append({"phase": 2, "epoch": e, "loss": total / data.n, "end_to_end": True})
        return model

    feats = mldn_features(model, data)
    params = model.head.params()
    opt = SgdState(params, lr=lr, momentum=momentum)
    for e in range(epochs):
        perm = rng.permutation(data.n)
        total = 0.0
        for sl in _batch_slices(data.n, batch_size):
            idx = perm[sl]
            zero_grads(params)
            loss, dlogits = _bce(model.head.forward(feats[idx], train=True), data.labels[idx], class_weights)
            if not np.isfinite(loss):
                raise FloatingPointError("training loss diverged")
            model.head.backward(dlogits, need_dx=False)
            opt.step()
            total += loss * idx.size
        model.train_log.append({"phase": 2, "epoch": e, "loss": total / data.n, "end_to_end": False})
    return model


def mldn_features(model: MldnModel, data: TrainBatch, chunk: int = 64) -> np.ndarray:
    """Concatenated inference-mode features for every sample, batched to
    bound activation memory."""
    out = []
    for start in range(0, data.n, chunk):
        sub = TrainBatch(
            level_global=data.level_global[start : start + chunk],
            level_local=data.level_local[start : start + chunk],
            level_aca=data.level_aca[start : start + chunk],
            labels=data.labels[start : start + chunk],
        )
        out.append(model.subnet_features(sub, train=False))
    return np.concatenate(out, axis=0)


def predict_proba(model: MldnModel, data: TrainBatch, chunk: int = 64) -> np.ndarray:
    """Closure probability per sample, inference mode."""
    feats = mldn_features(model, data, chunk=chunk)
    return softmax(model.head.forward(feats, train=False))[:, 1]


def predict(model: MldnModel, level_global, level_local, level_aca, threshold: float = 0.5) -> tuple[float, int]:
    """Single-triplet closure probability and thresholded label."""
    batch = TrainBatch(
        level_global=level_global[None, None],
        level_local=level_local[None, None],
        level_aca=level_aca[None, None],
        labels=np.zeros(1, dtype=int),
    )
    p = float(predict_proba(model, batch)[0])
    return p, int(p >= threshold)


@dataclass(frozen=True)
class SingleBranchModel:
    """One sub-network plus its own head; the ablation baseline."""

    name: str
    subnet: Sequential
    head: Linear

    def predict_proba(self, level: np.ndarray, chunk: int = 64) -> np.ndarray:
        out = []
        for start in range(0, level.shape[0], chunk):
            feats = self.subnet.forward(level[start : start + chunk], train=False)
            out.append(softmax(self.head.forward(feats, train=False))[:, 1])
        return np.concatenate(out)


def train_single_branch(
    cfg: MldnConfig,
    name: str,
    level: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float = DEFAULT_LR,
    momentum: float = DEFAULT_MOMENTUM,
    batch_size: int = DEFAULT_BATCH,
    seed: int = 1,
    class_weights=None,
) -> SingleBranchModel:
    """Train one sub-network with its private head as a standalone classifier."""
    rng = np.random.default_rng(cfg.seed)
    subnet = _build_subnet(cfg.subnet(name), rng)
    train_rng = np.random.default_rng(seed)
    head = Linear(cfg.subnet(name).feature_dim, 2, rng=train_rng)
    _train_subnet(subnet, head, level, labels, epochs, lr, momentum, batch_size, train_rng, class_weights)
    return SingleBranchModel(name=name, subnet=subnet, head=head)


def mldn_grad_check(
    model: MldnModel, data: TrainBatch, h: float = 1e-3, n_samples: int = 4, seed: int = 0
) -> GradCheckReport:
    """Finite-difference check of the full model through the BCE loss.

    Samples a few coordinates from every parameter tensor.  Probes whose
    +h/-h passes flip a ReLU sign or pooling argmax anywhere in the model are
    skipped (central differences across a kink are meaningless).  Batch-norm
    running statistics are restored afterwards, so the check is side-effect
    free on the model.
    """
    rng = np.random.default_rng(seed)
    saved = [(name, arr.copy()) for name, arr in model.state() if "running" in name]
    params = model.params()
    zero_grads(params)
    _, dlogits = softmax_bce_loss(model.forward_logits(data, train=True), data.labels)
    base_sig = [s.copy() for name in LEVEL_NAMES for s in model.subnets[name].branch_signature()]
    model.backward_logits(dlogits, train_subnets=True)

    def loss_value() -> tuple[float, bool]:
        val = softmax_bce_loss(model.forward_logits(data, train=True), data.labels)[0]
        sig = [s for name in LEVEL_NAMES for s in model.subnets[name].branch_signature()]
        return val, all(np.array_equal(a, b) for a, b in zip(base_sig, sig))

    max_rel = 0.0
    worst = "none"
    checked = 0
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in rng.choice(flat.size, size=min(n_samples, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus, ok_plus = loss_value()
            flat[idx] = orig - h
            f_minus, ok_minus = loss_value()
            flat[idx] = orig
            if not (ok_plus and ok_minus):
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(gflat[idx] - numeric) / max(abs(gflat[idx]), abs(numeric), 1e-6)
            checked += 1
            if rel > max_rel:
                max_rel, worst = rel, f"param{i}"
    restore = dict(saved)
    for name, arr in model.state():
        if name in restore:
            arr[...] = restore[name]
    return GradCheckReport(max_rel_err=float(max_rel), n_checked=checked, worst_tensor=worst)


def save_model(model: MldnModel, path) -> None:
    """Versioned container: magic, version, canonical JSON config, named
    float64 tensors, trailing CRC32 of everything before it."""
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(cfg)), cfg]
    state = model.state()
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state:
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> MldnModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise ValueError("not a model container (bad magic)")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ValueError("model container failed its CRC check (truncated or corrupt)")
    version, cfg_len = struct.unpack_from("<II", body, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported model container version {version} (expected {_VERSION})")
    off = 12
    cfg = MldnConfig.from_dict(json.loads(body[off : off + cfg_len].decode()))
    off += cfg_len
    model = MldnModel(cfg)
    target = dict(model.state())
    (n_tensors,) = struct.unpack_from("<I", body, off)
    off += 4
    seen = set()
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        vals = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        if name not in target:
            raise ValueError(f"unknown tensor {name!r} in model container")
        if target[name].shape != vals.shape:
            raise ValueError(f"tensor {name!r} shape mismatch")
        target[name][...] = vals
        seen.add(name)
    if seen != set(target):
        raise ValueError("model container is missing tensors")
    return model
