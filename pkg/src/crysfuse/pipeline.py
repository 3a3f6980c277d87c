"""Dataset handling, supervised fine-tuning, metrics, and checkpointing.

Datasets are JSONL, one structure object per line with optional "target" and
"id" keys. Targets are z-scored with train-split statistics; every reported
metric and prediction is in the original target units. Checkpoints are a
directory of {manifest.json, params.bin} where the payload is single
precision regardless of compute precision.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ConfigError, RunConfig, config_from_dict
from .errors import DataError, NumericError
from .model import MGTModel, ModelInputs
from .optim import AdamW, lr_schedule
from .rng import stream
from .structures import CrystalStructure, StructureError, structure_from_dict
from .tensor import Tensor, default_dtype

CHECKPOINT_FORMAT_VERSION = 1
_ENCODER_PREFIXES = ("se3.", "so3.")


@dataclass(frozen=True)
class Record:
    """One dataset row: an identified structure with an optional target."""

    id: str
    structure: CrystalStructure
    target: float | None = None


def load_jsonl(path: str) -> list[Record]:
    """Read a JSONL dataset; every parse failure names its line number."""
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    records: list[Record] = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path} line {lineno}: invalid JSON: {exc}") from None
            try:
                structure = structure_from_dict(obj)
            except StructureError as exc:
                raise DataError(f"{path} line {lineno}: {exc}") from None
            target = obj.get("target") if isinstance(obj, dict) else None
            if target is not None:
                if isinstance(target, bool) or not isinstance(target, (int, float)):
                    raise DataError(
                        f"{path} line {lineno}: target must be a number, got {target!r}")
                target = float(target)
                if not math.isfinite(target):
                    raise DataError(f"{path} line {lineno}: non-finite target")
            rid = str(obj.get("id", lineno)) if isinstance(obj, dict) else str(lineno)
            records.append(Record(id=rid, structure=structure, target=target))
    if not records:
        raise DataError(f"{path}: empty dataset")
    return records


def split_dataset(records: list[Record], seed: int, train_ratio: float,
                  val_ratio: float, test_ratio: float
                  ) -> tuple[list[Record], list[Record], list[Record]]:
    """Deterministic shuffled partition; fractional counts floor to val/test
    and the remainder goes to train (11 records at 8:1:1 -> 9/1/1)."""
    if abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9:
        raise DataError("split ratios must sum to 1")
    n = len(records)
    order = stream(seed, "split").permutation(n)
    n_val = int(n * val_ratio)
    n_test = int(n * test_ratio)
    n_train = n - n_val - n_test
    for count, ratio, name in ((n_train, train_ratio, "train"),
                               (n_val, val_ratio, "val"),
                               (n_test, test_ratio, "test")):
        if ratio > 0 and count == 0:
            raise DataError(
                f"{name} split is empty: {n} records at ratio {ratio} — need more data")
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train:n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val:]]
    return train, val, test


@dataclass(frozen=True)
class Normalizer:
    """Z-score map fit on train targets. denormalize(normalize(y)) == y."""

    mean: float
    std: float

    @classmethod
    def fit(cls, targets) -> "Normalizer":
        arr = np.asarray(targets, dtype=np.float64)
        if arr.size == 0:
            raise DataError("cannot fit a target normalizer without targets")
        if not np.all(np.isfinite(arr)):
            raise DataError("non-finite target values")
        std = float(arr.std())
        if std <= 0:
            raise DataError("targets are constant; z-score normalization undefined")
        return cls(mean=float(arr.mean()), std=std)

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, y):
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


def regression_metrics(y_true, y_pred) -> dict:
    """MAE, RMSE, and R^2 (None when the targets have zero variance)."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.size == 0:
        raise DataError("cannot compute metrics on an empty split")
    if y_true.shape != y_pred.shape:
        raise DataError(
            f"{y_true.size} targets vs {y_pred.size} predictions")
    err = y_true - y_pred
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(err ** 2)) / ss_tot
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "r2": r2,
    }


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: MGTModel, path: str,
                    normalizer: Normalizer | None = None) -> None:
    """Write {manifest.json, params.bin}: named f32 payload, params then buffers."""
    os.makedirs(path, exist_ok=True)
    store = model.store
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.cfg),
        "rng_seed": model.cfg.seed,
        "params": [{"name": n, "shape": list(p.data.shape)}
                   for n, p in store.params.items()],
        "buffers": [{"name": n, "shape": list(b.shape)}
                    for n, b in store.buffers.items()],
        "normalizer": (None if normalizer is None
                       else {"mean": normalizer.mean, "std": normalizer.std}),
    }
    chunks = [p.data.ravel() for p in store.params.values()]
    chunks += [b.ravel() for b in store.buffers.values()]
    payload = np.concatenate(chunks).astype("<f4")
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        fh.write(payload.tobytes())


def _read_manifest(path: str) -> dict:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt checkpoint manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"{path}: checkpoint format version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    return manifest


def load_checkpoint(path: str) -> tuple[MGTModel, Normalizer | None]:
    """Rebuild the model from a checkpoint directory.

    The manifest's config reconstructs the architecture; the payload then
    overwrites every parameter and buffer (batch-norm running statistics
    included) in manifest order. Any name/shape/length mismatch aborts the
    load with nothing partially applied.
    """
    manifest = _read_manifest(path)
    try:
        cfg = config_from_dict(manifest["config"])
    except (ConfigError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: invalid config in checkpoint: {exc}") from None
    model = MGTModel(cfg)
    store = model.store

    try:
        with open(os.path.join(path, "params.bin"), "rb") as fh:
            payload = np.frombuffer(fh.read(), dtype="<f4")
    except OSError as exc:
        raise DataError(f"cannot read checkpoint payload: {exc}") from None

    entries = list(manifest.get("params", [])) + list(manifest.get("buffers", []))
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in entries)
    if payload.size != expected:
        raise DataError(
            f"{path}: checkpoint payload holds {payload.size} values, "
            f"manifest expects {expected} (truncated or corrupt)")
    manifest_params = {e["name"] for e in manifest.get("params", [])}
    missing = set(store.params) - manifest_params
    if missing:
        raise DataError(
            f"{path}: checkpoint is missing parameters {sorted(missing)[:5]}")

    # Validate every entry before touching the model: no partial loads.
    staged = []
    offset = 0
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        values = payload[offset:offset + size].reshape(shape)
        offset += size
        if name in manifest_params:
            if name not in store.params:
                raise DataError(f"{path}: unknown checkpoint parameter {name!r}")
            current = store.params[name].data.shape
        else:
            if name not in store.buffers:
                raise DataError(f"{path}: unknown checkpoint buffer {name!r}")
            current = store.buffers[name].shape
        if current != shape:
            raise DataError(
                f"{path}: shape mismatch for {name!r}: "
                f"checkpoint {shape}, model {current}")
        staged.append((name, name in manifest_params, values))

    for name, is_param, values in staged:
        if is_param:
            store.params[name].data = values.astype(default_dtype())
        else:
            store.buffers[name][...] = values  # in place: layers alias these

    raw = manifest.get("normalizer")
    normalizer = None if raw is None else Normalizer(mean=raw["mean"], std=raw["std"])
    return model, normalizer


def transfer_encoder_params(dst: MGTModel, src: MGTModel) -> list[str]:
    """Copy both encoders (projection heads included) from src into dst.

    Fusion and denoising heads keep their fresh initialization, which is how
    a pretrained backbone is reused under a different head. Returns the
    copied names.
    """
    copied: list[str] = []
    for name, p in src.store.params.items():
        if not name.startswith(_ENCODER_PREFIXES):
            continue
        if name not in dst.store.params:
            raise DataError(f"encoder parameter {name!r} absent in target model")
        if dst.store.params[name].data.shape != p.data.shape:
            raise DataError(
                f"encoder shape mismatch for {name!r}: "
                f"source {p.data.shape}, target {dst.store.params[name].data.shape}")
        dst.store.params[name].data = p.data.astype(default_dtype()).copy()
        copied.append(name)
    for name, b in src.store.buffers.items():
        if not name.startswith(_ENCODER_PREFIXES):
            continue
        if name not in dst.store.buffers or dst.store.buffers[name].shape != b.shape:
            raise DataError(f"encoder buffer mismatch for {name!r}")
        dst.store.buffers[name][...] = b
        copied.append(name)
    return sorted(copied)


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------

def _snapshot(store) -> tuple[dict, dict]:
    return ({n: p.data.copy() for n, p in store.params.items()},
            {n: b.copy() for n, b in store.buffers.items()})


def _restore(store, snap: tuple[dict, dict]) -> None:
    params, buffers = snap
    for n, arr in params.items():
        store.params[n].data = arr.copy()
    for n, arr in buffers.items():
        store.buffers[n][...] = arr


def _predict_inputs(model: MGTModel, inputs: list[ModelInputs],
                    chunk: int = 32) -> np.ndarray:
    """Eval-mode normalized-space predictions for featurized inputs, (B,)."""
    out = []
    for lo in range(0, len(inputs), chunk):
        pred = model.forward(inputs[lo:lo + chunk], training=False).prediction
        out.append(pred.data.ravel().copy())
    return np.concatenate(out)


@dataclass
class FinetuneResult:
    normalizer: Normalizer
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float | None = None
    epochs_run: int = 0
    stopped_early: bool = False


def finetune_step(model: MGTModel, inputs: list[ModelInputs],
                  targets_norm: np.ndarray, ids: list[str],
                  opt: AdamW) -> tuple[float, float]:
    """One MSE step on a featurized batch; targets already normalized.

    Returns (batch MSE, batch MAE), both in normalized space, computed from
    the training-mode forward pass that produced the update.
    """
    out = model.forward(inputs, training=True)
    bad = ~np.isfinite(out.prediction.data.ravel())
    if bad.any():
        raise NumericError(
            f"non-finite prediction at structure {ids[int(np.argmax(bad))]}")
    diff = out.prediction - Tensor(targets_norm.reshape(-1, 1))
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite fine-tuning loss at structure {ids[0]}")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data), float(np.mean(np.abs(diff.data)))


def finetune(model: MGTModel, train_records: list[Record],
             val_records: list[Record] = (),
             log_path: str | None = None,
             train_mae_goal: float | None = None,
             epochs: int | None = None) -> FinetuneResult:
    """Supervised loop: warmup + cosine LR, early stopping on validation MAE
    with best-snapshot restore.

    `train_mae_goal` (original units) stops the loop as soon as the epoch's
    running train MAE — the mean absolute error of the training-mode forward
    passes that produced the updates, denormalized — drops below the goal:
    the overfit-style escape hatch for small calibration runs. Validation
    metrics always come from eval-mode passes.
    """
    cfg = model.cfg
    for r in list(train_records) + list(val_records):
        if r.target is None:
            raise DataError(f"record {r.id} has no target; fine-tuning needs one")
    if not train_records:
        raise DataError("empty train split")
    normalizer = Normalizer.fit([r.target for r in train_records])

    train_inputs = [model.inputs_for_structure(r.structure) for r in train_records]
    val_inputs = [model.inputs_for_structure(r.structure) for r in val_records]
    y_train = normalizer.normalize([r.target for r in train_records])
    val_targets = np.array([r.target for r in val_records], dtype=np.float64)
    ids = [r.id for r in train_records]

    epochs = cfg.finetune_epochs if epochs is None else epochs
    batch_size = min(cfg.finetune_batch_size, len(train_records))
    steps_per_epoch = max(1, len(train_records) // batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    warmup = min(cfg.warmup_steps, total_steps - 1) if total_steps > 1 else 0
    opt = AdamW(model.store.params, lr=cfg.finetune_lr,
                betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                weight_decay=cfg.weight_decay)

    result = FinetuneResult(normalizer=normalizer)
    best_snap = None
    since_best = 0
    step = 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, epochs + 1):
            order = stream(cfg.seed, f"shuffle/finetune/{epoch}").permutation(
                len(train_records))
            losses = []
            abs_err_sum = 0.0
            seen = 0
            for b in range(steps_per_epoch):
                lo = b * batch_size
                hi = (len(train_records) if b == steps_per_epoch - 1
                      else lo + batch_size)
                idx = order[lo:hi]
                step += 1
                opt.lr = lr_schedule(min(step, total_steps), total_steps,
                                     warmup, cfg.finetune_lr, cfg.lr_min)
                mse, mae = finetune_step(
                    model, [train_inputs[i] for i in idx], y_train[idx],
                    [ids[i] for i in idx], opt)
                losses.append(mse)
                abs_err_sum += mae * len(idx)
                seen += len(idx)

            entry = {"epoch": epoch, "lr": opt.lr,
                     "train_mse": float(np.mean(losses)),
                     "train_mae": float(normalizer.std * abs_err_sum / seen)}
            result.epochs_run = epoch

            if val_inputs:
                val_pred = normalizer.denormalize(
                    _predict_inputs(model, val_inputs))
                val_mae = float(np.mean(np.abs(val_pred - val_targets)))
                entry["val_mae"] = val_mae
                if result.best_val_mae is None or val_mae < result.best_val_mae:
                    result.best_val_mae = val_mae
                    result.best_epoch = epoch
                    best_snap = _snapshot(model.store)
                    since_best = 0
                else:
                    since_best += 1

            result.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")

            if train_mae_goal is not None and entry["train_mae"] < train_mae_goal:
                break
            if val_inputs and since_best >= cfg.patience:
                result.stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()

    if best_snap is not None and (result.best_val_mae is not None
                                  and train_mae_goal is None):
        _restore(model.store, best_snap)
    return result


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def predict_records(model: MGTModel, records: list[Record],
                    normalizer: Normalizer | None) -> list[dict]:
    """Eval-mode predictions in original target units, one row per record."""
    inputs = [model.inputs_for_structure(r.structure) for r in records]
    raw = _predict_inputs(model, inputs)
    pred = raw if normalizer is None else normalizer.denormalize(raw)
    return [{"id": r.id, "prediction": float(p)} for r, p in zip(records, pred)]


def evaluate_records(model: MGTModel, records: list[Record],
                     normalizer: Normalizer | None) -> dict:
    """Denormalized regression metrics over a labeled split."""
    if not records:
        raise DataError("cannot evaluate an empty split")
    for r in records:
        if r.target is None:
            raise DataError(f"record {r.id} has no target; evaluation needs one")
    rows = predict_records(model, records, normalizer)
    y_pred = [row["prediction"] for row in rows]
    y_true = [r.target for r in records]
    return regression_metrics(y_true, y_pred)
