"""Dataset featurization, the training loop, evaluation and S3R inference.

A run directory holds ``config.txt``, ``train_log.tsv`` and two checkpoints:
``last`` (end of the latest epoch, used for resuming) and ``best`` (highest
validation score so far).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dsp, fileio, losses, rig
from .errors import ConfigurationError, DataError, DegenerateStatisticsError, NumericalError
from .losses import LossWeights
from .numerics import functional as F
from .numerics.optim import AdamState, adam_step
from .numerics.tensor import Tensor, backward, no_grad, precision
from .soundnet import (REFERENCE_PAIR, ModelConfig, SoundNet, apply_masks, denormalize_depth,
                       normalize_depth, s3r_reconstruct)

log = logging.getLogger(__name__)

TARGET_RMS = dsp.DEFAULT_TARGET_RMS
LOG_COLUMNS = ("epoch", "steps", "total", "semantic", "depth", "motion", "s3r", "val_score")


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "run"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    amp: float = 1.0
    precision: str = "standard"
    lambda1: float = -1.0  # negative means "use the preset for the encoder kind"
    lambda2: float = -1.0
    lambda3: float = -1.0
    alpha_spec: float = 1.0
    max_train: int = 0     # 0 keeps the whole train split
    resume: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.amp < 0:
            raise ConfigurationError(f"amp must be non-negative, got {self.amp}")

    def loss_weights(self) -> LossWeights:
        preset = LossWeights.for_encoder(self.model.encoder)
        pick = lambda v, d: d if v < 0 else v  # noqa: E731
        return LossWeights(pick(self.lambda1, preset.lambda1), pick(self.lambda2, preset.lambda2),
                           pick(self.lambda3, preset.lambda3), self.alpha_spec)

    def to_kv(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        out.update(self.model.to_kv())
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "RunConfig":
        run_fields = {f.name: f for f in fields(cls) if f.name != "model"}
        model_keys = {f.name for f in fields(ModelConfig)}
        unknown = set(kv) - set(run_fields) - model_keys
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for key, f in run_fields.items():
            if key not in kv:
                continue
            raw = kv[key]
            default = f.default
            try:
                if isinstance(default, bool):
                    kw[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kw[key] = int(raw)
                elif isinstance(default, float):
                    kw[key] = float(raw)
                else:
                    kw[key] = raw
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
        try:
            model = ModelConfig.from_kv({k: v for k, v in kv.items() if k in model_keys})
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        return cls(model=model, **kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_kv(fileio.read_kv(path))


# -- featurization --------------------------------------------------------------

@dataclass
class Normalization:
    """Corpus statistics fixed from the train split and stored with the model.

    ``mean_rms`` holds one mean clip RMS per rig channel (index 0 is channel 1).
    """
    mean_rms: tuple
    loudness_mean_db: float = 0.0
    loudness_std_db: float = 1.0

    def __post_init__(self):
        self.mean_rms = tuple(float(v) for v in self.mean_rms)
        if len(self.mean_rms) != 8:
            raise ConfigurationError(f"need 8 per-channel RMS values, got {len(self.mean_rms)}")
        if not all(np.isfinite(v) and v > 0 for v in self.mean_rms):
            raise DegenerateStatisticsError(f"per-channel mean RMS must be positive: {self.mean_rms}")

    def gains(self) -> np.ndarray:
        """(8, 1) factors that bring each channel to the target RMS."""
        return (TARGET_RMS / np.asarray(self.mean_rms))[:, None]

    def to_kv(self) -> dict:
        return {"norm_mean_rms": self.mean_rms, "norm_loudness_mean_db": self.loudness_mean_db,
                "norm_loudness_std_db": self.loudness_std_db}

    @classmethod
    def from_kv(cls, kv: dict) -> "Normalization":
        return cls(tuple(float(v) for v in kv["norm_mean_rms"].split(",")),
                   float(kv["norm_loudness_mean_db"]), float(kv["norm_loudness_std_db"]))


def fit_normalization(audios: list, cfg: ModelConfig, p: dsp.StftParams = dsp.StftParams()) -> Normalization:
    """Per-channel mean clip RMS; loudness stats too when a DDSP branch exists."""
    if not audios:
        raise DegenerateStatisticsError("cannot fit normalization on an empty split")
    per_clip = np.array([[dsp.rms(ch) for ch in a.data] for a in audios])
    norm = Normalization(tuple(per_clip.mean(axis=0)))
    if cfg.encoder != "spectrogram":
        idx = [c - 1 for c in cfg.input_channels]
        gains = norm.gains()
        levels = np.concatenate([
            dsp.a_weighted_loudness(dsp.Waveform(a.data[i] * gains[i, 0], a.sample_rate), p)
            for a in audios for i in idx])
        norm.loudness_mean_db = float(levels.mean())
        norm.loudness_std_db = float(max(levels.std(), 1e-3))
    return norm


def _pair_index(pair) -> tuple[int, int]:
    return pair[0] - 1, pair[1] - 1


def featurize(audio: np.ndarray, sample_rate: int, cfg: ModelConfig, norm: Normalization,
              amp: float = 1.0, p: dsp.StftParams = dsp.StftParams()) -> dict:
    """Model inputs and S3R targets for one (8, L) rig recording.

    The amplitude multiplier is applied to the raw waveforms before normalization.
    """
    x = np.asarray(audio, dtype=np.float64) * amp * norm.gains()
    window = p.analysis_window()
    idx = [c - 1 for c in cfg.input_channels]
    specs = dsp.stft_array(x[idx], window, p.hop_length)
    if specs.shape[-2:] != (cfg.n_bins, cfg.n_frames):
        raise ConfigurationError(
            f"audio gives {specs.shape[-2]}x{specs.shape[-1]} spectrograms, model expects "
            f"{cfg.n_bins}x{cfg.n_frames}")
    feats = {"logspec": np.log(np.abs(specs) + dsp.LOG_FLOOR)}
    if cfg.encoder != "spectrogram":
        d = [dsp.ddsp_features(dsp.Waveform(x[i], sample_rate), p, n_coeffs=cfg.n_mfcc,
                               loudness_mean_db=norm.loudness_mean_db,
                               loudness_std_db=norm.loudness_std_db) for i in idx]
        feats["f0"] = np.stack([f.f0 for f in d])
        feats["loudness"] = np.stack([f.loudness for f in d])
        feats["mfcc"] = np.stack([f.mfcc for f in d])
    if "R" in cfg.tasks:
        ref = x[list(_pair_index(REFERENCE_PAIR))]
        ref_spec = dsp.stft_array(ref, window, p.hop_length)
        targets = np.stack([x[list(_pair_index(pr))] for pr in cfg.target_pairs()])
        diff_spec = dsp.stft_array(ref[None] - targets, window, p.hop_length)
        feats.update(ref_re=ref_spec.real, ref_im=ref_spec.imag, ref_wave=ref,
                     target_wave=targets, diff_re=diff_spec.real, diff_im=diff_spec.imag)
    return feats


def resize_nearest(a: np.ndarray, grid) -> np.ndarray:
    h, w = a.shape[-2:]
    gh, gw = grid
    if (h, w) == (gh, gw):
        return a
    rows = np.minimum((np.arange(gh) + 0.5) * h / gh, h - 1).astype(int)
    cols = np.minimum((np.arange(gw) + 0.5) * w / gw, w - 1).astype(int)
    return a[..., rows[:, None], cols[None, :]]


def map_targets(maps: rig.GroundTruthMaps, cfg: ModelConfig) -> dict:
    gh, gw = cfg.grid
    w_src = maps.labels.shape[-1]
    return {"labels": resize_nearest(maps.labels, cfg.grid).astype(np.int64),
            "depth_m": resize_nearest(maps.depth, cfg.grid),
            "flow": resize_nearest(maps.flow, cfg.grid) * (gw / w_src)}


class SceneSet:
    """In-memory featurized split of a rendered dataset."""

    def __init__(self, root, split: str, cfg: ModelConfig, norm: Normalization | None = None,
                 amp: float = 1.0, limit: int = 0):
        self.root = Path(root)
        manifest = self.root / "manifest.txt"
        if not manifest.is_file():
            raise DataError(f"{self.root}: no manifest.txt; render a dataset first")
        rows = fileio.read_manifest(manifest)
        self.ids = [sid for sid, s in rows if s == split]
        if not self.ids:
            raise DataError(f"split {split!r} has no samples in {manifest}")
        if limit:
            self.ids = self.ids[:limit]
        self.split = split
        loaded = [rig.load_sample(self.root / sid) for sid in self.ids]
        self.audio = [a for a, _ in loaded]
        self.norm = norm or fit_normalization(self.audio, cfg)
        self.features = [featurize(a.data, a.sample_rate, cfg, self.norm, amp) for a in self.audio]
        self.targets = [map_targets(m, cfg) for _, m in loaded]
        self.cfg = cfg

    def __len__(self):
        return len(self.ids)

    def batch(self, indices, dtype) -> dict:
        out = {}
        for key in self.features[0]:
            out[key] = np.stack([self.features[i][key] for i in indices]).astype(dtype)
        for key in self.targets[0]:
            out[key] = np.stack([self.targets[i][key] for i in indices])
        out["depth_n"] = normalize_depth(out["depth_m"]).astype(dtype)
        return out


# -- losses for one batch -----------------------------------------------------------

def _resynthesize(batch: dict, dre: Tensor, dim: Tensor, p: dsp.StftParams) -> Tensor:
    """Predicted target-pair waveforms: reference minus the ISTFT of the difference."""
    diff = F.istft(dre, dim, p.analysis_window(), p.hop_length)
    n = diff.shape[-1]
    return Tensor(batch["ref_wave"][:, None, :, :n], dtype=dre.dtype) - diff


def batch_losses(model: SoundNet, batch: dict, weights: LossWeights,
                 p: dsp.StftParams = dsp.StftParams()) -> dict:
    pred = model(batch)
    cfg = model.cfg
    parts = {}
    if pred.semantic is not None:
        parts["semantic"] = losses.cross_entropy_loss(pred.semantic, batch["labels"])
    if pred.depth is not None:
        parts["depth"] = losses.l2_loss(pred.depth, batch["depth_n"][:, None])
    if pred.flow is not None:
        parts["motion"] = losses.l2_loss(pred.flow, batch["flow"].astype(pred.flow.dtype))
    if pred.masks is not None:
        dre, dim = apply_masks(pred.masks, batch["ref_re"], batch["ref_im"], cfg.output_pairs)
        if cfg.encoder == "spectrogram":
            parts["s3r"] = losses.complex_l2_loss(dre, dim, batch["diff_re"], batch["diff_im"])
        else:
            wave = _resynthesize(batch, dre, dim, p)
            n = wave.shape[-1]
            parts["s3r"] = losses.multiscale_spectral_loss(wave, batch["target_wave"][..., :n], weights)
    return parts


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(directory, model: SoundNet, opt: AdamState, run: RunConfig,
                    norm: Normalization, state: dict) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        tensors[f"adam.m.{i:04d}"] = m
        tensors[f"adam.v.{i:04d}"] = v
    meta = dict(run.to_kv())
    meta.update(norm.to_kv())
    meta.update(state)
    meta["adam_step"] = opt.step
    fileio.write_checkpoint(directory, tensors, meta)


def load_checkpoint(directory):
    """-> (model, run config, normalization, Adam state, metadata)."""
    tensors, meta = fileio.read_checkpoint(directory)
    run_keys = {f.name for f in fields(RunConfig)} | {f.name for f in fields(ModelConfig)}
    run = RunConfig.from_kv({k: v for k, v in meta.items() if k in run_keys})
    with precision(run.precision):
        model = SoundNet(run.model, seed=run.seed)
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    opt = AdamState(lr=run.lr, step=int(meta.get("adam_step", 0)))
    n_m = sum(1 for k in tensors if k.startswith("adam.m."))
    if n_m:
        params = model.parameters()
        opt.m = [tensors[f"adam.m.{i:04d}"].astype(params[i].dtype) for i in range(n_m)]
        opt.v = [tensors[f"adam.v.{i:04d}"].astype(params[i].dtype) for i in range(n_m)]
    return model, run, Normalization.from_kv(meta), opt, meta


# -- training -----------------------------------------------------------------------

def _identity(run: RunConfig) -> str:
    # Settings that may change between a run and its resumption.
    loose = ("epochs", "resume", "out")
    return fileio.format_kv({k: v for k, v in run.to_kv().items() if k not in loose})


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_log(path: Path, rows: list) -> None:
    lines = ["\t".join(LOG_COLUMNS) + "\n"]
    for r in rows:
        lines.append("\t".join(str(r[c]) if c in ("epoch", "steps") else _fmt(r.get(c))
                               for c in LOG_COLUMNS) + "\n")
    path.write_text("".join(lines))


def _read_log(path: Path) -> list:
    rows = []
    if not path.is_file():
        return rows
    header, *body = path.read_text().splitlines()
    cols = header.split("\t")
    for line in body:
        vals = dict(zip(cols, line.split("\t")))
        rows.append({c: (int(vals[c]) if c in ("epoch", "steps")
                         else float(vals[c]) if vals[c] else float("nan")) for c in cols})
    return rows


def _dump_bad_batch(out: Path, epoch: int, step: int, ids: list, parts: dict) -> Path:
    path = out / "nan_batch.txt"
    items = {"epoch": epoch, "step": step, "sample_ids": ",".join(ids)}
    items.update({k: float(v.data) for k, v in parts.items()})
    fileio.write_kv(path, items)
    return path


def validation_score(model: SoundNet, data: SceneSet, weights: LossWeights, batch_size: int) -> float:
    """Foreground mIoU when the semantic task is on, else the negated total loss."""
    if "S" in model.cfg.tasks:
        preds = predict_labels(model, data, batch_size)
        gts = np.stack([t["labels"] for t in data.targets])
        _, score = losses.miou(preds, gts)
        return 0.0 if math.isnan(score) else score
    model.eval()
    total = 0.0
    with no_grad():
        for start in range(0, len(data), batch_size):
            idx = list(range(start, min(len(data), start + batch_size)))
            parts = batch_losses(model, data.batch(idx, model_dtype(model)), weights)
            total += float(losses.total_loss(parts, weights).data) * len(idx)
    model.train()
    return -total / len(data)


def model_dtype(model: SoundNet):
    return model.parameters()[0].dtype


def train(run: RunConfig, progress=None) -> dict:
    """Minibatch Adam on the multitask loss; returns a summary of the run."""
    if not run.dataset:
        raise ConfigurationError("config needs a dataset path")
    out = fileio.ensure_dir(run.out)
    with precision(run.precision):
        train_set = SceneSet(run.dataset, "train", run.model, limit=run.max_train)
        norm = train_set.norm
        try:
            val_set = SceneSet(run.dataset, "val", run.model, norm)
        except DataError:
            val_set = None
        weights = run.loss_weights()
        fileio.write_kv(out / "config.txt", run.to_kv())
        log_path = out / "train_log.tsv"
        last = out / "last"
        if run.resume and (last / "index.txt").is_file():
            model, saved, _, opt, meta = load_checkpoint(last)
            if _identity(saved) != _identity(run):
                raise ConfigurationError(f"{last}: checkpoint was written by a different config")
            start_epoch = int(meta["epoch"]) + 1
            best = float(meta["best_score"])
            rows = [r for r in _read_log(log_path) if r["epoch"] < start_epoch]
        else:
            model = SoundNet(run.model, seed=run.seed)
            opt = AdamState(lr=run.lr)
            start_epoch, best, rows = 0, -math.inf, []
        params = model.parameters()
        dtype = model_dtype(model)
        model.train()
        n = len(train_set)
        for epoch in range(start_epoch, run.epochs):
            order = np.random.default_rng([run.seed, epoch]).permutation(n)
            sums = {}
            count = 0
            for start in range(0, n, run.batch_size):
                idx = order[start:start + run.batch_size].tolist()
                batch = train_set.batch(idx, dtype)
                parts = batch_losses(model, batch, weights)
                total = losses.total_loss(parts, weights)
                if not np.isfinite(float(total.data)):
                    dump = _dump_bad_batch(out, epoch, opt.step,
                                           [train_set.ids[i] for i in idx], parts)
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, step {opt.step}; batch dumped to {dump}")
                for p in params:
                    p.grad = None
                backward(total, params)
                adam_step(params, opt)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + float(v.data) * len(idx)
                sums["total"] = sums.get("total", 0.0) + float(total.data) * len(idx)
                count += len(idx)
            row = {"epoch": epoch, "steps": opt.step}
            row.update({k: v / count for k, v in sums.items()})
            score = (validation_score(model, val_set, weights, run.batch_size)
                     if val_set is not None else -row["total"])
            row["val_score"] = score
            rows.append(row)
            _write_log(log_path, rows)
            state = {"epoch": epoch, "steps": opt.step, "score": score}
            if score > best:
                best = score
                save_checkpoint(out / "best", model, opt, run, norm, dict(state, best_score=best))
            save_checkpoint(last, model, opt, run, norm, dict(state, best_score=best))
            if progress:
                progress(row)
            log.info("epoch %d total %.5f val %.4f", epoch, row["total"], score)
    return {"out": str(out), "log": rows, "best_score": best}


def overfit(run: RunConfig, batch: dict, steps: int) -> list[float]:
    """Repeated Adam steps on one fixed batch; returns the total loss before each step."""
    with precision(run.precision):
        model = SoundNet(run.model, seed=run.seed)
        params = model.parameters()
        dtype = model_dtype(model)
        batch = {k: v.astype(dtype) if v.dtype.kind == "f" else v for k, v in batch.items()}
        opt = AdamState(lr=run.lr)
        weights = run.loss_weights()
        history = []
        for _ in range(steps):
            total = losses.total_loss(batch_losses(model, batch, weights), weights)
            history.append(float(total.data))
            for p in params:
                p.grad = None
            backward(total, params)
            adam_step(params, opt)
    return history


# -- evaluation ------------------------------------------------------------------------

def predict(model: SoundNet, data: SceneSet, batch_size: int = 8):
    """Yields (indices, prediction) in eval mode without building graphs."""
    model.eval()
    dtype = model_dtype(model)
    try:
        with no_grad():
            for start in range(0, len(data), batch_size):
                idx = list(range(start, min(len(data), start + batch_size)))
                yield idx, model(data.batch(idx, dtype))
    finally:
        model.train()


def predict_labels(model: SoundNet, data: SceneSet, batch_size: int = 8) -> np.ndarray:
    chunks = [pred.semantic.data.argmax(axis=1) for _, pred in predict(model, data, batch_size)]
    return np.concatenate(chunks)


def evaluate(checkpoint, split: str = "test", amp: float = 1.0, dataset=None,
             batch_size: int = 8) -> tuple[dict, list]:
    """Aggregate metrics and one row per sample for every task the model has."""
    model, run, norm, _, _ = load_checkpoint(checkpoint)
    with precision(run.precision):
        data = SceneSet(dataset or run.dataset, split, run.model, norm, amp)
        return evaluate_model(model, data, batch_size)


def evaluate_model(model: SoundNet, data: SceneSet, batch_size: int = 8) -> tuple[dict, list]:
    cfg = model.cfg
    rows = [{"id": sid} for sid in data.ids]
    sem_pred, dep_pred, flo_pred, s3r = [], [], [], []
    for idx, pred in predict(model, data, batch_size):
        if pred.semantic is not None:
            labels = pred.semantic.data.argmax(axis=1)
            sem_pred.append(labels)
            for j, i in enumerate(idx):
                rows[i]["miou"] = losses.miou(labels[j], data.targets[i]["labels"])[1]
        if pred.depth is not None:
            d = denormalize_depth(pred.depth.data[:, 0].astype(np.float64))
            dep_pred.append(d)
            for j, i in enumerate(idx):
                rows[i]["rmse"] = losses.depth_metrics(d[j], data.targets[i]["depth_m"])["rmse"]
        if pred.flow is not None:
            flo_pred.append(pred.flow.data)
            for j, i in enumerate(idx):
                rows[i]["epe"] = losses.epe(pred.flow.data[j], data.targets[i]["flow"])
        if pred.masks is not None:
            for j, i in enumerate(idx):
                f = data.features[i]
                spec = f["ref_re"] + 1j * f["ref_im"]
                waves = s3r_reconstruct(pred.masks.data[j].astype(np.float64), spec, f["ref_wave"])
                m = losses.s3r_metrics(waves[0], f["target_wave"][0])
                rows[i].update(m)
                s3r.append(m)
    report = {"split": data.split, "n": len(data)}
    if sem_pred:
        gts = np.stack([t["labels"] for t in data.targets])
        per_class, mean_iou = losses.miou(np.concatenate(sem_pred), gts)
        report.update({f"iou_{rig.CLASS_BY_ID[c]}": v for c, v in per_class.items()})
        report["miou"] = mean_iou
    if dep_pred:
        gts = np.stack([t["depth_m"] for t in data.targets])
        report.update(losses.depth_metrics(np.concatenate(dep_pred), gts))
    if flo_pred:
        gts = np.stack([t["flow"] for t in data.targets])
        report["epe"] = losses.epe(np.concatenate(flo_pred), gts)
    if s3r:
        for key in s3r[0]:
            report[key] = float(np.mean([m[key] for m in s3r]))
    return report, rows


def write_report(out_dir, report: dict, rows: list) -> None:
    out_dir = fileio.ensure_dir(out_dir)
    fileio.write_kv(out_dir / "report.txt", report)
    cols = ["id"] + sorted({k for r in rows for k in r} - {"id"})
    lines = ["\t".join(cols) + "\n"]
    for r in rows:
        lines.append("\t".join(str(r[c]) if c == "id" else _fmt(r.get(c, float("nan")))
                               for c in cols) + "\n")
    (out_dir / "per_sample.tsv").write_text("".join(lines))


# -- S3R inference ---------------------------------------------------------------------

def s3r_infer(checkpoint, audio: np.ndarray, sample_rate: int, pairs=None) -> np.ndarray:
    """Predict target-pair waveforms for one clip.

    ``audio`` is either a full (8, L) rig recording or the (2, L) reference pair.
    Returns (len(pairs), 2, L) in the scale of the input.
    """
    model, run, norm, _, _ = load_checkpoint(checkpoint)
    cfg = run.model
    if "R" not in cfg.tasks:
        raise ConfigurationError("checkpoint has no S3R decoder")
    available = list(cfg.target_pairs())
    pairs = [tuple(pr) for pr in (pairs or available[:1])]
    for pr in pairs:
        if pr not in available:
            raise ConfigurationError(f"pair {pr} is not predicted by this model (has {available})")
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 2 or audio.shape[0] not in (2, 8):
        raise DataError(f"expected 2 or 8 channels, got shape {audio.shape}")
    if audio.shape[0] == 2:
        if tuple(cfg.input_channels) != REFERENCE_PAIR:
            raise ConfigurationError(
                f"model listens to channels {cfg.input_channels}; supply the full 8-channel recording")
        full = np.zeros((8, audio.shape[1]))
        full[list(_pair_index(REFERENCE_PAIR))] = audio
        audio = full
    tasks_cfg = ModelConfig(**{**cfg.to_kv(), "tasks": "R"}) if cfg.tasks != "R" else cfg
    with precision(run.precision):
        feats = featurize(audio, sample_rate, tasks_cfg, norm)
        dtype = model_dtype(model)
        batch = {k: v[None].astype(dtype) for k, v in feats.items()}
        model.eval()
        with no_grad():
            masks = model(batch, tasks="R").masks.data[0].astype(np.float64)
    spec = feats["ref_re"] + 1j * feats["ref_im"]
    waves = s3r_reconstruct(masks, spec, feats["ref_wave"])
    gains = norm.gains()[:, 0]
    out = []
    for pr in pairs:
        i, j = _pair_index(pr)
        out.append(waves[available.index(pr)] / np.array([[gains[i]], [gains[j]]]))
    return np.stack(out)
