"""Training engine: multi-task loss, optimizer loop, transfer, checkpoints.

The objective per target T over a batch of U utterances is

    L_T = (1/U) * sum_u [ (T_u - That_u)^2 + (alpha_T / F_u) * sum_f (T_u - that_f)^2 ]

and the total objective is the sum of L_T over the active targets. The
utterance term regresses the pooled score, the frame term pulls every frame
toward the utterance label, and alpha_T balances the two.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .audio import load_wav
from .embeddings import align_to_frames, read_embeddings
from .errors import CheckpointError, NonFiniteGradientError, TrainingError
from .features import StftConfig, stft_power
from .manifest import ManifestRecord, split_train_val
from .metrics import ScorePair, lcc
from .model import (
    ForwardOutput,
    ModelConfig,
    MultiTargetNet,
    deterministic_requested,
    enable_determinism,
    init_params,
)

log = logging.getLogger(__name__)

TARGET_FIELDS = {"I": "intelligibility", "W": "wer", "S": "stoi"}


@dataclass
class UtteranceLabels:
    intelligibility: float | None = None
    wer: float | None = None
    stoi: float | None = None

    def get(self, target: str) -> float | None:
        return getattr(self, TARGET_FIELDS[target])

    @classmethod
    def from_record(cls, r: ManifestRecord) -> "UtteranceLabels":
        return cls(intelligibility=r.intelligibility, wer=r.wer, stoi=r.stoi)


@dataclass
class LossConfig:
    alpha_i: float = 1.0
    alpha_w: float = 1.0
    alpha_s: float = 1.0
    active_targets: tuple[str, ...] = ("I", "W", "S")

    def __post_init__(self):
        self.active_targets = tuple(t for t in ("I", "W", "S") if t in set(self.active_targets))
        for a in (self.alpha_i, self.alpha_w, self.alpha_s):
            if not (math.isfinite(a) and a >= 0.0):
                raise TrainingError(f"loss weights must be finite and >= 0, got {a}")
        if not self.active_targets:
            raise TrainingError("at least one active target required")

    def alpha(self, target: str) -> float:
        return {"I": self.alpha_i, "W": self.alpha_w, "S": self.alpha_s}[target]

    def to_items(self) -> dict[str, str]:
        return {
            "alpha_i": repr(self.alpha_i),
            "alpha_w": repr(self.alpha_w),
            "alpha_s": repr(self.alpha_s),
            "active_targets": ",".join(self.active_targets),
        }

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "LossConfig":
        return cls(
            alpha_i=float(items["alpha_i"]),
            alpha_w=float(items["alpha_w"]),
            alpha_s=float(items["alpha_s"]),
            active_targets=tuple(t for t in items["active_targets"].split(",") if t),
        )


@dataclass
class OptimConfig:
    algorithm: str = "adam"  # adam | sgd
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    epochs: int = 30
    batch_size: int = 4
    patience: int = 10
    grad_clip: float = 5.0
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise TrainingError(f"unknown optimizer '{self.algorithm}'")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be >= 1")

    def to_items(self) -> dict[str, str]:
        return {
            "algorithm": self.algorithm,
            "learning_rate": repr(self.learning_rate),
            "beta1": repr(self.beta1),
            "beta2": repr(self.beta2),
            "eps": repr(self.eps),
            "momentum": repr(self.momentum),
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "patience": str(self.patience),
            "grad_clip": repr(self.grad_clip),
            "seed": str(self.seed),
            "val_fraction": repr(self.val_fraction),
        }


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def multitask_loss(
    outputs: list[ForwardOutput],
    labels: list[UtteranceLabels],
    cfg: LossConfig,
    utt_ids: list[str] | None = None,
) -> tuple[float, dict[str, float]]:
    """Reference (float64) evaluation of the combined objective.

    Returns the total O and the per-target terms; inactive targets
    contribute exactly 0.
    """
    if len(outputs) != len(labels) or not outputs:
        raise TrainingError("need matching, non-empty outputs and labels")
    U = len(outputs)
    terms = {"I": 0.0, "W": 0.0, "S": 0.0}
    for t in cfg.active_targets:
        acc = 0.0
        for u, (out, lab) in enumerate(zip(outputs, labels)):
            y = lab.get(t)
            if y is None:
                name = utt_ids[u] if utt_ids else f"#{u}"
                raise TrainingError(f"utterance {name} is missing the label for active target {t}")
            frames = np.asarray(out.frame_scores[t], dtype=np.float64)
            utt = float(out.utt_scores[t])
            frame_term = float(np.sum((y - frames) ** 2)) / frames.size
            acc += (y - utt) ** 2 + cfg.alpha(t) * frame_term
        terms[t] = acc / U
    total = sum(terms[t] for t in cfg.active_targets)
    return total, terms


def multitask_loss_torch(
    out: dict[str, tuple[torch.Tensor, torch.Tensor]],
    labels: dict[str, torch.Tensor],
    mask: torch.Tensor,
    cfg: LossConfig,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Batched, masked, differentiable version of multitask_loss.

    Frame scores at masked positions are zero by the model contract and are
    excluded here; F_u counts true frames only.
    """
    fmask = mask.to(next(iter(out.values()))[0].dtype)
    lengths = mask.sum(dim=1).to(fmask.dtype)
    terms: dict[str, torch.Tensor] = {}
    for t in cfg.active_targets:
        frames, utt = out[t]
        y = labels[t]
        utt_term = (y - utt) ** 2
        frame_term = (((y.unsqueeze(1) - frames) ** 2) * fmask).sum(dim=1) / lengths
        terms[t] = (utt_term + cfg.alpha(t) * frame_term).mean()
    total = sum(terms.values())
    return total, terms


def backward_and_check(loss: torch.Tensor, net: MultiTargetNet) -> None:
    """Backpropagate and verify every gradient is finite."""
    for p in net.parameters():
        p.grad = None
    loss.backward()
    for name, p in net.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteGradientError(name)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedUtterance:
    utt_id: str
    ps: np.ndarray | None  # (F, ps_bins) float32
    ssl: np.ndarray | None  # (F, ssl_dim) float32
    labels: UtteranceLabels
    n_frames: int


def prepare_utterances(
    records: list[ManifestRecord],
    stft_cfg: StftConfig,
    model_cfg: ModelConfig,
    embeddings_dir=None,
) -> list[PreparedUtterance]:
    """Extract per-utterance model inputs from audio and embedding files."""
    if "SSL" in model_cfg.branches and embeddings_dir is None:
        raise TrainingError("model uses the SSL branch but no embeddings directory was given")
    prepared = []
    for r in records:
        w = load_wav(r.wav_path, model_cfg.sample_rate)
        ps = stft_power(w, stft_cfg)
        n_frames = ps.num_frames
        ps_arr = ps.frames.astype(np.float32) if model_cfg.needs_ps else None
        ssl_arr = None
        if "SSL" in model_cfg.branches:
            mtie = Path(embeddings_dir) / f"{r.utt_id}.mtie"
            if not mtie.is_file():
                raise TrainingError(f"missing embeddings file for utterance {r.utt_id}: {mtie}")
            seq = read_embeddings(mtie)
            if seq.dim != model_cfg.ssl_dim:
                raise TrainingError(
                    f"{r.utt_id}: embeddings have dim {seq.dim}, model expects {model_cfg.ssl_dim}"
                )
            ssl_arr = align_to_frames(seq, n_frames, stft_cfg.frame_rate(model_cfg.sample_rate)).astype(np.float32)
        prepared.append(
            PreparedUtterance(
                utt_id=r.utt_id,
                ps=ps_arr,
                ssl=ssl_arr,
                labels=UtteranceLabels.from_record(r),
                n_frames=n_frames,
            )
        )
    return prepared


def require_labels(prepared: list[PreparedUtterance], targets) -> None:
    for p in prepared:
        for t in targets:
            if p.labels.get(t) is None:
                raise TrainingError(f"utterance {p.utt_id} is missing the label for active target {t}")


def fit_normalization(prepared: list[PreparedUtterance], net: MultiTargetNet) -> dict[str, np.ndarray]:
    """Per-frequency mean/std of the log-compressed PS and LFB branches."""
    cfg = net.cfg
    stats: dict[str, np.ndarray] = {}
    if not cfg.needs_ps:
        return stats
    all_ps = np.concatenate([p.ps for p in prepared], axis=0).astype(np.float64)
    if "PS" in cfg.branches:
        z = np.log(all_ps + 1e-10)
        stats["ps_log_mean"] = z.mean(axis=0).astype(np.float32)
        stats["ps_log_std"] = np.maximum(z.std(axis=0), 1e-4).astype(np.float32)
    if "LFB" in cfg.branches:
        w = net.lfb_weight.detach().numpy().astype(np.float64)
        e = np.log(1e-8 + all_ps @ w.T)
        stats["lfb_mean"] = e.mean(axis=0).astype(np.float32)
        stats["lfb_std"] = np.maximum(e.std(axis=0), 1e-4).astype(np.float32)
    return stats


def collate(
    prepared: list[PreparedUtterance], targets, dtype=torch.float32
) -> tuple[torch.Tensor | None, torch.Tensor | None, torch.Tensor, dict[str, torch.Tensor]]:
    """Zero-pad a batch to its longest utterance and build the frame mask."""
    B = len(prepared)
    F = max(p.n_frames for p in prepared)
    mask = torch.zeros(B, F, dtype=torch.bool)
    ps = ssl = None
    if prepared[0].ps is not None:
        ps = torch.zeros(B, F, prepared[0].ps.shape[1], dtype=dtype)
    if prepared[0].ssl is not None:
        ssl = torch.zeros(B, F, prepared[0].ssl.shape[1], dtype=dtype)
    for b, p in enumerate(prepared):
        mask[b, : p.n_frames] = True
        if ps is not None:
            ps[b, : p.n_frames] = torch.as_tensor(p.ps, dtype=dtype)
        if ssl is not None:
            ssl[b, : p.n_frames] = torch.as_tensor(p.ssl, dtype=dtype)
    labels = {
        t: torch.tensor([p.labels.get(t) for p in prepared], dtype=dtype)
        for t in targets
        if all(p.labels.get(t) is not None for p in prepared)
    }
    return ps, ssl, mask, labels


def predict_scores(
    net: MultiTargetNet, prepared: list[PreparedUtterance], batch_size: int = 8
) -> dict[str, dict[str, float]]:
    """Utterance scores per target: {utt_id: {target: score}}."""
    net.eval()
    out: dict[str, dict[str, float]] = {p.utt_id: {} for p in prepared}
    with torch.no_grad():
        for i in range(0, len(prepared), batch_size):
            chunk = prepared[i : i + batch_size]
            ps, ssl, mask, _ = collate(chunk, net.cfg.active_targets)
            scores = net(ps, ssl, mask)
            for t, (_, utt) in scores.items():
                for b, p in enumerate(chunk):
                    out[p.utt_id][t] = float(utt[b])
    return out


def score_pairs(
    prepared: list[PreparedUtterance], predictions: dict[str, dict[str, float]], targets
) -> dict[str, list[ScorePair]]:
    pairs: dict[str, list[ScorePair]] = {t: [] for t in targets}
    for p in prepared:
        for t in targets:
            truth = p.labels.get(t)
            if truth is not None and t in predictions[p.utt_id]:
                pairs[t].append(ScorePair(truth=truth, predicted=predictions[p.utt_id][t], utt_id=p.utt_id))
    return pairs


def _safe_lcc(pairs: list[ScorePair]) -> float | None:
    try:
        return lcc([p.truth for p in pairs], [p.predicted for p in pairs])
    except Exception:
        return None


# ---------------------------------------------------------------------------
# checkpoint bridging
# ---------------------------------------------------------------------------

def save_model(path, net: MultiTargetNet, stft_cfg: StftConfig, loss_cfg: LossConfig, extra: dict[str, str] | None = None) -> None:
    config = {"format": "mti-model", "format_version": "1"}
    config.update({f"model.{k}": v for k, v in net.cfg.to_items().items()})
    config.update(
        {
            "stft.win_length": str(stft_cfg.win_length),
            "stft.hop_length": str(stft_cfg.hop_length),
            "stft.fft_size": str(stft_cfg.fft_size),
            "stft.window": stft_cfg.window,
        }
    )
    config.update({f"loss.{k}": v for k, v in loss_cfg.to_items().items()})
    if extra:
        config.update(extra)
    params = {name: p.detach().cpu().numpy().copy() for name, p in net.named_parameters()}
    norm = {name: b.detach().cpu().numpy().copy() for name, b in net.named_buffers()}
    ckpt.save_checkpoint(path, config, params, norm)


def load_model(path) -> tuple[MultiTargetNet, StftConfig, LossConfig, dict[str, str]]:
    config, params, norm = ckpt.load_checkpoint(path)
    if config.get("format") != "mti-model":
        raise CheckpointError(f"{path}: not a model checkpoint (format={config.get('format')})")
    model_cfg = ModelConfig.from_items({k[6:]: v for k, v in config.items() if k.startswith("model.")})
    stft_cfg = StftConfig(
        win_length=int(config["stft.win_length"]),
        hop_length=int(config["stft.hop_length"]),
        fft_size=int(config["stft.fft_size"]),
        window=config["stft.window"],
    )
    loss_cfg = LossConfig.from_items({k[5:]: v for k, v in config.items() if k.startswith("loss.")})
    net = MultiTargetNet(model_cfg)
    state = {}
    expected = dict(net.state_dict())
    for name, arr in {**params, **norm}.items():
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor '{name}'")
        if tuple(expected[name].shape) != arr.shape:
            raise CheckpointError(
                f"{path}: tensor '{name}' has shape {arr.shape}, model expects {tuple(expected[name].shape)}"
            )
        state[name] = torch.as_tensor(arr)
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    net.load_state_dict(state)
    return net, stft_cfg, loss_cfg, config


@dataclass
class TransferReport:
    copied: list[str]
    fresh: list[str]


def transfer_init(source_path, target_cfg: ModelConfig, stft_cfg: StftConfig) -> tuple[MultiTargetNet, TransferReport]:
    """Warm-start a new model from a checkpoint by name-and-shape matching.

    Trunk tensors (everything outside ``heads.``) must match shapes exactly;
    task heads absent from the source, or shape-incompatible, start fresh
    from the seeded initializer. Normalization statistics are not copied:
    the new training fits its own.
    """
    _, src_params, _ = ckpt.load_checkpoint(source_path)
    net = init_params(target_cfg, stft_cfg)
    copied: list[str] = []
    fresh: list[str] = []
    mismatched_trunk: list[str] = []
    with torch.no_grad():
        for name, p in net.named_parameters():
            src = src_params.get(name)
            if src is None:
                fresh.append(name)
                continue
            if tuple(src.shape) != tuple(p.shape):
                if name.startswith("heads."):
                    fresh.append(name)
                else:
                    mismatched_trunk.append(f"{name}: source {tuple(src.shape)} vs target {tuple(p.shape)}")
                continue
            p.copy_(torch.as_tensor(src, dtype=p.dtype))
            copied.append(name)
    if mismatched_trunk:
        raise CheckpointError("trunk shape mismatch: " + "; ".join(mismatched_trunk))
    return net, TransferReport(copied=copied, fresh=fresh)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint_path: Path | None
    best_epoch: int
    best_val_lcc: float | None
    epochs: list[dict]
    diverged: bool = False
    val_pairs: dict[str, list[ScorePair]] = field(default_factory=dict)
    net: MultiTargetNet | None = None


def _build_optimizer(net: MultiTargetNet, cfg: OptimConfig) -> torch.optim.Optimizer:
    if cfg.algorithm == "adam":
        return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    return torch.optim.SGD(net.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)


def train(
    records: list[ManifestRecord],
    stft_cfg: StftConfig,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    optim_cfg: OptimConfig,
    *,
    embeddings_dir=None,
    warm_start=None,
    ckpt_path=None,
    log_path=None,
    deterministic: bool | None = None,
    heartbeat=None,
) -> TrainResult:
    """Train a model and return the best-validation checkpoint.

    Early stopping keeps the epoch with the highest validation LCC on the
    intelligibility target (falling back to the first active target); ties
    go to the earliest epoch. A non-finite loss aborts the run and the last
    best state is kept.
    """
    if deterministic is None:
        deterministic = deterministic_requested()
    if deterministic:
        enable_determinism(optim_cfg.seed)
    if not records:
        raise TrainingError("training manifest is empty")
    if loss_cfg.active_targets != model_cfg.active_targets:
        raise TrainingError(
            f"loss targets {loss_cfg.active_targets} differ from model targets {model_cfg.active_targets}"
        )

    train_recs, val_recs = split_train_val(records, optim_cfg.val_fraction, optim_cfg.seed)
    prepared_train = prepare_utterances(train_recs, stft_cfg, model_cfg, embeddings_dir)
    prepared_val = prepare_utterances(val_recs, stft_cfg, model_cfg, embeddings_dir)
    require_labels(prepared_train, loss_cfg.active_targets)
    require_labels(prepared_val, loss_cfg.active_targets)

    transfer_report = None
    if warm_start is not None:
        net, transfer_report = transfer_init(warm_start, model_cfg, stft_cfg)
    else:
        net = init_params(model_cfg, stft_cfg)
    if model_cfg.normalize_inputs:
        net.set_normalization(fit_normalization(prepared_train, net))

    optimizer = _build_optimizer(net, optim_cfg)
    es_target = "I" if "I" in loss_cfg.active_targets else loss_cfg.active_targets[0]
    rng = np.random.default_rng(optim_cfg.seed + 1)

    best_state = copy.deepcopy(net.state_dict())
    best_lcc = -math.inf
    best_epoch = 0
    epochs_since_best = 0
    epoch_logs: list[dict] = []
    diverged = False

    n_train = len(prepared_train)
    for epoch in range(1, optim_cfg.epochs + 1):
        net.train()
        order = rng.permutation(n_train)
        sum_total = 0.0
        sum_terms = {"I": 0.0, "W": 0.0, "S": 0.0}
        for start in range(0, n_train, optim_cfg.batch_size):
            chunk = [prepared_train[int(i)] for i in order[start : start + optim_cfg.batch_size]]
            ps, ssl, mask, labels = collate(chunk, loss_cfg.active_targets)
            out = net(ps, ssl, mask)
            total, terms = multitask_loss_torch(out, labels, mask, loss_cfg)
            if not torch.isfinite(total):
                log.warning("epoch %d: non-finite loss, aborting with last good checkpoint", epoch)
                diverged = True
                break
            backward_and_check(total, net)
            if optim_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), optim_cfg.grad_clip)
            optimizer.step()
            net.project_constraints()
            sum_total += float(total.detach()) * len(chunk)
            for t in loss_cfg.active_targets:
                sum_terms[t] += float(terms[t].detach()) * len(chunk)
        if diverged:
            break

        net.eval()
        predictions = predict_scores(net, prepared_val, batch_size=max(optim_cfg.batch_size, 8))
        pairs = score_pairs(prepared_val, predictions, loss_cfg.active_targets)
        val_lcc = {t: _safe_lcc(pairs[t]) for t in loss_cfg.active_targets}

        record = {
            "epoch": epoch,
            "O": sum_total / n_train,
            "L_I": sum_terms["I"] / n_train,
            "L_W": sum_terms["W"] / n_train,
            "L_S": sum_terms["S"] / n_train,
            "val_lcc_I": val_lcc.get("I"),
            "val_lcc_W": val_lcc.get("W"),
            "val_lcc_S": val_lcc.get("S"),
        }
        epoch_logs.append(record)
        if heartbeat is not None:
            heartbeat(record)

        current = val_lcc.get(es_target)
        if current is not None and current > best_lcc:
            best_lcc = current
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > optim_cfg.patience:
                break

    net.load_state_dict(best_state)
    final_predictions = predict_scores(net, prepared_val, batch_size=max(optim_cfg.batch_size, 8))
    final_pairs = score_pairs(prepared_val, final_predictions, loss_cfg.active_targets)

    extra = {
        "train.best_epoch": str(best_epoch),
        "train.es_target": es_target,
        "train.n_train": str(len(prepared_train)),
        "train.n_val": str(len(prepared_val)),
    }
    extra.update({f"optim.{k}": v for k, v in optim_cfg.to_items().items()})
    if transfer_report is not None:
        extra["train.warm_start_copied"] = str(len(transfer_report.copied))
        extra["train.warm_start_fresh"] = str(len(transfer_report.fresh))
    if ckpt_path is not None:
        save_model(ckpt_path, net, stft_cfg, loss_cfg, extra)
    if log_path is not None:
        with open(log_path, "w") as f:
            for rec in epoch_logs:
                f.write(json.dumps(rec) + "\n")

    return TrainResult(
        checkpoint_path=Path(ckpt_path) if ckpt_path is not None else None,
        best_epoch=best_epoch,
        best_val_lcc=None if best_lcc == -math.inf else best_lcc,
        epochs=epoch_logs,
        diverged=diverged,
        val_pairs=final_pairs,
        net=net,
    )
