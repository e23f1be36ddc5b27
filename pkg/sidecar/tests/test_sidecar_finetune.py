"""Fine-tuning behaviour: null updates, loss descent, head modes."""

import pytest
import torch

from mti_sidecar.finetune import finetune, load_finetuned_backbone
from mti_sidecar.model import SidecarConfig, SidecarError, load_backbone


def test_zero_lr_leaves_weights_unchanged(corpus, tmp_path):
    cfg = SidecarConfig(learning_rate=0.0, epochs=1, seed=4)
    finetune(corpus.train[:8], cfg, tmp_path / "w")
    tuned = load_finetuned_backbone(cfg, tmp_path / "w")
    base = load_backbone(cfg)
    for (na, pa), (nb, pb) in zip(base.state_dict().items(), tuned.state_dict().items()):
        assert na == nb
        assert torch.equal(pa, pb), na


def test_three_head_mode_logs_three_curves(corpus, tmp_path):
    cfg = SidecarConfig(heads=("I", "W", "S"), epochs=2, seed=1)
    records = finetune(corpus.train[:8], cfg, tmp_path / "w3")
    assert len(records) == 2
    assert set(records[0]) == {"epoch", "mse_I", "mse_W", "mse_S"}


def test_missing_label_errors(corpus, tmp_path):
    import dataclasses

    broken = [dataclasses.replace(corpus.train[0], wer=None)] + corpus.train[1:4]
    with pytest.raises(SidecarError, match="missing the label"):
        finetune(broken, SidecarConfig(heads=("I", "W", "S")), tmp_path / "wx")


def test_invalid_head_combo_rejected():
    with pytest.raises(SidecarError):
        SidecarConfig(heads=("W",))
