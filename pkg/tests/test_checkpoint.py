import pytest
import torch

from metaed.checkpoint import Checkpoint, build_model, load_checkpoint, save_checkpoint
from metaed.encoder import EncoderConfig, TriggerPromptEncoder, make_batch
from metaed.errors import ConfigurationError


def make_checkpoint():
    torch.manual_seed(3)
    config = EncoderConfig(vocab_size=30, max_len=16, num_layers=1, num_heads=2, hidden_dim=8)
    model = TriggerPromptEncoder(config)
    return Checkpoint(
        encoder_config=config,
        params={k: v.detach().clone() for k, v in model.state_dict().items()},
        alpha=torch.rand(5, 3),
        alpha_groups=("a", "b", "c", "d", "e"),
        template="B",
        feature_mode="full",
        extra={"seed": 1, "note": "roundtrip"},
    )


class TestCheckpointRoundTrip:
    def test_bit_exact(self, tmp_path):
        ckpt = make_checkpoint()
        path = save_checkpoint(ckpt, tmp_path / "model.pt")
        loaded = load_checkpoint(path)
        assert loaded.encoder_config == ckpt.encoder_config
        assert loaded.template == "B" and loaded.feature_mode == "full"
        assert loaded.alpha_groups == ckpt.alpha_groups
        assert loaded.extra == ckpt.extra
        assert torch.equal(loaded.alpha, ckpt.alpha)
        assert set(loaded.params) == set(ckpt.params)
        for name in ckpt.params:
            assert torch.equal(loaded.params[name], ckpt.params[name]), name

    def test_rebuilt_model_forward_is_identical(self, tmp_path):
        ckpt = make_checkpoint()
        path = save_checkpoint(ckpt, tmp_path / "model.pt")
        model = build_model(load_checkpoint(path))
        from metaed.data import Example

        batch = make_batch([Example((12, 13, 14), (1, 2), 0)], "A", 16)
        ref = TriggerPromptEncoder(ckpt.encoder_config)
        ref.load_state_dict(ckpt.params)
        with torch.no_grad():
            h1, a1 = model(batch.tokens, batch.valid)
            h2, a2 = ref(batch.tokens, batch.valid)
        assert torch.equal(h1, h2) and torch.equal(a1, a2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_checkpoint(tmp_path / "none.pt")

    def test_version_guard(self, tmp_path):
        ckpt = make_checkpoint()
        path = save_checkpoint(ckpt, tmp_path / "model.pt")
        payload = torch.load(path, weights_only=True)
        payload["version"] = 99
        torch.save(payload, path)
        with pytest.raises(ConfigurationError, match="version"):
            load_checkpoint(path)
