import numpy as np
import pytest

from posechat.data.records import generate_records
from posechat.errors import (
    ConfigError,
    DegenerateInput,
    MissingPoseToken,
    MultiplePoseTokens,
    SequenceTooLong,
)
from posechat.model import (
    ModelConfig,
    apply_adapters,
    extract_pose_embedding,
    forward,
    generate,
    init_weights,
    load_checkpoint,
    merge_adapters,
    pose_head,
    pose_head_raw,
    save_checkpoint,
)
from posechat.rotmath import is_rotation_matrix
from posechat.tok import ASSISTANT, BOS, EOS, POSE, USER


@pytest.fixture(scope="module")
def small_weights(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=2, n_heads=4, d_ff=64,
                      max_seq=128, lora_rank=4)
    return init_weights(cfg, seed=0)


def _tokens(rng, n, vocab_size):
    return rng.integers(8, vocab_size, size=n)


class TestConfig:
    def test_head_divisibility(self, vocab):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=len(vocab), d_model=30, n_heads=4)

    def test_rank_bound(self, vocab):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=len(vocab), d_model=16, lora_rank=16)


class TestForward:
    def test_shape_contract(self, small_weights, rng):
        cfg = small_weights.config
        for t in (1, 5, 30):
            toks = _tokens(rng, t, cfg.vocab_size)
            fp = forward(small_weights, None, toks)
            assert fp.logits.shape == (t, cfg.vocab_size)
            assert fp.hidden.shape == (t, cfg.d_model)

    def test_shape_with_observation_prefix(self, small_weights, rng):
        cfg = small_weights.config
        obs = rng.normal(size=(24, cfg.d_obs))
        toks = _tokens(rng, 10, cfg.vocab_size)
        fp = forward(small_weights, obs, toks)
        assert fp.logits.shape == (10, cfg.vocab_size)
        assert fp.prefix_len == 24

    def test_causality(self, small_weights, rng):
        cfg = small_weights.config
        toks = _tokens(rng, 12, cfg.vocab_size)
        base = forward(small_weights, None, toks).logits
        for t in range(1, 12):
            perturbed = toks.copy()
            perturbed[t] = (perturbed[t] + 1 - 8) % (cfg.vocab_size - 8) + 8
            out = forward(small_weights, None, perturbed).logits
            assert np.array_equal(out[:t], base[:t])
            assert not np.array_equal(out[t], base[t])

    def test_observation_attended_by_tokens(self, small_weights, rng):
        cfg = small_weights.config
        toks = _tokens(rng, 6, cfg.vocab_size)
        obs_a = rng.normal(size=(24, cfg.d_obs))
        obs_b = obs_a.copy()
        obs_b[23] += 1.0
        la = forward(small_weights, obs_a, toks).logits
        lb = forward(small_weights, obs_b, toks).logits
        assert not np.allclose(la, lb)

    def test_sequence_too_long(self, small_weights, rng):
        cfg = small_weights.config
        with pytest.raises(SequenceTooLong):
            forward(small_weights, None, _tokens(rng, cfg.max_seq + 1, cfg.vocab_size))
        obs = rng.normal(size=(120, cfg.d_obs))
        with pytest.raises(SequenceTooLong):
            forward(small_weights, obs, _tokens(rng, cfg.max_seq - 110, cfg.vocab_size))

    def test_deterministic(self, small_weights, rng):
        toks = _tokens(rng, 8, small_weights.config.vocab_size)
        a = forward(small_weights, None, toks).logits
        b = forward(small_weights, None, toks).logits
        assert np.array_equal(a, b)


class TestPoseEmbedding:
    def test_position_preceding_pose_token(self, small_weights, rng):
        toks = np.array([BOS, USER, 20, 21, ASSISTANT, 30, POSE, 8, EOS])
        fp = forward(small_weights, None, toks)
        e = extract_pose_embedding(fp.hidden, toks)
        assert np.array_equal(e, fp.hidden[5])  # position of token 30

    def test_missing_pose_token(self, small_weights, rng):
        toks = np.array([BOS, USER, 20, ASSISTANT, 8, EOS])
        fp = forward(small_weights, None, toks)
        with pytest.raises(MissingPoseToken):
            extract_pose_embedding(fp.hidden, toks)

    def test_multiple_pose_tokens(self, small_weights):
        toks = np.array([BOS, USER, 20, ASSISTANT, POSE, POSE, EOS])
        fp = forward(small_weights, None, toks)
        with pytest.raises(MultiplePoseTokens):
            extract_pose_embedding(fp.hidden, toks)


class TestPoseHead:
    def test_output_always_valid_rotations(self, small_weights, rng):
        for _ in range(20):
            e = rng.normal(size=small_weights.config.d_model) * 3.0
            pose = pose_head(small_weights, e)
            assert pose.shape == (24, 3, 3)
            assert is_rotation_matrix(pose, tol=1e-6)

    def test_zero_weights_identity_bias_gives_identity_pose(self, small_weights):
        # Initialization: w2 = 0, b2 = identity 6D per joint.
        e = np.zeros(small_weights.config.d_model)
        pose = pose_head(small_weights, e)
        assert np.abs(pose - np.eye(3)).max() < 1e-12

    def test_finite_difference_jacobian(self, vocab, rng):
        cfg = ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32)
        weights = init_weights(cfg, seed=3)
        # give w2 nonzero values so the jacobian is informative
        weights.params["pose_head.w2"] = rng.normal(0, 0.05, weights.params["pose_head.w2"].shape)
        e = rng.normal(size=cfg.d_model)
        raw, cache = pose_head_raw(weights, e)
        # analytic jacobian row-by-row via the backward helper
        from posechat.model import pose_head_backward

        eps = 1e-6
        for out_idx in rng.choice(144, size=12, replace=False):
            draw = np.zeros(144)
            draw[out_idx] = 1.0
            grads = {}
            de = pose_head_backward(weights, cache, draw, grads)
            for in_idx in rng.choice(cfg.d_model, size=4, replace=False):
                ep = e.copy()
                ep[in_idx] += eps
                em = e.copy()
                em[in_idx] -= eps
                fd = (pose_head_raw(weights, ep)[0][out_idx] - pose_head_raw(weights, em)[0][out_idx]) / (2 * eps)
                denom = max(abs(fd), abs(de[in_idx]), 1e-8)
                assert abs(fd - de[in_idx]) / denom < 1e-4

    def test_degenerate_head_output_raises(self, vocab):
        cfg = ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32)
        weights = init_weights(cfg, seed=0)
        weights.params["pose_head.b2"][:] = 0.0  # zero 6D columns are degenerate
        with pytest.raises(DegenerateInput):
            pose_head(weights, np.zeros(cfg.d_model))


class TestAdapters:
    def test_zero_b_is_bitwise_identity(self, small_weights, rng):
        adapted = apply_adapters(small_weights, seed=1)
        toks = _tokens(rng, 10, small_weights.config.vocab_size)
        obs = rng.normal(size=(24, small_weights.config.d_obs))
        base_fp = forward(small_weights, obs, toks)
        ad_fp = forward(adapted, obs, toks)
        assert np.array_equal(base_fp.logits, ad_fp.logits)
        assert np.array_equal(base_fp.hidden, ad_fp.hidden)

    def test_merge_of_zero_adapters_is_identity_on_weights(self, small_weights):
        adapted = apply_adapters(small_weights, seed=1)
        merged = merge_adapters(adapted)
        for name, value in small_weights.params.items():
            assert np.array_equal(merged.params[name], value)
        assert merged.adapters == {}

    def test_merged_equals_adapted_forward(self, small_weights, rng):
        adapted = apply_adapters(small_weights, seed=1)
        for name, (a, b) in adapted.adapters.items():
            b += rng.normal(0, 0.05, b.shape)
        merged = merge_adapters(adapted)
        for _ in range(20):
            toks = _tokens(rng, rng.integers(2, 20), small_weights.config.vocab_size)
            la = forward(adapted, None, toks).logits
            lm = forward(merged, None, toks).logits
            assert np.abs(la - lm).max() < 1e-6

    def test_apply_leaves_base_untouched(self, small_weights):
        before = {k: v.copy() for k, v in small_weights.params.items()}
        adapted = apply_adapters(small_weights, seed=2)
        for name, (a, b) in adapted.adapters.items():
            b += 1.0
        for name, value in before.items():
            assert np.array_equal(small_weights.params[name], value)

    def test_adapter_update_has_bounded_rank(self, small_weights, rng):
        adapted = apply_adapters(small_weights, seed=1)
        name = next(iter(adapted.adapters))
        a, b = adapted.adapters[name]
        b += rng.normal(0, 1.0, b.shape)
        delta = merge_adapters(adapted).params[name] - adapted.params[name]
        rank = np.linalg.matrix_rank(delta, tol=1e-10)
        assert rank <= adapted.config.lora_rank


class TestGenerate:
    def test_greedy_deterministic(self, small_weights, rng):
        prompt = [BOS, USER, 20, 21, ASSISTANT]
        a = generate(small_weights, None, prompt, max_new=10)
        b = generate(small_weights, None, prompt, max_new=10)
        assert a[0] == b[0]

    def test_stops_at_eos_or_max_new(self, small_weights):
        prompt = [BOS, USER, 20, ASSISTANT]
        tokens, _ = generate(small_weights, None, prompt, max_new=7)
        assert len(tokens) <= 7
        if EOS in tokens:
            assert tokens[-1] == EOS

    def test_no_pose_token_no_pose(self, small_weights):
        prompt = [BOS, USER, 20, ASSISTANT]
        tokens, pose = generate(small_weights, None, prompt, max_new=6)
        if POSE not in tokens:
            assert pose is None
        else:
            assert pose is not None

    def test_sampled_mode_is_seeded(self, small_weights):
        prompt = [BOS, USER, 20, ASSISTANT]
        a = generate(small_weights, None, prompt, max_new=8, mode="sampled", temperature=1.0, seed=4)
        b = generate(small_weights, None, prompt, max_new=8, mode="sampled", temperature=1.0, seed=4)
        assert a[0] == b[0]

    def test_unknown_mode_rejected(self, small_weights):
        with pytest.raises(ConfigError):
            generate(small_weights, None, [BOS], 4, mode="beam")


class TestCheckpoint:
    def test_round_trip(self, small_weights, vocab, tmp_path, rng):
        adapted = apply_adapters(small_weights, seed=1)
        for name, (a, b) in adapted.adapters.items():
            b += rng.normal(0, 0.01, b.shape)
        path = tmp_path / "model.ckpt"
        save_checkpoint(adapted, vocab, path)
        loaded, loaded_vocab = load_checkpoint(path)
        assert loaded_vocab.tokens == vocab.tokens
        assert loaded.config == adapted.config
        for name, value in adapted.params.items():
            assert np.array_equal(loaded.params[name], value)
        for name, (a, b) in adapted.adapters.items():
            assert np.array_equal(loaded.adapters[name][0], a)
            assert np.array_equal(loaded.adapters[name][1], b)
        save_checkpoint(loaded, loaded_vocab, tmp_path / "again.ckpt")
        assert (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{}")
        with pytest.raises(ConfigError):
            load_checkpoint(path)
