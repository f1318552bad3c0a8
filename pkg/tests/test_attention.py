"""Attention, windowing, shifting, and masking tests."""

import math

import numpy as np
import pytest

from stimpute.attention import (
    AttentionParams,
    SwBlockParams,
    WindowSpec,
    attention,
    attention_weights,
    cyclic_shift,
    inverse_shift,
    msa,
    sw_attention_mask,
    sw_msa,
    sw_msa_stack,
    window_merge,
    window_partition,
)
from stimpute.autodiff import Parameter, Tensor, check_gradients
from stimpute.errors import ConfigError, ContractError, ShapeError
from stimpute.rng import Rng


def scalar_attention_oracle(q, k, v):
    """Pure-Python transcription of softmax(QK^T/sqrt(dk))V."""
    n, dk = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        scores = [
            sum(q[i, a] * k[j, a] for a in range(dk)) / math.sqrt(dk)
            for j in range(n)
        ]
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        total = sum(exps)
        for j in range(n):
            out[i] += (exps[j] / total) * v[j]
    return out


class TestAttention:
    def test_single_token_weight_one(self):
        q = Tensor([[1.0, 2.0]])
        v = Tensor([[5.0, -3.0]])
        out = attention(q, q, v)
        np.testing.assert_array_equal(out.data, v.data)
        w = attention_weights(q, q)
        assert w.data[0, 0] == 1.0

    def test_identical_keys_average_values(self):
        q = Tensor([[0.3, 0.7]])
        k = Tensor([[1.0, 1.0], [1.0, 1.0]])
        v = Tensor([[0.0, 2.0], [4.0, 6.0]])
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data, [[2.0, 4.0]], atol=1e-15)

    def test_matches_scalar_oracle(self):
        rng = Rng(17)
        q = rng.normal(size=(3, 2))
        k = rng.normal(size=(3, 2))
        v = rng.normal(size=(3, 2))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(
            out.data, scalar_attention_oracle_cross(q, k, v), atol=1e-12, rtol=0
        )

    def test_weights_are_distribution(self):
        rng = Rng(19)
        q = Tensor(rng.normal(size=(4, 6, 3)))
        w = attention_weights(q, q)
        assert (w.data >= 0).all()
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_masked_pairs_get_exact_zero(self):
        rng = Rng(23)
        q = Tensor(rng.normal(size=(4, 3)))
        mask = np.zeros((4, 4))
        mask[0, 2] = mask[3, 1] = -1e9
        w = attention_weights(q, q, mask)
        assert w.data[0, 2] == 0.0
        assert w.data[3, 1] == 0.0
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_fully_blocked_row_rejected(self):
        q = Tensor(np.ones((2, 2)))
        mask = np.array([[0.0, 0.0], [-1e9, -1e9]])
        with pytest.raises(ContractError):
            attention_weights(q, q, mask)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            attention_weights(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def scalar_attention_oracle_cross(q, k, v):
    n, dk = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        scores = [
            sum(q[i, a] * k[j, a] for a in range(dk)) / math.sqrt(dk)
            for j in range(n)
        ]
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        total = sum(exps)
        for j in range(n):
            out[i] += (exps[j] / total) * v[j]
    return out


class TestMsa:
    def test_single_head_reduces_to_attention(self):
        rng = Rng(29)
        params = AttentionParams("t", 6, 1, rng.derive("p"))
        x = Tensor(rng.normal(size=(5, 6)))
        out = msa(x, params)
        q = x.data @ params.wq.data[0]
        k = x.data @ params.wk.data[0]
        v = x.data @ params.wv.data[0]
        expected = attention(Tensor(q), Tensor(k), Tensor(v)).data @ params.wo.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_two_heads_with_block_projections(self):
        rng = Rng(31)
        params = AttentionParams("t", 4, 2, rng.derive("p"))
        half = np.vstack([np.eye(2), np.zeros((2, 2))])
        lower = np.vstack([np.zeros((2, 2)), np.eye(2)])
        for w in (params.wq, params.wk, params.wv):
            w.tensor.data = np.stack([half, lower])
        params.wo.tensor.data = np.eye(4)
        x = rng.normal(size=(5, 4))
        out = msa(Tensor(x), params)
        a = attention(Tensor(x[:, :2]), Tensor(x[:, :2]), Tensor(x[:, :2])).data
        b = attention(Tensor(x[:, 2:]), Tensor(x[:, 2:]), Tensor(x[:, 2:])).data
        np.testing.assert_allclose(out.data, np.concatenate([a, b], axis=1), atol=1e-12)

    def test_zero_output_map(self):
        rng = Rng(37)
        params = AttentionParams("t", 4, 1, rng.derive("p"))
        params.wo.tensor.data = np.zeros((4, 4))
        out = msa(Tensor(rng.normal(size=(3, 4))), params)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_head_count_must_divide(self):
        with pytest.raises(ConfigError):
            AttentionParams("t", 6, 4, Rng(0))


class TestWindows:
    def test_partition_counts(self):
        spec = WindowSpec(4, 4)
        grid = Tensor(Rng(0).normal(size=(12, 12, 3)))
        wins = window_partition(grid, spec)
        assert wins.shape == (9, 16, 3)
        single = window_partition(Tensor(Rng(1).normal(size=(4, 4, 2))), spec)
        assert single.shape == (1, 16, 2)

    def test_round_trip(self):
        spec = WindowSpec(4, 4)
        grid = Tensor(Rng(3).normal(size=(2, 12, 8, 5)))
        back = window_merge(window_partition(grid, spec), spec, 12, 8)
        np.testing.assert_array_equal(back.data, grid.data)

    def test_window_contents_are_contiguous_blocks(self):
        grid = np.arange(16.0).reshape(4, 4, 1)
        wins = window_partition(Tensor(grid), WindowSpec(2, 2))
        np.testing.assert_array_equal(wins.data[0, :, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(wins.data[3, :, 0], [10, 11, 14, 15])

    def test_non_divisible_rejected(self):
        with pytest.raises(ConfigError):
            window_partition(Tensor(np.zeros((10, 10, 1))), WindowSpec(4, 4))

    def test_bad_shift(self):
        with pytest.raises(ConfigError):
            WindowSpec(4, 4, shift=4)


class TestCyclicShift:
    def test_zero_shift_identity(self):
        g = Tensor(Rng(5).normal(size=(4, 4, 2)))
        assert cyclic_shift(g, 0) is g

    def test_inverse(self):
        g = Tensor(Rng(7).normal(size=(6, 6, 3)))
        np.testing.assert_array_equal(inverse_shift(cyclic_shift(g, 2), 2).data, g.data)

    def test_origin_lands_at_far_corner(self):
        g = np.zeros((4, 4, 1))
        g[0, 0, 0] = 1.0
        shifted = cyclic_shift(Tensor(g), 2)
        assert shifted.data[2, 2, 0] == 1.0
        assert shifted.data.sum() == 1.0


def brute_force_blocked_pairs(height, width, wh, ww, shift):
    """Enumerate blocked (window, query, key) triples from first principles."""
    region = {}
    for r in range(height):
        for c in range(width):
            region[(r, c)] = (r // wh, c // ww)
    shifted = {}
    for r in range(height):
        for c in range(width):
            shifted[(r, c)] = region[((r + shift) % height, (c + shift) % width)]
    blocked = set()
    n_w = width // ww
    for wr in range(height // wh):
        for wc in range(n_w):
            widx = wr * n_w + wc
            cells = [
                (wr * wh + i, wc * ww + j) for i in range(wh) for j in range(ww)
            ]
            for p, cp in enumerate(cells):
                for q, cq in enumerate(cells):
                    if shifted[cp] != shifted[cq]:
                        blocked.add((widx, p, q))
    return blocked


class TestSwMask:
    def test_zero_shift_all_zero(self):
        mask = sw_attention_mask(8, 8, WindowSpec(4, 4, 0))
        np.testing.assert_array_equal(mask, 0.0)

    def test_diagonal_always_open(self):
        mask = sw_attention_mask(8, 8, WindowSpec(4, 4, 2))
        for w in range(mask.shape[0]):
            np.testing.assert_array_equal(np.diag(mask[w]), 0.0)

    def test_matches_brute_force_enumeration(self):
        spec = WindowSpec(4, 4, 2)
        mask = sw_attention_mask(8, 8, spec)
        got = {
            (w, p, q)
            for w, p, q in zip(*np.nonzero(mask < 0))
        }
        assert got == brute_force_blocked_pairs(8, 8, 4, 4, 2)

    def test_every_query_keeps_a_partner(self):
        mask = sw_attention_mask(12, 12, WindowSpec(4, 4, 2))
        assert (mask == 0.0).any(axis=-1).all()


class TestSwMsa:
    def test_full_window_no_shift_equals_msa(self):
        rng = Rng(41)
        params = AttentionParams("t", 8, 1, rng.derive("p"))
        for trial in range(5):
            grid = Tensor(rng.normal(size=(4, 4, 8)))
            windowed = sw_msa(grid, WindowSpec(4, 4, 0), params)
            tokens = grid.reshape(16, 8)
            plain = msa(tokens, params).reshape(4, 4, 8)
            np.testing.assert_allclose(windowed.data, plain.data, atol=1e-10, rtol=0)

    def test_constant_grid_constant_output(self):
        rng = Rng(43)
        params = AttentionParams("t", 6, 1, rng.derive("p"))
        grid = Tensor(np.full((8, 8, 6), 0.37))
        out = sw_msa(grid, WindowSpec(4, 4, 2), params)
        expected = np.broadcast_to(out.data[0, 0], (8, 8, 6))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_unshifted_outputs_are_window_local(self):
        rng = Rng(47)
        params = AttentionParams("t", 4, 1, rng.derive("p"))
        spec = WindowSpec(4, 4, 0)
        base = rng.normal(size=(12, 12, 4))
        ref = sw_msa(Tensor(base), spec, params).data
        for wr in range(3):
            for wc in range(3):
                sl = (slice(wr * 4, wr * 4 + 4), slice(wc * 4, wc * 4 + 4))
                outside = np.ones((12, 12), dtype=bool)
                outside[sl] = False
                poked = base.copy()
                poked[outside] += rng.normal(size=(128, 4))
                out = sw_msa(Tensor(poked), spec, params).data
                np.testing.assert_array_equal(out[sl], ref[sl])

    def test_shifted_influence_stays_in_region_group(self):
        # With the region mask, a shifted block attends within the
        # intersection of the post-shift window and the pre-shift region,
        # so poking (0,0) reaches exactly the 2x2 corner group.
        rng = Rng(53)
        params = AttentionParams("t", 4, 1, rng.derive("p"))
        base = rng.normal(size=(8, 8, 4))
        ref = sw_msa(Tensor(base), WindowSpec(4, 4, 2), params).data
        poked = base.copy()
        poked[0, 0] += 1.0
        out = sw_msa(Tensor(poked), WindowSpec(4, 4, 2), params).data
        changed = np.any(out != ref, axis=-1)
        expected = np.zeros((8, 8), dtype=bool)
        expected[:2, :2] = True
        np.testing.assert_array_equal(changed, expected)


def make_stack(c, schedule, rng):
    blocks = []
    for j, spec in enumerate(schedule):
        blocks.append(
            SwBlockParams(
                attn=AttentionParams(f"b{j}", c, 1, rng.derive("attn", j)),
                gamma=Parameter(f"b{j}.gamma", np.ones(c)),
                beta=Parameter(f"b{j}.beta", np.zeros(c)),
            )
        )
    return blocks


class TestSwStack:
    def test_single_spec_is_one_residual_block(self):
        rng = Rng(59)
        schedule = [WindowSpec(4, 4, 0)]
        blocks = make_stack(6, schedule, rng)
        grid = Tensor(rng.normal(size=(8, 8, 6)))
        out = sw_msa_stack(grid, schedule, blocks)
        from stimpute.autodiff import layer_norm

        manual = layer_norm(
            grid + sw_msa(grid, schedule[0], blocks[0].attn),
            blocks[0].gamma.tensor,
            blocks[0].beta.tensor,
        )
        np.testing.assert_array_equal(out.data, manual.data)

    def test_default_schedule_runs(self):
        rng = Rng(61)
        schedule = [WindowSpec(4, 4, 0), WindowSpec(4, 4, 2)]
        blocks = make_stack(4, schedule, rng)
        out = sw_msa_stack(Tensor(rng.normal(size=(12, 12, 4))), schedule, blocks)
        assert out.shape == (12, 12, 4)

    def test_zero_attention_collapses_to_iterated_norm(self):
        rng = Rng(67)
        schedule = [WindowSpec(4, 4, 0), WindowSpec(4, 4, 2)]
        blocks = make_stack(4, schedule, rng)
        for b in blocks:
            b.attn.wo.tensor.data = np.zeros((4, 4))
        grid = Tensor(rng.normal(size=(4, 4, 4)))
        out = sw_msa_stack(grid, schedule, blocks)
        from stimpute.autodiff import layer_norm

        ones, zeros = Tensor(np.ones(4)), Tensor(np.zeros(4))
        expected = layer_norm(layer_norm(grid, ones, zeros), ones, zeros)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_empty_schedule_rejected(self):
        with pytest.raises(ContractError):
            sw_msa_stack(Tensor(np.zeros((4, 4, 2))), [], [])

    def test_gradients_through_stack(self):
        rng = Rng(71)
        schedule = [WindowSpec(2, 2, 0), WindowSpec(2, 2, 1)]
        blocks = make_stack(4, schedule, rng)
        x = Tensor(rng.normal(size=(4, 4, 4)))
        probe = rng.normal(size=(4, 4, 4))
        tensors = [x]
        for b in blocks:
            tensors.extend(p.tensor for p in b.parameters())

        def f(*ts):
            return (sw_msa_stack(ts[0], schedule, blocks) * probe).sum()

        assert check_gradients(f, tensors) < 1e-4
