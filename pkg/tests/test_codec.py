"""Quantization, delta coding, entropy coding, and the wire format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsoft import (
    DecodeError,
    ProtocolError,
    FormatError,
    MessageMode,
    ValidationError,
    decode_message,
    delta_decode,
    delta_encode,
    empirical_entropy,
    encode_upstream,
    entropy_code,
    entropy_decode,
    message_from_bytes,
    quantize,
    quantize_matrix,
)
from fedsoft.codec import DeltaMessage, EncodedMessage, QuantizedLabels, wire_round32

from _oracles import brute_force_min_l1, exact_l1, grid_rows


class TestQuantize:
    def test_b1_is_maximum_vote(self):
        assert np.array_equal(quantize(np.array([0.2, 0.5, 0.3]), 1), [0, 1, 0])

    def test_frozen_b2_example(self):
        grid = quantize(np.array([0.6, 0.25, 0.15]), 2)
        assert np.array_equal(grid, [2, 1, 0])
        err = np.abs(grid / 3.0 - [0.6, 0.25, 0.15]).sum()
        assert err == pytest.approx(0.3, abs=1e-12)

    def test_grid_point_is_fixed_point(self):
        p = np.array([1.0, 1.0, 1.0]) / 3.0
        grid = quantize(p, 2)
        assert np.array_equal(grid, [1, 1, 1])
        assert np.abs(grid / 3.0 - p).sum() == 0.0

    def test_non_stochastic_rejected(self):
        with pytest.raises(ValidationError):
            quantize(np.array([0.5, 0.2]), 2)
        with pytest.raises(ValidationError):
            quantize(np.array([1.2, -0.2]), 2)

    def test_bit_depth_range(self):
        p = np.array([0.5, 0.5])
        with pytest.raises(ValidationError):
            quantize(p, 0)
        with pytest.raises(ValidationError):
            quantize(p, 17)

    @pytest.mark.parametrize("c", [2, 3, 4])
    @pytest.mark.parametrize("b", [1, 2, 3])
    def test_matches_brute_force_oracle(self, c, b):
        rng = np.random.default_rng(c * 31 + b)
        rows = rng.dirichlet(np.ones(c), size=100)
        k = 2**b - 1
        for row in rows:
            grid = quantize(row, b, rng=np.random.default_rng(0))
            assert exact_l1(row, grid, k) == brute_force_min_l1(row, b)

    def test_monotone_refinement_on_frozen_rows(self):
        rng = np.random.default_rng(77)
        rows = rng.dirichlet(np.ones(10), size=500)
        for row in rows:
            errors = [
                np.abs(quantize(row, b) / (2**b - 1) - row).sum() for b in (1, 2, 3, 4)
            ]
            assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errors, errors[1:]))

    def test_tie_break_is_seeded_and_varies(self):
        p = np.array([0.5, 0.5])
        fixed = quantize(p, 1, rng=np.random.default_rng(5))
        assert np.array_equal(fixed, quantize(p, 1, rng=np.random.default_rng(5)))
        picks = {
            tuple(quantize(p, 1, rng=np.random.default_rng(s)).tolist())
            for s in range(40)
        }
        assert picks == {(1, 0), (0, 1)}


class TestQuantizeMatrix:
    def test_b1_one_hot_rows_keep_argmax(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 5, size=20)
        y = np.eye(5)[labels]
        q = quantize_matrix(y, 1)
        assert np.array_equal(q.class_ids, labels + 1)

    def test_empty_matrix(self):
        q = quantize_matrix(np.zeros((0, 4)), 2)
        assert q.n == 0 and q.C == 4 and q.grid.shape == (0, 4)

    def test_sum_constraint_exact(self):
        rng = np.random.default_rng(8)
        y = rng.dirichlet(np.ones(10), size=100)
        q = quantize_matrix(y, 3)
        assert np.all(q.grid.sum(axis=1) == 7)

    def test_dequantize_row_stochastic(self):
        rng = np.random.default_rng(9)
        q = quantize_matrix(rng.dirichlet(np.ones(6), size=50), 4)
        # integer sums are exact; the float division costs at most an ulp
        assert np.all(q.grid.sum(axis=1) == 15)
        assert np.allclose(q.dequantize().sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_class_ids_only_for_b1(self):
        q = quantize_matrix(np.full((2, 2), 0.5), 2, rng=np.random.default_rng(0))
        with pytest.raises(ValidationError):
            q.class_ids

    @given(
        st.integers(min_value=1, max_value=60).flatmap(
            lambda n: st.tuples(
                st.just(n),
                st.integers(min_value=2, max_value=8),
                st.integers(min_value=1, max_value=6),
                st.integers(min_value=0, max_value=2**31),
            )
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_sum_constraint_property(self, case):
        n, c, b, seed = case
        rng = np.random.default_rng(seed)
        y = rng.dirichlet(np.full(c, 0.7), size=n)
        q = quantize_matrix(y, b, rng=np.random.default_rng(seed))
        assert np.all(q.grid.sum(axis=1) == 2**b - 1)
        assert q.grid.min() >= 0 and q.grid.max() <= 2**b - 1


def one_hot_quantized(class_ids, C):
    ids = np.asarray(class_ids)
    grid = np.zeros((ids.size, C), dtype=np.int32)
    grid[np.arange(ids.size), ids - 1] = 1
    return QuantizedLabels(n=ids.size, C=C, b=1, grid=grid)


class TestDeltaCoding:
    def test_encode_example(self):
        prev = one_hot_quantized([2, 2, 1, 3], 3)
        curr = one_hot_quantized([2, 3, 1, 3], 3)
        msg = delta_encode(curr, prev)
        assert np.array_equal(msg.symbols, [0, 3, 0, 0])

    def test_identical_messages_give_zeros(self):
        q = one_hot_quantized([1, 2, 3], 3)
        assert np.array_equal(delta_encode(q, q).symbols, [0, 0, 0])

    def test_first_round_full_message(self):
        curr = one_hot_quantized([1, 2], 2)
        msg = delta_encode(curr, None)
        assert np.array_equal(msg.symbols, [1, 2])

    def test_decode_example(self):
        prev = one_hot_quantized([2, 2, 1, 3], 3)
        msg = DeltaMessage(n=4, C=3, symbols=np.array([0, 3, 0, 0]), reference_round=1)
        assert np.array_equal(delta_decode(msg, prev).class_ids, [2, 3, 1, 3])

    def test_all_zero_symbols_keep_prev(self):
        prev = one_hot_quantized([3, 1, 2], 3)
        msg = DeltaMessage(n=3, C=3, symbols=np.zeros(3, dtype=np.int64), reference_round=1)
        assert np.array_equal(delta_decode(msg, prev).class_ids, [3, 1, 2])

    def test_round_trip_random_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(5):
            prev = one_hot_quantized(rng.integers(1, 11, size=1000), 10)
            curr = one_hot_quantized(rng.integers(1, 11, size=1000), 10)
            msg = delta_encode(curr, prev)
            assert np.array_equal(delta_decode(msg, prev).class_ids, curr.class_ids)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            delta_encode(one_hot_quantized([1, 2], 2), one_hot_quantized([1], 2))

    def test_missing_reference_rejected(self):
        msg = DeltaMessage(n=2, C=2, symbols=np.array([0, 1]), reference_round=3)
        with pytest.raises(ProtocolError, match="reference"):
            delta_decode(msg, None)

    def test_round_trip_preserves_reference_round(self):
        prev = one_hot_quantized([1, 2], 2)
        curr = one_hot_quantized([2, 2], 2)
        assert delta_encode(curr, prev).reference_round == 1
        assert delta_encode(curr, prev, reference_round=5).reference_round == 5
        assert delta_encode(curr, None).is_full
        with pytest.raises(ValidationError):
            delta_encode(curr, prev, reference_round=0)

    def test_delta_entropy_drops_when_mostly_unchanged(self):
        rng = np.random.default_rng(4)
        ids = rng.integers(1, 11, size=1000)
        curr_ids = ids.copy()
        changed = rng.choice(1000, size=50, replace=False)
        curr_ids[changed] = (ids[changed] % 10) + 1
        prev = one_hot_quantized(ids, 10)
        curr = one_hot_quantized(curr_ids, 10)
        h_delta = empirical_entropy(delta_encode(curr, prev).symbols)
        h_class = empirical_entropy(curr.class_ids - 1)
        assert h_delta < h_class


class TestEmpiricalEntropy:
    def test_uniform_ten_symbols(self):
        symbols = np.repeat(np.arange(10), 50)
        assert empirical_entropy(symbols) == pytest.approx(np.log2(10), abs=1e-12)

    def test_constant_sequence(self):
        assert empirical_entropy(np.zeros(100, dtype=int)) == 0.0

    def test_two_pairs_one_bit(self):
        assert empirical_entropy(np.array([7, 7, 9, 9])) == pytest.approx(1.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            empirical_entropy(np.array([], dtype=int))


class TestRangeCoder:
    def test_constant_stream_stays_tiny(self):
        payload = entropy_code(np.zeros(100_000, dtype=int), 10)
        assert len(payload) < 200
        assert np.array_equal(entropy_decode(payload, 10, 100_000), np.zeros(100_000))

    def test_uniform_stream_near_entropy(self):
        rng = np.random.default_rng(42)
        symbols = rng.integers(0, 10, size=10_000)
        payload = entropy_code(symbols, 10)
        bits = len(payload) * 8
        target = 10_000 * np.log2(10)
        assert bits <= target * 1.01
        assert bits >= target * 0.99
        assert np.array_equal(entropy_decode(payload, 10, 10_000), symbols)

    @pytest.mark.parametrize(
        "make",
        [
            lambda rng: np.zeros(10_000, dtype=int),
            lambda rng: rng.integers(0, 2, size=10_000),
            lambda rng: rng.integers(0, 10, size=10_000),
        ],
        ids=["H~0", "H~1", "H~log2(10)"],
    )
    def test_entropy_bound(self, make):
        rng = np.random.default_rng(7)
        symbols = make(rng)
        payload = entropy_code(symbols, 10)
        h_hat = empirical_entropy(symbols) if symbols.size else 0.0
        assert len(payload) * 8 <= symbols.size * (h_hat + 0.1) + 64

    def test_empty_stream(self):
        payload = entropy_code([], 4)
        assert payload == b""
        assert entropy_decode(payload, 4, 0).size == 0

    def test_out_of_alphabet_rejected(self):
        with pytest.raises(ValidationError):
            entropy_code([0, 3], 3)
        with pytest.raises(ValidationError):
            entropy_code([-1], 3)

    def test_truncated_payload_rejected(self):
        payload = entropy_code(np.arange(100) % 5, 5)
        with pytest.raises(DecodeError):
            entropy_decode(payload[: len(payload) // 2], 5, 100)
        with pytest.raises(DecodeError):
            entropy_decode(b"\x01\x02", 5, 100)

    def test_alphabet_cap(self):
        with pytest.raises(ValidationError):
            entropy_code([0], 1 << 17)

    @given(
        st.integers(min_value=2, max_value=40).flatmap(
            lambda a: st.lists(
                st.integers(min_value=0, max_value=a - 1), max_size=400
            ).map(lambda xs: (a, xs))
        )
    )
    @settings(max_examples=120, deadline=None)
    def test_round_trip_property(self, case):
        alphabet, symbols = case
        payload = entropy_code(symbols, alphabet)
        decoded = entropy_decode(payload, alphabet, len(symbols))
        assert np.array_equal(decoded, symbols)

    def test_adversarial_runs_round_trip(self):
        # long runs then rapid alternation stress the adaptive counts
        symbols = np.concatenate(
            [
                np.zeros(5000, dtype=int),
                np.tile([0, 1], 2500),
                np.full(5000, 2, dtype=int),
                np.random.default_rng(0).integers(0, 3, size=5000),
            ]
        )
        payload = entropy_code(symbols, 3)
        assert np.array_equal(entropy_decode(payload, 3, symbols.size), symbols)


# magic | version 1 | mode 0 | round 3 | sender 7 | n 2 | C 3 | b 32 |
# flags 1 (raw rows are self-contained) | payload length 24
GOLDEN_HEADER = (
    b"CFDM"
    + bytes([1, 0])
    + (3).to_bytes(4, "big")
    + (7).to_bytes(4, "big")
    + (2).to_bytes(4, "big")
    + (3).to_bytes(2, "big")
    + bytes([32, 1])
    + (24).to_bytes(8, "big")
)


class TestWireFormat:
    def test_header_is_thirty_bytes_with_exact_layout(self):
        y = np.array([[0.5, 0.25, 0.25], [0.125, 0.25, 0.625]])
        msg = encode_upstream(None, None, MessageMode.RAW32, y_raw=y, round_no=3, sender_id=7)
        raw = msg.to_bytes()
        assert raw[:30] == GOLDEN_HEADER
        assert len(raw) == 30 + 24

    def test_raw32_payload_is_little_endian_row_major(self):
        y = np.array([[0.5, 0.25, 0.25], [0.125, 0.25, 0.625]])
        msg = encode_upstream(None, None, MessageMode.RAW32, y_raw=y)
        floats = struct.unpack("<6f", msg.payload)
        assert floats == (0.5, 0.25, 0.25, 0.125, 0.25, 0.625)

    def test_message_round_trip_through_bytes(self):
        rng = np.random.default_rng(11)
        q = quantize_matrix(rng.dirichlet(np.ones(4), 20), 1, rng=rng)
        msg = encode_upstream(q, None, MessageMode.QUANTIZED, round_no=5, sender_id=9)
        parsed = message_from_bytes(msg.to_bytes())
        assert parsed.mode is MessageMode.QUANTIZED
        assert parsed.round_no == 5 and parsed.sender_id == 9
        assert parsed.n == 20 and parsed.C == 4 and parsed.b == 1
        assert np.array_equal(decode_message(parsed).grid, q.grid)

    def test_bad_magic_rejected_with_offset(self):
        raw = b"XFDM" + GOLDEN_HEADER[4:] + bytes(24)
        with pytest.raises(FormatError, match="offset 0"):
            message_from_bytes(raw)

    def test_bad_version_rejected(self):
        raw = b"CFDM" + bytes([9]) + GOLDEN_HEADER[5:] + bytes(24)
        with pytest.raises(FormatError):
            message_from_bytes(raw)

    def test_unknown_mode_rejected(self):
        raw = b"CFDM" + bytes([1, 7]) + GOLDEN_HEADER[6:] + bytes(24)
        with pytest.raises(FormatError):
            message_from_bytes(raw)

    def test_truncated_header_rejected(self):
        with pytest.raises(FormatError):
            message_from_bytes(GOLDEN_HEADER[:20])

    def test_payload_length_mismatch_rejected(self):
        raw = GOLDEN_HEADER + bytes(10)
        with pytest.raises(FormatError):
            message_from_bytes(raw)

    def test_wire_round32_matches_float32(self):
        rng = np.random.default_rng(0)
        y = rng.dirichlet(np.ones(5), 10)
        assert np.array_equal(wire_round32(y), y.astype(np.float32).astype(np.float64))


class TestEncodeUpstream:
    def test_raw32_exact_byte_count(self):
        y = np.full((80_000, 10), 0.1)
        msg = encode_upstream(None, None, MessageMode.RAW32, y_raw=y)
        assert len(msg.payload) == 3_200_000

    def test_raw32_decode_is_float32_rounded(self):
        rng = np.random.default_rng(5)
        y = rng.dirichlet(np.ones(3), 8)
        msg = encode_upstream(None, None, MessageMode.RAW32, y_raw=y)
        assert np.array_equal(decode_message(msg), wire_round32(y))

    def test_minimal_quantized_message(self):
        q = one_hot_quantized([2], 2)
        msg = encode_upstream(q, None, MessageMode.QUANTIZED)
        assert np.array_equal(decode_message(msg).class_ids, [2])

    def test_delta_on_identical_messages_is_tiny(self):
        rng = np.random.default_rng(2)
        ids = rng.integers(1, 11, size=10_000)
        q = one_hot_quantized(ids, 10)
        msg = encode_upstream(q, q, MessageMode.QUANTIZED_DELTA, round_no=2)
        assert not msg.is_full
        assert msg.bit_length <= 10_000 * 0.1 + 64
        assert np.array_equal(decode_message(msg, q).class_ids, ids)

    def test_delta_without_reference_is_full_flagged(self):
        q = one_hot_quantized([1, 2, 1], 2)
        msg = encode_upstream(q, None, MessageMode.QUANTIZED_DELTA, round_no=1)
        assert msg.is_full
        assert np.array_equal(decode_message(msg, None).class_ids, [1, 2, 1])

    def test_mode_input_mismatch_rejected(self):
        q = one_hot_quantized([1], 2)
        with pytest.raises(ValidationError):
            encode_upstream(None, None, MessageMode.RAW32, y_raw=None)
        with pytest.raises(ValidationError):
            encode_upstream(q, None, MessageMode.RAW32, y_raw=None)
        q2 = quantize_matrix(np.full((2, 2), 0.5), 2, rng=np.random.default_rng(0))
        with pytest.raises(ValidationError):
            encode_upstream(q2, None, MessageMode.QUANTIZED_DELTA)

    def test_corrupted_coded_payload_errors_or_differs(self):
        rng = np.random.default_rng(6)
        q = one_hot_quantized(rng.integers(1, 5, size=500), 4)
        msg = encode_upstream(q, None, MessageMode.QUANTIZED)
        broken = EncodedMessage(
            mode=msg.mode,
            round_no=msg.round_no,
            sender_id=msg.sender_id,
            n=msg.n,
            C=msg.C,
            b=msg.b,
            flags=msg.flags,
            payload=msg.payload[:-6],
        )
        with pytest.raises(DecodeError):
            decode_message(broken)
