import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autorig.geometry import Skeleton, parent_map_from_root
from autorig.sequencer import (BOS, EOS, PAD, VOCAB_SIZE, TokenSequence, TokenizationError, dequantize,
                               detokenize, max_sequence_length, prefix_closed, quantize, sequence_valid,
                               tokenize)
from oracles import isomorphic_by_position, permute_storage, random_tree


def test_vocabulary_layout():
    assert (BOS, EOS, PAD, VOCAB_SIZE) == (128, 129, 130, 131)


def test_quantize_examples():
    assert quantize(-0.5) == 0
    assert quantize(0.5) == 127
    assert quantize(0.0) == 64
    assert dequantize(64) == pytest.approx(0.5 / 128)


def test_quantize_out_of_range():
    with pytest.raises(TokenizationError):
        quantize(0.6)


@given(st.floats(-0.5, 0.5))
def test_quantize_error_bounded(c):
    assert abs(dequantize(quantize(c)) - c) <= 1 / 256 + 1e-12


@given(st.integers(0, 127))
def test_bin_center_round_trip(b):
    assert quantize(dequantize(b)) == b


def _two_bone():
    j = np.array([[0.0, 0.0, -0.3], [0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
    bones = np.array([[0, 1], [1, 2]])
    return Skeleton(j, bones, 0, parent_map_from_root(bones, 3, 0))


def test_tokenize_layout():
    seq = tokenize(_two_bone(), "spatial")
    assert len(seq) == 6 * 2 + 2
    assert seq.tokens[0] == BOS and seq.tokens[-1] == EOS
    # joints sorted by z first: the z = -0.3 joint opens the stream, written z, y, x
    assert seq.tokens[1:4] == (quantize(-0.3), 64, 64)


def test_line_format_round_trip():
    seq = tokenize(_two_bone(), "hierarchical")
    assert TokenSequence.from_line(seq.to_line(), "hierarchical") == seq
    assert seq.to_line().startswith("BOS ") and seq.to_line().endswith(" EOS")


def test_colliding_joints_merge():
    j = np.array([[0.0, 0.0, 0.0], [0.001, 0.0, 0.0], [0.3, 0.0, 0.0]])
    s = Skeleton(j, [[0, 1], [1, 2]])
    seq = tokenize(s)
    assert seq.num_bones == 1


@pytest.mark.parametrize("mode", ["spatial", "hierarchical"])
def test_round_trip_random_trees(mode, rng):
    for n in range(2, 15):
        s = random_tree(rng, n)
        back = detokenize(tokenize(s, mode))
        assert back.valid
        assert isomorphic_by_position(s, back.skeleton, 1 / 256 + 1e-12)


def test_hierarchical_decode_recovers_parents(rng):
    for _ in range(20):
        s = random_tree(rng, 8)
        d = detokenize(tokenize(s, "hierarchical")).skeleton
        # the decoded root sits at the original root's bin center
        assert np.abs(d.joints[d.root] - s.joints[s.root]).max() <= 1 / 256
        assert d.parent is not None and len(d.parent) == 7


@pytest.mark.parametrize("mode", ["spatial", "hierarchical"])
def test_storage_permutation_invariance(mode, rng):
    for _ in range(10):
        s = random_tree(rng, 9)
        ref = tokenize(s, mode)
        for _ in range(5):
            assert tokenize(permute_storage(s, rng), mode) == ref


def test_hierarchical_prefix_closed(rng):
    for _ in range(30):
        assert prefix_closed(tokenize(random_tree(rng, 10), "hierarchical"))


def test_partial_bone_dropped():
    toks = list(tokenize(_two_bone()).tokens)
    cut = toks[:1 + 6 + 4]
    d = detokenize(cut)
    assert d.dropped_tokens == 4 and not d.terminated and not d.valid
    assert d.skeleton.num_bones == 1


def test_no_complete_bone_errors():
    with pytest.raises(TokenizationError):
        detokenize([BOS, 1, 2, 3, EOS])


def test_self_loop_bone_is_repaired():
    toks = [BOS, 1, 2, 3, 1, 2, 3, 1, 2, 3, 9, 9, 9, EOS]
    d = detokenize(toks)
    assert d.repaired and d.skeleton.num_bones == 1


def test_hierarchical_detached_bone_is_repaired():
    a, b, c, e = (10, 10, 10), (20, 20, 20), (30, 30, 30), (40, 40, 40)
    toks = [BOS, *a, *b, *c, *e, EOS]
    d = detokenize(toks, "hierarchical")
    assert d.repaired and not d.valid


def test_sequence_valid():
    seq = tokenize(_two_bone())
    assert sequence_valid(seq.tokens)
    assert not sequence_valid(seq.tokens[:-1])
    assert not sequence_valid([BOS, EOS])


def test_max_sequence_length():
    assert max_sequence_length(100) == 602


def _at_bins(bins):
    """Coordinates at the centers of the given (x, y, z) bins."""
    return (np.asarray(bins, dtype=np.float64) + 0.5) / 128 - 0.5


def _bones_from_stream(seq):
    """Token stream as a list of ((z, y, x), (z, y, x)) bin pairs."""
    t = seq.tokens[1:-1]
    return [(tuple(t[k:k + 3]), tuple(t[k + 3:k + 6])) for k in range(0, len(t), 6)]


def test_one_bone_example():
    s = Skeleton(_at_bins([[64, 64, 127], [64, 64, 64]]), [[0, 1]])
    assert tokenize(s).tokens == (BOS, 64, 64, 64, 127, 64, 64, EOS)


def test_star_canonical_over_all_storage_orders(rng):
    # center at z bin 30, five tips at distinct z bins
    zs = [30, 70, 5, 100, 50, 12]
    bins = [[40 + 3 * i, 60 - 2 * i, z] for i, z in enumerate(zs)]
    star = Skeleton(_at_bins(bins), [[0, k] for k in range(1, 6)])
    want = tokenize(star)
    # hand-applied rules: sort joints by z, write each bone lower index first, sort bones
    order = sorted(range(6), key=lambda j: (bins[j][2], bins[j][1], bins[j][0]))
    rank = {j: r for r, j in enumerate(order)}
    pairs = sorted(tuple(sorted((rank[0], rank[k]))) for k in range(1, 6))
    zyx = [tuple(bins[j][::-1]) for j in order]
    assert _bones_from_stream(want) == [(zyx[a], zyx[b]) for a, b in pairs]
    streams = {tokenize(permute_storage(star, rng)) for _ in range(300)}
    assert streams == {want}


def _hierarchical_oracle(bins, parent, root):
    """Independent reading of the layer rules: BFS layers, groups by ascending parent, then child."""
    order = sorted(range(len(bins)), key=lambda j: (bins[j][2], bins[j][1], bins[j][0]))
    rank = {j: r for r, j in enumerate(order)}
    children = {}
    for c, p in parent.items():
        children.setdefault(rank[p], []).append(rank[c])
    out, layer = [], [rank[root]]
    while layer:
        nxt = []
        for p in sorted(layer):
            for c in sorted(children.get(p, [])):
                out.append((p, c))
                nxt.append(c)
        layer = nxt
    zyx = {rank[j]: tuple(bins[j][::-1]) for j in range(len(bins))}
    return [(zyx[p], zyx[c]) for p, c in out]


def test_two_layer_hierarchy_example():
    # sorted indices: r=0, then 1..5 by z; root -> {1, 4}, 4 -> {2, 3}, 1 -> {5}
    bins = [[64, 64, 10 + 10 * k] for k in range(6)]
    parent = {1: 0, 4: 0, 2: 4, 3: 4, 5: 1}
    # store the joints in a scrambled order
    perm = [3, 0, 5, 1, 4, 2]  # sorted index -> storage slot
    joints = np.empty((6, 3))
    for k in range(6):
        joints[perm[k]] = _at_bins(bins[k])
    bones = np.array([[perm[p], perm[c]] for c, p in parent.items()])
    s = Skeleton(joints, bones, perm[0], {perm[c]: perm[p] for c, p in parent.items()})
    got = _bones_from_stream(tokenize(s, "hierarchical"))
    z = [tuple(b[::-1]) for b in bins]
    assert got == [(z[0], z[1]), (z[0], z[4]), (z[1], z[5]), (z[4], z[2]), (z[4], z[3])]
    assert got == _hierarchical_oracle(bins, parent, 0)


def test_hierarchical_matches_rule_interpreter(rng):
    for _ in range(50):
        s = random_tree(rng, int(rng.integers(2, 15)))
        bins = [tuple(int(v) for v in quantize(p)) for p in s.joints]
        assert _bones_from_stream(tokenize(s, "hierarchical")) == _hierarchical_oracle(bins, s.parent, s.root)


def test_seven_interior_tokens():
    d = detokenize([BOS, 1, 2, 3, 4, 5, 6, 7, EOS])
    assert d.skeleton.num_bones == 1 and d.dropped_tokens == 1 and not d.valid


def test_spatial_decoded_bones_sorted(rng):
    for _ in range(20):
        d = detokenize(tokenize(random_tree(rng, 8)))
        j = d.skeleton.joints
        rank = np.empty(len(j), dtype=int)
        rank[np.lexsort((j[:, 0], j[:, 1], j[:, 2]))] = np.arange(len(j))
        # in z-y-x rank indices, bones come out lower index first and in sorted order
        pairs = [(int(rank[a]), int(rank[b])) for a, b in d.skeleton.bones]
        assert all(a < b for a, b in pairs) and pairs == sorted(pairs)
