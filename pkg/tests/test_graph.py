import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings

from nasgnn.graph import (
    BadEndpoints,
    CellGraph,
    CycleDetected,
    DisconnectedNode,
    EdgeLimitExceeded,
    MalformedEdge,
    MalformedLabel,
    NodeLimitExceeded,
    NodeType,
    UnknownNodeType,
    canonical_hash,
    depth_width_features,
    neighborhoods,
    one_hot_encode,
    topological_order,
    validate_graph,
)

from conftest import cells, permuted_cells


def test_node_type_ids_are_stable():
    assert [int(t) for t in NodeType] == [0, 1, 2, 3, 4]
    assert [t.label for t in NodeType] == ["input", "output", "conv3x3", "conv1x1", "maxpool3x3"]


def test_minimal_chain_is_valid(chain):
    assert chain.nodes == (NodeType.INPUT, NodeType.CONV3X3, NodeType.OUTPUT)
    assert chain.edges == ((0, 1), (1, 2))


@pytest.mark.parametrize(
    "nodes, edges, error",
    [
        (["input"] + ["conv3x3"] * 6 + ["output"], [(i, i + 1) for i in range(7)], NodeLimitExceeded),
        (["input"], [], NodeLimitExceeded),
        (["input", "conv3x3", "output"], [(0, 1), (1, 0)], CycleDetected),
        (["input", "input", "output"], [(0, 2), (1, 2)], BadEndpoints),
        (["input", "conv3x3", "conv1x1"], [(0, 1), (1, 2)], BadEndpoints),
        (["input", "conv3x3", "output"], [(0, 2)], DisconnectedNode),
        (["input", "conv5x5", "output"], [(0, 1), (1, 2)], UnknownNodeType),
        (["input", "output"], [(0, 2)], MalformedEdge),
        (["input", "output"], [(0, 0)], MalformedEdge),
        (["input", "output"], [(0, 1), (0, 1)], MalformedEdge),
        (["input", "output"], [(0,)], MalformedEdge),
        (["input", "output"], [("a", 1)], MalformedEdge),
    ],
)
def test_validation_errors(nodes, edges, error):
    with pytest.raises(error):
        validate_graph(nodes, edges)


def test_cycle_between_interior_nodes():
    with pytest.raises(CycleDetected):
        validate_graph(["input", "conv3x3", "conv1x1", "output"], [(0, 1), (1, 2), (2, 1), (2, 3)])


def test_edge_limit():
    n = 7
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)][:10]
    with pytest.raises(EdgeLimitExceeded):
        validate_graph(["input"] + ["conv1x1"] * 5 + ["output"], pairs + [(5, 6)])


def test_dead_end_node_rejected():
    # node 2 has no path to the output
    with pytest.raises(DisconnectedNode):
        validate_graph(["input", "conv3x3", "conv1x1", "output"], [(0, 1), (1, 3), (0, 2)])


def test_input_need_not_be_first():
    g = validate_graph(["conv3x3", "output", "input"], [(2, 0), (0, 1)])
    assert g.input_index == 2 and g.output_index == 1


def test_labels_validated():
    with pytest.raises(MalformedLabel):
        validate_graph(["input", "output"], [(0, 1)], val_acc=1.5)
    g = validate_graph(["input", "output"], [(0, 1)], val_acc=0.5, test_acc=0.25)
    assert g.val_acc == 0.5 and g.test_acc == 0.25


def test_neighborhoods_examples(chain, diamond):
    nb = neighborhoods(chain)
    assert nb.incoming == ((), (0,), (1,))
    assert nb.outgoing == ((1,), (2,), ())
    assert neighborhoods(diamond).incoming[3] == (1, 2)


@given(cells())
def test_neighborhoods_consistent(g):
    nb = neighborhoods(g)
    assert sum(len(x) for x in nb.incoming) == g.num_edges
    for v in range(g.num_nodes):
        for u in nb.incoming[v]:
            assert v in nb.outgoing[u]
        for u in nb.outgoing[v]:
            assert v in nb.incoming[u]
        assert list(nb.incoming[v]) == sorted(nb.incoming[v])


@given(cells())
def test_topological_order_visits_every_node(g):
    order = topological_order(g)
    assert sorted(order) == list(range(g.num_nodes))
    pos = {v: i for i, v in enumerate(order)}
    assert all(pos[u] < pos[v] for u, v in g.edges)


def test_depth_width_examples(chain, diamond):
    np.testing.assert_array_equal(depth_width_features(chain), [3, 2, 2, 1, 1, 0, 0])
    f = depth_width_features(diamond)
    assert (f[2], f[3]) == (2, 2)
    seven = validate_graph(["input"] + ["maxpool3x3"] * 5 + ["output"], [(i, i + 1) for i in range(6)])
    assert depth_width_features(seven)[2] == 6


@given(cells())
def test_depth_width_bounds_against_networkx(g):
    f = depth_width_features(g)
    G = nx.DiGraph(list(g.edges))
    assert f[2] == nx.dag_longest_path_length(G)
    assert 1 <= f[2] <= g.num_nodes - 1
    assert f[3] >= 1


def test_one_hot_minimal_chain(chain):
    x = one_hot_encode(chain)
    expected = np.zeros(84)
    expected[[0 * 5 + 0, 1 * 5 + 2, 2 * 5 + 1]] = 1
    expected[35 + 0 * 7 + 1] = 1
    expected[35 + 1 * 7 + 2] = 1
    np.testing.assert_array_equal(x, expected)


@given(cells())
def test_one_hot_block_sums(g):
    x = one_hot_encode(g)
    assert x.shape == (84,)
    assert x[:35].sum() == g.num_nodes
    assert x[35:].sum() == g.num_edges
    assert not x[g.num_nodes * 5 : 35].any()


def test_one_hot_is_order_sensitive(diamond):
    swapped = diamond.permuted([0, 2, 1, 3])
    assert not np.array_equal(one_hot_encode(diamond), one_hot_encode(swapped))


def test_hash_examples(chain, diamond):
    assert canonical_hash(chain) == canonical_hash(validate_graph(["input", "conv3x3", "output"], [(0, 1), (1, 2)]))
    assert canonical_hash(chain) != canonical_hash(diamond)
    again = CellGraph.from_record(json.loads(json.dumps(chain.to_record())))
    assert canonical_hash(again) == canonical_hash(chain)


def test_hash_ignores_labels(chain):
    assert canonical_hash(chain.with_labels(0.9)) == canonical_hash(chain)


def test_hash_canonicalizes_node_order(chain):
    shuffled = validate_graph(["output", "input", "conv3x3"], [(1, 2), (2, 0)])
    assert canonical_hash(shuffled) == canonical_hash(chain)


@given(permuted_cells())
@settings(max_examples=50)
def test_record_round_trip(gp):
    g, perm = gp
    h = g.permuted(perm)
    back = CellGraph.from_record(json.loads(json.dumps(h.to_record())))
    assert back == h
    assert canonical_hash(back) == canonical_hash(h)
