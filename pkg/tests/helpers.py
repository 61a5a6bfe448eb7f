"""Small hand-built graphs shared by several test modules."""
import numpy as np

from gale.graph import FlowGraph, GraphMeta, NodeType, make_edge_features


def triangle_graph(pressure_on_fluid=False):
    """Wall node 0 followed by Fluid nodes 1 and 2, fully connected."""
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    und = [(0, 1), (0, 2), (1, 2)]
    edges = np.array([e for a, b in und for e in ((a, b), (b, a))])
    feat = make_edge_features(pos, edges, np.ones(len(edges)))
    valid = np.array([True, pressure_on_fluid, False])
    return FlowGraph(
        node_pos=pos,
        node_type=[NodeType.WALL, NodeType.FLUID, NodeType.FLUID],
        pressure_valid=valid,
        pressure_in=np.where(valid, 5.0, 0.0),
        edges=edges,
        edge_feat=feat,
        target=np.zeros((3, 3)),
        global_true=[10.0, 0.0, 0.0],
        meta=GraphMeta(chord=1.0, center=(0.0, 0.0), m=2, p=1, case_id="tri"),
        wall_face=[[-0.5, 0.0, 0.5, 0.0], [0, 0, 0, 0], [0, 0, 0, 0]],
    )


def fd_check(f, params, grads, h=1e-6, rng=None, per_block=6):
    """Worst relative error between analytic grads and central differences.

    Entries where both derivatives are below the difference quotient's
    roundoff resolution (16 eps |f| / h) carry no information and count as
    agreeing."""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        for idx in rng.choice(flat.size, size=min(per_block, flat.size), replace=False):
            old = flat[idx]
            flat[idx] = old + h
            fp = f()
            flat[idx] = old - h
            fm = f()
            flat[idx] = old
            num = (fp - fm) / (2 * h)
            ana = grads[name].reshape(-1)[idx]
            if max(abs(num), abs(ana)) <= 16 * np.finfo(float).eps * max(abs(fp), abs(fm)) / h:
                continue
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    return worst
