"""Independent reference computations used by the tests.

Nothing here touches the tape or the compressed adjacency arrays: hyperedges,
relations and neighbor sets are rebuilt from the raw triplets and everything
is evaluated with dense matrices and plain loops.
"""
import numpy as np

SLOPE = 0.01


def lrelu(x):
    return np.where(x > 0, x, SLOPE * x)


def normalize(x, eps=1e-12):
    n = np.linalg.norm(x)
    return x / max(n, eps)


def incidence(M, N, triplets):
    """Dense hyperedge x node incidence matrix, one row per triplet."""
    H = np.zeros((len(triplets), M + N))
    for e, (u1, u2, j) in enumerate(triplets):
        H[e, [u1, u2, M + j]] = 1.0
    return H


def relations(triplets):
    """Canonical pair -> hyperedges containing both users, in first-encounter order."""
    rel = {}
    for e, (u1, u2, _) in enumerate(triplets):
        rel.setdefault((min(u1, u2), max(u1, u2)), []).append(e)
    return rel


def brute_shared_edges(triplets, a, b):
    return [e for e, (u1, u2, _) in enumerate(triplets) if {a, b} <= {u1, u2}]


def row_mean(H):
    deg = H.sum(axis=1, keepdims=True)
    return np.divide(H, deg, out=np.zeros_like(H), where=deg > 0)


def dense_forward(params, M, N, triplets, layers, normalize_rows=True):
    """Straight-line forward pass; returns (E*, per-layer dict of C, R, alpha, P, Q)."""
    H = incidence(M, N, triplets)
    rel = relations(triplets)
    pairs = list(rel)
    edge_mean = row_mean(H)                      # |E| x (M+N)
    node_mean = row_mean(H.T)                    # (M+N) x |E|
    friends = {i: sorted(b if a == i else a for a, b in pairs if i in (a, b)) for i in range(M)}

    E = params["E0"].copy()
    blocks, layers_out = [E], []
    for k in range(1, layers + 1):
        C = lrelu(edge_mean @ E @ params[f"W1_{k}"] + params[f"b1_{k}"])
        R = np.zeros((len(pairs), E.shape[1]))
        for t, pair in enumerate(pairs):
            R[t] = lrelu(C[rel[pair]].mean(axis=0) @ params[f"W2_{k}"] + params[f"b2_{k}"])
        hidden = lrelu(R @ params["mlp_W1"] + params["mlp_b1"])
        raw = (hidden @ params["mlp_W2"] + params["mlp_b2"]).ravel()

        P_prev, Q_prev = E[:M], E[M:]
        P = np.zeros_like(P_prev)
        alpha = {}
        for i in range(M):
            total = P_prev[i].copy()
            if H[:, i].any():
                total += lrelu(node_mean[i] @ C @ params[f"W3_{k}"] + params[f"b3_{k}"])
            if friends[i]:
                scores = np.array([raw[pairs.index((min(i, w), max(i, w)))] for w in friends[i]])
                weights = np.exp(scores - scores.max())
                weights /= weights.sum()
                for w, a in zip(friends[i], weights):
                    alpha[(w, i)] = a
                total += lrelu(sum(a * P_prev[w] for w, a in zip(friends[i], weights)))
            P[i] = normalize(total) if normalize_rows else total
        Q = np.zeros_like(Q_prev)
        for j in range(N):
            total = Q_prev[j].copy()
            if H[:, M + j].any():
                total += lrelu(node_mean[M + j] @ C @ params[f"W4_{k}"] + params[f"b4_{k}"])
            Q[j] = normalize(total) if normalize_rows else total
        E = np.vstack([P, Q])
        blocks.append(E)
        layers_out.append({"C": C, "R": R, "alpha": alpha, "P": P, "Q": Q, "pairs": pairs})
    return np.hstack(blocks), layers_out


def random_instance(rng, max_nodes=20, dim=None, layers=None):
    """Random dataset with M + N <= max_nodes, >= 1 triplet, no duplicate triplets."""
    total = int(rng.integers(3, max_nodes + 1))
    M = int(rng.integers(2, total))
    N = total - M
    seen, triplets = set(), []
    for _ in range(int(rng.integers(1, 3 * total))):
        u1, u2 = (int(x) for x in rng.choice(M, 2, replace=False))
        j = int(rng.integers(N))
        key = (min(u1, u2), max(u1, u2), j)
        if key not in seen:
            seen.add(key)
            triplets.append((u1, u2, j))
    d = dim if dim is not None else int(rng.integers(1, 6))
    L = layers if layers is not None else int(rng.integers(0, 4))
    return M, N, triplets, d, L
