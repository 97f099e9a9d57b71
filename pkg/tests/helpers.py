import numpy as np

from flowids import model as M
from flowids import tensor as T


def rng(seed=0):
    return np.random.default_rng(seed)


def away_from_zero(a, gap=1e-3):
    """Push entries at least ``gap`` away from 0 (relu/maxpool kinks)."""
    return np.where(np.abs(a) < gap, np.sign(a + 1e-12) * gap * 2, a)


# every primitive, random small shapes, checked away from kinks
R = rng(42)
A34 = R.normal(size=(3, 4))
B34 = R.normal(size=(3, 4))
B4 = R.normal(size=4)
M45 = R.normal(size=(4, 5))
X3 = R.normal(size=(2, 3, 8))
W3 = R.normal(size=(2, 3, 3))
BIAS = R.normal(size=2)
POS = R.uniform(0.5, 2.0, size=(3, 4))

PRIMITIVES = {
    "add": (lambda t: T.reduce_sum(T.mul(T.add(t[0], t[1]), T.add(t[0], t[1]))), [A34, B4]),
    "sub": (lambda t: T.reduce_sum(T.square(T.sub(t[0], t[1]))), [A34, B34]),
    "mul": (lambda t: T.reduce_sum(T.mul(t[0], t[1])), [A34, B4]),
    "matmul": (lambda t: T.reduce_sum(T.tanh(T.matmul(t[0], t[1]))), [A34, M45]),
    "batched_matmul": (lambda t: T.reduce_sum(T.tanh(T.matmul(t[0], t[1]))),
                       [R.normal(size=(2, 3, 4)), M45]),
    "conv1d_valid": (lambda t: T.reduce_sum(T.tanh(T.conv1d(t[0], t[1], t[2], "valid"))), [X3, W3, BIAS]),
    "conv1d_same": (lambda t: T.reduce_sum(T.tanh(T.conv1d(t[0], t[1], t[2], "same"))), [X3, W3, BIAS]),
    "maxpool1d": (lambda t: T.reduce_sum(T.square(T.maxpool1d(t[0], 2, 2))), [X3]),
    "maxpool1d_overlap": (lambda t: T.reduce_sum(T.square(T.maxpool1d(t[0], 3, 1))), [X3]),
    "relu": (lambda t: T.reduce_sum(T.square(T.relu(t[0]))), [away_from_zero(A34)]),
    "sigmoid": (lambda t: T.reduce_sum(T.sigmoid(t[0])), [A34 * 3]),
    "tanh": (lambda t: T.reduce_sum(T.tanh(t[0])), [A34]),
    "exp": (lambda t: T.reduce_sum(T.exp(t[0])), [A34]),
    "log": (lambda t: T.reduce_sum(T.log(t[0])), [POS]),
    "dropout": (lambda t: T.reduce_sum(T.square(T.dropout(t[0], 0.4, True, seed=9))), [A34]),
    "concat": (lambda t: T.reduce_sum(T.tanh(T.concat([t[0], t[1]], axis=1))), [A34, B34]),
    "reshape": (lambda t: T.reduce_sum(T.matmul(T.reshape(t[0], (4, 3)), t[1])), [A34, B34]),
    "transpose": (lambda t: T.reduce_sum(T.matmul(T.transpose(t[0]), t[1])), [A34, B34]),
    "slice": (lambda t: T.reduce_sum(T.square(t[0][1:, ::2])), [A34]),
    "reduce_sum_axis": (lambda t: T.reduce_sum(T.square(T.reduce_sum(t[0], axis=1))), [A34]),
    "reduce_mean_axis": (lambda t: T.reduce_sum(T.square(T.reduce_mean(t[0], axis=0))), [A34]),
    "square": (lambda t: T.reduce_mean(T.square(t[0])), [A34]),
    "max_with_scalar": (lambda t: T.reduce_sum(T.square(T.max_with_scalar(t[0], 0.2))),
                        [0.2 + away_from_zero(A34)]),
}


def eig_oracle(x):
    """Components and ratios from an eigendecomposition of the sample covariance."""
    cov = np.cov(x, rowvar=False, ddof=1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order].T
    for row in vecs:
        if row[np.abs(row).argmax()] < 0:
            row *= -1
    return vecs, vals / vals.sum()


def knn_oracle(x, y, queries, k):
    """Exhaustive scan: sort (distance, index) pairs, count votes, lowest label wins ties."""
    out = []
    for q in queries:
        dists = [(float(sum((a - b) ** 2 for a, b in zip(row, q))), i) for i, row in enumerate(x)]
        dists.sort()
        votes = {}
        for _, i in dists[:k]:
            votes[y[i]] = votes.get(y[i], 0) + 1
        best = max(votes.values())
        out.append(min(lbl for lbl, v in votes.items() if v == best))
    return np.array(out)


def kink_margin(params, x):
    """Smallest distance of any ReLU input from 0, or of any max-pool winner
    from its runner-up, in an eval-mode forward pass of ``params`` on ``x``."""
    cfg = params.config
    margin = np.inf
    if cfg.arch == "dense":
        h = x
        for i in range(len(cfg.dense_layers)):
            pre = h @ params[f"dense{i}.weight"].data + params[f"dense{i}.bias"].data
            margin = min(margin, np.abs(pre).min())
            h = np.maximum(pre, 0)
        return margin
    h = T.tensor(x.reshape(x.shape[0], 1, -1))
    last = len(cfg.conv_blocks) - 1
    for i, block in enumerate(cfg.conv_blocks):
        pre = T.conv1d(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"], block.padding)
        margin = min(margin, np.abs(pre.data).min())
        h = T.relu(pre)
        if i < last:
            w = cfg.pool_width
            n = h.shape[-1] // w * w
            windows = np.sort(h.data[..., :n].reshape(*h.shape[:2], -1, w), axis=-1)
            top, second = windows[..., -1], windows[..., -2]
            # windows that are all zero have no gradient at all, so they are not kinks
            live = top > 0
            if live.any():
                margin = min(margin, (top - second)[live].min())
            h = T.maxpool1d(h, w, w)
    return margin


def kink_free_batch(params, n, start_seed=0, margin=1e-3, max_tries=500):
    """A uniform random batch whose forward pass stays ``margin`` away from kinks."""
    for seed in range(start_seed, start_seed + max_tries):
        x = np.random.default_rng(seed).uniform(size=(n, params.config.input_length))
        if kink_margin(params, x) >= margin:
            return x
    raise RuntimeError("no kink-free batch found")
