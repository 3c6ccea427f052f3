"""Sine-activated MLP surrogate with exact derivatives up to second order.

Derivatives are carried forward as truncated Taylor jets: every hidden unit
holds its value, its first partials along each input and the requested
second partials.  Parameter gradients of any jet channel are obtained by a
reverse sweep through the same jet recurrences, so the loss of a
physics-informed fit can be differentiated without finite differences.

Input layout is ``(x[, y], t)``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

COMPONENTS = ("u", "u_t", "u_x", "u_y", "u_xx", "u_yy", "u_xy")


@dataclass(frozen=True)
class SurrogateNet:
    weights: tuple
    biases: tuple
    omega0: float = 3.0
    activation: str = "sine"
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.shape[0]:
                raise ValueError("bias length must match weight rows")
        if self.widths[-1] != 1:
            raise ValueError("output width must be 1")
        if self.activation not in ("sine", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dim(self) -> int:
        """Number of spatial axes."""
        return self.in_dim - 1

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_params(self, theta: np.ndarray) -> "SurrogateNet":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        Ws, bs, k = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[k:k + W.size].reshape(W.shape).copy())
            k += W.size
            bs.append(theta[k:k + b.size].copy())
            k += b.size
        return SurrogateNet(tuple(Ws), tuple(bs), self.omega0, self.activation, self.seed)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return forward(self, np.atleast_2d(X))[0]["u"]

    # Same call signature as the analytic and gridded field adapters.
    def jets(self, X: np.ndarray, second: bool = True) -> "Jet2":
        return eval_jets(self, X, second=second)


def init_bounds(widths: Sequence[int]) -> list:
    """Uniform half-widths ``(weight_bound, bias_bound)`` per layer.

    First layer: weights and biases in [-1, 1] (frequency enters through
    omega0).  Later layers: weights in +-sqrt(6/fan_in), biases in
    +-1/sqrt(fan_in).
    """
    out = []
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        if i == 0:
            out.append((1.0, 1.0))
        else:
            out.append((np.sqrt(6.0 / fan_in), 1.0 / np.sqrt(fan_in)))
    return out


def init_net(widths: Sequence[int], omega0: float = 3.0, seed: int = 0,
             activation: str = "sine") -> SurrogateNet:
    widths = [int(w) for w in widths]
    if len(widths) < 2 or widths[-1] != 1 or widths[0] not in (2, 3) or min(widths) < 1:
        raise ValueError(f"invalid widths {widths}: need [dim+1, ..., 1] with dim in (1, 2)")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for i, (wb, bb) in enumerate(init_bounds(widths)):
        Ws.append(rng.uniform(-wb, wb, size=(widths[i + 1], widths[i])))
        bs.append(rng.uniform(-bb, bb, size=widths[i + 1]))
    bs[-1] = np.zeros(1)
    return SurrogateNet(tuple(Ws), tuple(bs), float(omega0), activation, seed)


@dataclass
class Jet2:
    """Value and partial derivatives (scalars or per-point arrays)."""

    u: object
    u_t: object
    u_x: object
    u_y: object = None
    u_xx: object = None
    u_yy: object = None
    u_xy: object = None

    def get(self, name: str):
        if name not in COMPONENTS:
            raise KeyError(f"unknown jet component {name!r}")
        return getattr(self, name)

    def take(self, i) -> "Jet2":
        return Jet2(**{c: (None if getattr(self, c) is None else getattr(self, c)[i]) for c in COMPONENTS})


def _pairs_for(dim: int) -> list:
    return [(0, 0)] if dim == 1 else [(0, 0), (1, 1), (0, 1)]


def forward(net: SurrogateNet, X: np.ndarray, pairs: Optional[list] = None, firsts: bool = True):
    """Propagate jets through the network.

    ``pairs`` lists the second-partial index pairs to carry (input indices),
    ``firsts`` whether first partials along every input are carried.  Returns
    ``(channels, cache)`` where channels maps ``"u"``, ``("d", k)`` and
    ``("dd", i, j)`` to per-point arrays.
    """
    X = np.asarray(X, dtype=float)
    P, d = X.shape
    if d != net.in_dim:
        raise ValueError(f"points have {d} coordinates, net expects {net.in_dim}")
    pairs = list(pairs or [])
    ks = list(range(d)) if (firsts or pairs) else []
    n_layers = len(net.weights)
    cache = []
    H, Hk, Hp = X, None, None
    for li, (W, b) in enumerate(zip(net.weights, net.biases)):
        last = li == n_layers - 1
        if li == 0:
            scale = net.omega0 if (net.activation == "sine" and not last) else 1.0
            Z = scale * (X @ W.T) + b
            Zk = {k: np.broadcast_to(scale * W[:, k], (P, W.shape[0])) for k in ks}
            Zp = {p: np.zeros((P, W.shape[0])) for p in pairs}
        else:
            Z = H @ W.T + b
            Zk = {k: Hk[k] @ W.T for k in ks}
            Zp = {p: Hp[p] @ W.T for p in pairs}
        entry = {"H": H, "Hk": Hk, "Hp": Hp}
        if last or net.activation == "identity":
            A, Ak, Ap = Z, Zk, Zp
        else:
            s, c = np.sin(Z), np.cos(Z)
            A = s
            Ak = {k: c * Zk[k] for k in ks}
            Ap = {(i, j): c * Zp[(i, j)] - s * Zk[i] * Zk[j] for (i, j) in pairs}
            entry.update(s=s, c=c, Zk=Zk, Zp=Zp)
        cache.append(entry)
        H, Hk, Hp = A, Ak, Ap
    out = {"u": H[:, 0]}
    for k in ks:
        out[("d", k)] = np.asarray(Hk[k])[:, 0]
    for p in pairs:
        out[("dd",) + p] = Hp[p][:, 0]
    return out, {"layers": cache, "ks": ks, "pairs": pairs, "X": X}


def backward(net: SurrogateNet, cache: dict, seeds: dict) -> np.ndarray:
    """Gradient w.r.t. the flat parameter vector of ``sum_points sum_ch seeds[ch] * ch``."""
    ks, pairs, X = cache["ks"], cache["pairs"], cache["X"]
    P = X.shape[0]
    gA = np.asarray(seeds.get("u", np.zeros(P)), dtype=float)[:, None]
    gAk = {k: np.asarray(seeds.get(("d", k), np.zeros(P)), dtype=float)[:, None] for k in ks}
    gAp = {p: np.asarray(seeds.get(("dd",) + p, np.zeros(P)), dtype=float)[:, None] for p in pairs}
    n_layers = len(net.weights)
    grads = [None] * n_layers
    for li in range(n_layers - 1, -1, -1):
        W = net.weights[li]
        entry = cache["layers"][li]
        last = li == n_layers - 1
        if last or net.activation == "identity":
            gZ, gZk, gZp = gA, gAk, gAp
        else:
            s, c, Zk, Zp = entry["s"], entry["c"], entry["Zk"], entry["Zp"]
            gZ = gA * c
            for k in ks:
                gZ = gZ - gAk[k] * s * Zk[k]
            gZk = {k: gAk[k] * c for k in ks}
            for (i, j) in pairs:
                g = gAp[(i, j)]
                gZ = gZ - g * (s * Zp[(i, j)] + c * Zk[i] * Zk[j])
                gZk[i] = gZk[i] - g * s * Zk[j]
                gZk[j] = gZk[j] - g * s * Zk[i]
            gZp = {p: gAp[p] * c for p in pairs}
        if li == 0:
            scale = net.omega0 if (net.activation == "sine" and not last) else 1.0
            gW = scale * (gZ.T @ X)
            for k in ks:
                gW[:, k] += scale * gZk[k].sum(axis=0)
        else:
            H, Hk, Hp = entry["H"], entry["Hk"], entry["Hp"]
            gW = gZ.T @ H
            for k in ks:
                gW += gZk[k].T @ Hk[k]
            for p in pairs:
                gW += gZp[p].T @ Hp[p]
            gA = gZ @ W
            gAk = {k: gZk[k] @ W for k in ks}
            gAp = {p: gZp[p] @ W for p in pairs}
        grads[li] = (gW, gZ.sum(axis=0))
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def _channels_to_jet(ch: dict, dim: int) -> Jet2:
    t = dim
    jet = Jet2(u=ch["u"], u_t=ch[("d", t)], u_x=ch[("d", 0)])
    jet.u_xx = ch.get(("dd", 0, 0))
    if dim == 2:
        jet.u_y = ch[("d", 1)]
        jet.u_yy = ch.get(("dd", 1, 1))
        jet.u_xy = ch.get(("dd", 0, 1))
    return jet


def eval_jets(net: SurrogateNet, X: np.ndarray, second: bool = True) -> Jet2:
    """Batched jets at the rows of ``X`` (columns ``x[, y], t``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ch, _ = forward(net, X, pairs=_pairs_for(net.dim) if second else [])
    return _channels_to_jet(ch, net.dim)


def eval_jet(net: SurrogateNet, point: Sequence[float]) -> Jet2:
    """Exact value and partials up to second order at a single point."""
    jet = eval_jets(net, np.asarray(point, dtype=float)[None, :])
    return jet.take(0)


def component_key(name: str, dim: int):
    t = dim
    table = {"u": "u", "u_t": ("d", t), "u_x": ("d", 0), "u_xx": ("dd", 0, 0)}
    if dim == 2:
        table.update({"u_y": ("d", 1), "u_yy": ("dd", 1, 1), "u_xy": ("dd", 0, 1)})
    if name not in table:
        raise KeyError(f"jet component {name!r} not available for dim={dim}")
    return table[name]


def eval_param_grad(net: SurrogateNet, point: Sequence[float], which: str = "u") -> np.ndarray:
    """Gradient of one jet component at ``point`` w.r.t. all parameters."""
    key = component_key(which, net.dim)
    X = np.asarray(point, dtype=float)[None, :]
    pairs = [key[1:]] if key[0] == "dd" else []
    _, cache = forward(net, X, pairs=pairs)
    return backward(net, cache, {key: np.ones(1)})


def save_net(net: SurrogateNet, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_net(net))


def dumps_net(net: SurrogateNet) -> str:
    buf = io.StringIO()
    buf.write("# causal_pinn surrogate v1\n")
    buf.write("widths " + " ".join(str(w) for w in net.widths) + "\n")
    buf.write(f"omega0 {net.omega0!r}\n")
    buf.write(f"activation {net.activation}\n")
    buf.write(f"seed {net.seed}\n")
    for v in net.params():
        buf.write(repr(float(v)) + "\n")
    return buf.getvalue()


def loads_net(text: str) -> SurrogateNet:
    header, values = {}, []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key in ("widths", "omega0", "activation", "seed"):
            header[key] = rest
        else:
            values.append(float(line))
    widths = [int(w) for w in header["widths"].split()]
    seed = None if header.get("seed", "None") == "None" else int(header["seed"])
    template = init_net(widths, float(header["omega0"]), 0, header.get("activation", "sine")) \
        if widths[0] in (2, 3) else None
    net = SurrogateNet(template.weights, template.biases, float(header["omega0"]),
                       header.get("activation", "sine"), seed)
    return net.with_params(np.array(values))


def load_net(path) -> SurrogateNet:
    with open(path) as fh:
        return loads_net(fh.read())
