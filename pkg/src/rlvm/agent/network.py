"""Small tanh perceptrons with analytic gradients, and the model file format.

Model file layout (all integers in ASCII, weights little-endian float64)::

    rlvm-policy v1
    iteration <n>
    reward_scale <float or none>
    layers <k>
    <name> <rows> <cols>        (k lines, weights then biases per layer)
    end
    <raw weights, row-major, in the order of the layer lines>
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelFormatError
from ..files import atomic_write
from ..rng import make_rng

N_FEATURES = 7
MAGIC = "rlvm-policy v1"


class MLP:
    """Fully connected network, tanh hidden layers, linear output.

    Parameters live outside the object as a list of ``(W, b)`` pairs so
    they can be copied, flattened and optimised freely.
    """

    def __init__(self, sizes):
        self.sizes = tuple(sizes)

    def init(self, rng, out_scale=1.0, out_bias=0.0):
        layers = []
        pairs = list(zip(self.sizes[:-1], self.sizes[1:]))
        for i, (n_in, n_out) in enumerate(pairs):
            limit = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
            b = np.zeros(n_out)
            if i == len(pairs) - 1:
                w *= out_scale
                b += out_bias
            layers.append((w, b))
        return layers

    def forward(self, layers, x):
        """Return the output and the activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, layers, acts, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every ``(W, b)``."""
        grads = [None] * len(layers)
        g = grad_out
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads[i] = (acts[i].T @ g, g.sum(axis=0))
            if i > 0:
                g = (g @ w.T) * (1.0 - acts[i] ** 2)
        return grads


POLICY_NET = MLP((N_FEATURES, 32, 32, 1))
VALUE_NET = MLP((2 * N_FEATURES, 32, 1))


@dataclass
class PolicyParams:
    """Policy (per-VM migrate logit) and value network weights."""

    policy: list
    value: list
    iteration: int = 0
    reward_scale: float | None = None
    meta: dict = field(default_factory=dict)

    def copy(self):
        return PolicyParams([(w.copy(), b.copy()) for w, b in self.policy],
                            [(w.copy(), b.copy()) for w, b in self.value],
                            self.iteration, self.reward_scale, dict(self.meta))

    def arrays(self):
        out = []
        for w, b in self.policy + self.value:
            out += [w, b]
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec):
        new = self.copy()
        pos = 0
        for layers in (new.policy, new.value):
            for i, (w, b) in enumerate(layers):
                w2 = vec[pos:pos + w.size].reshape(w.shape)
                pos += w.size
                b2 = vec[pos:pos + b.size].reshape(b.shape)
                pos += b.size
                layers[i] = (w2.copy(), b2.copy())
        return new

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def shapes(self):
        named = []
        for tag, layers in (("policy", self.policy), ("value", self.value)):
            for i, (w, b) in enumerate(layers):
                named.append((f"{tag}.{i}.w", w.shape))
                named.append((f"{tag}.{i}.b", (1, b.shape[0])))
        return named


def init_params(seed=0, init_logit_bias=-3.0):
    rng = make_rng(seed, 0x9E37)
    policy = POLICY_NET.init(rng, out_scale=0.01, out_bias=init_logit_bias)
    value = VALUE_NET.init(rng, out_scale=1.0)
    return PolicyParams(policy, value)


def flatten_grads(policy_grads, value_grads):
    out = []
    for gw, gb in policy_grads + value_grads:
        out += [gw.ravel(), gb.ravel()]
    return np.concatenate(out)


def _expected_shapes():
    return init_params().shapes()


def save_model(params, path):
    lines = [MAGIC, f"iteration {params.iteration}",
             f"reward_scale {'none' if params.reward_scale is None else repr(float(params.reward_scale))}",
             f"layers {len(params.shapes())}"]
    lines += [f"{name} {r} {c}" for name, (r, c) in params.shapes()]
    lines.append("end")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii") + blob)


def load_model(path):
    """Read a model file, validating the header and every layer shape."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from None
    header = []
    pos = 0
    try:
        while True:
            nl = data.index(b"\n", pos)
            line = data[pos:nl].decode("ascii")
            pos = nl + 1
            header.append(line)
            if line == "end" or len(header) > 64:
                break
    except (ValueError, UnicodeDecodeError):
        raise ModelFormatError(f"{path}: truncated or non-text header") from None
    if not header or header[0] != MAGIC:
        raise ModelFormatError(f"{path}: not an {MAGIC!r} file")
    try:
        iteration = int(header[1].split()[1])
        scale_txt = header[2].split()[1]
        reward_scale = None if scale_txt == "none" else float(scale_txt)
        n_layers = int(header[3].split()[1])
        shapes = []
        for line in header[4:4 + n_layers]:
            name, r, c = line.split()
            shapes.append((name, (int(r), int(c))))
    except (IndexError, ValueError):
        raise ModelFormatError(f"{path}: malformed header") from None
    if header[-1] != "end" or len(header) != 5 + n_layers:
        raise ModelFormatError(f"{path}: malformed header")
    if shapes != _expected_shapes():
        raise ModelFormatError(f"{path}: layer shapes {shapes} do not match this network")
    total = sum(r * c for _, (r, c) in shapes)
    blob = data[pos:]
    if len(blob) != 8 * total:
        raise ModelFormatError(f"{path}: expected {8 * total} weight bytes, found {len(blob)}")
    vec = np.frombuffer(blob, dtype="<f8").astype(float)
    params = init_params().with_flat(vec)
    params.iteration = iteration
    params.reward_scale = reward_scale
    if not params.is_finite():
        raise ModelFormatError(f"{path}: non-finite weights")
    return params
