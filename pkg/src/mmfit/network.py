"""Per-observation sampling-weight network with hand-written backprop.

The network maps a stack of observations plus a per-observation state scalar
to a categorical sampling distribution. It is built exclusively from
per-observation linear maps (1x1 convolutions), so it is permutation
equivariant: instance normalization aggregates over the observation axis and
batch normalization over the whole (pseudo-)batch, both of which are
order-free reductions.

Layout of one forward pass: an entry linear layer with ReLU, six residual
blocks of two (linear, instance norm, optional batch norm, ReLU) stages with
the skip connection added after the second activation, and an exit linear
layer with a sigmoid whose outputs are normalized to sum one.

Activations are held internally as (channels, batch, observations) arrays so
linear layers reduce to plain matrix products.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels as kernels
from .errors import FormatError, ShapeMismatch

FORMAT_VERSION = 1
IN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture parameters. Production models use the defaults; tests may
    shrink ``channels``/``blocks`` for speed."""

    observation_dim: int
    channels: int = 128
    blocks: int = 6
    batch_norm: bool = True

    @property
    def input_dim(self) -> int:
        return self.observation_dim + 1  # observation features plus state

    def to_dict(self) -> dict:
        return {"observation_dim": self.observation_dim, "channels": self.channels,
                "blocks": self.blocks, "batch_norm": self.batch_norm}


def architecture_hash(config: NetworkConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _linear_forward(w, b, x):
    c, bt, n = x.shape
    y = (w @ x.reshape(c, bt * n)).reshape(w.shape[0], bt, n)
    return y + b[:, None, None]


def _linear_backward(w, x, dy):
    co, bt, n = dy.shape
    dy2 = dy.reshape(co, bt * n)
    x2 = x.reshape(x.shape[0], bt * n)
    dw = dy2 @ x2.T
    db = dy2.sum(axis=1)
    dx = (w.T @ dy2).reshape(x.shape)
    return dx, dw, db


class SamplingNetwork:
    """Conditional sampling-weight network with explicit parameter arrays.

    ``params`` maps parameter names to float64 arrays; running batch-norm
    statistics live in ``buffers`` and are updated only through
    :meth:`update_running_stats`.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        c = config.channels

        def linear(name, fan_in, fan_out, zero_bias=False):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"{name}.weight"] = rng.uniform(-bound, bound, (fan_out, fan_in))
            self.params[f"{name}.bias"] = (np.zeros(fan_out) if zero_bias
                                           else rng.uniform(-bound, bound, fan_out))

        linear("entry", config.input_dim, c)
        for i in range(config.blocks):
            for stage in (1, 2):
                linear(f"block{i}.lin{stage}", c, c)
                if config.batch_norm:
                    self.params[f"block{i}.bn{stage}.scale"] = np.ones(c)
                    self.params[f"block{i}.bn{stage}.shift"] = np.zeros(c)
                    self.buffers[f"block{i}.bn{stage}.running_mean"] = np.zeros(c)
                    self.buffers[f"block{i}.bn{stage}.running_var"] = np.ones(c)
        linear("exit", c, 1, zero_bias=True)

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def _stage(self, name, x, train, cache, p):
        dtype = x.dtype.type
        lin_in = x
        y = _linear_forward(p[f"{name}.weight"], p[f"{name}.bias"], x)
        inv_std_in = kernels.instance_norm_forward(y, dtype(IN_EPS))
        xhat_in = y  # normalized in place
        if not self.config.batch_norm:
            # plain ReLU stage; the mask is recoverable from xhat_in
            cache[name] = (lin_in, xhat_in, inv_std_in, None, None)
            return np.maximum(xhat_in, 0.0)
        scale = p[name.replace("lin", "bn") + ".scale"]
        shift = p[name.replace("lin", "bn") + ".shift"]
        if train:
            out, bmu, bvar, inv_bn = kernels.bn_relu_train_forward(
                xhat_in, scale, shift, dtype(BN_EPS))
            count = y.shape[1] * y.shape[2]
            stats = (bmu, bvar * count / max(count - 1, 1))
        else:
            rmu = p[name.replace("lin", "bn") + ".running_mean"]
            rvar = p[name.replace("lin", "bn") + ".running_var"]
            out = kernels.bn_relu_eval_forward(xhat_in, scale, shift, rmu, rvar,
                                               dtype(BN_EPS))
            bmu = rmu
            inv_bn = 1.0 / np.sqrt(rvar + BN_EPS)
            stats = None
        cache[name] = (lin_in, xhat_in, inv_std_in, (bmu, inv_bn), stats)
        return out

    def _stage_backward(self, name, dout, cache, grads, p):
        lin_in, xhat_in, inv_std_in, bn_cache, stats = cache[name]
        if not self.config.batch_norm:
            d = np.where(xhat_in > 0, dout, 0.0)
        else:
            scale = p[name.replace("lin", "bn") + ".scale"]
            shift = p[name.replace("lin", "bn") + ".shift"]
            mu, inv_bn = bn_cache
            if stats is not None:  # train mode: gradients flow through batch stats
                d, dscale, dshift = kernels.bn_relu_train_backward(
                    dout, xhat_in, scale, shift, mu, inv_bn)
            else:
                d, dscale, dshift = kernels.bn_relu_eval_backward(
                    dout, xhat_in, scale, shift, mu, inv_bn)
            grads[name.replace("lin", "bn") + ".scale"] += dscale
            grads[name.replace("lin", "bn") + ".shift"] += dshift
        d = kernels.instance_norm_backward(d, xhat_in, inv_std_in)
        dx, dw, db = _linear_backward(p[f"{name}.weight"], lin_in, d)
        grads[f"{name}.weight"] += dw
        grads[f"{name}.bias"] += db
        return dx

    def _compute_params(self, dtype):
        if dtype == np.float64:
            merged = dict(self.params)
            merged.update(self.buffers)
            return merged
        return {k: v.astype(dtype) for k, v in
                list(self.params.items()) + list(self.buffers.items())}

    def forward(self, x: np.ndarray, train: bool = False, dtype=np.float64):
        """Map inputs to sampling probabilities.

        ``x`` has shape (batch, observation_dim + 1, n_observations) or
        (observation_dim + 1, n_observations); the last input channel is the
        state. Returns (probs, cache) where ``probs`` sums to one along the
        observation axis. ``dtype`` selects the compute precision (training
        uses float32 for speed; the returned probabilities are always
        float64). Running statistics are not touched; pass the cache to
        :meth:`update_running_stats` to commit train-mode batch statistics.
        """
        x = np.asarray(x, dtype=dtype)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.config.input_dim:
            raise ShapeMismatch(
                f"expected (batch, {self.config.input_dim}, n) input, got {x.shape}")
        p = self._compute_params(dtype)
        h = np.ascontiguousarray(x.transpose(1, 0, 2))  # (channels, batch, n)
        cache: dict = {"train": train, "dtype": dtype}

        y = _linear_forward(p["entry.weight"], p["entry.bias"], h)
        mask0 = y > 0
        cache["entry"] = (h, mask0)
        h = np.where(mask0, y, 0.0)
        for i in range(self.config.blocks):
            t = self._stage(f"block{i}.lin1", h, train, cache, p)
            t = self._stage(f"block{i}.lin2", t, train, cache, p)
            h = h + t
        z = _linear_forward(p["exit.weight"], p["exit.bias"], h)
        cache["exit_in"] = h
        q = expit(z[0].astype(np.float64))  # (batch, n)
        total = q.sum(axis=1, keepdims=True)
        out = q / total
        cache["q"] = q
        cache["p"] = out
        probs = out[0] if squeeze else out
        return probs, cache

    def backward(self, cache, dprobs: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of a scalar loss w.r.t. all trainable parameters.

        ``dprobs`` is the loss gradient w.r.t. the normalized output
        probabilities, matching the batch shape of the forward pass. Gradients
        are returned in float64 regardless of the forward compute dtype.
        """
        dtype = cache["dtype"]
        p = self._compute_params(dtype)
        dp = np.asarray(dprobs, dtype=np.float64)
        if dp.ndim == 1:
            dp = dp[None]
        q, probs = cache["q"], cache["p"]
        total = q.sum(axis=1, keepdims=True)
        dq = (dp - (dp * probs).sum(axis=1, keepdims=True)) / total
        dz = (dq * q * (1.0 - q)).astype(dtype)[None]  # back through sigmoid
        grads = {name: np.zeros(v.shape, dtype=dtype)
                 for name, v in self.params.items()}
        dh, dw, db = _linear_backward(p["exit.weight"], cache["exit_in"], dz)
        grads["exit.weight"] += dw
        grads["exit.bias"] += db
        for i in reversed(range(self.config.blocks)):
            dt = self._stage_backward(f"block{i}.lin2", dh, cache, grads, p)
            dskip = self._stage_backward(f"block{i}.lin1", dt, cache, grads, p)
            dh = dh + dskip
        h_in, mask0 = cache["entry"]
        dh = np.where(mask0, dh, 0.0)
        _, dw, db = _linear_backward(p["entry.weight"], h_in, dh)
        grads["entry.weight"] += dw
        grads["entry.bias"] += db
        if dtype != np.float64:
            grads = {k: v.astype(np.float64) for k, v in grads.items()}
        return grads

    def update_running_stats(self, cache) -> None:
        """Fold a train-mode forward's batch statistics into the running ones."""
        if not (self.config.batch_norm and cache["train"]):
            return
        for i in range(self.config.blocks):
            for stage in (1, 2):
                name = f"block{i}.lin{stage}"
                bmu, bvar_unbiased = cache[name][4]
                key = name.replace("lin", "bn")
                rm = self.buffers[f"{key}.running_mean"]
                rv = self.buffers[f"{key}.running_var"]
                rm *= 1.0 - BN_MOMENTUM
                rm += BN_MOMENTUM * bmu
                rv *= 1.0 - BN_MOMENTUM
                rv += BN_MOMENTUM * bvar_unbiased

    # ------------------------------------------------------------------
    # score-function gradient
    # ------------------------------------------------------------------

    def log_prob_gradient(self, inputs, drawn, coefficients, train: bool = True,
                          dtype=np.float64):
        """Gradient of sum_k coeff_k * sum_{i in drawn_k} log p(i | input_k).

        ``inputs`` is a list of (input_dim, n) arrays sharing one n (they are
        collated into a single pseudo-batch), ``drawn`` a list of index
        multisets and ``coefficients`` one scalar per input. States inside the
        inputs are treated as constants.
        """
        if not (len(inputs) == len(drawn) == len(coefficients)):
            raise ShapeMismatch("inputs, drawn and coefficients must align")
        x = np.stack([np.asarray(v, dtype=np.float64) for v in inputs])
        probs, cache = self.forward(x, train=train, dtype=dtype)
        dprobs = np.zeros_like(probs)
        n = probs.shape[1]
        for k, (idx, coeff) in enumerate(zip(drawn, coefficients)):
            idx = np.asarray(idx, dtype=np.int64).ravel()
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ShapeMismatch(f"drawn[{k}] indices out of range")
            counts = np.bincount(idx, minlength=n).astype(np.float64)
            dprobs[k] = coeff * counts / probs[k]
        return self.backward(cache, dprobs)

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def serialize(self) -> str:
        """Self-describing JSON weights document (bit-exact round trip)."""
        entries = []
        for name, value in list(self.params.items()) + list(self.buffers.items()):
            if not np.all(np.isfinite(value)):
                raise FormatError(f"parameters[{name}]: non-finite values")
            entries.append({"name": name, "shape": list(value.shape),
                            "data": value.ravel().tolist()})
        doc = {
            "format_version": FORMAT_VERSION,
            "architecture": self.config.to_dict(),
            "architecture_hash": architecture_hash(self.config),
            "parameters": entries,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def deserialize(cls, text: str) -> "SamplingNetwork":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"document: invalid JSON ({e})") from e
        if not isinstance(doc, dict):
            raise FormatError("document: expected an object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatError(
                f"format_version: expected {FORMAT_VERSION}, found {version}")
        arch = doc.get("architecture")
        if not isinstance(arch, dict):
            raise FormatError("architecture: missing or not an object")
        try:
            config = NetworkConfig(**arch)
        except TypeError as e:
            raise FormatError(f"architecture: {e}") from e
        if doc.get("architecture_hash") != architecture_hash(config):
            raise FormatError("architecture_hash: does not match architecture")
        net = cls(config, seed=0)
        expected = dict(net.params)
        expected.update(net.buffers)
        entries = doc.get("parameters")
        if not isinstance(entries, list):
            raise FormatError("parameters: missing or not a list")
        seen = set()
        for j, entry in enumerate(entries):
            if not isinstance(entry, dict) or "name" not in entry:
                raise FormatError(f"parameters[{j}]: missing name")
            name = entry["name"]
            if name not in expected:
                raise FormatError(f"parameters[{j}].name: unknown parameter {name!r}")
            ref = expected[name]
            shape = tuple(entry.get("shape", ()))
            if shape != ref.shape:
                raise FormatError(
                    f"parameters[{j}].shape: expected {list(ref.shape)}, found {list(shape)}")
            data = entry.get("data")
            if not isinstance(data, list) or len(data) != ref.size:
                found = len(data) if isinstance(data, list) else type(data).__name__
                raise FormatError(
                    f"parameters[{j}].data: expected {ref.size} values, found {found}")
            value = np.array(data, dtype=np.float64).reshape(ref.shape)
            if name in net.params:
                net.params[name] = value
            else:
                net.buffers[name] = value
            seen.add(name)
        missing = sorted(set(expected) - seen)
        if missing:
            raise FormatError(f"parameters: missing entries {missing}")
        return net


def save_network(net: SamplingNetwork, path) -> None:
    with open(path, "w") as f:
        f.write(net.serialize())


def load_network(path) -> SamplingNetwork:
    with open(path) as f:
        return SamplingNetwork.deserialize(f.read())


def make_weight_fn(net: SamplingNetwork, conditional: bool = True):
    """Adapt a network into a ``weight_fn(observations, states)`` callable.

    Observations are transposed into channels and stacked with the state (or
    zeros when ``conditional`` is false); evaluation always uses running
    batch-norm statistics.
    """

    def weight_fn(observations: np.ndarray, states: np.ndarray) -> np.ndarray:
        obs = np.asarray(observations, dtype=np.float64)
        states = np.asarray(states, dtype=np.float64)
        single = states.ndim == 1
        s = np.atleast_2d(states)
        if not conditional:
            s = np.zeros_like(s)
        p = s.shape[0]
        x = np.empty((p, obs.shape[1] + 1, obs.shape[0]))
        x[:, :-1, :] = obs.T[None]
        x[:, -1, :] = s
        probs, _ = net.forward(x, train=False)
        return probs[0] if single else probs

    return weight_fn
