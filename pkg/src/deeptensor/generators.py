"""Untrained factor-generator networks.

Two families, both generic over 1/2/3 spatial dimensions:

* ``overparam`` -- encoder/decoder with skip connections: stride-2
  downsampling convolutions followed by upsample+conv stages.  More
  parameters than output elements.
* ``underparam`` -- decoder only: 1x1 convolutions, linear upsampling,
  relu and channel normalization.  Fewer parameters than output elements
  for wide-enough outputs.

A network's forward pass emits a [out_channels, out_len...] tensor on the
current autograd graph; out_channels plays the role of the decomposition
rank.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5
LATENT_SCALE = 0.1


@dataclass
class NetworkSpec:
    dims: int
    kind: str  # "overparam" | "underparam"
    depth: int
    hidden_channels: int
    out_channels: int
    out_len: tuple
    out_activation: str = "identity"
    latent_channels: int = 0  # 0 -> resolved per kind
    optimize_latent: bool = True

    def __post_init__(self):
        self.out_len = tuple(int(n) for n in self.out_len)
        if self.dims not in (1, 2, 3) or len(self.out_len) != self.dims:
            raise ValueError(f"dims {self.dims} inconsistent with out_len {self.out_len}")
        if self.kind not in ("overparam", "underparam"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.out_channels < 1 or self.depth < 1:
            raise ValueError("out_channels and depth must be >= 1")
        f = 2**self.depth
        if any(n % f for n in self.out_len):
            raise ValueError(
                f"out_len {self.out_len} must be divisible by 2^depth = {f}"
            )
        if self.latent_channels == 0:
            self.latent_channels = 16 if self.kind == "overparam" else self.hidden_channels

    @property
    def latent_extents(self):
        if self.kind == "overparam":
            return self.out_len
        return tuple(n // 2**self.depth for n in self.out_len)


def sample_latent(extents, channels, seed):
    """Latent input: iid uniform on [0, LATENT_SCALE], reproducible from seed."""
    rng = np.random.default_rng(seed)
    return ag.Tensor(rng.uniform(0.0, LATENT_SCALE, size=(channels,) + tuple(extents)))


def _init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return ag.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class FactorNetwork:
    """Parameters plus latent input; forward() regenerates the factor tensor."""

    def __init__(self, spec, seed):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        z = sample_latent(spec.latent_extents, spec.latent_channels, seed)
        z.requires_grad = spec.optimize_latent
        self.latent = z
        self.params = {}
        d, h = spec.dims, spec.hidden_channels
        k3 = (3,) * d

        def conv(name, cin, cout, kernel):
            fan = cin * int(np.prod(kernel))
            self.params[f"{name}.w"] = _init(rng, (cout, cin) + kernel, fan)
            self.params[f"{name}.b"] = _init(rng, (cout,), fan)

        def norm(name, c):
            self.params[f"{name}.gain"] = ag.Tensor(np.ones(c), requires_grad=True)
            self.params[f"{name}.bias"] = ag.Tensor(np.zeros(c), requires_grad=True)

        if spec.kind == "overparam":
            for i in range(spec.depth):
                cin = spec.latent_channels if i == 0 else h
                conv(f"enc{i}", cin, h, k3)
                norm(f"enc{i}.norm", h)
                conv(f"skip{i}", cin, h, (1,) * d)
            for i in range(spec.depth):
                conv(f"dec{i}", h, h, k3)
                norm(f"dec{i}.norm", h)
        else:
            for i in range(spec.depth):
                cin = spec.latent_channels if i == 0 else h
                conv(f"stage{i}", cin, h, (1,) * d)
                norm(f"stage{i}.norm", h)
        conv("head", h, spec.out_channels, (1,) * d)

    def parameters(self):
        """Named network parameters (latent excluded)."""
        return list(self.params.items())

    def trainables(self):
        """Everything the optimizer updates, latent included when optimized."""
        out = list(self.params.items())
        if self.spec.optimize_latent:
            out.append(("latent", self.latent))
        return out

    def param_count(self):
        return sum(p.data.size for p in self.params.values())

    def _conv(self, x, name, stride=1, pad=None):
        w = self.params[f"{name}.w"]
        kernel = w.shape[2:]
        if pad is None:
            pad = tuple(k // 2 for k in kernel)
        spec = ag.ConvSpec(
            kernel=kernel,
            stride=(stride,) * self.spec.dims,
            pad=pad,
            in_channels=w.shape[1],
            out_channels=w.shape[0],
        )
        return ag.add_channel_bias(ag.conv_nd(x, w, spec), self.params[f"{name}.b"])

    def _norm(self, x, name):
        return ag.normalize_channels(
            x, self.params[f"{name}.gain"], self.params[f"{name}.bias"], eps=NORM_EPS
        )

    def forward(self):
        spec = self.spec
        ups = (2,) * spec.dims
        h = self.latent
        if spec.kind == "overparam":
            skips = []
            for i in range(spec.depth):
                skips.append(self._conv(h, f"skip{i}"))
                h = self._conv(h, f"enc{i}", stride=2)
                h = ag.activation(self._norm(h, f"enc{i}.norm"), "leaky_relu", LEAKY_SLOPE)
            for i in reversed(range(spec.depth)):
                h = ag.upsample_nd(h, ups, mode="linear")
                h = h + skips[i]
                h = self._conv(h, f"dec{i}")
                h = ag.activation(self._norm(h, f"dec{i}.norm"), "leaky_relu", LEAKY_SLOPE)
        else:
            for i in range(spec.depth):
                h = self._conv(h, f"stage{i}")
                h = ag.upsample_nd(h, ups, mode="linear")
                h = ag.activation(h, "relu")
                h = self._norm(h, f"stage{i}.norm")
        h = self._conv(h, "head")
        return ag.activation(h, spec.out_activation)


def build_factor_network(spec, seed):
    return FactorNetwork(spec, seed)
