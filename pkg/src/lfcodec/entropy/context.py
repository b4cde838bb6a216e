"""Simplified space-channel context model.

The M latent channels are split into equal groups decoded in order. Within a
group, the checkerboard "anchor" sites ((h + w) even) are decoded first and
then the remaining sites. Mean and scale for a site depend on the hyper
features, on every previously decoded group (channel context) and, for
non-anchor sites, on the anchors of the same group (spatial context).
"""

from __future__ import annotations

import numpy as np

from lfcodec.entropy.models import SCALE_BOUND
from lfcodec.errors import ContractError, ShapeError
from lfcodec.nd import tensor as T
from lfcodec.nd.layers import Conv2d, Module


def anchor_mask(h, w):
    return ((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2 == 0).astype(np.float64)


class _ParamNet(Module):
    def __init__(self, cin, cout, rng):
        self.a = Conv2d(cin, 2 * cout, 1, rng=rng)
        self.b = Conv2d(2 * cout, cout, 1, rng=rng)

    def forward(self, x):
        return self.b(T.relu(self.a(x)))


class SpaceChannelContext(Module):
    def __init__(self, latent_channels, hyper_channels, groups=4, hyper_only=False, rng=None, debug=False):
        if latent_channels % groups:
            raise ShapeError(f"{groups} groups do not divide {latent_channels} latent channels")
        rng = np.random.default_rng(0) if rng is None else rng
        self.M = latent_channels
        self.hyper_only = hyper_only
        self.debug = debug
        if hyper_only:
            self.groups = 1
            self.cg = latent_channels
            self.params = [_ParamNet(hyper_channels, 2 * latent_channels, rng)]
            return
        self.groups = groups
        self.cg = cg = latent_channels // groups
        self.channel_ctx = [None] + [Conv2d(g * cg, 2 * cg, 3, rng=rng) for g in range(1, groups)]
        self.spatial_ctx = [Conv2d(cg, 2 * cg, 3, rng=rng) for _ in range(groups)]
        self.params = [
            _ParamNet(hyper_channels + (2 * cg if g else 0) + 2 * cg, 2 * cg, rng) for g in range(groups)
        ]

    @property
    def phases(self):
        return 1 if self.hyper_only else 2

    def _split(self, out, cg):
        mu = T.channel_slice(out, 0, cg)
        sigma = T.softplus(T.channel_slice(out, cg, 2 * cg)) + SCALE_BOUND
        return mu, sigma

    def group_params(self, hyper, prev, anchors, g):
        """(mu, sigma) for every site of group g.

        ``prev`` holds groups 0..g-1 (None for g = 0); ``anchors`` holds group
        g with non-anchor sites already zeroed.
        """
        if self.hyper_only:
            return self._split(self.params[0](hyper), self.M)
        feats = [hyper]
        if g:
            feats.append(self.channel_ctx[g](prev))
        feats.append(self.spatial_ctx[g](anchors))
        return self._split(self.params[g](T.concat(feats, axis=1)), self.cg)

    def predict(self, hyper, decoded, g):
        """Entropy parameters for group g from the causally decoded latent tensor.

        ``decoded`` has the full latent shape; every entry not yet decoded must
        be zero (checked when ``debug`` is set). Those entries are masked out
        regardless, so the result never depends on them.
        """
        decoded = np.asarray(T.as_tensor(decoded).data)
        if self.hyper_only:
            return self.group_params(hyper, None, None, 0)
        cg = self.cg
        mask = anchor_mask(*decoded.shape[2:])
        cur = decoded[:, g * cg:(g + 1) * cg]
        if self.debug:
            if np.any(decoded[:, (g + 1) * cg:]) or np.any(cur * (1.0 - mask)):
                raise ContractError(f"group {g}: non-causal latents are non-zero")
        prev = T.Tensor(decoded[:, : g * cg]) if g else None
        return self.group_params(hyper, prev, T.Tensor(cur * mask), g)

    def forward(self, hyper, y_hat):
        """Training-time parameters for all sites at once, honouring the decode order."""
        y_hat = T.as_tensor(y_hat)
        if self.hyper_only:
            return self.group_params(hyper, None, None, 0)
        cg = self.cg
        mask = anchor_mask(*y_hat.shape[2:])
        mus, sigmas = [], []
        for g in range(self.groups):
            prev = T.channel_slice(y_hat, 0, g * cg) if g else None
            cur = T.channel_slice(y_hat, g * cg, (g + 1) * cg)
            zeros = T.Tensor(np.zeros(cur.shape))
            mu_a, s_a = self.group_params(hyper, prev, zeros, g)
            mu_n, s_n = self.group_params(hyper, prev, cur * mask, g)
            mus.append(mu_a * mask + mu_n * (1.0 - mask))
            sigmas.append(s_a * mask + s_n * (1.0 - mask))
        return T.concat(mus, axis=1), T.concat(sigmas, axis=1)


def scctx_predict(context: SpaceChannelContext, hyper, decoded, g):
    return context.predict(hyper, decoded, g)
